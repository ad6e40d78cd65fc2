#pragma once

// Straightforward reimplementations used as references by the tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "trackcentre/trackio.hpp"

namespace oracles {

using Labels = std::vector<std::int64_t>;
using trackcentre::EmbeddingTrack;

// I = H(P) + H(Y) - H(P, Y) from raw counts.
inline double nmi(const Labels& p, const Labels& t) {
    const double n = static_cast<double>(p.size());
    std::map<std::int64_t, double> cp, ct;
    std::map<std::pair<std::int64_t, std::int64_t>, double> joint;
    for (std::size_t i = 0; i < p.size(); ++i) {
        cp[p[i]] += 1;
        ct[t[i]] += 1;
        joint[{p[i], t[i]}] += 1;
    }
    auto h = [&](const auto& counts) {
        double s = 0.0;
        for (const auto& [key, c] : counts) s -= c / n * std::log(c / n);
        return s;
    };
    const double hp = h(cp), ht = h(ct), hj = h(joint);
    if (hp == 0.0 && ht == 0.0) return 1.0;
    const double mi = hp + ht - hj;
    return std::max(0.0, 2.0 * mi / (hp + ht));
}

inline double wcp(const Labels& p, const Labels& t) {
    std::map<std::int64_t, std::map<std::int64_t, int>> table;
    for (std::size_t i = 0; i < p.size(); ++i) table[p[i]][t[i]]++;
    int covered = 0;
    for (const auto& [cluster, row] : table) {
        int best = 0;
        for (const auto& [cls, c] : row) best = std::max(best, c);
        covered += best;
    }
    return static_cast<double>(covered) / static_cast<double>(p.size());
}

// Enumerates every frame index of both tracks.
inline bool share_a_frame(const EmbeddingTrack& a, const EmbeddingTrack& b) {
    std::set<std::int64_t> frames;
    for (std::int64_t f = a.start_frame; f <= a.end_frame; ++f) frames.insert(f);
    for (std::int64_t f = b.start_frame; f <= b.end_frame; ++f)
        if (frames.count(f)) return true;
    return false;
}

// The video-centralised loss evaluated in extended precision.
inline long double vc_loss(std::span<const long double> z, std::span<const long double> c, int y, long double margin) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < z.size(); ++i) s += (z[i] - c[i]) * (z[i] - c[i]);
    const long double dist = std::sqrt(s);
    return y == 1 ? dist / 2 : std::max(margin - dist, 0.0L) / 2;
}

}  // namespace oracles
