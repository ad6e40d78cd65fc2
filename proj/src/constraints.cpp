#include "trackcentre/constraints.hpp"

#include <algorithm>
#include <stdexcept>

namespace trackcentre {

void CannotLinkMatrix::link(std::size_t a, std::size_t b) {
    if (a >= size_ || b >= size_) throw std::out_of_range("cannot-link index out of range");
    if (a == b) throw std::invalid_argument("a track cannot be cannot-linked to itself");
    bits_[a * size_ + b] = 1;
    bits_[b * size_ + a] = 1;
}

std::vector<std::size_t> CannotLinkMatrix::partners(std::size_t a) const {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < size_; ++b)
        if (bits_[a * size_ + b]) out.push_back(b);
    return out;
}

std::size_t CannotLinkMatrix::count_links() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1})) / 2;
}

bool CannotLinkMatrix::any() const {
    return std::any_of(bits_.begin(), bits_.end(), [](std::uint8_t v) { return v != 0; });
}

CannotLinkMatrix derive_cannot_links(const TrackSet& set) {
    const std::size_t m = set.size();
    CannotLinkMatrix out(m);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a + 1; b < m; ++b) {
            const auto& ta = set.tracks[a];
            const auto& tb = set.tracks[b];
            if (ta.start_frame <= tb.end_frame && tb.start_frame <= ta.end_frame) out.link(a, b);
        }
    return out;
}

std::vector<ConstraintPair> sample_pairs(const TrackSet& set, const CannotLinkMatrix& links, std::mt19937_64& rng,
                                         std::size_t count_pos, std::size_t count_neg) {
    if (links.size() != set.size()) throw std::invalid_argument("cannot-link matrix size does not match trackset");
    std::vector<ConstraintPair> out;
    out.reserve(count_pos + count_neg);

    if (count_pos > 0) {
        // Each track weighted by its number of unordered frame pairs.
        std::vector<double> weights(set.size());
        for (std::size_t a = 0; a < set.size(); ++a) {
            const auto n = static_cast<double>(set.tracks[a].length());
            weights[a] = n * (n - 1) / 2;
        }
        if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0; }))
            throw std::invalid_argument("no must-links available: every track has length 1");
        std::discrete_distribution<std::size_t> pick_track(weights.begin(), weights.end());
        for (std::size_t s = 0; s < count_pos; ++s) {
            const std::size_t a = pick_track(rng);
            const std::size_t n = set.tracks[a].length();
            std::size_t i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
            std::size_t j = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
            if (j >= i) ++j;
            if (i > j) std::swap(i, j);
            out.push_back({a, i, a, j, 1});
        }
    }

    if (count_neg > 0) {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        std::vector<double> weights;
        for (std::size_t a = 0; a < set.size(); ++a)
            for (std::size_t b = a + 1; b < set.size(); ++b)
                if (links(a, b)) {
                    pairs.emplace_back(a, b);
                    weights.push_back(static_cast<double>(set.tracks[a].length() * set.tracks[b].length()));
                }
        if (pairs.empty()) throw std::invalid_argument("no cannot-links available");
        std::discrete_distribution<std::size_t> pick_pair(weights.begin(), weights.end());
        for (std::size_t s = 0; s < count_neg; ++s) {
            const auto [a, b] = pairs[pick_pair(rng)];
            const std::size_t i = std::uniform_int_distribution<std::size_t>(0, set.tracks[a].length() - 1)(rng);
            const std::size_t j = std::uniform_int_distribution<std::size_t>(0, set.tracks[b].length() - 1)(rng);
            out.push_back({a, i, b, j, 0});
        }
    }
    return out;
}

}  // namespace trackcentre
