#include "trackcentre/clustereval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "trackcentre/kernels.hpp"

namespace trackcentre {

namespace {

// Dense relabelling of arbitrary ids, in order of first appearance.
std::vector<std::size_t> dense(std::span<const std::int64_t> labels, std::size_t& count) {
    std::map<std::int64_t, std::size_t> ids;
    std::vector<std::size_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, fresh] = ids.try_emplace(labels[i], ids.size());
        out[i] = it->second;
    }
    count = ids.size();
    return out;
}

void check_universe(std::span<const std::int64_t> pred, std::span<const std::int64_t> truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("universe mismatch: " + std::to_string(pred.size()) + " predictions vs " +
                                    std::to_string(truth.size()) + " truth labels");
    if (pred.empty()) throw std::invalid_argument("empty partition");
}

double entropy(const std::vector<std::size_t>& sizes, double n) {
    double h = 0.0;
    for (std::size_t s : sizes)
        if (s > 0) {
            const double p = static_cast<double>(s) / n;
            h -= p * std::log(p);
        }
    return h;
}

}  // namespace

ClusterAssignment hac(const Matrix& vectors, Linkage linkage, StopRule stop) {
    const std::size_t m = vectors.rows;
    if (m == 0) throw std::invalid_argument("hac: empty input");
    if (const auto* kk = std::get_if<KnownK>(&stop))
        if (kk->k < 1 || kk->k > m)
            throw std::invalid_argument("hac: known k=" + std::to_string(kk->k) + " outside [1, " + std::to_string(m) + "]");

    Matrix dist = kernels::pairwise_distances(vectors);
    std::vector<std::size_t> size(m, 1);
    std::vector<std::size_t> owner(m);  // representative of each point's cluster
    for (std::size_t i = 0; i < m; ++i) owner[i] = i;
    std::vector<std::size_t> active(m);
    for (std::size_t i = 0; i < m; ++i) active[i] = i;

    ClusterAssignment out;
    while (active.size() > 1) {
        if (const auto* kk = std::get_if<KnownK>(&stop); kk && active.size() <= kk->k) break;
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 0;
        for (std::size_t x = 0; x < active.size(); ++x)
            for (std::size_t y = x + 1; y < active.size(); ++y) {
                const double d = dist(active[x], active[y]);
                if (d < best) {
                    best = d;
                    bi = x;
                    bj = y;
                }
            }
        if (const auto* th = std::get_if<Threshold>(&stop); th && !(best <= th->t)) break;
        const std::size_t a = active[bi], b = active[bj];
        for (std::size_t z : active) {
            if (z == a || z == b) continue;
            double merged = 0.0;
            switch (linkage) {
                case Linkage::Single: merged = std::min(dist(z, a), dist(z, b)); break;
                case Linkage::Complete: merged = std::max(dist(z, a), dist(z, b)); break;
                case Linkage::Average:
                    merged = (static_cast<double>(size[a]) * dist(z, a) + static_cast<double>(size[b]) * dist(z, b)) /
                             static_cast<double>(size[a] + size[b]);
                    break;
            }
            dist(z, a) = merged;
            dist(a, z) = merged;
        }
        size[a] += size[b];
        for (auto& o : owner)
            if (o == b) o = a;
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
        out.merges.push_back({a, b, best});
    }

    out.labels.assign(m, -1);
    std::map<std::size_t, std::int64_t> names;
    for (std::size_t i = 0; i < m; ++i) {
        auto [it, fresh] = names.try_emplace(owner[i], static_cast<std::int64_t>(names.size()));
        out.labels[i] = it->second;
    }
    out.k = names.size();
    return out;
}

double nmi(std::span<const std::int64_t> pred, std::span<const std::int64_t> truth) {
    check_universe(pred, truth);
    std::size_t kp = 0, kt = 0;
    const auto p = dense(pred, kp);
    const auto t = dense(truth, kt);
    const auto n = static_cast<double>(pred.size());
    std::vector<std::size_t> table(kp * kt, 0), sp(kp, 0), st(kt, 0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        ++table[p[i] * kt + t[i]];
        ++sp[p[i]];
        ++st[t[i]];
    }
    const double hp = entropy(sp, n), ht = entropy(st, n);
    if (hp == 0.0 && ht == 0.0) return 1.0;
    double mi = 0.0;
    for (std::size_t a = 0; a < kp; ++a)
        for (std::size_t b = 0; b < kt; ++b) {
            const std::size_t nab = table[a * kt + b];
            if (nab == 0) continue;
            const double pab = static_cast<double>(nab) / n;
            mi += pab * std::log(static_cast<double>(nab) * n / (static_cast<double>(sp[a]) * static_cast<double>(st[b])));
        }
    if (mi <= 0.0) return 0.0;
    return std::clamp(2.0 * mi / (hp + ht), 0.0, 1.0);
}

double wcp(std::span<const std::int64_t> pred, std::span<const std::int64_t> truth) {
    check_universe(pred, truth);
    std::size_t kp = 0, kt = 0;
    const auto p = dense(pred, kp);
    const auto t = dense(truth, kt);
    std::vector<std::size_t> table(kp * kt, 0);
    for (std::size_t i = 0; i < p.size(); ++i) ++table[p[i] * kt + t[i]];
    std::size_t covered = 0;
    for (std::size_t a = 0; a < kp; ++a)
        covered += *std::max_element(table.begin() + static_cast<std::ptrdiff_t>(a * kt),
                                     table.begin() + static_cast<std::ptrdiff_t>((a + 1) * kt));
    return static_cast<double>(covered) / static_cast<double>(pred.size());
}

std::size_t c_dif(std::size_t pred_k, std::size_t true_k) {
    if (pred_k < 1 || true_k < 1) throw std::invalid_argument("cluster counts must be >= 1");
    return pred_k > true_k ? pred_k - true_k : true_k - pred_k;
}

std::size_t count_clusters(std::span<const std::int64_t> labels) {
    std::size_t k = 0;
    dense(labels, k);
    return k;
}

double sdbw(const Matrix& x, std::span<const std::int64_t> labels) {
    if (labels.size() != x.rows) throw std::invalid_argument("S-Dbw: one label per vector required");
    std::size_t c = 0;
    const auto lab = dense(labels, c);
    if (c < 2) throw std::invalid_argument("S-Dbw undefined for k<2");
    const std::size_t n = x.rows, d = x.cols;

    auto variance_norm = [&](const std::vector<std::size_t>& members, const Vector& mean) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double v = 0.0;
            for (std::size_t i : members) v += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
            v /= static_cast<double>(members.size());
            s += v * v;
        }
        return std::sqrt(s);
    };

    std::vector<std::vector<std::size_t>> members(c);
    for (std::size_t i = 0; i < n; ++i) members[lab[i]].push_back(i);
    std::vector<Vector> centroid(c, Vector(d, 0.0));
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t i : members[k])
            for (std::size_t j = 0; j < d; ++j) centroid[k][j] += x(i, j);
        for (double& v : centroid[k]) v /= static_cast<double>(members[k].size());
    }
    std::vector<std::size_t> everyone(n);
    for (std::size_t i = 0; i < n; ++i) everyone[i] = i;
    Vector overall(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) overall[j] += x(i, j);
    for (double& v : overall) v /= static_cast<double>(n);

    const double total_var = variance_norm(everyone, overall);
    Vector cluster_var(c);
    double scat = 0.0, var_sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        cluster_var[k] = variance_norm(members[k], centroid[k]);
        var_sum += cluster_var[k];
        scat += total_var > 0.0 ? cluster_var[k] / total_var : 0.0;
    }
    scat /= static_cast<double>(c);
    const double stdev = std::sqrt(var_sum) / static_cast<double>(c);

    auto density = [&](const Vector& u, std::size_t a, std::size_t b) {
        std::size_t count = 0;
        for (std::size_t k : {a, b})
            for (std::size_t i : members[k]) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) s += (x(i, j) - u[j]) * (x(i, j) - u[j]);
                if (std::sqrt(s) <= stdev) ++count;
            }
        return static_cast<double>(count);
    };

    double dens = 0.0;
    Vector mid(d);
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = 0; b < c; ++b) {
            if (a == b) continue;
            for (std::size_t j = 0; j < d; ++j) mid[j] = 0.5 * (centroid[a][j] + centroid[b][j]);
            const double da = density(centroid[a], a, b);
            const double db = density(centroid[b], a, b);
            const double dm = density(mid, a, b);
            const double denom = std::max(da, db);
            // Empty neighbourhoods at both centroids but not at the midpoint
            // count as fully merged.
            if (denom > 0.0)
                dens += dm / denom;
            else if (dm > 0.0)
                dens += 1.0;
        }
    dens /= static_cast<double>(c * (c - 1));
    return scat + dens;
}

}  // namespace trackcentre
