#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "trackcentre/matrix.hpp"

namespace trackcentre {

enum class Linkage { Single, Complete, Average };

struct KnownK {
    std::size_t k = 1;
};
struct Threshold {
    double t = 0.0;
};
using StopRule = std::variant<KnownK, Threshold>;

/// Clusters are named by their lowest member index.
struct Merge {
    std::size_t a = 0;
    std::size_t b = 0;
    double height = 0.0;
};

struct ClusterAssignment {
    std::vector<std::int64_t> labels;  // one per input row, 0..k-1 in order of first appearance
    std::size_t k = 0;
    std::vector<Merge> merges;
};

/// Agglomerative clustering of the rows of `vectors` under Euclidean distance.
/// Equal-height candidates are resolved by the lowest (a, b) index pair.
ClusterAssignment hac(const Matrix& vectors, Linkage linkage, StopRule stop);

/// 2 I(P, Y) / (H(P) + H(Y)) with natural logs; 1 when both partitions are trivial.
double nmi(std::span<const std::int64_t> pred, std::span<const std::int64_t> truth);
/// Size-weighted purity: (1 / M) sum over clusters of the majority class count.
double wcp(std::span<const std::int64_t> pred, std::span<const std::int64_t> truth);
std::size_t c_dif(std::size_t pred_k, std::size_t true_k);
std::size_t count_clusters(std::span<const std::int64_t> labels);

/// S-Dbw validity index (Halkidi and Vazirgiannis): Scat + Dens_bw, lower is better.
double sdbw(const Matrix& vectors, std::span<const std::int64_t> labels);

}  // namespace trackcentre
