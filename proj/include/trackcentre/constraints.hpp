#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "trackcentre/trackio.hpp"

namespace trackcentre {

/// Symmetric binary co-occurrence matrix over the tracks of one video.
/// Indices are positions in TrackSet::tracks, not track ids.
class CannotLinkMatrix {
public:
    CannotLinkMatrix() = default;
    explicit CannotLinkMatrix(std::size_t size) : size_(size), bits_(size * size, 0) {}

    std::size_t size() const { return size_; }
    bool operator()(std::size_t a, std::size_t b) const { return bits_[a * size_ + b] != 0; }
    /// Sets both (a, b) and (b, a). Diagonal entries are rejected.
    void link(std::size_t a, std::size_t b);

    /// Cannot-link partners of track a, ascending.
    std::vector<std::size_t> partners(std::size_t a) const;
    std::size_t count_links() const;  // unordered pairs
    bool any() const;

    bool operator==(const CannotLinkMatrix&) const = default;

private:
    std::size_t size_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// A frame pair with its must-link (y = 1) or cannot-link (y = 0) target.
/// Track fields are positions in TrackSet::tracks, frame fields 0-based.
struct ConstraintPair {
    std::size_t track_a = 0;
    std::size_t frame_a = 0;
    std::size_t track_b = 0;
    std::size_t frame_b = 0;
    int y = 1;

    bool operator==(const ConstraintPair&) const = default;
    auto operator<=>(const ConstraintPair&) const = default;
};

/// N(a, b) = 1 iff a != b and the inclusive frame spans of a and b intersect.
CannotLinkMatrix derive_cannot_links(const TrackSet& set);

/// Draws count_pos must-link pairs uniformly from all within-track frame
/// pairs and count_neg cannot-link pairs uniformly from all frame pairs of
/// cannot-linked track pairs. Positives come first in the result.
std::vector<ConstraintPair> sample_pairs(const TrackSet& set, const CannotLinkMatrix& links, std::mt19937_64& rng,
                                         std::size_t count_pos, std::size_t count_neg);

}  // namespace trackcentre
