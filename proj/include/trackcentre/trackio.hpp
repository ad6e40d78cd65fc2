#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trackcentre/matrix.hpp"

namespace trackcentre {

/// One face track: a run of per-frame embeddings of a single person.
struct EmbeddingTrack {
    std::int64_t track_id = 0;
    std::int64_t start_frame = 0;
    std::int64_t end_frame = 0;       // inclusive
    std::optional<std::int64_t> label;  // identity, evaluation only
    Matrix embeddings;                // frames x dim
    // Frame offsets (0-based, within the track) that the generator corrupted.
    // Diagnostic sidecar; never read by training.
    std::vector<std::size_t> distractor_frames;

    std::size_t length() const { return embeddings.rows; }
    std::size_t dim() const { return embeddings.cols; }

    bool operator==(const EmbeddingTrack&) const = default;
};

struct TrackSet {
    std::string video_id;
    std::size_t dim = 0;
    std::vector<EmbeddingTrack> tracks;

    std::size_t size() const { return tracks.size(); }
    bool has_labels() const;

    bool operator==(const TrackSet&) const = default;
};

/// Throws std::invalid_argument when a TrackSet invariant is violated.
void validate(const TrackSet& set);

/// Reads `<base>.manifest.json` and `<base>.emb`. `base` may also name the manifest itself.
TrackSet load_trackset(const std::filesystem::path& base);
/// Writes `<base>.manifest.json` and `<base>.emb`.
void save_trackset(const TrackSet& set, const std::filesystem::path& base);

std::filesystem::path manifest_path(const std::filesystem::path& base);
std::filesystem::path blob_path(const std::filesystem::path& base);

/// Parameters of the synthetic track generator.
struct SyntheticSpec {
    std::size_t identities = 5;
    std::size_t tracks_per_identity = 20;
    std::size_t dim = 32;
    std::size_t min_length = 5;
    std::size_t max_length = 40;
    double noise = 0.25;
    double distractor_prob = 0.1;
    double distractor_noise = 1.0;
    // Fraction of tracks placed in a co-occurring scene with at least one
    // other track of a different identity.
    double cooccurrence = 0.3;
    std::uint64_t seed = 0;
    std::string video_id = "synthetic";
};

/// Deterministic synthetic TrackSet. All values are exactly representable in
/// 32-bit floats so the set survives a save/load round trip unchanged.
TrackSet generate_synthetic(const SyntheticSpec& spec);

/// Scales every frame to unit L2 norm (zero frames stay zero).
TrackSet l2_normalised(TrackSet set);

}  // namespace trackcentre
