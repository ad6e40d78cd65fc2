#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trackcentre/clustereval.hpp"
#include "trackcentre/constraints.hpp"
#include "trackcentre/encoder.hpp"
#include "trackcentre/trackio.hpp"

namespace trackcentre {

/// Consecutive frames start..start+extra of a track, 1-indexed.
struct Clip {
    std::size_t start = 1;
    std::size_t extra = 0;

    std::size_t length() const { return extra + 1; }
    bool operator==(const Clip&) const = default;
};

/// start ~ U{1..n-1}, extra ~ U{1..min(n-start, cap-1)}; the whole track when n == 1.
Clip sample_clip_consecutive(std::size_t n, std::size_t cap, std::mt19937_64& rng);
/// `len` distinct 1-based frame indices drawn uniformly without replacement, ascending.
std::vector<std::size_t> sample_clip_uniform(std::size_t n, std::size_t len, std::mt19937_64& rng);

Matrix gather_clip(const Matrix& frames, const Clip& clip);
/// Rows of `frames` at the given 1-based indices.
Matrix gather_frames(const Matrix& frames, std::span<const std::size_t> indices);

/// Distance below which the loss is treated as non-differentiable.
inline constexpr double kCentreEpsilon = 1e-12;

/// y = 1: ||z - c|| / 2. y = 0: max(g - ||z - c||, 0) / 2.
double vc_loss(std::span<const double> z, std::span<const double> c, int y, double margin);

struct LossGradient {
    Vector value;
    bool degenerate = false;  // ||z - c|| <= epsilon on an active branch; value is zero
};

/// d vc_loss / d z with the centre held fixed.
LossGradient grad_z(std::span<const double> z, std::span<const double> c, int y, double margin);
/// d vc_loss / d c with z held fixed.
LossGradient grad_centre(std::span<const double> z, std::span<const double> c, int y, double margin);

struct CentreStep {
    Vector centre;
    bool degenerate = false;
};
/// c' = c - eta * d vc_loss / d c.
CentreStep update_centre(std::span<const double> c, std::span<const double> z, int y, double eta, double margin);

/// One latent-space centre per track, indexed like TrackSet::tracks.
struct CentreTable {
    std::vector<Vector> centres;
    std::size_t epochs_since_recompute = 0;

    bool operator==(const CentreTable&) const = default;
};

/// Head output for the whole track, no sampling.
Vector compute_centre_full(const EncoderParams& params, const EmbeddingTrack& track);
/// compute_centre_full for every track (tracks evaluated in parallel).
CentreTable compute_centres(const EncoderParams& params, const TrackSet& set);
/// forward_eval for every track, one row per track (tracks evaluated in parallel).
Matrix eval_representations(const EncoderParams& params, const TrackSet& set);

enum class CheckpointPolicy { Final, BestSdbw };
enum class ClipSampler { Consecutive, Uniform };

struct TrainConfig {
    std::size_t epochs = 900;
    std::size_t warmup_epochs = 400;
    double max_lr = 5.1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-5;
    std::size_t batch_size = 512;
    std::size_t clip_cap = 90;
    std::size_t attract_clips = 10;
    std::size_t repel_clips = 16;
    double margin = 1.0;
    double centre_lr_factor = 1.0;
    std::size_t recompute_every = 50;
    std::uint64_t seed = 0;
    CheckpointPolicy policy = CheckpointPolicy::Final;
    ClipSampler sampler = ClipSampler::Consecutive;
    // Best-S-Dbw selection: epochs between evaluations and the HAC stop used
    // to obtain the partition that S-Dbw scores.
    std::size_t selection_every = 10;
    std::size_t selection_k = 0;  // 0 selects the threshold stop
    double selection_threshold = 1.0;
    Linkage selection_linkage = Linkage::Average;

    void validate() const;
};

/// Samples drawn per epoch: attract_clips per track plus repel_clips per
/// track with at least one cannot-link partner.
std::size_t epoch_sample_count(const CannotLinkMatrix& links, const TrainConfig& cfg);

/// Cosine one-cycle learning rate with the warm-up fraction warmup_epochs / epochs.
double onecycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;  // rate of the epoch's last step
    std::optional<double> sdbw;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
    EncoderParams params;
    CentreTable centres;
    std::vector<EpochRecord> history;
    std::size_t selected_epoch = 0;
    std::size_t degenerate_gradients = 0;
    std::vector<std::string> warnings;
};

/// Called after every epoch, after any scheduled centre recompute.
using EpochObserver =
    std::function<void(std::size_t epoch, const EncoderParams& params, const CentreTable& centres, bool recomputed)>;

/// Video-centralised training: attract clips to their own track centre,
/// repel them from cannot-linked centres, update parameters by SGD and
/// centres from the cached clip outputs, recompute centres periodically.
TrainResult train(const TrackSet& set, const CannotLinkMatrix& links, const EncoderConfig& encoder,
                  const TrainConfig& cfg, const EpochObserver& observer = {});

/// CSV columns: epoch,mean_loss,lr,sdbw (sdbw empty when not evaluated).
void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out);

/// Partition used for S-Dbw based checkpoint selection.
ClusterAssignment selection_partition(const Matrix& reps, const TrainConfig& cfg);

}  // namespace trackcentre
