#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>

#include "trackcentre/checkpoint.hpp"
#include "trackcentre/constraints.hpp"
#include "trackcentre/encoder.hpp"
#include "trackcentre/trackio.hpp"
#include "trackcentre/vcl.hpp"

namespace trackcentre {

/// Mean over frames (rows).
Vector temporal_average(const Matrix& frames);
/// One temporal average per track.
Matrix average_representations(const TrackSet& set);

/// (y/2) ||zi - zj||^2 + ((1-y)/2) max(g - ||zi - zj||, 0)^2
double pairwise_contrastive_loss(std::span<const double> zi, std::span<const double> zj, int y, double margin);
/// Gradient with respect to zi; the gradient with respect to zj is its negation.
LossGradient pairwise_contrastive_grad(std::span<const double> zi, std::span<const double> zj, int y, double margin);

/// Frame-level projection d -> hidden -> out with a GELU in between.
struct SiameseMlpParams {
    std::size_t input_dim = 0;
    std::size_t hidden = 0;
    std::size_t output_dim = 2;
    Matrix w1, b1;  // d x h, 1 x h
    Matrix w2, b2;  // h x z, 1 x z

    template <class F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each(F&& f) const {
        visit(*this, f);
    }
    bool operator==(const SiameseMlpParams&) const = default;

private:
    template <class Self, class F>
    static void visit(Self& self, F& f) {
        f("w1", self.w1, true);
        f("b1", self.b1, false);
        f("w2", self.w2, true);
        f("b2", self.b2, false);
    }
};

/// hidden == 0 selects input_dim / 2 (at least 1).
SiameseMlpParams zero_mlp(std::size_t input_dim, std::size_t hidden, std::size_t output_dim);
SiameseMlpParams init_mlp(std::size_t input_dim, std::size_t hidden, std::size_t output_dim, std::mt19937_64& rng);

struct MlpCache {
    Matrix input, pre, act;
};
/// Per-frame projection, one output row per input row.
Matrix mlp_forward(const SiameseMlpParams& params, const Matrix& frames, MlpCache* cache = nullptr);
void mlp_backward_acc(const SiameseMlpParams& params, const MlpCache& cache, const Matrix& grad_out,
                      SiameseMlpParams& grads);
/// Temporal average of the projected frames.
Vector mlp_track_representation(const SiameseMlpParams& params, const Matrix& frames);
Matrix mlp_representations(const SiameseMlpParams& params, const TrackSet& set);

Checkpoint mlp_checkpoint(const SiameseMlpParams& params);
SiameseMlpParams mlp_from_checkpoint(const Checkpoint& ckpt);

enum class PairwiseModel { Mlp, Transformer };

struct PairwiseResult {
    PairwiseModel model = PairwiseModel::Mlp;
    std::optional<SiameseMlpParams> mlp;
    std::optional<EncoderParams> transformer;
    std::vector<EpochRecord> history;
    std::vector<std::string> warnings;
};

/// Pairwise contrastive training. Mlp: frame pairs from the must-link and
/// cannot-link sets. Transformer: clip pairs (same track for y = 1,
/// cannot-linked tracks for y = 0) through the encoder head. Uses the
/// optimiser, schedule and per-track sample budget of `cfg`; no centres.
/// `mlp_hidden` = 0 selects input_dim / 2; the MLP output width is
/// encoder.head_out_dim.
PairwiseResult train_pairwise(PairwiseModel model, const TrackSet& set, const CannotLinkMatrix& links,
                              const EncoderConfig& encoder, const TrainConfig& cfg, std::size_t mlp_hidden = 0);

}  // namespace trackcentre
