#include "trackcentre/vcl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "trackcentre/optim.hpp"

namespace trackcentre {

namespace {

// Samples per gradient block. Blocks are summed in index order so the batch
// gradient does not depend on the number of threads.
constexpr std::size_t kReductionBlock = 16;

double distance(std::span<const double> z, std::span<const double> c) {
    if (z.size() != c.size()) throw std::invalid_argument("vc loss: z and centre dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (!std::isfinite(z[i]) || !std::isfinite(c[i])) throw std::invalid_argument("vc loss: non-finite input");
        s += (z[i] - c[i]) * (z[i] - c[i]);
    }
    return std::sqrt(s);
}

void check_target(int y, double margin) {
    if (y != 0 && y != 1) throw std::invalid_argument("vc loss: y must be 0 or 1");
    if (!(margin > 0.0)) throw std::invalid_argument("vc loss: margin must be > 0");
}

struct Sample {
    std::size_t track = 0;
    std::size_t centre = 0;
    int y = 1;
    std::vector<std::size_t> frames;  // 1-based
};

}  // namespace

Clip sample_clip_consecutive(std::size_t n, std::size_t cap, std::mt19937_64& rng) {
    if (n < 1) throw std::invalid_argument("clip sampling: track length must be >= 1");
    if (cap < 2) throw std::invalid_argument("clip sampling: cap must be >= 2");
    if (n == 1) return {1, 0};
    const std::size_t start = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    const std::size_t extra = std::uniform_int_distribution<std::size_t>(1, std::min(n - start, cap - 1))(rng);
    return {start, extra};
}

std::vector<std::size_t> sample_clip_uniform(std::size_t n, std::size_t len, std::mt19937_64& rng) {
    if (len < 1 || len > n) throw std::invalid_argument("uniform clip: need 1 <= len <= n");
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{1});
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
        std::swap(all[i], all[j]);
    }
    all.resize(len);
    std::sort(all.begin(), all.end());
    return all;
}

Matrix gather_clip(const Matrix& frames, const Clip& clip) {
    if (clip.start < 1 || clip.start + clip.extra > frames.rows) throw std::out_of_range("clip outside track");
    Matrix out(clip.length(), frames.cols);
    const auto first = static_cast<std::ptrdiff_t>((clip.start - 1) * frames.cols);
    std::copy(frames.data.begin() + first, frames.data.begin() + first + static_cast<std::ptrdiff_t>(out.size()),
              out.data.begin());
    return out;
}

Matrix gather_frames(const Matrix& frames, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), frames.cols);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] < 1 || indices[r] > frames.rows) throw std::out_of_range("frame index outside track");
        const auto src = frames.row(indices[r] - 1);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

double vc_loss(std::span<const double> z, std::span<const double> c, int y, double margin) {
    check_target(y, margin);
    const double dist = distance(z, c);
    if (y == 1) return 0.5 * dist;
    return 0.5 * std::max(margin - dist, 0.0);
}

LossGradient grad_z(std::span<const double> z, std::span<const double> c, int y, double margin) {
    check_target(y, margin);
    const double dist = distance(z, c);
    LossGradient g{Vector(z.size(), 0.0), false};
    const bool active = y == 1 || margin - dist > 0.0;
    if (!active) return g;
    if (dist <= kCentreEpsilon) {
        g.degenerate = true;
        return g;
    }
    const double coef = y == 1 ? 0.5 / dist : -0.5 / dist;
    for (std::size_t i = 0; i < z.size(); ++i) g.value[i] = coef * (z[i] - c[i]);
    return g;
}

LossGradient grad_centre(std::span<const double> z, std::span<const double> c, int y, double margin) {
    LossGradient g = grad_z(z, c, y, margin);
    for (double& v : g.value) v = -v;
    return g;
}

CentreStep update_centre(std::span<const double> c, std::span<const double> z, int y, double eta, double margin) {
    if (!(eta > 0.0)) throw std::invalid_argument("centre update: eta must be > 0");
    const LossGradient g = grad_centre(z, c, y, margin);
    CentreStep out{Vector(c.begin(), c.end()), g.degenerate};
    for (std::size_t i = 0; i < c.size(); ++i) out.centre[i] -= eta * g.value[i];
    return out;
}

Vector compute_centre_full(const EncoderParams& params, const EmbeddingTrack& track) {
    return forward_head(params, track.embeddings);
}

CentreTable compute_centres(const EncoderParams& params, const TrackSet& set) {
    CentreTable table;
    table.centres.resize(set.size());
    const auto m = static_cast<std::ptrdiff_t>(set.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t a = 0; a < m; ++a)
        table.centres[static_cast<std::size_t>(a)] = compute_centre_full(params, set.tracks[static_cast<std::size_t>(a)]);
    return table;
}

Matrix eval_representations(const EncoderParams& params, const TrackSet& set) {
    Matrix reps(set.size(), params.config.model_dim);
    const auto m = static_cast<std::ptrdiff_t>(set.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t a = 0; a < m; ++a) {
        const auto i = static_cast<std::size_t>(a);
        const Vector r = forward_eval(params, set.tracks[i].embeddings);
        std::copy(r.begin(), r.end(), reps.row(i).begin());
    }
    return reps;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (warmup_epochs < 1 || warmup_epochs >= epochs)
        throw std::invalid_argument("train config: need 1 <= warmup_epochs < epochs");
    if (!(max_lr > 0) || !(momentum > 0) || !(weight_decay > 0) || !(margin > 0) || !(centre_lr_factor > 0))
        throw std::invalid_argument("train config: rates, momentum, weight decay and margin must be positive");
    if (batch_size < 1 || attract_clips < 1 || repel_clips < 1 || recompute_every < 1 || selection_every < 1)
        throw std::invalid_argument("train config: counts must be >= 1");
    if (clip_cap < 2) throw std::invalid_argument("train config: clip_cap must be >= 2");
}

std::size_t epoch_sample_count(const CannotLinkMatrix& links, const TrainConfig& cfg) {
    std::size_t repel_tracks = 0;
    for (std::size_t a = 0; a < links.size(); ++a)
        if (!links.partners(a).empty()) ++repel_tracks;
    return cfg.attract_clips * links.size() + cfg.repel_clips * repel_tracks;
}

double onecycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
    return one_cycle_lr(step, total_steps, cfg.max_lr,
                        static_cast<double>(cfg.warmup_epochs) / static_cast<double>(cfg.epochs));
}

ClusterAssignment selection_partition(const Matrix& reps, const TrainConfig& cfg) {
    if (cfg.selection_k > 0) return hac(reps, cfg.selection_linkage, KnownK{std::min(cfg.selection_k, reps.rows)});
    return hac(reps, cfg.selection_linkage, Threshold{cfg.selection_threshold});
}

TrainResult train(const TrackSet& set, const CannotLinkMatrix& links, const EncoderConfig& encoder,
                  const TrainConfig& cfg, const EpochObserver& observer) {
    validate(set);
    cfg.validate();
    encoder.validate();
    if (encoder.model_dim != set.dim)
        throw std::invalid_argument("dimension mismatch: tracks have dim " + std::to_string(set.dim) +
                                    ", encoder expects " + std::to_string(encoder.model_dim));
    if (links.size() != set.size()) throw std::invalid_argument("cannot-link matrix size does not match trackset");

    const std::size_t m = set.size();
    std::mt19937_64 rng(cfg.seed);
    TrainResult result;
    result.params = init_params(encoder, rng);
    EncoderParams& params = result.params;
    SgdMomentum<EncoderParams> opt(params, cfg.momentum, cfg.weight_decay);

    std::vector<std::vector<std::size_t>> partners(m);
    std::size_t repel_tracks = 0;
    for (std::size_t a = 0; a < m; ++a) {
        partners[a] = links.partners(a);
        if (!partners[a].empty()) ++repel_tracks;
    }
    if (repel_tracks == 0) result.warnings.emplace_back("no cannot-links: training with attract samples only");

    const std::size_t per_epoch = epoch_sample_count(links, cfg);
    const std::size_t steps_per_epoch = (per_epoch + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    CentreTable centres = compute_centres(params, set);
    std::optional<double> best_sdbw;
    EncoderParams best_params;
    CentreTable best_centres;
    std::size_t step = 0;

    auto draw_frames = [&](std::size_t n) {
        const Clip clip = sample_clip_consecutive(n, cfg.clip_cap, rng);
        if (cfg.sampler == ClipSampler::Uniform) return sample_clip_uniform(n, clip.length(), rng);
        std::vector<std::size_t> idx(clip.length());
        std::iota(idx.begin(), idx.end(), clip.start);
        return idx;
    };

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<Sample> samples;
        samples.reserve(per_epoch);
        for (std::size_t a = 0; a < m; ++a) {
            const std::size_t n = set.tracks[a].length();
            for (std::size_t r = 0; r < cfg.attract_clips; ++r) samples.push_back({a, a, 1, draw_frames(n)});
            if (partners[a].empty()) continue;
            std::uniform_int_distribution<std::size_t> pick(0, partners[a].size() - 1);
            for (std::size_t r = 0; r < cfg.repel_clips; ++r) {
                const std::size_t b = partners[a][pick(rng)];
                samples.push_back({a, b, 0, draw_frames(n)});
            }
        }
        std::shuffle(samples.begin(), samples.end(), rng);

        double epoch_loss = 0.0;
        double lr = 0.0;
        for (std::size_t begin = 0, batch = 0; begin < samples.size(); begin += cfg.batch_size, ++batch, ++step) {
            const std::size_t end = std::min(samples.size(), begin + cfg.batch_size);
            const std::size_t count = end - begin;
            const std::size_t blocks = (count + kReductionBlock - 1) / kReductionBlock;
            lr = onecycle_lr(step, total_steps, cfg);

            std::vector<Vector> outputs(count);
            Vector losses(count, 0.0);
            std::vector<ParamGrads> block_grads(blocks);
            std::vector<std::size_t> block_degenerate(blocks, 0);
            const double inv = 1.0 / static_cast<double>(count);
#pragma omp parallel for schedule(dynamic)
            for (std::ptrdiff_t sb = 0; sb < static_cast<std::ptrdiff_t>(blocks); ++sb) {
                const auto blk = static_cast<std::size_t>(sb);
                ParamGrads g = zero_params(params.config);
                for (std::size_t s = blk * kReductionBlock; s < std::min(count, (blk + 1) * kReductionBlock); ++s) {
                    const Sample& smp = samples[begin + s];
                    const Matrix clip = gather_frames(set.tracks[smp.track].embeddings, smp.frames);
                    TrainOutput fwd = forward_train(params, clip);
                    const Vector& c = centres.centres[smp.centre];
                    if (!std::all_of(fwd.z_head.begin(), fwd.z_head.end(), [](double v) { return std::isfinite(v); }) ||
                        !std::all_of(c.begin(), c.end(), [](double v) { return std::isfinite(v); })) {
                        losses[s] = std::numeric_limits<double>::quiet_NaN();
                        continue;
                    }
                    losses[s] = vc_loss(fwd.z_head, c, smp.y, cfg.margin);
                    LossGradient gz = grad_z(fwd.z_head, c, smp.y, cfg.margin);
                    if (gz.degenerate) ++block_degenerate[blk];
                    for (double& v : gz.value) v *= inv;
                    backward_acc(params, fwd.cache, gz.value, g);
                    outputs[s] = std::move(fwd.z_head);
                }
                block_grads[blk] = std::move(g);
            }
            ParamGrads grads = std::move(block_grads[0]);
            for (std::size_t b = 1; b < blocks; ++b) axpy(1.0, block_grads[b], grads);
            for (std::size_t b = 0; b < blocks; ++b) result.degenerate_gradients += block_degenerate[b];

            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            if (!std::isfinite(batch_loss) || !all_finite(grads)) {
                std::ostringstream msg;
                msg << "non-finite loss or gradient at epoch " << epoch << ", batch " << batch;
                throw std::runtime_error(msg.str());
            }
            epoch_loss += batch_loss;

            opt.step(params, grads, lr);
            if (!all_finite(params)) {
                std::ostringstream msg;
                msg << "non-finite parameters after update at epoch " << epoch << ", batch " << batch;
                throw std::runtime_error(msg.str());
            }

            const double eta = cfg.centre_lr_factor * lr;
            for (std::size_t s = 0; s < count; ++s) {
                const Sample& smp = samples[begin + s];
                Vector& c = centres.centres[smp.centre];
                CentreStep upd = update_centre(c, outputs[s], smp.y, eta, cfg.margin);
                if (upd.degenerate) ++result.degenerate_gradients;
                c = std::move(upd.centre);
            }
        }

        ++centres.epochs_since_recompute;
        bool recomputed = false;
        if (epoch % cfg.recompute_every == 0) {
            centres = compute_centres(params, set);
            recomputed = true;
        }

        EpochRecord rec{epoch, epoch_loss / static_cast<double>(samples.size()), lr, std::nullopt};
        if (cfg.policy == CheckpointPolicy::BestSdbw && (epoch % cfg.selection_every == 0 || epoch == cfg.epochs)) {
            const Matrix reps = eval_representations(params, set);
            const ClusterAssignment part = selection_partition(reps, cfg);
            if (part.k >= 2) {
                rec.sdbw = sdbw(reps, part.labels);
                if (!best_sdbw || *rec.sdbw < *best_sdbw) {
                    best_sdbw = rec.sdbw;
                    best_params = params;
                    best_centres = centres;
                    result.selected_epoch = epoch;
                }
            }
        }
        result.history.push_back(rec);
        if (observer) observer(epoch, params, centres, recomputed);
    }

    if (cfg.policy == CheckpointPolicy::BestSdbw && best_sdbw) {
        result.params = std::move(best_params);
        result.centres = std::move(best_centres);
    } else {
        if (cfg.policy == CheckpointPolicy::BestSdbw)
            result.warnings.emplace_back("S-Dbw never defined (fewer than 2 clusters); keeping the final checkpoint");
        result.centres = std::move(centres);
        result.selected_epoch = cfg.epochs;
    }
    return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out) {
    out << "epoch,mean_loss,lr,sdbw\n";
    out.precision(17);
    for (const auto& r : history) {
        out << r.epoch << ',' << r.mean_loss << ',' << r.lr << ',';
        if (r.sdbw) out << *r.sdbw;
        out << '\n';
    }
}

}  // namespace trackcentre
