#include "trackcentre/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "trackcentre/activation.hpp"
#include "trackcentre/kernels.hpp"
#include "trackcentre/optim.hpp"

namespace trackcentre {

namespace {

constexpr std::size_t kReductionBlock = 16;

double pair_distance(std::span<const double> zi, std::span<const double> zj) {
    if (zi.size() != zj.size()) throw std::invalid_argument("contrastive loss: dimensions differ");
    double s = 0.0;
    for (std::size_t k = 0; k < zi.size(); ++k) {
        if (!std::isfinite(zi[k]) || !std::isfinite(zj[k])) throw std::invalid_argument("contrastive loss: non-finite input");
        s += (zi[k] - zj[k]) * (zi[k] - zj[k]);
    }
    return std::sqrt(s);
}

bool finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// One pair for either pairwise mode. Frames are 1-based indices.
struct PairSample {
    std::size_t track_a = 0, track_b = 0;
    std::vector<std::size_t> frames_a, frames_b;
    int y = 1;
};

// Shared optimisation loop: per-sample work fills a gradient object and
// returns the sample loss; blocks are reduced in index order.
template <class Params, class MakeSamples, class SampleGrad>
std::vector<EpochRecord> run_pairwise(Params& params, const Params& zero, const TrainConfig& cfg,
                                      std::mt19937_64& rng, MakeSamples make_samples, SampleGrad sample_grad) {
    SgdMomentum<Params> opt(params, cfg.momentum, cfg.weight_decay);
    std::vector<EpochRecord> history;
    std::size_t step = 0;
    std::size_t total_steps = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<PairSample> samples = make_samples(rng);
        std::shuffle(samples.begin(), samples.end(), rng);
        if (samples.empty()) throw std::invalid_argument("pairwise training: no pairs available");
        if (total_steps == 0) total_steps = cfg.epochs * ((samples.size() + cfg.batch_size - 1) / cfg.batch_size);

        double epoch_loss = 0.0, lr = 0.0;
        for (std::size_t begin = 0, batch = 0; begin < samples.size(); begin += cfg.batch_size, ++batch, ++step) {
            const std::size_t count = std::min(cfg.batch_size, samples.size() - begin);
            const std::size_t blocks = (count + kReductionBlock - 1) / kReductionBlock;
            lr = onecycle_lr(std::min(step, total_steps - 1), total_steps, cfg);
            const double inv = 1.0 / static_cast<double>(count);
            std::vector<Params> block_grads(blocks);
            Vector losses(count, 0.0);
#pragma omp parallel for schedule(dynamic)
            for (std::ptrdiff_t sb = 0; sb < static_cast<std::ptrdiff_t>(blocks); ++sb) {
                const auto blk = static_cast<std::size_t>(sb);
                Params g = zero;
                for (std::size_t s = blk * kReductionBlock; s < std::min(count, (blk + 1) * kReductionBlock); ++s)
                    losses[s] = sample_grad(samples[begin + s], inv, g);
                block_grads[blk] = std::move(g);
            }
            Params grads = std::move(block_grads[0]);
            for (std::size_t b = 1; b < blocks; ++b) {
                std::vector<const Matrix*> src;
                block_grads[b].for_each([&](const std::string&, const Matrix& m, bool) { src.push_back(&m); });
                std::size_t t = 0;
                grads.for_each([&](const std::string&, Matrix& m, bool) {
                    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] += src[t]->data[i];
                    ++t;
                });
            }
            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            bool ok = std::isfinite(batch_loss);
            grads.for_each([&](const std::string&, const Matrix& m, bool) { ok = ok && finite(m.data); });
            if (!ok) {
                std::ostringstream msg;
                msg << "non-finite loss or gradient at epoch " << epoch << ", batch " << batch;
                throw std::runtime_error(msg.str());
            }
            epoch_loss += batch_loss;
            opt.step(params, grads, lr);
        }
        history.push_back({epoch, epoch_loss / static_cast<double>(samples.size()), lr, std::nullopt});
    }
    return history;
}

std::vector<std::size_t> consecutive_frames(std::size_t n, const TrainConfig& cfg, std::mt19937_64& rng) {
    const Clip clip = sample_clip_consecutive(n, cfg.clip_cap, rng);
    if (cfg.sampler == ClipSampler::Uniform) return sample_clip_uniform(n, clip.length(), rng);
    std::vector<std::size_t> idx(clip.length());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = clip.start + i;
    return idx;
}

}  // namespace

Vector temporal_average(const Matrix& frames) {
    if (frames.rows == 0) throw std::invalid_argument("temporal average of an empty track");
    Vector mean(frames.cols, 0.0);
    for (std::size_t i = 0; i < frames.rows; ++i)
        for (std::size_t j = 0; j < frames.cols; ++j) mean[j] += frames(i, j);
    for (double& v : mean) v /= static_cast<double>(frames.rows);
    return mean;
}

Matrix average_representations(const TrackSet& set) {
    Matrix reps(set.size(), set.dim);
    for (std::size_t a = 0; a < set.size(); ++a) {
        const Vector r = temporal_average(set.tracks[a].embeddings);
        std::copy(r.begin(), r.end(), reps.row(a).begin());
    }
    return reps;
}

double pairwise_contrastive_loss(std::span<const double> zi, std::span<const double> zj, int y, double margin) {
    if (y != 0 && y != 1) throw std::invalid_argument("contrastive loss: y must be 0 or 1");
    if (!(margin > 0.0)) throw std::invalid_argument("contrastive loss: margin must be > 0");
    const double d = pair_distance(zi, zj);
    if (y == 1) return 0.5 * d * d;
    const double h = std::max(margin - d, 0.0);
    return 0.5 * h * h;
}

LossGradient pairwise_contrastive_grad(std::span<const double> zi, std::span<const double> zj, int y, double margin) {
    if (y != 0 && y != 1) throw std::invalid_argument("contrastive loss: y must be 0 or 1");
    if (!(margin > 0.0)) throw std::invalid_argument("contrastive loss: margin must be > 0");
    const double d = pair_distance(zi, zj);
    LossGradient g{Vector(zi.size(), 0.0), false};
    if (y == 1) {
        for (std::size_t k = 0; k < zi.size(); ++k) g.value[k] = zi[k] - zj[k];
        return g;
    }
    if (d >= margin) return g;
    if (d <= kCentreEpsilon) {
        g.degenerate = true;
        return g;
    }
    const double coef = -(margin - d) / d;
    for (std::size_t k = 0; k < zi.size(); ++k) g.value[k] = coef * (zi[k] - zj[k]);
    return g;
}

SiameseMlpParams zero_mlp(std::size_t input_dim, std::size_t hidden, std::size_t output_dim) {
    if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("mlp: dimensions must be >= 1");
    if (hidden == 0) hidden = std::max<std::size_t>(1, input_dim / 2);
    SiameseMlpParams p;
    p.input_dim = input_dim;
    p.hidden = hidden;
    p.output_dim = output_dim;
    p.w1 = Matrix(input_dim, hidden);
    p.b1 = Matrix(1, hidden);
    p.w2 = Matrix(hidden, output_dim);
    p.b2 = Matrix(1, output_dim);
    return p;
}

SiameseMlpParams init_mlp(std::size_t input_dim, std::size_t hidden, std::size_t output_dim, std::mt19937_64& rng) {
    SiameseMlpParams p = zero_mlp(input_dim, hidden, output_dim);
    for (Matrix* w : {&p.w1, &p.w2}) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(w->rows));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : w->data) v = u(rng);
    }
    return p;
}

Matrix mlp_forward(const SiameseMlpParams& params, const Matrix& frames, MlpCache* cache) {
    if (frames.cols != params.input_dim) throw std::invalid_argument("dimension mismatch: mlp input");
    Matrix pre, out;
    kernels::gemm(frames, params.w1, pre);
    kernels::add_bias(pre, params.b1);
    Matrix act(pre.rows, pre.cols);
    for (std::size_t i = 0; i < pre.size(); ++i) act.data[i] = gelu(pre.data[i]);
    kernels::gemm(act, params.w2, out);
    kernels::add_bias(out, params.b2);
    if (cache) {
        cache->input = frames;
        cache->pre = std::move(pre);
        cache->act = std::move(act);
    }
    return out;
}

void mlp_backward_acc(const SiameseMlpParams& params, const MlpCache& cache, const Matrix& grad_out,
                      SiameseMlpParams& grads) {
    kernels::gemm_at_acc(cache.act, grad_out, grads.w2);
    kernels::col_sum_acc(grad_out, grads.b2);
    Matrix dact;
    kernels::gemm_bt(grad_out, params.w2, dact);
    for (std::size_t i = 0; i < dact.size(); ++i) dact.data[i] *= gelu_grad(cache.pre.data[i]);
    kernels::gemm_at_acc(cache.input, dact, grads.w1);
    kernels::col_sum_acc(dact, grads.b1);
}

Vector mlp_track_representation(const SiameseMlpParams& params, const Matrix& frames) {
    return temporal_average(mlp_forward(params, frames));
}

Matrix mlp_representations(const SiameseMlpParams& params, const TrackSet& set) {
    Matrix reps(set.size(), params.output_dim);
    for (std::size_t a = 0; a < set.size(); ++a) {
        const Vector r = mlp_track_representation(params, set.tracks[a].embeddings);
        std::copy(r.begin(), r.end(), reps.row(a).begin());
    }
    return reps;
}

Checkpoint mlp_checkpoint(const SiameseMlpParams& params) {
    Checkpoint ckpt;
    ckpt.header = {{"format", "TCV1"},
                   {"model", "mlp"},
                   {"kind", "tsiam"},
                   {"config", {{"input_dim", params.input_dim}, {"hidden", params.hidden}, {"output_dim", params.output_dim}}}};
    params.for_each([&](const std::string& name, const Matrix& m, bool) { ckpt.tensors.emplace_back(name, m); });
    return ckpt;
}

SiameseMlpParams mlp_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.header.value("model", std::string()) != "mlp") throw std::runtime_error("checkpoint does not hold an MLP");
    const auto& c = ckpt.header.at("config");
    SiameseMlpParams p = zero_mlp(c.at("input_dim").get<std::size_t>(), c.at("hidden").get<std::size_t>(),
                                  c.at("output_dim").get<std::size_t>());
    p.for_each([&](const std::string& name, Matrix& m, bool) {
        const Matrix& src = ckpt.tensor(name);
        if (!src.same_shape(m)) throw std::runtime_error("checkpoint tensor '" + name + "' has the wrong shape");
        m = src;
    });
    return p;
}

PairwiseResult train_pairwise(PairwiseModel model, const TrackSet& set, const CannotLinkMatrix& links,
                              const EncoderConfig& encoder, const TrainConfig& cfg, std::size_t mlp_hidden) {
    validate(set);
    cfg.validate();
    if (model == PairwiseModel::Transformer) encoder.validate();
    if (links.size() != set.size()) throw std::invalid_argument("cannot-link matrix size does not match trackset");
    if (encoder.model_dim != set.dim)
        throw std::invalid_argument("dimension mismatch: tracks have dim " + std::to_string(set.dim) +
                                    ", model expects " + std::to_string(encoder.model_dim));

    const std::size_t m = set.size();
    std::vector<std::vector<std::size_t>> partners(m);
    std::size_t repel_tracks = 0, multi_frame = 0;
    for (std::size_t a = 0; a < m; ++a) {
        partners[a] = links.partners(a);
        if (!partners[a].empty()) ++repel_tracks;
        if (set.tracks[a].length() >= 2) ++multi_frame;
    }

    PairwiseResult result;
    result.model = model;
    if (repel_tracks == 0) result.warnings.emplace_back("no cannot-links: training with positive pairs only");
    std::mt19937_64 rng(cfg.seed);

    if (model == PairwiseModel::Mlp) {
        SiameseMlpParams params = init_mlp(set.dim, mlp_hidden, encoder.head_out_dim, rng);
        const SiameseMlpParams zero = zero_mlp(set.dim, params.hidden, encoder.head_out_dim);
        const std::size_t n_pos = cfg.attract_clips * multi_frame;
        const std::size_t n_neg = cfg.repel_clips * repel_tracks;
        auto make = [&](std::mt19937_64& r) {
            std::vector<PairSample> out;
            for (const ConstraintPair& p : sample_pairs(set, links, r, n_pos, n_neg))
                out.push_back({p.track_a, p.track_b, {p.frame_a + 1}, {p.frame_b + 1}, p.y});
            return out;
        };
        auto grad = [&](const PairSample& s, double inv, SiameseMlpParams& g) {
            Matrix two(2, set.dim);
            const auto fa = set.tracks[s.track_a].embeddings.row(s.frames_a[0] - 1);
            const auto fb = set.tracks[s.track_b].embeddings.row(s.frames_b[0] - 1);
            std::copy(fa.begin(), fa.end(), two.row(0).begin());
            std::copy(fb.begin(), fb.end(), two.row(1).begin());
            MlpCache cache;
            const Matrix z = mlp_forward(params, two, &cache);
            if (!finite(z.data)) return std::numeric_limits<double>::quiet_NaN();
            const double loss = pairwise_contrastive_loss(z.row(0), z.row(1), s.y, cfg.margin);
            const LossGradient gi = pairwise_contrastive_grad(z.row(0), z.row(1), s.y, cfg.margin);
            Matrix dz(2, z.cols);
            for (std::size_t k = 0; k < z.cols; ++k) {
                dz(0, k) = gi.value[k] * inv;
                dz(1, k) = -gi.value[k] * inv;
            }
            mlp_backward_acc(params, cache, dz, g);
            return loss;
        };
        result.history = run_pairwise(params, zero, cfg, rng, make, grad);
        result.mlp = std::move(params);
        return result;
    }

    EncoderParams params = init_params(encoder, rng);
    const EncoderParams zero = zero_params(encoder);
    auto make = [&](std::mt19937_64& r) {
        std::vector<PairSample> out;
        for (std::size_t a = 0; a < m; ++a) {
            const std::size_t n = set.tracks[a].length();
            for (std::size_t k = 0; k < cfg.attract_clips; ++k) {
                auto fa = consecutive_frames(n, cfg, r);
                auto fb = consecutive_frames(n, cfg, r);
                out.push_back({a, a, std::move(fa), std::move(fb), 1});
            }
            if (partners[a].empty()) continue;
            std::uniform_int_distribution<std::size_t> pick(0, partners[a].size() - 1);
            for (std::size_t k = 0; k < cfg.repel_clips; ++k) {
                const std::size_t b = partners[a][pick(r)];
                auto fa = consecutive_frames(n, cfg, r);
                auto fb = consecutive_frames(set.tracks[b].length(), cfg, r);
                out.push_back({a, b, std::move(fa), std::move(fb), 0});
            }
        }
        return out;
    };
    auto grad = [&](const PairSample& s, double inv, EncoderParams& g) {
        const TrainOutput za = forward_train(params, gather_frames(set.tracks[s.track_a].embeddings, s.frames_a));
        const TrainOutput zb = forward_train(params, gather_frames(set.tracks[s.track_b].embeddings, s.frames_b));
        if (!finite(za.z_head) || !finite(zb.z_head)) return std::numeric_limits<double>::quiet_NaN();
        const double loss = pairwise_contrastive_loss(za.z_head, zb.z_head, s.y, cfg.margin);
        LossGradient gi = pairwise_contrastive_grad(za.z_head, zb.z_head, s.y, cfg.margin);
        for (double& v : gi.value) v *= inv;
        backward_acc(params, za.cache, gi.value, g);
        for (double& v : gi.value) v = -v;
        backward_acc(params, zb.cache, gi.value, g);
        return loss;
    };
    result.history = run_pairwise(params, zero, cfg, rng, make, grad);
    result.transformer = std::move(params);
    return result;
}

}  // namespace trackcentre
