#include "trackcentre/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "trackcentre/activation.hpp"
#include "trackcentre/kernels.hpp"

namespace trackcentre {

namespace {

constexpr double kLnEps = 1e-6;

Matrix row_param(std::size_t cols, double fill) { return Matrix(1, cols, fill); }

void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& out, ForwardCache::Norm* keep) {
    const std::size_t n = x.rows, d = x.cols;
    out = Matrix(n, d);
    if (keep) {
        keep->normed = Matrix(n, d);
        keep->rstd.assign(n, 0.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto xr = x.row(i);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mean) * rstd;
            out(i, j) = h * gain(0, j) + bias(0, j);
            if (keep) keep->normed(i, j) = h;
        }
        if (keep) keep->rstd[i] = rstd;
    }
}

// dy -> dx for one LayerNorm, accumulating gain/bias gradients.
Matrix layer_norm_backward(const Matrix& dy, const ForwardCache::Norm& cache, const Matrix& gain, Matrix& dgain,
                           Matrix& dbias) {
    const std::size_t n = dy.rows, d = dy.cols;
    Matrix dx(n, d);
    Vector dxhat(d);
    for (std::size_t i = 0; i < n; ++i) {
        double mean_dxhat = 0.0, mean_dxhat_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = cache.normed(i, j);
            dgain(0, j) += dy(i, j) * h;
            dbias(0, j) += dy(i, j);
            dxhat[j] = dy(i, j) * gain(0, j);
            mean_dxhat += dxhat[j];
            mean_dxhat_h += dxhat[j] * h;
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_h /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j)
            dx(i, j) = cache.rstd[i] * (dxhat[j] - mean_dxhat - cache.normed(i, j) * mean_dxhat_h);
    }
    return dx;
}

void affine(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& out) {
    kernels::gemm(x, w, out);
    kernels::add_bias(out, b);
}

// Multi-head scaled dot-product attention over the rows of q, k, v.
void attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads, Matrix& out,
               std::vector<Matrix>* probs_out) {
    const std::size_t t = q.rows, d = q.cols, dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    out = Matrix(t, d);
    if (probs_out) probs_out->assign(heads, Matrix());
    Matrix p(t, t);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < t; ++i) {
            double mx = -INFINITY;
            for (std::size_t j = 0; j < t; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
                p(i, j) = s * scale;
                mx = std::max(mx, p(i, j));
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < t; ++j) {
                p(i, j) = std::exp(p(i, j) - mx);
                sum += p(i, j);
            }
            for (std::size_t j = 0; j < t; ++j) p(i, j) /= sum;
            for (std::size_t j = 0; j < t; ++j) {
                const double w = p(i, j);
                for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += w * v(j, off + c);
            }
        }
        if (probs_out) (*probs_out)[h] = p;
    }
}

void check_input(const EncoderParams& params, const Matrix& clip) {
    const auto& cfg = params.config;
    if (clip.rows == 0) throw std::invalid_argument("clip must contain at least one frame");
    if (clip.cols != cfg.model_dim)
        throw std::invalid_argument("dimension mismatch: clip has dim " + std::to_string(clip.cols) +
                                    ", encoder expects " + std::to_string(cfg.model_dim));
    if (cfg.use_positional_embedding && clip.rows + 1 > cfg.max_positions)
        throw std::invalid_argument("clip longer than the positional table");
    for (double v : clip.data)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite value in clip");
}

// Runs the token stack and returns the final residual stream (T x d).
Matrix encode(const EncoderParams& params, const Matrix& clip, ForwardCache* cache) {
    check_input(params, clip);
    const auto& cfg = params.config;
    const std::size_t t = clip.rows + 1, d = cfg.model_dim;

    Matrix x(t, d);
    std::copy(params.class_token.data.begin(), params.class_token.data.end(), x.data.begin());
    std::copy(clip.data.begin(), clip.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(d));
    if (cfg.use_positional_embedding)
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < d; ++j) x(i, j) += params.positional(i, j);

    if (cache) {
        cache->tokens = t;
        cache->layers.assign(params.layers.size(), {});
    }
    Matrix a, q, k, v, attn, proj, b, pre, hidden;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& p = params.layers[l];
        ForwardCache::Layer* lc = cache ? &cache->layers[l] : nullptr;
        if (lc) lc->input = x;

        layer_norm(x, p.ln1_gain, p.ln1_bias, a, lc ? &lc->ln1 : nullptr);
        affine(a, p.wq, p.bq, q);
        affine(a, p.wk, p.bk, k);
        affine(a, p.wv, p.bv, v);
        attention(q, k, v, cfg.heads, attn, lc ? &lc->probs : nullptr);
        affine(attn, p.wo, p.bo, proj);
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += proj.data[i];
        if (lc) {
            lc->a = a;
            lc->q = q;
            lc->k = k;
            lc->v = v;
            lc->attn = attn;
            lc->mid = x;
        }

        layer_norm(x, p.ln2_gain, p.ln2_bias, b, lc ? &lc->ln2 : nullptr);
        affine(b, p.w1, p.b1, pre);
        hidden = Matrix(pre.rows, pre.cols);
        for (std::size_t i = 0; i < pre.size(); ++i) hidden.data[i] = gelu(pre.data[i]);
        affine(hidden, p.w2, p.b2, proj);
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += proj.data[i];
        if (lc) {
            lc->b = b;
            lc->pre = pre;
            lc->act = hidden;
        }
    }
    if (cache) cache->final_state = x;
    return x;
}

Vector head_forward(const EncoderParams& params, std::span<const double> z_cls, ForwardCache* cache) {
    const std::size_t d = params.config.model_dim;
    if (z_cls.size() != d) throw std::invalid_argument("dimension mismatch: class state has wrong size");
    Matrix cls(1, d);
    std::copy(z_cls.begin(), z_cls.end(), cls.data.begin());
    Matrix u, z;
    layer_norm(cls, params.head_ln_gain, params.head_ln_bias, u, cache ? &cache->head_ln : nullptr);
    affine(u, params.head_w, params.head_b, z);
    if (cache) cache->head_in = u;
    return z.data;
}

}  // namespace

void EncoderConfig::validate() const {
    if (model_dim == 0) throw std::invalid_argument("encoder config: model_dim must be >= 1");
    if (layers < 1) throw std::invalid_argument("encoder config: layers must be >= 1");
    if (heads < 1 || model_dim % heads != 0)
        throw std::invalid_argument("encoder config: model_dim " + std::to_string(model_dim) +
                                    " is not divisible by heads " + std::to_string(heads));
    if (head_out_dim < 1) throw std::invalid_argument("encoder config: head_out_dim must be >= 1");
    if (use_positional_embedding && max_positions < 2)
        throw std::invalid_argument("encoder config: max_positions must be >= 2");
}

std::size_t EncoderParams::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m, bool) { n += m.size(); });
    return n;
}

EncoderParams zero_params(const EncoderConfig& config) {
    config.validate();
    const std::size_t d = config.model_dim, f = config.ffn_width(), z = config.head_out_dim;
    EncoderParams p;
    p.config = config;
    p.config.mlp_hidden = f;
    p.class_token = row_param(d, 0.0);
    if (config.use_positional_embedding) p.positional = Matrix(config.max_positions, d);
    p.layers.resize(config.layers);
    for (auto& l : p.layers) {
        l.ln1_gain = row_param(d, 0.0);
        l.ln1_bias = row_param(d, 0.0);
        l.wq = Matrix(d, d);
        l.wk = Matrix(d, d);
        l.wv = Matrix(d, d);
        l.wo = Matrix(d, d);
        l.bq = row_param(d, 0.0);
        l.bk = row_param(d, 0.0);
        l.bv = row_param(d, 0.0);
        l.bo = row_param(d, 0.0);
        l.ln2_gain = row_param(d, 0.0);
        l.ln2_bias = row_param(d, 0.0);
        l.w1 = Matrix(d, f);
        l.b1 = row_param(f, 0.0);
        l.w2 = Matrix(f, d);
        l.b2 = row_param(d, 0.0);
    }
    p.head_ln_gain = row_param(d, 0.0);
    p.head_ln_bias = row_param(d, 0.0);
    p.head_w = Matrix(d, z);
    p.head_b = row_param(z, 0.0);
    return p;
}

EncoderParams init_params(const EncoderConfig& config, std::mt19937_64& rng) {
    EncoderParams p = zero_params(config);
    std::normal_distribution<double> token(0.0, 0.02);
    auto uniform_fill = [&](Matrix& w) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : w.data) v = u(rng);
    };
    for (double& v : p.class_token.data) v = token(rng);
    for (double& v : p.positional.data) v = token(rng);
    for (auto& l : p.layers) {
        std::fill(l.ln1_gain.data.begin(), l.ln1_gain.data.end(), 1.0);
        std::fill(l.ln2_gain.data.begin(), l.ln2_gain.data.end(), 1.0);
        uniform_fill(l.wq);
        uniform_fill(l.wk);
        uniform_fill(l.wv);
        uniform_fill(l.wo);
        uniform_fill(l.w1);
        uniform_fill(l.w2);
    }
    std::fill(p.head_ln_gain.data.begin(), p.head_ln_gain.data.end(), 1.0);
    uniform_fill(p.head_w);
    return p;
}

TrainOutput forward_train(const EncoderParams& params, const Matrix& clip) {
    TrainOutput out;
    const Matrix x = encode(params, clip, &out.cache);
    out.z_head = head_forward(params, x.row(0), &out.cache);
    return out;
}

Vector forward_head(const EncoderParams& params, const Matrix& clip) {
    const Matrix x = encode(params, clip, nullptr);
    return head_forward(params, x.row(0), nullptr);
}

Vector forward_eval(const EncoderParams& params, const Matrix& frames) {
    const Matrix x = encode(params, frames, nullptr);
    const auto r = x.row(0);
    return Vector(r.begin(), r.end());
}

Vector apply_head(const EncoderParams& params, std::span<const double> z_cls) {
    return head_forward(params, z_cls, nullptr);
}

void backward_acc(const EncoderParams& params, const ForwardCache& cache, std::span<const double> grad_z,
                  ParamGrads& g) {
    const auto& cfg = params.config;
    const std::size_t d = cfg.model_dim, t = cache.tokens, heads = cfg.heads, dh = cfg.head_dim();
    if (cache.layers.size() != params.layers.size() || cache.final_state.rows != t || cache.final_state.cols != d ||
        cache.head_in.cols != d)
        throw std::invalid_argument("forward cache does not match encoder params");
    if (grad_z.size() != cfg.head_out_dim) throw std::invalid_argument("gradient size does not match head output");
    if (!(g.config == cfg)) throw std::invalid_argument("gradient buffer shape does not match encoder params");

    // Head.
    Matrix gz(1, grad_z.size());
    std::copy(grad_z.begin(), grad_z.end(), gz.data.begin());
    kernels::gemm_at_acc(cache.head_in, gz, g.head_w);
    kernels::col_sum_acc(gz, g.head_b);
    Matrix du;
    kernels::gemm_bt(gz, params.head_w, du);
    const Matrix dcls = layer_norm_backward(du, cache.head_ln, params.head_ln_gain, g.head_ln_gain, g.head_ln_bias);

    Matrix dx(t, d);
    std::copy(dcls.data.begin(), dcls.data.end(), dx.data.begin());

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix dact, dpre, db, dmid, dattn, dq, dk, dv, da, tmp;
    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& p = params.layers[li];
        const auto& c = cache.layers[li];
        auto& gl = g.layers[li];

        // x_out = mid + gelu(LN2(mid) w1 + b1) w2 + b2
        kernels::gemm_at_acc(c.act, dx, gl.w2);
        kernels::col_sum_acc(dx, gl.b2);
        kernels::gemm_bt(dx, p.w2, dact);
        dpre = Matrix(dact.rows, dact.cols);
        for (std::size_t i = 0; i < dpre.size(); ++i) dpre.data[i] = dact.data[i] * gelu_grad(c.pre.data[i]);
        kernels::gemm_at_acc(c.b, dpre, gl.w1);
        kernels::col_sum_acc(dpre, gl.b1);
        kernels::gemm_bt(dpre, p.w1, db);
        dmid = layer_norm_backward(db, c.ln2, p.ln2_gain, gl.ln2_gain, gl.ln2_bias);
        for (std::size_t i = 0; i < dmid.size(); ++i) dmid.data[i] += dx.data[i];

        // mid = input + MSA(LN1(input)) wo + bo
        kernels::gemm_at_acc(c.attn, dmid, gl.wo);
        kernels::col_sum_acc(dmid, gl.bo);
        kernels::gemm_bt(dmid, p.wo, dattn);

        dq = Matrix(t, d);
        dk = Matrix(t, d);
        dv = Matrix(t, d);
        Vector dp(t);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            const Matrix& pr = c.probs[h];
            for (std::size_t i = 0; i < t; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < t; ++j) {
                    double s = 0.0;
                    for (std::size_t cc = 0; cc < dh; ++cc) s += dattn(i, off + cc) * c.v(j, off + cc);
                    dp[j] = s;
                    dot += s * pr(i, j);
                }
                for (std::size_t j = 0; j < t; ++j) {
                    const double pij = pr(i, j);
                    for (std::size_t cc = 0; cc < dh; ++cc) dv(j, off + cc) += pij * dattn(i, off + cc);
                    const double ds = pij * (dp[j] - dot) * scale;
                    for (std::size_t cc = 0; cc < dh; ++cc) {
                        dq(i, off + cc) += ds * c.k(j, off + cc);
                        dk(j, off + cc) += ds * c.q(i, off + cc);
                    }
                }
            }
        }
        kernels::gemm_at_acc(c.a, dq, gl.wq);
        kernels::gemm_at_acc(c.a, dk, gl.wk);
        kernels::gemm_at_acc(c.a, dv, gl.wv);
        kernels::col_sum_acc(dq, gl.bq);
        kernels::col_sum_acc(dk, gl.bk);
        kernels::col_sum_acc(dv, gl.bv);
        kernels::gemm_bt(dq, p.wq, da);
        kernels::gemm_bt(dk, p.wk, tmp);
        for (std::size_t i = 0; i < da.size(); ++i) da.data[i] += tmp.data[i];
        kernels::gemm_bt(dv, p.wv, tmp);
        for (std::size_t i = 0; i < da.size(); ++i) da.data[i] += tmp.data[i];
        dx = layer_norm_backward(da, c.ln1, p.ln1_gain, gl.ln1_gain, gl.ln1_bias);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dmid.data[i];
    }

    for (std::size_t j = 0; j < d; ++j) g.class_token(0, j) += dx(0, j);
    if (cfg.use_positional_embedding)
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < d; ++j) g.positional(i, j) += dx(i, j);
}

ParamGrads backward(const EncoderParams& params, const ForwardCache& cache, std::span<const double> grad_z) {
    ParamGrads g = zero_params(params.config);
    backward_acc(params, cache, grad_z, g);
    return g;
}

AttentionProfile attention_profile(const EncoderParams& params, const Matrix& frames) {
    TrainOutput out = forward_train(params, frames);
    const auto& probs = out.cache.layers.back().probs;
    const std::size_t n = frames.rows;
    AttentionProfile prof;
    prof.scores.assign(n, 0.0);
    for (const auto& p : probs)
        for (std::size_t f = 0; f < n; ++f) prof.scores[f] += p(0, f + 1);
    double norm = 0.0;
    for (double& s : prof.scores) {
        s /= static_cast<double>(probs.size());
        norm += s * s;
    }
    norm = std::sqrt(norm);
    for (double& s : prof.scores) s /= norm;
    double mean = 0.0;
    for (double s : prof.scores) mean += s;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double s : prof.scores) var += (s - mean) * (s - mean);
    prof.sigma = std::sqrt(var / static_cast<double>(n));
    return prof;
}

void axpy(double alpha, const EncoderParams& x, EncoderParams& y) {
    std::vector<const Matrix*> xs;
    x.for_each([&](const std::string&, const Matrix& m, bool) { xs.push_back(&m); });
    std::size_t i = 0;
    y.for_each([&](const std::string&, Matrix& m, bool) {
        const Matrix& src = *xs.at(i++);
        if (!src.same_shape(m)) throw std::invalid_argument("axpy shape mismatch");
        for (std::size_t k = 0; k < m.size(); ++k) m.data[k] += alpha * src.data[k];
    });
}

void scale(EncoderParams& x, double alpha) {
    x.for_each([&](const std::string&, Matrix& m, bool) {
        for (double& v : m.data) v *= alpha;
    });
}

bool all_finite(const EncoderParams& p) {
    bool ok = true;
    p.for_each([&](const std::string&, const Matrix& m, bool) {
        for (double v : m.data) ok = ok && std::isfinite(v);
    });
    return ok;
}

nlohmann::json config_to_json(const EncoderConfig& c) {
    return {{"model_dim", c.model_dim},
            {"layers", c.layers},
            {"heads", c.heads},
            {"mlp_hidden", c.ffn_width()},
            {"head_out_dim", c.head_out_dim},
            {"use_positional_embedding", c.use_positional_embedding},
            {"max_positions", c.max_positions}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.mlp_hidden = j.value("mlp_hidden", std::size_t{0});
    c.head_out_dim = j.at("head_out_dim").get<std::size_t>();
    c.use_positional_embedding = j.value("use_positional_embedding", false);
    c.max_positions = j.value("max_positions", c.max_positions);
    c.validate();
    return c;
}

Checkpoint encoder_checkpoint(const EncoderParams& params, const std::string& kind) {
    Checkpoint ckpt;
    ckpt.header = {{"format", "TCV1"}, {"model", "transformer"}, {"kind", kind}, {"config", config_to_json(params.config)}};
    params.for_each([&](const std::string& name, const Matrix& m, bool) { ckpt.tensors.emplace_back(name, m); });
    return ckpt;
}

EncoderParams encoder_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.header.value("model", std::string()) != "transformer")
        throw std::runtime_error("checkpoint does not hold a transformer encoder");
    EncoderConfig cfg = config_from_json(ckpt.header.at("config"));
    EncoderParams p = zero_params(cfg);
    p.for_each([&](const std::string& name, Matrix& m, bool) {
        const Matrix& src = ckpt.tensor(name);
        if (!src.same_shape(m)) throw std::runtime_error("checkpoint tensor '" + name + "' has the wrong shape");
        m = src;
    });
    return p;
}

}  // namespace trackcentre
