#pragma once

#include <random>
#include <string>
#include <vector>

#include "trackcentre/checkpoint.hpp"
#include "trackcentre/matrix.hpp"

namespace trackcentre {

/// Shape of the clip encoder. A zero mlp_hidden means 4 * model_dim.
struct EncoderConfig {
    std::size_t model_dim = 256;
    std::size_t layers = 4;
    std::size_t heads = 16;
    std::size_t mlp_hidden = 0;
    std::size_t head_out_dim = 2;
    bool use_positional_embedding = false;
    // Only used with positional embeddings; longest accepted token sequence.
    std::size_t max_positions = 1024;

    std::size_t ffn_width() const { return mlp_hidden == 0 ? 4 * model_dim : mlp_hidden; }
    std::size_t head_dim() const { return model_dim / heads; }
    /// Throws std::invalid_argument on an inconsistent shape.
    void validate() const;

    bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
    Matrix ln1_gain, ln1_bias;  // 1 x d
    Matrix wq, bq, wk, bk, wv, bv, wo, bo;  // d x d and 1 x d
    Matrix ln2_gain, ln2_bias;
    Matrix w1, b1;  // d x f, 1 x f
    Matrix w2, b2;  // f x d, 1 x d

    bool operator==(const LayerParams&) const = default;
};

/// All learnable tensors of the encoder. Weights are stored input-major so a
/// projection is `tokens * w + b`.
struct EncoderParams {
    EncoderConfig config;
    Matrix class_token;  // 1 x d
    Matrix positional;   // max_positions x d, empty unless enabled
    std::vector<LayerParams> layers;
    Matrix head_ln_gain, head_ln_bias;  // 1 x d
    Matrix head_w, head_b;              // d x z, 1 x z

    /// Visits every tensor as f(name, tensor, decays). `decays` marks the
    /// projection matrices that receive weight decay.
    template <class F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each(F&& f) const {
        visit(*this, f);
    }

    std::size_t parameter_count() const;
    bool operator==(const EncoderParams&) const = default;

private:
    template <class Self, class F>
    static void visit(Self& self, F& f) {
        f("class_token", self.class_token, false);
        if (self.config.use_positional_embedding) f("positional", self.positional, false);
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            auto& p = self.layers[l];
            const std::string pre = "layer" + std::to_string(l) + ".";
            f(pre + "ln1_gain", p.ln1_gain, false);
            f(pre + "ln1_bias", p.ln1_bias, false);
            f(pre + "wq", p.wq, true);
            f(pre + "bq", p.bq, false);
            f(pre + "wk", p.wk, true);
            f(pre + "bk", p.bk, false);
            f(pre + "wv", p.wv, true);
            f(pre + "bv", p.bv, false);
            f(pre + "wo", p.wo, true);
            f(pre + "bo", p.bo, false);
            f(pre + "ln2_gain", p.ln2_gain, false);
            f(pre + "ln2_bias", p.ln2_bias, false);
            f(pre + "w1", p.w1, true);
            f(pre + "b1", p.b1, false);
            f(pre + "w2", p.w2, true);
            f(pre + "b2", p.b2, false);
        }
        f("head_ln_gain", self.head_ln_gain, false);
        f("head_ln_bias", self.head_ln_bias, false);
        f("head_w", self.head_w, true);
        f("head_b", self.head_b, false);
    }
};

using ParamGrads = EncoderParams;

/// Zero-valued tensors with the shapes of `config`.
EncoderParams zero_params(const EncoderConfig& config);
/// Projections ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, LayerNorm
/// gains 1, class token and positional table ~ N(0, 0.02^2).
EncoderParams init_params(const EncoderConfig& config, std::mt19937_64& rng);

/// Activations kept by forward_train for the backward pass.
struct ForwardCache {
    struct Norm {
        Matrix normed;  // (x - mean) * rstd, before gain and bias
        Vector rstd;
    };
    struct Layer {
        Matrix input;  // residual stream entering the layer
        Norm ln1;
        Matrix a, q, k, v;
        std::vector<Matrix> probs;  // one T x T softmax matrix per head
        Matrix attn;                // concatenated head outputs, T x d
        Matrix mid;                 // residual stream after attention
        Norm ln2;
        Matrix b, pre, act;         // LN2 output, MLP pre-activation, GELU output
    };
    std::size_t tokens = 0;  // clip length + 1
    std::vector<Layer> layers;
    Matrix final_state;  // residual stream after the last layer
    Norm head_ln;
    Matrix head_in;      // 1 x d, head LayerNorm output
};

struct TrainOutput {
    Vector z_head;
    ForwardCache cache;
};

/// Class-token representation through the head. Frames are the rows of `clip`.
TrainOutput forward_train(const EncoderParams& params, const Matrix& clip);
/// Same as forward_train without keeping activations.
Vector forward_head(const EncoderParams& params, const Matrix& clip);
/// Class-token state after the last layer, before the head.
Vector forward_eval(const EncoderParams& params, const Matrix& frames);
/// Head LayerNorm + projection applied to a class-token state.
Vector apply_head(const EncoderParams& params, std::span<const double> z_cls);

/// Accumulates d(grad_z . z_head)/d(theta) into `grads`.
void backward_acc(const EncoderParams& params, const ForwardCache& cache, std::span<const double> grad_z,
                  ParamGrads& grads);
ParamGrads backward(const EncoderParams& params, const ForwardCache& cache, std::span<const double> grad_z);

struct AttentionProfile {
    Vector scores;  // unit L2 norm, one per frame
    double sigma = 0.0;
};
/// Final-layer attention from the class-token query to each frame, averaged
/// over heads and L2-normalised.
AttentionProfile attention_profile(const EncoderParams& params, const Matrix& frames);

/// Elementwise helpers on parameter-shaped objects.
void axpy(double alpha, const EncoderParams& x, EncoderParams& y);
void scale(EncoderParams& x, double alpha);
bool all_finite(const EncoderParams& p);

nlohmann::json config_to_json(const EncoderConfig& config);
EncoderConfig config_from_json(const nlohmann::json& j);

/// Checkpoint conversion. `kind` tags the training method in the header.
Checkpoint encoder_checkpoint(const EncoderParams& params, const std::string& kind);
EncoderParams encoder_from_checkpoint(const Checkpoint& ckpt);

}  // namespace trackcentre
