#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "trackcentre/matrix.hpp"

namespace trackcentre {

/// SGD with heavy-ball momentum and decoupled-from-norms weight decay:
///   g' = g + wd * theta (decaying tensors only); v = mu * v + g'; theta -= lr * v.
/// `Params` exposes for_each(f(name, Matrix&, bool decays)).
template <class Params>
class SgdMomentum {
public:
    SgdMomentum(const Params& shape, double momentum, double weight_decay)
        : momentum_(momentum), weight_decay_(weight_decay) {
        shape.for_each([&](const std::string&, const Matrix& m, bool) { velocity_.emplace_back(m.rows, m.cols); });
    }

    void step(Params& params, const Params& grads, double lr) {
        std::vector<const Matrix*> gs;
        grads.for_each([&](const std::string&, const Matrix& m, bool) { gs.push_back(&m); });
        if (gs.size() != velocity_.size()) throw std::invalid_argument("optimizer state does not match parameters");
        std::size_t t = 0;
        params.for_each([&](const std::string&, Matrix& w, bool decays) {
            const Matrix& g = *gs[t];
            Matrix& v = velocity_[t];
            ++t;
            for (std::size_t i = 0; i < w.size(); ++i) {
                double gi = g.data[i];
                if (decays) gi += weight_decay_ * w.data[i];
                v.data[i] = momentum_ * v.data[i] + gi;
                w.data[i] -= lr * v.data[i];
            }
        });
    }

private:
    double momentum_;
    double weight_decay_;
    std::vector<Matrix> velocity_;
};

/// Cosine one-cycle schedule. Starts at max_lr / start_div, peaks at max_lr
/// after warmup_fraction * total_steps steps and anneals to
/// max_lr / final_div at step total_steps - 1.
double one_cycle_lr(std::size_t step, std::size_t total_steps, double max_lr, double warmup_fraction,
                    double start_div = 25.0, double final_div = 1e4);

}  // namespace trackcentre
