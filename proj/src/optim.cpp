#include "trackcentre/optim.hpp"

#include <cmath>
#include <numbers>

namespace trackcentre {

double one_cycle_lr(std::size_t step, std::size_t total_steps, double max_lr, double warmup_fraction,
                    double start_div, double final_div) {
    if (total_steps == 0 || step >= total_steps) throw std::out_of_range("one-cycle step out of range");
    const double start = max_lr / start_div;
    const double final = max_lr / final_div;
    const double peak = warmup_fraction * static_cast<double>(total_steps);
    const double last = static_cast<double>(total_steps - 1);
    const auto s = static_cast<double>(step);
    if (s <= peak) {
        if (peak == 0.0) return max_lr;
        return max_lr - (max_lr - start) * (1.0 + std::cos(std::numbers::pi * s / peak)) / 2.0;
    }
    if (last <= peak) return final;
    return final + (max_lr - final) * (1.0 + std::cos(std::numbers::pi * (s - peak) / (last - peak))) / 2.0;
}

}  // namespace trackcentre
