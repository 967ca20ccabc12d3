#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cbe/tensor.hpp"

namespace cbe {

struct OptimizerState {
    std::vector<Tensor> velocity;
    std::size_t step = 0;
};

OptimizerState make_optimizer_state(std::span<const Tensor> params);

/// v <- momentum * v + g, then p <- p - lr * (g + momentum * v) with
/// Nesterov enabled, p <- p - lr * v otherwise.
void sgd_nesterov_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                       double lr, double momentum, bool nesterov = true);

/// Exponential moving average of the parameter trajectory.
struct EmaModel {
    std::vector<Tensor> shadow;
    double decay = 0.999;
};

EmaModel make_ema(std::span<const Tensor> params, double decay);

/// shadow <- decay * shadow + (1 - decay) * param
void ema_update(EmaModel& ema, std::span<const Tensor> params);

}  // namespace cbe
