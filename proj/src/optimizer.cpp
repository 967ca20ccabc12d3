#include "cbe/optimizer.hpp"

#include "cbe/error.hpp"

namespace cbe {

OptimizerState make_optimizer_state(std::span<const Tensor> params)
{
    OptimizerState state;
    state.velocity.reserve(params.size());
    for (const auto& p : params) {
        state.velocity.emplace_back(p.shape());
    }
    return state;
}

void sgd_nesterov_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                       double lr, double momentum, bool nesterov)
{
    require(params.size() == grads.size() && params.size() == state.velocity.size(),
            "sgd: parameter, gradient and velocity counts differ");
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& p = params[t];
        const Tensor& g = grads[t];
        Tensor& v = state.velocity[t];
        require(p.shape() == g.shape() && p.shape() == v.shape(),
                "sgd: shape mismatch at parameter " + std::to_string(t));
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = momentum * v[i] + g[i];
            p[i] -= nesterov ? lr * (g[i] + momentum * v[i]) : lr * v[i];
        }
    }
    ++state.step;
}

EmaModel make_ema(std::span<const Tensor> params, double decay)
{
    require(decay >= 0.0 && decay <= 1.0, "EMA decay must lie in [0, 1]");
    return EmaModel{std::vector<Tensor>(params.begin(), params.end()), decay};
}

void ema_update(EmaModel& ema, std::span<const Tensor> params)
{
    require(params.size() == ema.shadow.size(), "EMA: parameter count mismatch");
    const double keep = ema.decay;
    const double take = 1.0 - ema.decay;
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& s = ema.shadow[t];
        require(s.shape() == params[t].shape(), "EMA: shape mismatch at parameter " + std::to_string(t));
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] = keep * s[i] + take * params[t][i];
        }
    }
}

}  // namespace cbe
