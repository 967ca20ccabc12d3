#include "cbe/augment.hpp"

#include <random>

#include "cbe/error.hpp"

namespace cbe {

Tensor augment_weak(const Tensor& x, double sigma, Rng& rng)
{
    require(sigma >= 0.0, "sigma_weak must be >= 0");
    Tensor out = x;
    if (sigma == 0.0) {
        return out;
    }
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& v : out.data()) {
        v += noise(rng);
    }
    return out;
}

Tensor augment_strong(const Tensor& x, const AugmentConfig& config, Rng& rng)
{
    require(config.sigma_strong >= 0.0, "sigma_strong must be >= 0");
    require(config.p_drop >= 0.0 && config.p_drop <= 1.0, "p_drop must lie in [0, 1]");
    require(config.scale >= 0.0 && config.scale < 1.0, "scale must lie in [0, 1)");
    require(x.rank() == 2, "augment_strong expects [batch, D]");

    Tensor out = x;
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < out.dim(0); ++i) {
        const double s =
            config.scale > 0.0 ? 1.0 - config.scale + 2.0 * config.scale * unit(rng) : 1.0;
        for (double& v : out.row(i)) {
            if (config.sigma_strong > 0.0) {
                v += config.sigma_strong * noise(rng);
            }
            v *= s;
            if (config.p_drop > 0.0 && unit(rng) < config.p_drop) {
                v = 0.0;
            }
        }
    }
    return out;
}

}  // namespace cbe
