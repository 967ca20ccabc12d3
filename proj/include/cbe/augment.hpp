#pragma once

#include "cbe/rng.hpp"
#include "cbe/tensor.hpp"

namespace cbe {

/// Vector-space stand-ins for the weak (flip/crop) and strong (RandAugment)
/// image pipelines.
struct AugmentConfig {
    double sigma_weak = 0.1;
    double sigma_strong = 0.3;
    double p_drop = 0.1;
    double scale = 0.2;

    bool operator==(const AugmentConfig&) const = default;
};

/// x + N(0, sigma^2) per feature.
Tensor augment_weak(const Tensor& x, double sigma, Rng& rng);

/// Per sample: s * (x + N(0, sigma_strong^2)) with s ~ U[1 - scale, 1 + scale],
/// then each feature zeroed with probability p_drop.
Tensor augment_strong(const Tensor& x, const AugmentConfig& config, Rng& rng);

}  // namespace cbe
