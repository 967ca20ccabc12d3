#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "cbe/tensor.hpp"

namespace cbe {

struct FixedThreshold {
    double tau = 0.9;
};

/// Simplified self-adaptive threshold: an EMA of the batch mean max
/// confidence, modulated per class by the normalized EMA of the batch mean
/// class distribution.
struct AdaptiveThreshold {
    double global_estimate = 0.5;
    std::vector<double> per_class_estimates;
    double decay = 0.999;
};

class ThresholdPolicy {
public:
    using Variant = std::variant<FixedThreshold, AdaptiveThreshold>;

    static ThresholdPolicy fixed(double tau);
    /// Starts with every estimate at 1/K.
    static ThresholdPolicy adaptive(std::size_t classes, double decay);

    const Variant& state() const { return state_; }
    bool is_adaptive() const { return std::holds_alternative<AdaptiveThreshold>(state_); }

    /// Per-class thresholds, each in (0, 1].
    std::vector<double> current_threshold(std::size_t classes) const;

private:
    explicit ThresholdPolicy(Variant state) : state_(std::move(state)) {}
    Variant state_;

    friend ThresholdPolicy update_adaptive(const ThresholdPolicy&, std::span<const double>,
                                           std::span<const double>);
};

/// EMA step of the adaptive estimates. Throws on a fixed policy.
ThresholdPolicy update_adaptive(const ThresholdPolicy& policy,
                                std::span<const double> batch_max_confidences,
                                std::span<const double> batch_mean_distribution);

/// Ensemble majority threshold used when none is configured.
inline constexpr double kDefaultGamma = 0.5;

struct SamplingReport {
    double eta = 0.0;
    double eta_cbe = 0.0;
    double gamma = kDefaultGamma;
};

/// Fraction of rows of [N, K] whose max confidence strictly exceeds tau.
double sampling_rate(const Tensor& preds, double tau);
/// Same, against the threshold of each row's argmax class.
double sampling_rate(const Tensor& preds, std::span<const double> class_thresholds);

/// Fraction of samples of [N, M, K] whose share of passing heads strictly
/// exceeds gamma.
double cbe_sampling_rate(const Tensor& head_preds, double tau, double gamma);
double cbe_sampling_rate(const Tensor& head_preds, std::span<const double> class_thresholds,
                         double gamma);

/// Heads of sample i passing their argmax class threshold.
std::size_t passing_heads(const Tensor& head_preds, std::size_t i,
                          std::span<const double> class_thresholds);

}  // namespace cbe
