#include "cbe/pseudo_label.hpp"

#include <algorithm>
#include <string>

#include "cbe/error.hpp"

namespace cbe {

ThresholdPolicy ThresholdPolicy::fixed(double tau)
{
    require(tau > 0.0 && tau < 1.0, "policy.tau must lie in (0, 1), got " + std::to_string(tau));
    return ThresholdPolicy(FixedThreshold{tau});
}

ThresholdPolicy ThresholdPolicy::adaptive(std::size_t classes, double decay)
{
    require(classes >= 2, "adaptive threshold needs K >= 2");
    require(decay > 0.0 && decay < 1.0,
            "policy.decay must lie in (0, 1), got " + std::to_string(decay));
    const double uniform = 1.0 / static_cast<double>(classes);
    return ThresholdPolicy(AdaptiveThreshold{uniform, std::vector<double>(classes, uniform), decay});
}

std::vector<double> ThresholdPolicy::current_threshold(std::size_t classes) const
{
    if (const auto* f = std::get_if<FixedThreshold>(&state_)) {
        return std::vector<double>(classes, f->tau);
    }
    const auto& a = std::get<AdaptiveThreshold>(state_);
    require(a.per_class_estimates.size() == classes, "adaptive threshold has wrong class count");
    const double peak = *std::max_element(a.per_class_estimates.begin(), a.per_class_estimates.end());
    std::vector<double> out(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        out[c] = a.global_estimate * a.per_class_estimates[c] / peak;
    }
    return out;
}

ThresholdPolicy update_adaptive(const ThresholdPolicy& policy,
                                std::span<const double> batch_max_confidences,
                                std::span<const double> batch_mean_distribution)
{
    const auto* current = std::get_if<AdaptiveThreshold>(&policy.state_);
    require(current != nullptr, "update_adaptive called on a fixed threshold policy");
    require(!batch_max_confidences.empty(), "update_adaptive: empty batch");
    require(batch_mean_distribution.size() == current->per_class_estimates.size(),
            "update_adaptive: class count mismatch");

    double batch_mean = 0.0;
    for (double v : batch_max_confidences) {
        batch_mean += v;
    }
    batch_mean /= static_cast<double>(batch_max_confidences.size());

    AdaptiveThreshold next = *current;
    next.global_estimate = next.decay * next.global_estimate + (1.0 - next.decay) * batch_mean;
    for (std::size_t c = 0; c < next.per_class_estimates.size(); ++c) {
        next.per_class_estimates[c] =
            next.decay * next.per_class_estimates[c] + (1.0 - next.decay) * batch_mean_distribution[c];
    }
    return ThresholdPolicy(std::move(next));
}

namespace {

bool row_passes(std::span<const double> row, std::span<const double> thresholds)
{
    const auto best = std::max_element(row.begin(), row.end());
    return *best > thresholds[static_cast<std::size_t>(best - row.begin())];
}

}  // namespace

double sampling_rate(const Tensor& preds, std::span<const double> class_thresholds)
{
    require(preds.rank() == 2, "sampling_rate expects [N, K], got " + shape_string(preds.shape()));
    const std::size_t n = preds.dim(0);
    require(n > 0, "sampling_rate: empty batch");
    require(class_thresholds.size() == preds.dim(1), "sampling_rate: one threshold per class");
    std::size_t passed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        passed += row_passes(preds.row(i), class_thresholds) ? 1 : 0;
    }
    return static_cast<double>(passed) / static_cast<double>(n);
}

double sampling_rate(const Tensor& preds, double tau)
{
    require(preds.rank() == 2, "sampling_rate expects [N, K], got " + shape_string(preds.shape()));
    const std::vector<double> thresholds(preds.dim(1), tau);
    return sampling_rate(preds, thresholds);
}

std::size_t passing_heads(const Tensor& head_preds, std::size_t i,
                          std::span<const double> class_thresholds)
{
    const std::size_t heads = head_preds.dim(1), k = head_preds.dim(2);
    const auto sample = head_preds.data().subspan(i * heads * k, heads * k);
    std::size_t passing = 0;
    for (std::size_t m = 0; m < heads; ++m) {
        passing += row_passes(sample.subspan(m * k, k), class_thresholds) ? 1 : 0;
    }
    return passing;
}

double cbe_sampling_rate(const Tensor& head_preds, std::span<const double> class_thresholds,
                         double gamma)
{
    require(head_preds.rank() == 3,
            "cbe_sampling_rate expects [N, M, K], got " + shape_string(head_preds.shape()));
    const std::size_t n = head_preds.dim(0), heads = head_preds.dim(1);
    require(n > 0, "cbe_sampling_rate: empty batch");
    require(heads > 0, "cbe_sampling_rate: no heads");
    require(class_thresholds.size() == head_preds.dim(2), "cbe_sampling_rate: one threshold per class");
    require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1), got " + std::to_string(gamma));
    std::size_t counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double share = static_cast<double>(passing_heads(head_preds, i, class_thresholds)) /
                             static_cast<double>(heads);
        counted += share > gamma ? 1 : 0;
    }
    return static_cast<double>(counted) / static_cast<double>(n);
}

double cbe_sampling_rate(const Tensor& head_preds, double tau, double gamma)
{
    require(head_preds.rank() == 3,
            "cbe_sampling_rate expects [N, M, K], got " + shape_string(head_preds.shape()));
    const std::vector<double> thresholds(head_preds.dim(2), tau);
    return cbe_sampling_rate(head_preds, thresholds, gamma);
}

}  // namespace cbe
