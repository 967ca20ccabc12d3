#pragma once

#include <span>

namespace cbe {

/// Added inside log() for cross-entropy so confident wrong targets stay finite.
inline constexpr double kLogEpsilon = 1e-12;

/// Series whose variance falls below this are treated as constant: their
/// Pearson correlation with anything is defined as 0.
inline constexpr double kVarianceEpsilon = 1e-12;

/// -sum_c target_c * log(pred_c + kLogEpsilon)
double cross_entropy(std::span<const double> pred, std::span<const double> target);

double mean(std::span<const double> xs);

// Moments are population-normalized (divide by n).
double sample_variance(std::span<const double> xs);
double sample_covariance(std::span<const double> xs, std::span<const double> ys);

/// Pearson coefficient in [-1, 1]; 0 when either series is (near-)constant.
double pearson_correlation(std::span<const double> a, std::span<const double> b);

}  // namespace cbe
