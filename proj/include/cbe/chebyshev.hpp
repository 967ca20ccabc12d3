#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cbe/model.hpp"
#include "cbe/tensor.hpp"

namespace cbe {

/// Lemma 2 simulations need at least this many trials.
inline constexpr std::size_t kMinTrials = 1000;
/// Relative slack allowed on the variance bound.
inline constexpr double kVarianceSlack = 0.02;
/// Standard errors allowed on a Monte-Carlo tail estimate.
inline constexpr double kTailStandardErrors = 3.0;

/// M unbiased Gaussian head predictions centered on `truth` with per-head
/// variances and a common pairwise correlation.
struct SimulatedHeadModel {
    std::size_t heads = 1;
    std::vector<double> variances;
    double rho = 0.0;
    double truth = 0.5;
    std::size_t trials = 100000;

    static SimulatedHeadModel equicorrelated(std::size_t heads, double variance, double rho,
                                             std::size_t trials);
    /// Requires variances > 0 and rho within [-1/(M-1), 1].
    void validate() const;
    /// Variance of the head mean: (1/M^2) [sum var + sum_{m != j} cov].
    double ensemble_variance() const;
};

struct BoundReport {
    double epsilon = 0.0;
    double empirical_tail = 0.0;
    double chebyshev_bound = 0.0;
    double tail_slack = 0.0;
    double empirical_ensemble_variance = 0.0;
    double lemma2_bound = 0.0;
    double mean_head_variance = 0.0;
    double mean_pairwise_covariance = 0.0;
    bool tail_holds = true;
    bool variance_holds = true;
};

/// (1/eps^2)(1/M^2)[sum_m var_m + sum_m sum_{j != m} 2 cov_mj], from the
/// model's true moments. The factor 2 on ordered pairs is kept.
double chebyshev_bound(const SimulatedHeadModel& model, double epsilon);

/// Worker count: CBE_THREADS if set, otherwise hardware concurrency.
unsigned worker_threads();

/// Empirical P(|mean - truth| >= eps) against the Chebyshev bound.
BoundReport simulate_lemma1(const SimulatedHeadModel& model, double epsilon, std::uint64_t seed,
                            unsigned threads = 0);
/// One simulation shared by several epsilons.
std::vector<BoundReport> simulate_lemma1(const SimulatedHeadModel& model, std::span<const double> epsilons,
                                         std::uint64_t seed, unsigned threads = 0);

/// Variance of the head mean across trials against
/// mean head variance + (1/M) * mean pairwise covariance (empirical moments).
BoundReport simulate_lemma2(const SimulatedHeadModel& model, std::uint64_t seed, unsigned threads = 0);

/// Per-sample prediction statistics of a model under repeated weak augmentation.
/// Variances and covariances are summed over classes.
struct SampleVarianceStats {
    std::vector<double> head_variance;
    double mean_pairwise_covariance = 0.0;
    double ensemble_variance = 0.0;
    double bound = 0.0;
    bool holds = true;
};

std::vector<SampleVarianceStats> measure_trained_model(const EnsembleModel& model, const Tensor& inputs,
                                                       std::size_t augmentations, double sigma_weak,
                                                       std::uint64_t seed);

}  // namespace cbe
