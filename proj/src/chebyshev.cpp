#include "cbe/chebyshev.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <string>
#include <thread>

#include "cbe/augment.hpp"
#include "cbe/error.hpp"
#include "cbe/rng.hpp"

namespace cbe {

SimulatedHeadModel SimulatedHeadModel::equicorrelated(std::size_t heads, double variance, double rho,
                                                      std::size_t trials)
{
    SimulatedHeadModel m;
    m.heads = heads;
    m.variances.assign(heads, variance);
    m.rho = rho;
    m.trials = trials;
    return m;
}

void SimulatedHeadModel::validate() const
{
    require(heads >= 1, "M must be >= 1");
    require(variances.size() == heads, "need one variance per head");
    for (double v : variances) {
        require(v > 0.0 && std::isfinite(v), "sigma2 must be > 0");
    }
    const double lower = heads >= 2 ? -1.0 / static_cast<double>(heads - 1) : -1.0;
    require(rho >= lower - 1e-12 && rho <= 1.0,
            "rho = " + std::to_string(rho) + " outside the valid equicorrelation range [" +
                std::to_string(lower) + ", 1]");
    require(trials >= 1, "trials must be >= 1");
}

double SimulatedHeadModel::ensemble_variance() const
{
    double total = 0.0;
    for (std::size_t m = 0; m < heads; ++m) {
        for (std::size_t j = 0; j < heads; ++j) {
            const double corr = m == j ? 1.0 : rho;
            total += corr * std::sqrt(variances[m] * variances[j]);
        }
    }
    return total / static_cast<double>(heads * heads);
}

double chebyshev_bound(const SimulatedHeadModel& model, double epsilon)
{
    require(epsilon > 0.0, "epsilon must be > 0");
    double var_sum = 0.0;
    double cov_sum = 0.0;
    for (std::size_t m = 0; m < model.heads; ++m) {
        var_sum += model.variances[m];
        for (std::size_t j = 0; j < model.heads; ++j) {
            if (j != m) {
                cov_sum += 2.0 * model.rho * std::sqrt(model.variances[m] * model.variances[j]);
            }
        }
    }
    const double m2 = static_cast<double>(model.heads * model.heads);
    return std::max(0.0, (var_sum + cov_sum) / (m2 * epsilon * epsilon));
}

unsigned worker_threads()
{
    if (const char* env = std::getenv("CBE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) {
            return static_cast<unsigned>(n);
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

/// Lower-triangular factor of a positive semidefinite matrix; zero pivots
/// produce zero columns.
std::vector<double> semidefinite_cholesky(const std::vector<double>& a, std::size_t n)
{
    std::vector<double> l(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) {
            d -= l[j * n + k] * l[j * n + k];
        }
        require(d > -1e-9, "correlation matrix is not positive semidefinite");
        const double pivot = d > 1e-12 ? std::sqrt(d) : 0.0;
        l[j * n + j] = pivot;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = pivot > 0.0 ? s / pivot : 0.0;
        }
    }
    return l;
}

/// Sufficient statistics of a block of trials, with head deviations
/// measured from the truth.
struct Accumulator {
    std::vector<std::size_t> tail_counts;  // per epsilon
    std::vector<double> head_sum;          // M
    std::vector<double> head_cross;        // M x M
    double mean_sum = 0.0;
    double mean_sq_sum = 0.0;
    std::size_t trials = 0;

    Accumulator(std::size_t heads, std::size_t epsilons)
        : tail_counts(epsilons, 0), head_sum(heads, 0.0), head_cross(heads * heads, 0.0)
    {
    }
};

constexpr std::size_t kChunks = 64;

/// Runs `model.trials` trials in kChunks fixed chunks, each with its own
/// stream, so results do not depend on the thread count.
Accumulator simulate(const SimulatedHeadModel& model, std::span<const double> epsilons, std::uint64_t seed,
                     unsigned threads)
{
    model.validate();
    const std::size_t heads = model.heads;
    std::vector<double> corr(heads * heads);
    for (std::size_t m = 0; m < heads; ++m) {
        for (std::size_t j = 0; j < heads; ++j) {
            corr[m * heads + j] = m == j ? 1.0 : model.rho;
        }
    }
    const std::vector<double> chol = semidefinite_cholesky(corr, heads);
    std::vector<double> sd(heads);
    for (std::size_t m = 0; m < heads; ++m) {
        sd[m] = std::sqrt(model.variances[m]);
    }

    std::vector<Accumulator> chunks(kChunks, Accumulator(heads, epsilons.size()));
    auto run_chunk = [&](std::size_t c) {
        Accumulator& acc = chunks[c];
        const std::size_t begin = model.trials * c / kChunks;
        const std::size_t end = model.trials * (c + 1) / kChunks;
        Rng rng = make_stream(seed, {stream::simulation, c});
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> z(heads), dev(heads);
        for (std::size_t t = begin; t < end; ++t) {
            for (auto& v : z) {
                v = normal(rng);
            }
            double mean_dev = 0.0;
            for (std::size_t m = 0; m < heads; ++m) {
                double s = 0.0;
                for (std::size_t k = 0; k <= m; ++k) {
                    s += chol[m * heads + k] * z[k];
                }
                dev[m] = sd[m] * s;
                mean_dev += dev[m];
            }
            mean_dev /= static_cast<double>(heads);
            for (std::size_t e = 0; e < epsilons.size(); ++e) {
                acc.tail_counts[e] += std::fabs(mean_dev) >= epsilons[e] ? 1 : 0;
            }
            for (std::size_t m = 0; m < heads; ++m) {
                acc.head_sum[m] += dev[m];
                for (std::size_t j = 0; j < heads; ++j) {
                    acc.head_cross[m * heads + j] += dev[m] * dev[j];
                }
            }
            acc.mean_sum += mean_dev;
            acc.mean_sq_sum += mean_dev * mean_dev;
            ++acc.trials;
        }
    };

    const unsigned workers = std::clamp(threads == 0 ? worker_threads() : threads, 1u,
                                        static_cast<unsigned>(kChunks));
    if (workers == 1) {
        for (std::size_t c = 0; c < kChunks; ++c) {
            run_chunk(c);
        }
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t c = w; c < kChunks; c += workers) {
                    run_chunk(c);
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    Accumulator total(heads, epsilons.size());
    for (const auto& acc : chunks) {
        for (std::size_t e = 0; e < epsilons.size(); ++e) {
            total.tail_counts[e] += acc.tail_counts[e];
        }
        for (std::size_t i = 0; i < heads; ++i) {
            total.head_sum[i] += acc.head_sum[i];
        }
        for (std::size_t i = 0; i < heads * heads; ++i) {
            total.head_cross[i] += acc.head_cross[i];
        }
        total.mean_sum += acc.mean_sum;
        total.mean_sq_sum += acc.mean_sq_sum;
        total.trials += acc.trials;
    }
    return total;
}

void fill_variance_fields(BoundReport& r, const Accumulator& acc, std::size_t heads)
{
    const double n = static_cast<double>(acc.trials);
    auto cov = [&](std::size_t m, std::size_t j) {
        return acc.head_cross[m * heads + j] / n - (acc.head_sum[m] / n) * (acc.head_sum[j] / n);
    };
    double var_mean = 0.0;
    double cov_mean = 0.0;
    for (std::size_t m = 0; m < heads; ++m) {
        var_mean += cov(m, m);
        for (std::size_t j = 0; j < heads; ++j) {
            if (j != m) {
                cov_mean += cov(m, j);
            }
        }
    }
    var_mean /= static_cast<double>(heads);
    cov_mean = heads >= 2 ? cov_mean / static_cast<double>(heads * (heads - 1)) : 0.0;

    const double mean = acc.mean_sum / n;
    r.empirical_ensemble_variance = std::max(0.0, acc.mean_sq_sum / n - mean * mean);
    r.mean_head_variance = var_mean;
    r.mean_pairwise_covariance = cov_mean;
    r.lemma2_bound = std::max(0.0, var_mean + cov_mean / static_cast<double>(heads));
    r.variance_holds = r.empirical_ensemble_variance <= r.lemma2_bound * (1.0 + kVarianceSlack);
}

}  // namespace

std::vector<BoundReport> simulate_lemma1(const SimulatedHeadModel& model, std::span<const double> epsilons,
                                         std::uint64_t seed, unsigned threads)
{
    for (double eps : epsilons) {
        require(eps > 0.0, "epsilon must be > 0");
    }
    const Accumulator acc = simulate(model, epsilons, seed, threads);
    std::vector<BoundReport> reports;
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
        BoundReport r;
        r.epsilon = epsilons[e];
        r.empirical_tail = static_cast<double>(acc.tail_counts[e]) / static_cast<double>(acc.trials);
        r.chebyshev_bound = chebyshev_bound(model, epsilons[e]);
        r.tail_slack = kTailStandardErrors *
                       std::sqrt(r.empirical_tail * (1.0 - r.empirical_tail) / static_cast<double>(acc.trials));
        r.tail_holds = r.empirical_tail <= r.chebyshev_bound + r.tail_slack;
        fill_variance_fields(r, acc, model.heads);
        reports.push_back(r);
    }
    return reports;
}

BoundReport simulate_lemma1(const SimulatedHeadModel& model, double epsilon, std::uint64_t seed,
                            unsigned threads)
{
    const double eps[] = {epsilon};
    return simulate_lemma1(model, eps, seed, threads).front();
}

BoundReport simulate_lemma2(const SimulatedHeadModel& model, std::uint64_t seed, unsigned threads)
{
    require(model.trials >= kMinTrials, "trials must be >= " + std::to_string(kMinTrials) + ", got " +
                                            std::to_string(model.trials));
    const Accumulator acc = simulate(model, {}, seed, threads);
    BoundReport r;
    fill_variance_fields(r, acc, model.heads);
    return r;
}

std::vector<SampleVarianceStats> measure_trained_model(const EnsembleModel& model, const Tensor& inputs,
                                                       std::size_t augmentations, double sigma_weak,
                                                       std::uint64_t seed)
{
    require(augmentations >= 2, "measure_trained_model needs K >= 2 augmentations, got " +
                                    std::to_string(augmentations));
    const std::size_t n = inputs.dim(0);
    const std::size_t heads = model.spec().heads;
    const std::size_t classes = model.spec().classes;

    // passes[k] = probs [n, M, K] of augmentation pass k.
    std::vector<Tensor> passes;
    passes.reserve(augmentations);
    for (std::size_t k = 0; k < augmentations; ++k) {
        Rng rng = make_stream(seed, {stream::measurement, k});
        passes.push_back(forward(model, augment_weak(inputs, sigma_weak, rng)).probs);
    }

    const double inv_k = 1.0 / static_cast<double>(augmentations);
    std::vector<SampleVarianceStats> stats(n);
    std::vector<double> head_mean(heads * classes);
    std::vector<double> cov(heads * heads);
    for (std::size_t i = 0; i < n; ++i) {
        // Deviations are taken relative to the first pass, so identical
        // passes give exactly zero moments.
        const Tensor& ref = passes.front();
        std::fill(head_mean.begin(), head_mean.end(), 0.0);
        std::fill(cov.begin(), cov.end(), 0.0);
        for (const auto& p : passes) {
            for (std::size_t m = 0; m < heads; ++m) {
                for (std::size_t c = 0; c < classes; ++c) {
                    head_mean[m * classes + c] += (p.at(i, m, c) - ref.at(i, m, c)) * inv_k;
                }
            }
        }
        double ens_var = 0.0;
        for (const auto& p : passes) {
            for (std::size_t c = 0; c < classes; ++c) {
                double ens_dev = 0.0;
                for (std::size_t m = 0; m < heads; ++m) {
                    const double dm = p.at(i, m, c) - ref.at(i, m, c) - head_mean[m * classes + c];
                    ens_dev += dm;
                    for (std::size_t j = 0; j < heads; ++j) {
                        cov[m * heads + j] +=
                            dm * (p.at(i, j, c) - ref.at(i, j, c) - head_mean[j * classes + c]) * inv_k;
                    }
                }
                ens_dev /= static_cast<double>(heads);
                ens_var += ens_dev * ens_dev * inv_k;
            }
        }

        SampleVarianceStats& s = stats[i];
        s.head_variance.resize(heads);
        double var_mean = 0.0;
        double cov_mean = 0.0;
        for (std::size_t m = 0; m < heads; ++m) {
            s.head_variance[m] = cov[m * heads + m];
            var_mean += cov[m * heads + m];
            for (std::size_t j = 0; j < heads; ++j) {
                if (j != m) {
                    cov_mean += cov[m * heads + j];
                }
            }
        }
        var_mean /= static_cast<double>(heads);
        cov_mean = heads >= 2 ? cov_mean / static_cast<double>(heads * (heads - 1)) : 0.0;
        s.mean_pairwise_covariance = cov_mean;
        s.ensemble_variance = ens_var;
        s.bound = var_mean + cov_mean / static_cast<double>(heads);
        s.holds = s.ensemble_variance <= s.bound * (1.0 + kVarianceSlack) + 1e-15;
    }
    return stats;
}

}  // namespace cbe
