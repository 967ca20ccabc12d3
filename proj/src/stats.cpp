#include "cbe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cbe/error.hpp"

namespace cbe {

double cross_entropy(std::span<const double> pred, std::span<const double> target)
{
    require(pred.size() == target.size(),
            "cross_entropy: prediction length " + std::to_string(pred.size()) +
                " != target length " + std::to_string(target.size()));
    double loss = 0.0;
    for (std::size_t c = 0; c < pred.size(); ++c) {
        if (target[c] != 0.0) {
            loss -= target[c] * std::log(pred[c] + kLogEpsilon);
        }
    }
    return loss;
}

double mean(std::span<const double> xs)
{
    require(!xs.empty(), "mean of empty series");
    double total = 0.0;
    for (double x : xs) {
        total += x;
    }
    return total / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs)
{
    return sample_covariance(xs, xs);
}

double sample_covariance(std::span<const double> xs, std::span<const double> ys)
{
    require(xs.size() == ys.size(), "covariance of series with different lengths");
    require(xs.size() >= 2, "moments need at least 2 values, got " + std::to_string(xs.size()));
    const double mx = mean(xs);
    const double my = mean(ys);
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        total += (xs[i] - mx) * (ys[i] - my);
    }
    return total / static_cast<double>(xs.size());
}

double pearson_correlation(std::span<const double> a, std::span<const double> b)
{
    require(a.size() == b.size(), "correlation of series with different lengths");
    require(a.size() >= 2,
            "correlation needs at least 2 values, got " + std::to_string(a.size()));
    const double va = sample_variance(a);
    const double vb = sample_variance(b);
    if (va < kVarianceEpsilon || vb < kVarianceEpsilon) {
        return 0.0;
    }
    const double r = sample_covariance(a, b) / std::sqrt(va * vb);
    return std::clamp(r, -1.0, 1.0);
}

}  // namespace cbe
