#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cbe/error.hpp"
#include "cbe/pseudo_label.hpp"
#include "test_support.hpp"

using namespace cbe;

namespace {

/// [N, M, K=2] where sample i has exactly passing[i] heads at 0.99 and the
/// rest at 0.6.
Tensor with_passing_counts(std::span<const std::size_t> passing, std::size_t m)
{
    Tensor t({passing.size(), m, 2});
    for (std::size_t i = 0; i < passing.size(); ++i) {
        for (std::size_t h = 0; h < m; ++h) {
            const double top = h < passing[i] ? 0.99 : 0.6;
            t.at(i, h, 0) = top;
            t.at(i, h, 1) = 1.0 - top;
        }
    }
    return t;
}

}  // namespace

TEST_CASE("current threshold")
{
    CHECK(ThresholdPolicy::fixed(0.9).current_threshold(2) == std::vector<double>{0.9, 0.9});

    const ThresholdPolicy fresh = ThresholdPolicy::adaptive(3, 0.999);
    const auto& s = std::get<AdaptiveThreshold>(fresh.state());
    for (double t : fresh.current_threshold(3)) {
        CHECK(t == doctest::Approx(s.global_estimate).epsilon(1e-15));
    }

    // global 0.8 with per-class estimates [0.6, 0.3] -> [0.8, 0.4]
    const double max_conf[] = {0.8};
    const double dist[] = {0.6, 0.3};
    // A near-zero decay moves the estimates onto the batch in one update.
    const ThresholdPolicy p = update_adaptive(ThresholdPolicy::adaptive(2, 1e-300), max_conf, dist);
    const auto t = p.current_threshold(2);
    CHECK(t[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(t[1] == doctest::Approx(0.4).epsilon(1e-12));

    CHECK_THROWS_AS(ThresholdPolicy::fixed(1.0), ValidationError);
    CHECK_THROWS_AS(ThresholdPolicy::fixed(0.0), ValidationError);
    CHECK_THROWS_AS(ThresholdPolicy::adaptive(2, 1.0), ValidationError);
}

TEST_CASE("adaptive update")
{
    const ThresholdPolicy p = ThresholdPolicy::adaptive(2, 0.999);
    const auto& init = std::get<AdaptiveThreshold>(p.state());
    CHECK(init.global_estimate == 0.5);
    CHECK(init.per_class_estimates == std::vector<double>{0.5, 0.5});

    const double conf[] = {0.9, 0.9, 0.9};
    const double dist[] = {0.7, 0.3};
    const ThresholdPolicy q = update_adaptive(p, conf, dist);
    const auto& s = std::get<AdaptiveThreshold>(q.state());
    CHECK(s.global_estimate == doctest::Approx(0.5004).epsilon(1e-12));
    CHECK(s.per_class_estimates[0] == doctest::Approx(0.999 * 0.5 + 0.001 * 0.7).epsilon(1e-12));
    CHECK(s.per_class_estimates[1] == doctest::Approx(0.999 * 0.5 + 0.001 * 0.3).epsilon(1e-12));

    // A batch equal to the current estimates is a fixed point.
    const double same_conf[] = {0.5, 0.5};
    const double same_dist[] = {0.5, 0.5};
    const ThresholdPolicy r = update_adaptive(p, same_conf, same_dist);
    const auto& rs = std::get<AdaptiveThreshold>(r.state());
    CHECK(rs.global_estimate == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(rs.per_class_estimates[0] == doctest::Approx(0.5).epsilon(1e-15));

    // First update from 1/K with batch mean m -> 0.999/K + 0.001 m.
    const ThresholdPolicy k4 = ThresholdPolicy::adaptive(4, 0.999);
    const double m_conf[] = {0.8, 0.6};
    const double d4[] = {0.25, 0.25, 0.25, 0.25};
    const auto& s4 = std::get<AdaptiveThreshold>(update_adaptive(k4, m_conf, d4).state());
    CHECK(s4.global_estimate == doctest::Approx(0.999 / 4.0 + 0.001 * 0.7).epsilon(1e-12));

    CHECK_THROWS_AS(update_adaptive(ThresholdPolicy::fixed(0.9), conf, dist), ValidationError);
}

TEST_CASE("adaptive thresholds stay inside (0, 1]")
{
    Rng rng = make_stream(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ThresholdPolicy p = ThresholdPolicy::adaptive(3, 0.9);
    for (int step = 0; step < 500; ++step) {
        std::vector<double> conf(8);
        for (double& c : conf) {
            c = 1.0 / 3.0 + (2.0 / 3.0) * u(rng);
        }
        const Tensor d = testing::random_distribution(1, 3, rng);
        p = update_adaptive(p, conf, d.data());
        const auto& s = std::get<AdaptiveThreshold>(p.state());
        CHECK(s.global_estimate >= 1.0 / 3.0 - 1e-12);
        CHECK(s.global_estimate <= 1.0);
        for (double t : p.current_threshold(3)) {
            CHECK(t > 0.0);
            CHECK(t <= 1.0);
        }
    }
}

TEST_CASE("sampling rate examples")
{
    const Tensor p = Tensor::matrix({{0.99, 0.01}, {0.5, 0.5}, {0.04, 0.96}});
    CHECK(sampling_rate(p, 0.95) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(sampling_rate(p, 0.0) == 1.0);
    CHECK(sampling_rate(p, 1.0) == 0.0);
    // Strict inequality at the threshold.
    CHECK(sampling_rate(p, 0.99) == 0.0);
    CHECK_THROWS_AS(sampling_rate(Tensor({0, 2}), 0.5), ValidationError);
}

TEST_CASE("cbe sampling rate examples")
{
    const std::size_t three[] = {3};
    CHECK(cbe_sampling_rate(with_passing_counts(three, 5), 0.9, 0.5) == 1.0);
    const std::size_t all[] = {5, 5, 5};
    CHECK(cbe_sampling_rate(with_passing_counts(all, 5), 0.9, 0.5) == 1.0);
    const std::size_t counts[] = {3, 2, 5, 0};
    CHECK(cbe_sampling_rate(with_passing_counts(counts, 5), 0.9, 0.5) == 0.5);
    const std::vector<double> thresholds = {0.9, 0.9};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(passing_heads(with_passing_counts(counts, 5), i, thresholds) == counts[i]);
    }
    CHECK_THROWS_AS(cbe_sampling_rate(Tensor({0, 5, 2}), 0.9, 0.5), ValidationError);
}

TEST_CASE("single-head cbe rate equals eta")
{
    Rng rng = make_stream(42);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor p = testing::random_distribution(20, 3, rng);
        const Tensor one_head = p.reshaped({20, 1, 3});
        for (double tau : {0.3, 0.5, 0.7}) {
            CHECK(cbe_sampling_rate(one_head, tau, 0.5) == sampling_rate(p, tau));
        }
    }
}
