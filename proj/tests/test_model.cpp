#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cbe/error.hpp"
#include "cbe/model.hpp"
#include "test_support.hpp"

using namespace cbe;
using cbe::testing::random_tensor;

namespace {

ModelSpec toy_spec()
{
    ModelSpec s;
    s.input_dim = 2;
    s.hidden = {64, 64};
    s.shared_channels = 8;
    s.private_channels = 4;
    s.heads = 5;
    s.classes = 2;
    return s;
}

Tensor toy_inputs(std::size_t batch, std::uint64_t seed = 3)
{
    Rng rng = make_stream(seed);
    return random_tensor({batch, 2}, rng);
}

}  // namespace

TEST_CASE("forward shapes and normalization")
{
    const EnsembleModel model = initialize(toy_spec(), 1388);
    const BranchPredictions p = forward(model, toy_inputs(4));
    CHECK(p.probs.shape() == Tensor::Shape{4, 5, 2});
    CHECK(p.private_features.shape() == Tensor::Shape{4, 5, 4});
    CHECK(p.shared_feature.shape() == Tensor::Shape{4, 8});
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t m = 0; m < 5; ++m) {
            CHECK(std::fabs(p.probs.at(i, m, 0) + p.probs.at(i, m, 1) - 1.0) < 1e-9);
        }
    }
    CHECK_THROWS_AS(forward(model, Tensor({4, 3})), ValidationError);
}

TEST_CASE("private features are the private blocks of the expansion")
{
    const ModelSpec spec = toy_spec();
    const EnsembleModel model = initialize(spec, 5);
    const Tensor x = toy_inputs(3);
    std::vector<ad::Var> leaves;
    for (const auto& p : model.parameters()) {
        leaves.push_back(ad::constant(p.value));
    }
    // Recompute the expanded feature by hand from the backbone output.
    ad::Var h = ad::constant(x);
    for (std::size_t l = 0; l < model.backbone_layers(); ++l) {
        h = ad::tanh(ad::add_bias(ad::matmul(h, leaves[2 * l]), leaves[2 * l + 1]));
    }
    const Tensor expanded = ad::add_bias(ad::matmul(h, leaves[model.expansion_index()]),
                                         leaves[model.expansion_index() + 1])
                                .value();
    const BranchPredictions p = forward(model, x);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t m = 0; m < spec.heads; ++m) {
            for (std::size_t g = 0; g < spec.private_channels; ++g) {
                CHECK(p.private_features.at(i, m, g) ==
                      expanded.at(i, spec.shared_channels + m * spec.private_channels + g));
            }
        }
        for (std::size_t c = 0; c < spec.shared_channels; ++c) {
            CHECK(p.shared_feature.at(i, c) == expanded.at(i, c));
        }
    }
}

TEST_CASE("zero private expansion and identical heads give identical distributions")
{
    const ModelSpec spec = toy_spec();
    EnsembleModel model = initialize(spec, 9);
    Tensor& w = model.parameter("expansion.weight");
    Tensor& b = model.parameter("expansion.bias");
    for (std::size_t r = 0; r < w.dim(0); ++r) {
        for (std::size_t c = spec.shared_channels; c < w.dim(1); ++c) {
            w.at(r, c) = 0.0;
        }
    }
    for (std::size_t c = spec.shared_channels; c < b.size(); ++c) {
        b[c] = 0.0;
    }
    for (std::size_t m = 1; m < spec.heads; ++m) {
        model.parameter("head." + std::to_string(m) + ".weight") = model.parameter("head.0.weight");
        model.parameter("head." + std::to_string(m) + ".bias") = model.parameter("head.0.bias");
    }
    const BranchPredictions p = forward(model, toy_inputs(6));
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t m = 1; m < spec.heads; ++m) {
            CHECK(p.probs.at(i, m, 0) == p.probs.at(i, 0, 0));
            CHECK(p.probs.at(i, m, 1) == p.probs.at(i, 0, 1));
        }
    }
}

TEST_CASE("initialization is deterministic and heads differ")
{
    const EnsembleModel a = initialize(toy_spec(), 1388);
    const EnsembleModel b = initialize(toy_spec(), 1388);
    const EnsembleModel c = initialize(toy_spec(), 1389);
    CHECK(a.parameter_values() == b.parameter_values());
    CHECK(a.parameter_values() != c.parameter_values());
    CHECK(a.parameter("head.0.weight") != a.parameter("head.1.weight"));

    const Tensor x = toy_inputs(8);
    CHECK(forward(a, x).probs == forward(b, x).probs);
}

TEST_CASE("initialization bound")
{
    CHECK(init_bound(72, 2) == doctest::Approx(0.2847473987257497).epsilon(1e-12));
    const ModelSpec spec = toy_spec();
    const EnsembleModel model = initialize(spec, 4);
    for (const auto& p : model.parameters()) {
        if (p.value.rank() == 2) {
            const double bound = init_bound(p.value.dim(0), p.value.dim(1));
            for (double v : p.value.data()) {
                CHECK(std::fabs(v) <= bound);
            }
        } else {
            for (double v : p.value.data()) {
                CHECK(v == 0.0);
            }
        }
    }
    CHECK(model.parameter("head.0.weight").shape() == Tensor::Shape{12, 2});
    CHECK(model.parameter("expansion.weight").shape() == Tensor::Shape{8, 28});
}

TEST_CASE("parameter count")
{
    // Hand count: backbone (2*64+64) + (64*64+64) + (64*8+8) = 4872;
    // expansion 8*28+28 = 252; heads 5*(12*2+2) = 130.
    // Overhead: (252 - 72) + (130 - 18) = 292.
    const ParameterCount toy = parameter_count(toy_spec());
    CHECK(toy.total == 5254);
    CHECK(toy.cbe_overhead == 292);

    const EnsembleModel model = initialize(toy_spec(), 1);
    std::size_t counted = 0;
    for (const auto& p : model.parameters()) {
        counted += p.value.size();
    }
    CHECK(counted == 5254);
    CHECK(parameter_count(model).total == 5254);

    ModelSpec single = toy_spec();
    single.heads = 1;
    single.private_channels = 0;
    CHECK(parameter_count(single).cbe_overhead == 0);
    const ParameterCount again = parameter_count(toy_spec());
    CHECK(again.total == toy.total);
}

TEST_CASE("invalid extents are rejected")
{
    ModelSpec s = toy_spec();
    s.classes = 1;
    CHECK_THROWS_AS(initialize(s, 1), ValidationError);
    s = toy_spec();
    s.private_channels = 0;
    CHECK_THROWS_AS(initialize(s, 1), ValidationError);
    s = toy_spec();
    s.heads = 0;
    CHECK_THROWS_AS(initialize(s, 1), ValidationError);
}

TEST_CASE("single head without private channels runs")
{
    ModelSpec s = toy_spec();
    s.heads = 1;
    s.private_channels = 0;
    const EnsembleModel model = initialize(s, 2);
    const BranchPredictions p = forward(model, toy_inputs(3));
    CHECK(p.probs.shape() == Tensor::Shape{3, 1, 2});
}

TEST_CASE("perturbing one head's private parameters leaves the other heads unchanged")
{
    const ModelSpec spec = toy_spec();
    const EnsembleModel base = initialize(spec, 21);
    const Tensor x = toy_inputs(10);
    const BranchPredictions before = forward(base, x);

    const std::size_t j = 2;
    EnsembleModel changed = base;
    Tensor& w = changed.parameter("expansion.weight");
    Tensor& b = changed.parameter("expansion.bias");
    for (std::size_t c = spec.shared_channels + j * spec.private_channels;
         c < spec.shared_channels + (j + 1) * spec.private_channels; ++c) {
        for (std::size_t r = 0; r < w.dim(0); ++r) {
            w.at(r, c) += 0.3;
        }
        b[c] -= 0.2;
    }
    for (double& v : changed.parameter("head.2.weight").data()) {
        v *= 1.5;
    }
    const BranchPredictions after = forward(changed, x);
    bool head_j_moved = false;
    for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t m = 0; m < spec.heads; ++m) {
            for (std::size_t c = 0; c < spec.classes; ++c) {
                if (m == j) {
                    head_j_moved = head_j_moved || after.probs.at(i, m, c) != before.probs.at(i, m, c);
                } else {
                    CHECK(after.probs.at(i, m, c) == before.probs.at(i, m, c));
                }
            }
        }
    }
    CHECK(head_j_moved);
}

TEST_CASE("perturbing shared channels changes every head")
{
    const ModelSpec spec = toy_spec();
    const EnsembleModel base = initialize(spec, 22);
    const Tensor x = toy_inputs(4);
    EnsembleModel changed = base;
    Tensor& w = changed.parameter("expansion.weight");
    for (std::size_t r = 0; r < w.dim(0); ++r) {
        for (std::size_t c = 0; c < spec.shared_channels; ++c) {
            w.at(r, c) += 0.25;
        }
    }
    const BranchPredictions before = forward(base, x);
    const BranchPredictions after = forward(changed, x);
    for (std::size_t m = 0; m < spec.heads; ++m) {
        CHECK(after.probs.at(0, m, 0) != before.probs.at(0, m, 0));
    }
}

TEST_CASE("ensemble mean and head slice")
{
    const Tensor probs({1, 2, 2}, std::vector<double>{0.8, 0.2, 0.4, 0.6});
    const Tensor mean = ensemble_mean(probs);
    CHECK(mean.at(0, 0) == doctest::Approx(0.6));
    CHECK(mean.at(0, 1) == doctest::Approx(0.4));
    const Tensor h1 = head_slice(probs, 1);
    CHECK(h1.at(0, 0) == 0.4);
    CHECK_THROWS_AS(head_slice(probs, 2), ValidationError);
}

TEST_CASE("checkpoint round trip is bit exact")
{
    const EnsembleModel model = initialize(toy_spec(), 77);
    std::stringstream buf;
    save_checkpoint(buf, model);
    const std::string bytes = buf.str();
    CHECK(bytes.substr(0, 8) == "CBECKPT1");

    std::istringstream in(bytes);
    const EnsembleModel loaded = load_checkpoint(in);
    CHECK(loaded.spec() == model.spec());
    CHECK(loaded.seed() == 77);
    CHECK(loaded.parameter_values() == model.parameter_values());

    std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS(load_checkpoint(truncated));
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream wrong_magic(bad);
    CHECK_THROWS(load_checkpoint(wrong_magic));
}
