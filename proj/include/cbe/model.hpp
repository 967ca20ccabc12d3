#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cbe/autodiff.hpp"
#include "cbe/tensor.hpp"

namespace cbe {

/// Extents of a channel-based ensemble: an MLP backbone producing a
/// `shared_channels`-wide feature, a linear channel-expansion map to
/// shared + heads * private channels, and `heads` affine classifiers that
/// each read the shared block and their own private block.
struct ModelSpec {
    std::size_t input_dim = 2;
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t shared_channels = 8;   // C_F
    std::size_t private_channels = 4;  // C_G
    std::size_t heads = 5;             // M
    std::size_t classes = 2;           // K

    std::size_t expanded_channels() const { return shared_channels + heads * private_channels; }
    std::size_t head_inputs() const { return shared_channels + private_channels; }

    /// Throws ValidationError naming the offending extent.
    void validate() const;

    bool operator==(const ModelSpec&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct ParameterCount {
    std::size_t total = 0;
    /// Parameters added relative to a single-head model whose expansion is a
    /// C_F -> C_F map: the expansion's extra output columns plus the extra heads.
    std::size_t cbe_overhead = 0;
};

ParameterCount parameter_count(const ModelSpec& spec);

/// Uniform initialization bound sqrt(6 / (fan_in + fan_out)).
double init_bound(std::size_t fan_in, std::size_t fan_out);

class EnsembleModel {
public:
    EnsembleModel(ModelSpec spec, std::uint64_t seed, std::vector<NamedTensor> params);

    const ModelSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }

    std::span<const NamedTensor> parameters() const { return params_; }
    std::span<NamedTensor> parameters() { return params_; }

    Tensor& parameter(const std::string& name);
    const Tensor& parameter(const std::string& name) const;

    /// Values only, in layout order.
    std::vector<Tensor> parameter_values() const;
    void set_parameter_values(std::span<const Tensor> values);

    // Layout: backbone layers (weight, bias) ..., expansion (weight, bias),
    // then head 0..M-1 (weight, bias).
    std::size_t backbone_layers() const { return spec_.hidden.size() + 1; }
    std::size_t expansion_index() const { return 2 * backbone_layers(); }
    std::size_t head_index(std::size_t m) const { return expansion_index() + 2 + 2 * m; }

private:
    ModelSpec spec_;
    std::uint64_t seed_;
    std::vector<NamedTensor> params_;
};

ParameterCount parameter_count(const EnsembleModel& model);

/// Draws every weight from U(-b, b) with b = init_bound(fan_in, fan_out);
/// biases start at zero. Each head and each private expansion block uses
/// its own sub-stream of `seed`.
EnsembleModel initialize(const ModelSpec& spec, std::uint64_t seed);

/// Predictions for one augmentation branch.
struct BranchPredictions {
    Tensor probs;             // [batch, M, K]
    Tensor private_features;  // [batch, M, C_G]
    Tensor shared_feature;    // [batch, C_F]
};

/// Differentiable outputs of one forward pass.
struct GraphOutput {
    std::vector<ad::Var> head_probs;        // M x [batch, K]
    std::vector<ad::Var> private_features;  // M x [batch, C_G]
    ad::Var shared_feature;                 // [batch, C_F]

    BranchPredictions values() const;
};

/// Forward pass over graph leaves `params` (layout order of EnsembleModel).
GraphOutput forward_graph(const ModelSpec& spec, std::span<const ad::Var> params,
                          const Tensor& inputs);

BranchPredictions forward(const EnsembleModel& model, const Tensor& inputs);

/// Head-averaged class distribution [batch, K].
Tensor ensemble_mean(const Tensor& head_probs);

/// Slice [batch, K] of head `m` from [batch, M, K].
Tensor head_slice(const Tensor& head_probs, std::size_t m);

// Checkpoint: magic, extents header, then named tensors with shapes, all
// little-endian (u64 integers, IEEE-754 binary64 values).
void save_checkpoint(std::ostream& out, const EnsembleModel& model);
EnsembleModel load_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const EnsembleModel& model);
EnsembleModel load_checkpoint(const std::string& path);

}  // namespace cbe
