#include "cbe/model.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

#include "cbe/error.hpp"
#include "cbe/rng.hpp"

namespace cbe {

void ModelSpec::validate() const
{
    require(input_dim >= 1, "model.D must be >= 1");
    for (std::size_t w : hidden) {
        require(w >= 1, "model.hidden widths must be >= 1");
    }
    require(shared_channels >= 1, "model.C_F must be >= 1");
    require(heads >= 1, "model.M must be >= 1");
    require(classes >= 2, "model.K must be >= 2");
    require(heads == 1 || private_channels >= 1, "model.C_G must be >= 1 when model.M > 1");
}

double init_bound(std::size_t fan_in, std::size_t fan_out)
{
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

ParameterCount parameter_count(const ModelSpec& spec)
{
    std::size_t backbone = 0;
    std::size_t width = spec.input_dim;
    for (std::size_t h : spec.hidden) {
        backbone += width * h + h;
        width = h;
    }
    backbone += width * spec.shared_channels + spec.shared_channels;

    const std::size_t cf = spec.shared_channels;
    const std::size_t expanded = spec.expanded_channels();
    const std::size_t expansion = cf * expanded + expanded;
    const std::size_t one_head = spec.head_inputs() * spec.classes + spec.classes;
    const std::size_t heads = spec.heads * one_head;

    const std::size_t baseline_expansion = cf * cf + cf;
    const std::size_t baseline_head = cf * spec.classes + spec.classes;

    ParameterCount count;
    count.total = backbone + expansion + heads;
    count.cbe_overhead = (expansion - baseline_expansion) + (heads - baseline_head);
    return count;
}

ParameterCount parameter_count(const EnsembleModel& model)
{
    return parameter_count(model.spec());
}

EnsembleModel::EnsembleModel(ModelSpec spec, std::uint64_t seed, std::vector<NamedTensor> params)
    : spec_(std::move(spec)), seed_(seed), params_(std::move(params))
{
    spec_.validate();
    require(params_.size() == head_index(spec_.heads),
            "model expects " + std::to_string(head_index(spec_.heads)) + " parameter tensors, got " +
                std::to_string(params_.size()));
}

Tensor& EnsembleModel::parameter(const std::string& name)
{
    for (auto& p : params_) {
        if (p.name == name) {
            return p.value;
        }
    }
    throw ValidationError("no parameter named '" + name + "'");
}

const Tensor& EnsembleModel::parameter(const std::string& name) const
{
    return const_cast<EnsembleModel*>(this)->parameter(name);
}

std::vector<Tensor> EnsembleModel::parameter_values() const
{
    std::vector<Tensor> values;
    values.reserve(params_.size());
    for (const auto& p : params_) {
        values.push_back(p.value);
    }
    return values;
}

void EnsembleModel::set_parameter_values(std::span<const Tensor> values)
{
    require(values.size() == params_.size(), "parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
        require(values[i].shape() == params_[i].value.shape(),
                "shape mismatch for parameter " + params_[i].name);
        params_[i].value = values[i];
    }
}

namespace {

void fill_uniform(Tensor& t, double bound, Rng& rng)
{
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data()) {
        v = dist(rng);
    }
}

}  // namespace

EnsembleModel initialize(const ModelSpec& spec, std::uint64_t seed)
{
    spec.validate();
    std::vector<NamedTensor> params;

    std::size_t width = spec.input_dim;
    std::vector<std::size_t> widths = spec.hidden;
    widths.push_back(spec.shared_channels);
    for (std::size_t l = 0; l < widths.size(); ++l) {
        Rng rng = make_stream(seed, {stream::backbone, l});
        Tensor w({width, widths[l]});
        fill_uniform(w, init_bound(width, widths[l]), rng);
        params.push_back({"backbone." + std::to_string(l) + ".weight", std::move(w)});
        params.push_back({"backbone." + std::to_string(l) + ".bias", Tensor({widths[l]})});
        width = widths[l];
    }

    const std::size_t cf = spec.shared_channels;
    const std::size_t cg = spec.private_channels;
    const std::size_t expanded = spec.expanded_channels();
    const double expansion_bound = init_bound(cf, expanded);
    Tensor expansion({cf, expanded});
    {
        Rng rng = make_stream(seed, {stream::expansion_shared});
        std::uniform_real_distribution<double> dist(-expansion_bound, expansion_bound);
        for (std::size_t r = 0; r < cf; ++r) {
            for (std::size_t c = 0; c < cf; ++c) {
                expansion.at(r, c) = dist(rng);
            }
        }
    }
    for (std::size_t m = 0; m < spec.heads; ++m) {
        Rng rng = make_stream(seed, {stream::expansion_private, m});
        std::uniform_real_distribution<double> dist(-expansion_bound, expansion_bound);
        for (std::size_t r = 0; r < cf; ++r) {
            for (std::size_t c = 0; c < cg; ++c) {
                expansion.at(r, cf + m * cg + c) = dist(rng);
            }
        }
    }
    params.push_back({"expansion.weight", std::move(expansion)});
    params.push_back({"expansion.bias", Tensor({expanded})});

    for (std::size_t m = 0; m < spec.heads; ++m) {
        Rng rng = make_stream(seed, {stream::head, m});
        Tensor w({spec.head_inputs(), spec.classes});
        fill_uniform(w, init_bound(spec.head_inputs(), spec.classes), rng);
        params.push_back({"head." + std::to_string(m) + ".weight", std::move(w)});
        params.push_back({"head." + std::to_string(m) + ".bias", Tensor({spec.classes})});
    }
    return EnsembleModel(spec, seed, std::move(params));
}

GraphOutput forward_graph(const ModelSpec& spec, std::span<const ad::Var> params,
                          const Tensor& inputs)
{
    const std::size_t layers = spec.hidden.size() + 1;
    require(params.size() == 2 * layers + 2 + 2 * spec.heads, "forward: wrong parameter count");
    require(inputs.rank() == 2 && inputs.dim(1) == spec.input_dim,
            "forward: inputs of shape " + shape_string(inputs.shape()) + " do not have D = " +
                std::to_string(spec.input_dim) + " columns");
    require(inputs.all_finite(), "forward: non-finite input");

    ad::Var h = ad::constant(inputs);
    for (std::size_t l = 0; l < layers; ++l) {
        h = ad::tanh(ad::add_bias(ad::matmul(h, params[2 * l]), params[2 * l + 1]));
    }
    const ad::Var expanded =
        ad::add_bias(ad::matmul(h, params[2 * layers]), params[2 * layers + 1]);

    const std::size_t cf = spec.shared_channels;
    const std::size_t cg = spec.private_channels;
    GraphOutput out;
    out.shared_feature = ad::slice_cols(expanded, 0, cf);
    for (std::size_t m = 0; m < spec.heads; ++m) {
        ad::Var priv = ad::slice_cols(expanded, cf + m * cg, cg);
        ad::Var head_in = ad::concat_cols(out.shared_feature, priv);
        const std::size_t base = 2 * layers + 2 + 2 * m;
        ad::Var logits = ad::add_bias(ad::matmul(head_in, params[base]), params[base + 1]);
        out.head_probs.push_back(ad::softmax_rows(logits));
        out.private_features.push_back(std::move(priv));
    }
    return out;
}

BranchPredictions GraphOutput::values() const
{
    const std::size_t heads = head_probs.size();
    const std::size_t batch = shared_feature.value().dim(0);
    const std::size_t classes = heads == 0 ? 0 : head_probs[0].value().dim(1);
    const std::size_t cg = heads == 0 ? 0 : private_features[0].value().dim(1);

    BranchPredictions p;
    p.probs = Tensor({batch, heads, classes});
    p.private_features = Tensor({batch, heads, cg});
    p.shared_feature = shared_feature.value();
    for (std::size_t m = 0; m < heads; ++m) {
        const Tensor& hp = head_probs[m].value();
        const Tensor& pf = private_features[m].value();
        for (std::size_t i = 0; i < batch; ++i) {
            for (std::size_t c = 0; c < classes; ++c) {
                p.probs.at(i, m, c) = hp.at(i, c);
            }
            for (std::size_t c = 0; c < cg; ++c) {
                p.private_features.at(i, m, c) = pf.at(i, c);
            }
        }
    }
    return p;
}

BranchPredictions forward(const EnsembleModel& model, const Tensor& inputs)
{
    std::vector<ad::Var> leaves;
    leaves.reserve(model.parameters().size());
    for (const auto& p : model.parameters()) {
        leaves.push_back(ad::constant(p.value));
    }
    return forward_graph(model.spec(), leaves, inputs).values();
}

Tensor ensemble_mean(const Tensor& head_probs)
{
    require(head_probs.rank() == 3, "ensemble_mean expects [batch, M, K]");
    const std::size_t n = head_probs.dim(0), heads = head_probs.dim(1), k = head_probs.dim(2);
    Tensor out({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < heads; ++m) {
            for (std::size_t c = 0; c < k; ++c) {
                out.at(i, c) += head_probs.at(i, m, c);
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            out.at(i, c) /= static_cast<double>(heads);
        }
    }
    return out;
}

Tensor head_slice(const Tensor& head_probs, std::size_t m)
{
    require(head_probs.rank() == 3 && m < head_probs.dim(1), "head_slice: head out of range");
    const std::size_t n = head_probs.dim(0), k = head_probs.dim(2);
    Tensor out({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            out.at(i, c) = head_probs.at(i, m, c);
        }
    }
    return out;
}

// Checkpoint I/O ------------------------------------------------------------

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'B', 'E', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v)
{
    std::array<char, 8> bytes;
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    out.write(bytes.data(), bytes.size());
}

std::uint64_t read_u64(std::istream& in)
{
    std::array<unsigned char, 8> bytes;
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!in) {
        throw ValidationError("checkpoint truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    }
    return v;
}

}  // namespace

void save_checkpoint(std::ostream& out, const EnsembleModel& model)
{
    const ModelSpec& s = model.spec();
    out.write(kMagic.data(), kMagic.size());
    write_u64(out, s.input_dim);
    write_u64(out, s.shared_channels);
    write_u64(out, s.private_channels);
    write_u64(out, s.heads);
    write_u64(out, s.classes);
    write_u64(out, model.seed());
    write_u64(out, s.hidden.size());
    for (std::size_t w : s.hidden) {
        write_u64(out, w);
    }
    write_u64(out, model.parameters().size());
    for (const auto& p : model.parameters()) {
        write_u64(out, p.name.size());
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u64(out, p.value.rank());
        for (std::size_t d : p.value.shape()) {
            write_u64(out, d);
        }
        for (double v : p.value.data()) {
            write_u64(out, std::bit_cast<std::uint64_t>(v));
        }
    }
}

EnsembleModel load_checkpoint(std::istream& in)
{
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    require(in && magic == kMagic, "not a CBE checkpoint (bad magic)");

    ModelSpec s;
    s.input_dim = read_u64(in);
    s.shared_channels = read_u64(in);
    s.private_channels = read_u64(in);
    s.heads = read_u64(in);
    s.classes = read_u64(in);
    const std::uint64_t seed = read_u64(in);
    const std::uint64_t layers = read_u64(in);
    require(layers < 1024, "checkpoint: implausible hidden layer count");
    s.hidden.resize(layers);
    for (auto& w : s.hidden) {
        w = read_u64(in);
    }
    s.validate();

    const std::uint64_t count = read_u64(in);
    require(count < 1u << 20, "checkpoint: implausible parameter count");
    std::vector<NamedTensor> params;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = read_u64(in);
        require(name_len < 4096, "checkpoint: implausible name length");
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t rank = read_u64(in);
        require(rank <= 8, "checkpoint: implausible tensor rank");
        Tensor::Shape shape(rank);
        for (auto& d : shape) {
            d = read_u64(in);
        }
        Tensor value(shape);
        for (double& v : value.data()) {
            v = std::bit_cast<double>(read_u64(in));
        }
        params.push_back({std::move(name), std::move(value)});
    }

    EnsembleModel reference = initialize(s, seed);
    for (std::size_t i = 0; i < params.size() && i < reference.parameters().size(); ++i) {
        const auto& expected = reference.parameters()[i];
        require(params[i].name == expected.name && params[i].value.shape() == expected.value.shape(),
                "checkpoint parameter '" + params[i].name + "' does not match the model layout");
    }
    return EnsembleModel(s, seed, std::move(params));
}

void save_checkpoint(const std::string& path, const EnsembleModel& model)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot open '" + path + "' for writing");
    save_checkpoint(out, model);
}

EnsembleModel load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open '" + path + "'");
    return load_checkpoint(in);
}

}  // namespace cbe
