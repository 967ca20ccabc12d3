#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cbe/tensor.hpp"

namespace cbe::ad {

namespace detail {
struct Node;
}

/// Handle to a node of a reverse-mode differentiation graph. Copies share
/// the node. A graph is built by one thread and consumed by backward().
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    /// Accumulated gradient; zeros if backward() never reached this node.
    const Tensor& grad() const;
    bool requires_grad() const;
    const Tensor::Shape& shape() const { return value().shape(); }
    bool valid() const { return node_ != nullptr; }

private:
    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;

    friend struct Access;
};

/// Leaf holding a value that is never differentiated.
Var constant(Tensor value);
/// Leaf that accumulates a gradient.
Var parameter(Tensor value);
/// Same value, cut from the graph: no gradient flows back through it.
Var detach(const Var& x);

/// Populates gradients on every node reachable from a single-element root.
void backward(const Var& root);

// Rank-2 operations ([rows, cols]).
Var matmul(const Var& a, const Var& b);
/// x[n, c] + bias[c] broadcast over rows.
Var add_bias(const Var& x, const Var& bias);
Var softmax_rows(const Var& x);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
Var concat_cols(const Var& a, const Var& b);
/// Per-row Pearson correlation of a[n, c] and b[n, c] -> [n]. Rows with
/// (near-)zero variance yield 0 and pass no gradient.
Var row_pearson(const Var& a, const Var& b);

// Elementwise operations on equally shaped operands.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double offset);
Var tanh(const Var& x);
/// log(x + eps)
Var log(const Var& x, double eps);
Var abs(const Var& x);

Var reshape(const Var& x, Tensor::Shape shape);
/// Sum of all elements -> scalar.
Var sum(const Var& x);
Var mean(const Var& x);
/// Elementwise average of equally shaped operands.
Var average(std::span<const Var> xs);

}  // namespace cbe::ad
