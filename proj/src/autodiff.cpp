#include "cbe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "cbe/error.hpp"
#include "cbe/stats.hpp"

namespace cbe::ad {

namespace detail {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Receives this node's gradient and accumulates into parents' gradients.
    std::function<void(const Tensor&)> propagate;

    Tensor& grad_buffer()
    {
        if (grad.size() != value.size() || grad.shape() != value.shape()) {
            grad = Tensor(value.shape());
        }
        return grad;
    }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

struct Access {
    static const NodePtr& node(const Var& v)
    {
        require(v.node_ != nullptr, "use of an empty Var");
        return v.node_;
    }
    static Var wrap(NodePtr n) { return Var(std::move(n)); }
};

namespace {

const NodePtr& node_of(const Var& v)
{
    return Access::node(v);
}

/// Builds an interior node. `propagate` is only attached when some parent
/// needs a gradient.
Var make_node(Tensor value, std::vector<NodePtr> parents,
              std::function<void(const Tensor&)> propagate)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad =
        std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->propagate = std::move(propagate);
    }
    return Access::wrap(std::move(n));
}

void accumulate(const NodePtr& target, const Tensor& delta)
{
    if (!target->requires_grad) {
        return;
    }
    Tensor& g = target->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += delta[i];
    }
}

void require_rank2(const Tensor& t, const char* op)
{
    require(t.rank() == 2,
            std::string(op) + " expects a rank-2 operand, got shape " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_string(a.shape()) + " vs " +
                                        shape_string(b.shape()));
}

}  // namespace

const Tensor& Var::value() const
{
    return Access::node(*this)->value;
}

const Tensor& Var::grad() const
{
    return Access::node(*this)->grad_buffer();
}

bool Var::requires_grad() const
{
    return Access::node(*this)->requires_grad;
}

Var constant(Tensor value)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Access::wrap(std::move(n));
}

Var parameter(Tensor value)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Access::wrap(std::move(n));
}

Var detach(const Var& x)
{
    return constant(node_of(x)->value);
}

void backward(const Var& root)
{
    const NodePtr& r = node_of(root);
    require(r->value.size() == 1,
            "backward() needs a scalar root, got shape " + shape_string(r->value.shape()));

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{r.get(), 0}};
    visited.insert(r.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        n->grad = Tensor(n->value.shape());
    }
    r->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->propagate) {
            n->propagate(n->grad);
        }
    }
}

Var matmul(const Var& a, const Var& b)
{
    NodePtr an = node_of(a);
    NodePtr bn = node_of(b);
    const Tensor& A = an->value;
    const Tensor& B = bn->value;
    require_rank2(A, "matmul");
    require_rank2(B, "matmul");
    const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
    require(B.dim(0) == k, "matmul: inner dimensions differ " + shape_string(A.shape()) + " x " +
                               shape_string(B.shape()));

    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = &out.at(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A.at(i, p);
            if (aip == 0.0) {
                continue;
            }
            const double* brow = B.data().data() + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                orow[j] += aip * brow[j];
            }
        }
    }

    return make_node(std::move(out), {an, bn}, [an, bn, n, k, m](const Tensor& g) {
        const Tensor& A = an->value;
        const Tensor& B = bn->value;
        if (an->requires_grad) {
            Tensor& ga = an->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < m; ++j) {
                        acc += g.at(i, j) * B.at(p, j);
                    }
                    ga.at(i, p) += acc;
                }
            }
        }
        if (bn->requires_grad) {
            Tensor& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A.at(i, p);
                    if (aip == 0.0) {
                        continue;
                    }
                    double* gbrow = &gb.at(p, 0);
                    for (std::size_t j = 0; j < m; ++j) {
                        gbrow[j] += aip * g.at(i, j);
                    }
                }
            }
        }
    });
}

Var add_bias(const Var& x, const Var& bias)
{
    NodePtr xn = node_of(x);
    NodePtr bn = node_of(bias);
    require_rank2(xn->value, "add_bias");
    const std::size_t n = xn->value.dim(0), c = xn->value.dim(1);
    require(bn->value.rank() == 1 && bn->value.dim(0) == c,
            "add_bias: bias shape " + shape_string(bn->value.shape()) + " does not match " +
                std::to_string(c) + " columns");
    Tensor out = xn->value;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out.at(i, j) += bn->value[j];
        }
    }
    return make_node(std::move(out), {xn, bn}, [xn, bn, n, c](const Tensor& g) {
        accumulate(xn, g);
        if (bn->requires_grad) {
            Tensor& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    gb[j] += g.at(i, j);
                }
            }
        }
    });
}

Var softmax_rows(const Var& x)
{
    NodePtr xn = node_of(x);
    require_rank2(xn->value, "softmax_rows");
    Tensor out = softmax(xn->value, 1);
    const Tensor probs = out;
    return make_node(std::move(out), {xn}, [xn, probs](const Tensor& g) {
        Tensor& gx = xn->grad_buffer();
        const std::size_t n = probs.dim(0), c = probs.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                dot += g.at(i, j) * probs.at(i, j);
            }
            for (std::size_t j = 0; j < c; ++j) {
                gx.at(i, j) += probs.at(i, j) * (g.at(i, j) - dot);
            }
        }
    });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count)
{
    NodePtr xn = node_of(x);
    require_rank2(xn->value, "slice_cols");
    const std::size_t n = xn->value.dim(0), c = xn->value.dim(1);
    require(begin + count <= c, "slice_cols: columns [" + std::to_string(begin) + ", " +
                                    std::to_string(begin + count) + ") exceed " +
                                    std::to_string(c));
    Tensor out({n, count});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            out.at(i, j) = xn->value.at(i, begin + j);
        }
    }
    return make_node(std::move(out), {xn}, [xn, n, begin, count](const Tensor& g) {
        Tensor& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                gx.at(i, begin + j) += g.at(i, j);
            }
        }
    });
}

Var concat_cols(const Var& a, const Var& b)
{
    NodePtr an = node_of(a);
    NodePtr bn = node_of(b);
    require_rank2(an->value, "concat_cols");
    require_rank2(bn->value, "concat_cols");
    const std::size_t n = an->value.dim(0);
    require(bn->value.dim(0) == n, "concat_cols: row counts differ");
    const std::size_t ca = an->value.dim(1), cb = bn->value.dim(1);
    Tensor out({n, ca + cb});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ca; ++j) {
            out.at(i, j) = an->value.at(i, j);
        }
        for (std::size_t j = 0; j < cb; ++j) {
            out.at(i, ca + j) = bn->value.at(i, j);
        }
    }
    return make_node(std::move(out), {an, bn}, [an, bn, n, ca, cb](const Tensor& g) {
        if (an->requires_grad) {
            Tensor& ga = an->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < ca; ++j) {
                    ga.at(i, j) += g.at(i, j);
                }
            }
        }
        if (bn->requires_grad) {
            Tensor& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < cb; ++j) {
                    gb.at(i, j) += g.at(i, ca + j);
                }
            }
        }
    });
}

Var row_pearson(const Var& a, const Var& b)
{
    NodePtr an = node_of(a);
    NodePtr bn = node_of(b);
    require_rank2(an->value, "row_pearson");
    require_same_shape(an->value, bn->value, "row_pearson");
    const std::size_t n = an->value.dim(0), c = an->value.dim(1);
    require(c >= 2, "row_pearson: correlation needs at least 2 columns, got " + std::to_string(c));

    // Per-row partials dr/da and dr/db, computed once with the forward value.
    Tensor out({n});
    Tensor da({n, c});
    Tensor db({n, c});
    const double inv_c = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < n; ++i) {
        auto ra = an->value.row(i);
        auto rb = bn->value.row(i);
        const double ma = cbe::mean(ra);
        const double mb = cbe::mean(rb);
        double va = 0.0, vb = 0.0, cov = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double xa = ra[j] - ma;
            const double xb = rb[j] - mb;
            va += xa * xa;
            vb += xb * xb;
            cov += xa * xb;
        }
        va *= inv_c;
        vb *= inv_c;
        cov *= inv_c;
        if (va < kVarianceEpsilon || vb < kVarianceEpsilon) {
            continue;
        }
        const double sab = std::sqrt(va * vb);
        const double r = cov / sab;
        out[i] = r;
        for (std::size_t j = 0; j < c; ++j) {
            const double xa = ra[j] - ma;
            const double xb = rb[j] - mb;
            da.at(i, j) = inv_c * (xb / sab - r * xa / va);
            db.at(i, j) = inv_c * (xa / sab - r * xb / vb);
        }
    }
    return make_node(std::move(out), {an, bn}, [an, bn, da, db, n, c](const Tensor& g) {
        if (an->requires_grad) {
            Tensor& ga = an->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    ga.at(i, j) += g[i] * da.at(i, j);
                }
            }
        }
        if (bn->requires_grad) {
            Tensor& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    gb.at(i, j) += g[i] * db.at(i, j);
                }
            }
        }
    });
}

Var add(const Var& a, const Var& b)
{
    NodePtr an = node_of(a);
    NodePtr bn = node_of(b);
    require_same_shape(an->value, bn->value, "add");
    Tensor out = an->value + bn->value;
    return make_node(std::move(out), {an, bn}, [an, bn](const Tensor& g) {
        accumulate(an, g);
        accumulate(bn, g);
    });
}

Var sub(const Var& a, const Var& b)
{
    NodePtr an = node_of(a);
    NodePtr bn = node_of(b);
    require_same_shape(an->value, bn->value, "sub");
    Tensor out = an->value;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= bn->value[i];
    }
    return make_node(std::move(out), {an, bn}, [an, bn](const Tensor& g) {
        accumulate(an, g);
        accumulate(bn, -1.0 * g);
    });
}

Var mul(const Var& a, const Var& b)
{
    NodePtr an = node_of(a);
    NodePtr bn = node_of(b);
    require_same_shape(an->value, bn->value, "mul");
    Tensor out = an->value;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bn->value[i];
    }
    return make_node(std::move(out), {an, bn}, [an, bn](const Tensor& g) {
        if (an->requires_grad) {
            Tensor& ga = an->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += g[i] * bn->value[i];
            }
        }
        if (bn->requires_grad) {
            Tensor& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] += g[i] * an->value[i];
            }
        }
    });
}

Var scale(const Var& x, double factor)
{
    NodePtr xn = node_of(x);
    return make_node(factor * xn->value, {xn},
                     [xn, factor](const Tensor& g) { accumulate(xn, factor * g); });
}

Var add_scalar(const Var& x, double offset)
{
    NodePtr xn = node_of(x);
    Tensor out = xn->value;
    for (double& v : out.data()) {
        v += offset;
    }
    return make_node(std::move(out), {xn}, [xn](const Tensor& g) { accumulate(xn, g); });
}

Var tanh(const Var& x)
{
    NodePtr xn = node_of(x);
    Tensor out = xn->value;
    for (double& v : out.data()) {
        v = std::tanh(v);
    }
    const Tensor y = out;
    return make_node(std::move(out), {xn}, [xn, y](const Tensor& g) {
        Tensor& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += g[i] * (1.0 - y[i] * y[i]);
        }
    });
}

Var log(const Var& x, double eps)
{
    NodePtr xn = node_of(x);
    Tensor out = xn->value;
    for (double& v : out.data()) {
        v = std::log(v + eps);
    }
    return make_node(std::move(out), {xn}, [xn, eps](const Tensor& g) {
        Tensor& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += g[i] / (xn->value[i] + eps);
        }
    });
}

Var abs(const Var& x)
{
    NodePtr xn = node_of(x);
    Tensor out = xn->value;
    for (double& v : out.data()) {
        v = std::fabs(v);
    }
    return make_node(std::move(out), {xn}, [xn](const Tensor& g) {
        Tensor& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double v = xn->value[i];
            gx[i] += v > 0.0 ? g[i] : (v < 0.0 ? -g[i] : 0.0);
        }
    });
}

Var reshape(const Var& x, Tensor::Shape shape)
{
    NodePtr xn = node_of(x);
    Tensor out = xn->value.reshaped(std::move(shape));
    return make_node(std::move(out), {xn}, [xn](const Tensor& g) {
        Tensor& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += g[i];
        }
    });
}

Var sum(const Var& x)
{
    NodePtr xn = node_of(x);
    double total = 0.0;
    for (double v : xn->value.data()) {
        total += v;
    }
    return make_node(Tensor::scalar(total), {xn}, [xn](const Tensor& g) {
        Tensor& gx = xn->grad_buffer();
        for (double& v : gx.data()) {
            v += g[0];
        }
    });
}

Var mean(const Var& x)
{
    const std::size_t n = node_of(x)->value.size();
    require(n > 0, "mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var average(std::span<const Var> xs)
{
    require(!xs.empty(), "average of no operands");
    Var total = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) {
        total = add(total, xs[i]);
    }
    return scale(total, 1.0 / static_cast<double>(xs.size()));
}

}  // namespace cbe::ad
