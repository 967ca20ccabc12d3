#include "cbe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cbe/error.hpp"
#include "cbe/stats.hpp"

namespace cbe {

std::size_t PseudoLabelBatch::masked_in() const
{
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

ClassIndex PseudoLabelBatch::label(std::size_t i) const
{
    auto r = targets.row(i);
    return static_cast<ClassIndex>(std::max_element(r.begin(), r.end()) - r.begin());
}

Tensor one_hot(std::span<const ClassIndex> labels, std::size_t classes)
{
    Tensor out({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] < classes, "label " + std::to_string(labels[i]) + " out of range for K = " +
                                         std::to_string(classes));
        out.at(i, labels[i]) = 1.0;
    }
    return out;
}

std::vector<ad::Var> split_heads(const Tensor& per_head)
{
    require(per_head.rank() == 3, "expected [batch, M, X], got " + shape_string(per_head.shape()));
    const std::size_t n = per_head.dim(0), heads = per_head.dim(1), x = per_head.dim(2);
    std::vector<ad::Var> out;
    for (std::size_t m = 0; m < heads; ++m) {
        Tensor t({n, x});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < x; ++c) {
                t.at(i, c) = per_head.at(i, m, c);
            }
        }
        out.push_back(ad::constant(std::move(t)));
    }
    return out;
}

namespace {

void require_heads(std::span<const ad::Var> heads, std::size_t rows, const char* what)
{
    require(!heads.empty(), std::string(what) + ": no heads");
    const auto& shape = heads[0].shape();
    require(shape.size() == 2 && shape[0] == rows,
            std::string(what) + ": head predictions of shape " + shape_string(shape) +
                " do not match batch of " + std::to_string(rows));
    for (const auto& h : heads) {
        require(h.shape() == shape, std::string(what) + ": heads have different shapes");
    }
}

/// sum_i sum_c targets[i,c] * log(p[i,c] + eps), differentiable in p.
ad::Var weighted_log_likelihood(const ad::Var& probs, const ad::Var& targets)
{
    return ad::sum(ad::mul(targets, ad::log(probs, kLogEpsilon)));
}

}  // namespace

ad::Var supervised_loss(std::span<const ad::Var> branch1_heads,
                        std::span<const ad::Var> branch2_heads, std::span<const ClassIndex> labels)
{
    require(!labels.empty(), "supervised_loss: empty labeled batch");
    require_heads(branch1_heads, labels.size(), "supervised_loss");
    require_heads(branch2_heads, labels.size(), "supervised_loss");
    require(branch1_heads.size() == branch2_heads.size(),
            "supervised_loss: branches have different head counts");
    require(branch1_heads[0].shape() == branch2_heads[0].shape(),
            "supervised_loss: branch shapes differ");

    const std::size_t heads = branch1_heads.size();
    const ad::Var y = ad::constant(one_hot(labels, branch1_heads[0].shape()[1]));
    ad::Var total = ad::constant(Tensor::scalar(0.0));
    for (std::size_t m = 0; m < heads; ++m) {
        total = ad::add(total, weighted_log_likelihood(branch1_heads[m], y));
        total = ad::add(total, weighted_log_likelihood(branch2_heads[m], y));
    }
    const double norm = 1.0 / (static_cast<double>(labels.size()) * static_cast<double>(heads) * 2.0);
    return ad::scale(total, -norm);
}

double supervised_loss(const Tensor& branch1, const Tensor& branch2,
                       std::span<const ClassIndex> labels)
{
    require(branch1.rank() == 3 && branch1.shape() == branch2.shape(),
            "supervised_loss: branch predictions must share shape [batch, M, K]");
    return supervised_loss(split_heads(branch1), split_heads(branch2), labels).value().item();
}

PseudoLabelBatch ensemble_pseudo_label(const Tensor& branch2_probs,
                                       std::span<const double> class_thresholds)
{
    require(branch2_probs.rank() == 3, "ensemble_pseudo_label expects [batch, M, K], got " +
                                           shape_string(branch2_probs.shape()));
    const std::size_t n = branch2_probs.dim(0), heads = branch2_probs.dim(1),
                      k = branch2_probs.dim(2);
    require(class_thresholds.size() == k, "ensemble_pseudo_label: need one threshold per class");
    for (double t : class_thresholds) {
        require(t > 0.0 && t <= 1.0, "ensemble_pseudo_label: thresholds must lie in (0, 1]");
    }

    PseudoLabelBatch pl;
    pl.targets = Tensor({n, k});
    pl.mask.assign(n, 0);
    pl.passing_counts.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t passing = 0;
        for (std::size_t m = 0; m < heads; ++m) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c) {
                if (branch2_probs.at(i, m, c) > branch2_probs.at(i, m, best)) {
                    best = c;
                }
            }
            if (branch2_probs.at(i, m, best) > class_thresholds[best]) {
                ++passing;
                for (std::size_t c = 0; c < k; ++c) {
                    pl.targets.at(i, c) += branch2_probs.at(i, m, c);
                }
            }
        }
        pl.passing_counts[i] = passing;
        if (passing > 0) {
            pl.mask[i] = 1;
            for (std::size_t c = 0; c < k; ++c) {
                pl.targets.at(i, c) /= static_cast<double>(passing);
            }
        }
    }
    return pl;
}

PseudoLabelBatch ensemble_pseudo_label(const Tensor& branch2_probs, double tau)
{
    require(tau > 0.0 && tau < 1.0, "ensemble_pseudo_label: tau must lie in (0, 1), got " +
                                        std::to_string(tau));
    require(branch2_probs.rank() == 3, "ensemble_pseudo_label expects [batch, M, K]");
    const std::vector<double> thresholds(branch2_probs.dim(2), tau);
    return ensemble_pseudo_label(branch2_probs, thresholds);
}

ad::Var ensemble_loss(std::span<const ad::Var> branch1_heads, const PseudoLabelBatch& pl, double mu,
                      std::size_t labeled_batch)
{
    require(mu > 0.0 && labeled_batch > 0, "ensemble_loss: mu and labeled batch must be positive");
    require_heads(branch1_heads, pl.size(), "ensemble_loss");
    require(pl.targets.shape() == branch1_heads[0].shape(),
            "ensemble_loss: pseudo-label targets " + shape_string(pl.targets.shape()) +
                " do not match predictions " + shape_string(branch1_heads[0].shape()));

    Tensor masked = pl.targets;
    for (std::size_t i = 0; i < pl.size(); ++i) {
        if (!pl.mask[i]) {
            for (double& v : masked.row(i)) {
                v = 0.0;
            }
        }
    }
    // Pseudo-labels enter as constants: no gradient reaches their producer.
    const ad::Var y = ad::constant(std::move(masked));
    ad::Var total = ad::constant(Tensor::scalar(0.0));
    for (const auto& head : branch1_heads) {
        total = ad::add(total, weighted_log_likelihood(head, y));
    }
    const double norm =
        1.0 / (mu * static_cast<double>(labeled_batch) * static_cast<double>(branch1_heads.size()));
    return ad::scale(total, -norm);
}

double ensemble_loss(const Tensor& branch1, const PseudoLabelBatch& pl, double mu,
                     std::size_t labeled_batch)
{
    return ensemble_loss(split_heads(branch1), pl, mu, labeled_batch).value().item();
}

ad::Var lb_loss(std::span<const ad::Var> private_features)
{
    const std::size_t heads = private_features.size();
    require(heads >= 2, "lb_loss needs at least 2 heads");
    const auto& shape = private_features[0].shape();
    require(shape.size() == 2, "lb_loss: private features must be [batch, C_G]");
    require(shape[1] >= 2, "lb_loss: C_G must be >= 2 for correlation, got " +
                               std::to_string(shape[1]));
    for (const auto& g : private_features) {
        require(g.shape() == shape, "lb_loss: private blocks have different shapes");
    }

    // |corr| is symmetric, so each unordered pair stands for both ordered terms.
    ad::Var total = ad::constant(Tensor::scalar(0.0));
    for (std::size_t m = 0; m < heads; ++m) {
        for (std::size_t j = m + 1; j < heads; ++j) {
            total = ad::add(
                total, ad::sum(ad::abs(ad::row_pearson(private_features[m], private_features[j]))));
        }
    }
    const double norm = 2.0 / (static_cast<double>(heads) * static_cast<double>(shape[0]));
    return ad::scale(total, norm);
}

double lb_loss(const Tensor& private_features)
{
    return lb_loss(split_heads(private_features)).value().item();
}

ad::Var lv_loss(const ad::Var& ensemble_preds, std::span<const ClassIndex> labels)
{
    const auto& shape = ensemble_preds.shape();
    require(shape.size() == 2 && shape[0] == labels.size(),
            "lv_loss: predictions " + shape_string(shape) + " do not match " +
                std::to_string(labels.size()) + " labels");
    const std::size_t cells = shape[0] * shape[1];
    require(cells >= 2, "lv_loss: need N_B * K >= 2");
    const ad::Var truth = ad::constant(one_hot(labels, shape[1]).reshaped({1, cells}));
    const ad::Var corr = ad::row_pearson(ad::reshape(ensemble_preds, {1, cells}), truth);
    return ad::add_scalar(ad::scale(ad::sum(corr), -1.0), 1.0);
}

double lv_loss(const Tensor& ensemble_preds, std::span<const ClassIndex> labels)
{
    return lv_loss(ad::constant(ensemble_preds), labels).value().item();
}

double total_loss(const LossComponents& parts, const LossWeights& w)
{
    return w.lambda_l * parts.supervised + w.lambda_e * parts.ensemble +
           w.lambda_fu * parts.low_bias + w.lambda_lv * parts.low_variance;
}

ad::Var total_loss(const ad::Var& l, const ad::Var& e, const ad::Var& fu, const ad::Var& lv,
                   const LossWeights& w)
{
    ad::Var total = ad::scale(l, w.lambda_l);
    total = ad::add(total, ad::scale(e, w.lambda_e));
    total = ad::add(total, ad::scale(fu, w.lambda_fu));
    return ad::add(total, ad::scale(lv, w.lambda_lv));
}

}  // namespace cbe
