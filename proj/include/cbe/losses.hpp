#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cbe/autodiff.hpp"
#include "cbe/tensor.hpp"

namespace cbe {

using ClassIndex = std::size_t;

struct LossWeights {
    double lambda_l = 1.0;   // supervised
    double lambda_e = 1.0;   // ensemble pseudo-label
    double lambda_fu = 1.0;  // low-bias (private-feature decorrelation)
    double lambda_lv = 1.0;  // low-variance

    bool operator==(const LossWeights&) const = default;
};

struct LossComponents {
    double supervised = 0.0;
    double ensemble = 0.0;
    double low_bias = 0.0;
    double low_variance = 0.0;
    double total = 0.0;
};

/// Ensemble targets for a batch of unlabeled samples.
struct PseudoLabelBatch {
    Tensor targets;                          // [batch, K]; rows with mask 0 are zero
    std::vector<unsigned char> mask;         // 1 when at least one head passed
    std::vector<std::size_t> passing_counts; // heads passing, 0..M

    std::size_t size() const { return mask.size(); }
    std::size_t masked_in() const;
    /// Argmax class of sample i's target.
    ClassIndex label(std::size_t i) const;
};

/// Cross-entropy of every head of both branches against one-hot labels,
/// averaged over samples, heads and the two branches.
ad::Var supervised_loss(std::span<const ad::Var> branch1_heads,
                        std::span<const ad::Var> branch2_heads, std::span<const ClassIndex> labels);
double supervised_loss(const Tensor& branch1, const Tensor& branch2,
                       std::span<const ClassIndex> labels);

/// Averages the heads whose max confidence exceeds the threshold of their
/// argmax class, renormalized by the number of passing heads.
PseudoLabelBatch ensemble_pseudo_label(const Tensor& branch2_probs,
                                       std::span<const double> class_thresholds);
PseudoLabelBatch ensemble_pseudo_label(const Tensor& branch2_probs, double tau);

/// (1 / (mu * labeled_batch)) * sum over masked-in samples of the
/// head-averaged cross-entropy against the (constant) pseudo-label.
ad::Var ensemble_loss(std::span<const ad::Var> branch1_heads, const PseudoLabelBatch& pl, double mu,
                      std::size_t labeled_batch);
double ensemble_loss(const Tensor& branch1, const PseudoLabelBatch& pl, double mu,
                     std::size_t labeled_batch);

/// Mean over samples of (1/M) sum_{m != j} |corr(G_m, G_j)|.
ad::Var lb_loss(std::span<const ad::Var> private_features);
double lb_loss(const Tensor& private_features);

/// 1 - corr(flatten(ensemble_preds), flatten(one_hot(labels))).
ad::Var lv_loss(const ad::Var& ensemble_preds, std::span<const ClassIndex> labels);
double lv_loss(const Tensor& ensemble_preds, std::span<const ClassIndex> labels);

double total_loss(const LossComponents& parts, const LossWeights& w);
ad::Var total_loss(const ad::Var& l, const ad::Var& e, const ad::Var& fu, const ad::Var& lv,
                   const LossWeights& w);

/// One-hot encoding [labels.size(), classes].
Tensor one_hot(std::span<const ClassIndex> labels, std::size_t classes);

/// Splits [batch, M, X] into M constant graph leaves of shape [batch, X].
std::vector<ad::Var> split_heads(const Tensor& per_head);

}  // namespace cbe
