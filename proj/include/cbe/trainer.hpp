#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cbe/augment.hpp"
#include "cbe/dataset.hpp"
#include "cbe/losses.hpp"
#include "cbe/metrics.hpp"
#include "cbe/model.hpp"
#include "cbe/optimizer.hpp"
#include "cbe/pseudo_label.hpp"

namespace cbe {

enum class PolicyKind { fixed, adaptive };

struct TrainConfig {
    ModelSpec model;
    std::size_t labeled_batch = 32;  // N_B
    std::size_t mu = 7;              // unlabeled batch = mu * N_B
    double learning_rate = 0.03;
    double momentum = 0.9;
    bool nesterov = true;
    double ema_decay = 0.999;
    PolicyKind policy = PolicyKind::fixed;
    double tau = 0.9;
    double policy_decay = 0.999;
    double gamma = kDefaultGamma;
    std::size_t epochs = 30;
    std::size_t iterations_per_epoch = 64;
    std::uint64_t seed = 1388;
    LossWeights weights;
    AugmentConfig augment;

    std::size_t unlabeled_batch() const { return mu * labeled_batch; }
    /// Throws ValidationError naming the first out-of-range key.
    void validate() const;
};

ThresholdPolicy make_policy(const TrainConfig& config);

struct LabeledBatch {
    Tensor inputs;                  // [N_B, D]
    std::vector<ClassIndex> labels;
};

struct UnlabeledBatch {
    Tensor inputs;                  // [mu * N_B, D]
    std::vector<std::size_t> rows;  // dataset rows, for oracle scoring only
};

/// Everything that evolves during training.
struct TrainState {
    EnsembleModel model;
    EmaModel ema;
    OptimizerState optimizer;
    ThresholdPolicy policy;
    std::size_t step = 0;
};

TrainState make_train_state(const TrainConfig& config, std::size_t input_dim, std::size_t classes);

struct StepResult {
    LossComponents losses;
    PseudoLabelBatch pseudo_labels;
    double eta = 0.0;
    double eta_cbe = 0.0;
    std::optional<double> head_corr;
    std::optional<ConfusionMatrix> confusion;  // when an oracle is available
};

/// One iteration: augment (weak -> branch 2, strong -> branch 1), forward
/// both branches, pseudo-label from detached branch-2 heads, total loss,
/// backward, SGD step, EMA update, adaptive threshold update. Throws
/// NumericError if any loss is non-finite.
StepResult train_step(TrainState& state, const LabeledBatch& labeled, const UnlabeledBatch& unlabeled,
                      const TrainConfig& config, const LabelOracle& oracle = {});

struct FitResult {
    EnsembleModel model;
    EmaModel ema;
    std::vector<MetricsRecord> history;

    EnsembleModel ema_model() const;
};

/// Called after each epoch with the record just appended.
using EpochCallback = std::function<void(const MetricsRecord&)>;

FitResult fit(const TrainConfig& config, const Dataset& data, const EpochCallback& on_epoch = {});

/// Error rate of the head-averaged argmax prediction on `rows`.
double evaluate_error(const EnsembleModel& model, const Dataset& data, std::span<const std::size_t> rows);

/// Error rate of head m alone on `rows`.
double evaluate_head_error(const EnsembleModel& model, const Dataset& data,
                           std::span<const std::size_t> rows, std::size_t m);

}  // namespace cbe
