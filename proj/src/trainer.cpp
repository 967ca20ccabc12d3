#include "cbe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cbe/error.hpp"
#include "cbe/rng.hpp"

namespace cbe {

void TrainConfig::validate() const
{
    model.validate();
    require(labeled_batch >= 1, "train.N_B must be >= 1");
    require(mu >= 1, "train.mu must be >= 1");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "train.lr must be > 0");
    require(momentum >= 0.0 && momentum < 1.0, "train.momentum must lie in [0, 1)");
    require(ema_decay >= 0.0 && ema_decay <= 1.0, "train.ema_decay must lie in [0, 1]");
    require(tau > 0.0 && tau < 1.0, "policy.tau must lie in (0, 1)");
    require(policy_decay > 0.0 && policy_decay < 1.0, "policy.decay must lie in (0, 1)");
    require(gamma > 0.0 && gamma < 1.0, "policy.gamma must lie in (0, 1)");
    require(iterations_per_epoch >= 1, "train.iterations_per_epoch must be >= 1");
    require(weights.lambda_l >= 0.0, "loss.lambda_l must be >= 0");
    require(weights.lambda_e >= 0.0, "loss.lambda_e must be >= 0");
    require(weights.lambda_fu >= 0.0, "loss.lambda_fu must be >= 0");
    require(weights.lambda_lv >= 0.0, "loss.lambda_lv must be >= 0");
    require(augment.sigma_weak >= 0.0, "aug.sigma_weak must be >= 0");
    require(augment.sigma_strong >= 0.0, "aug.sigma_strong must be >= 0");
    require(augment.p_drop >= 0.0 && augment.p_drop <= 1.0, "aug.p_drop must lie in [0, 1]");
    require(augment.scale >= 0.0 && augment.scale < 1.0, "aug.scale must lie in [0, 1)");
}

ThresholdPolicy make_policy(const TrainConfig& config)
{
    if (config.policy == PolicyKind::adaptive) {
        return ThresholdPolicy::adaptive(config.model.classes, config.policy_decay);
    }
    return ThresholdPolicy::fixed(config.tau);
}

TrainState make_train_state(const TrainConfig& config, std::size_t input_dim, std::size_t classes)
{
    ModelSpec spec = config.model;
    spec.input_dim = input_dim;
    spec.classes = classes;
    EnsembleModel model = initialize(spec, config.seed);
    const auto values = model.parameter_values();
    TrainConfig resolved = config;
    resolved.model = spec;
    return TrainState{std::move(model), make_ema(values, config.ema_decay),
                      make_optimizer_state(values), make_policy(resolved), 0};
}

namespace {

constexpr std::uint64_t kLabeledPart = 0;
constexpr std::uint64_t kUnlabeledPart = 1;

double checked(double v, const char* name, std::size_t step)
{
    if (!std::isfinite(v)) {
        std::ostringstream msg;
        msg << "loss " << name << " is non-finite (" << v << ") at step " << step;
        throw NumericError(msg.str());
    }
    return v;
}

}  // namespace

StepResult train_step(TrainState& state, const LabeledBatch& labeled, const UnlabeledBatch& unlabeled,
                      const TrainConfig& config, const LabelOracle& oracle)
{
    const ModelSpec& spec = state.model.spec();
    require(labeled.inputs.rank() == 2 && labeled.inputs.dim(0) == config.labeled_batch,
            "train_step: labeled batch must hold N_B rows");
    require(labeled.labels.size() == config.labeled_batch, "train_step: one label per labeled row");
    require(unlabeled.inputs.rank() == 2 && unlabeled.inputs.dim(0) == config.unlabeled_batch(),
            "train_step: unlabeled batch must hold mu * N_B rows");

    const std::size_t step = state.step;
    Rng rng_weak_l = make_stream(config.seed, {stream::weak_aug, step, kLabeledPart});
    Rng rng_weak_u = make_stream(config.seed, {stream::weak_aug, step, kUnlabeledPart});
    Rng rng_strong_l = make_stream(config.seed, {stream::strong_aug, step, kLabeledPart});
    Rng rng_strong_u = make_stream(config.seed, {stream::strong_aug, step, kUnlabeledPart});
    const Tensor x2_l = augment_weak(labeled.inputs, config.augment.sigma_weak, rng_weak_l);
    const Tensor x2_u = augment_weak(unlabeled.inputs, config.augment.sigma_weak, rng_weak_u);
    const Tensor x1_l = augment_strong(labeled.inputs, config.augment, rng_strong_l);
    const Tensor x1_u = augment_strong(unlabeled.inputs, config.augment, rng_strong_u);

    std::vector<ad::Var> leaves;
    for (const auto& p : state.model.parameters()) {
        leaves.push_back(ad::parameter(p.value));
    }
    const GraphOutput b1_l = forward_graph(spec, leaves, x1_l);
    const GraphOutput b2_l = forward_graph(spec, leaves, x2_l);
    const GraphOutput b1_u = forward_graph(spec, leaves, x1_u);
    const GraphOutput b2_u = forward_graph(spec, leaves, x2_u);

    // Pseudo-labels come from the weak branch's values only.
    const BranchPredictions weak_u = b2_u.values();
    const std::vector<double> thresholds = state.policy.current_threshold(spec.classes);
    PseudoLabelBatch pl = ensemble_pseudo_label(weak_u.probs, thresholds);

    const ad::Var l = supervised_loss(b1_l.head_probs, b2_l.head_probs, labeled.labels);
    const ad::Var e = ensemble_loss(b1_u.head_probs, pl, static_cast<double>(config.mu),
                                    config.labeled_batch);
    const bool has_lb = spec.heads >= 2 && spec.private_channels >= 2;
    const ad::Var fu = has_lb ? lb_loss(b2_u.private_features) : ad::constant(Tensor::scalar(0.0));
    const ad::Var lv = lv_loss(ad::average(b2_l.head_probs), labeled.labels);
    const ad::Var total = total_loss(l, e, fu, lv, config.weights);

    StepResult result;
    result.losses.supervised = checked(l.value().item(), "L_l", step);
    result.losses.ensemble = checked(e.value().item(), "L_e", step);
    result.losses.low_bias = checked(fu.value().item(), "L_fu", step);
    result.losses.low_variance = checked(lv.value().item(), "L_lv", step);
    result.losses.total = checked(total.value().item(), "L", step);

    ad::backward(total);
    std::vector<Tensor> params = state.model.parameter_values();
    std::vector<Tensor> grads;
    grads.reserve(leaves.size());
    for (const auto& leaf : leaves) {
        if (!leaf.grad().all_finite()) {
            throw NumericError("non-finite gradient at step " + std::to_string(step));
        }
        grads.push_back(leaf.grad());
    }
    sgd_nesterov_step(params, grads, state.optimizer, config.learning_rate, config.momentum,
                      config.nesterov);
    state.model.set_parameter_values(params);
    ema_update(state.ema, params);

    const Tensor weak_mean = ensemble_mean(weak_u.probs);
    if (state.policy.is_adaptive()) {
        std::vector<double> max_conf(weak_mean.dim(0));
        std::vector<double> mean_dist(spec.classes, 0.0);
        for (std::size_t i = 0; i < weak_mean.dim(0); ++i) {
            auto row = weak_mean.row(i);
            max_conf[i] = *std::max_element(row.begin(), row.end());
            for (std::size_t c = 0; c < spec.classes; ++c) {
                mean_dist[c] += row[c] / static_cast<double>(weak_mean.dim(0));
            }
        }
        state.policy = update_adaptive(state.policy, max_conf, mean_dist);
    }

    result.eta = sampling_rate(weak_mean, thresholds);
    result.eta_cbe = cbe_sampling_rate(weak_u.probs, thresholds, config.gamma);
    if (has_lb) {
        result.head_corr = result.losses.low_bias / static_cast<double>(spec.heads - 1);
    }
    if (oracle.available()) {
        result.confusion = oracle.confusion(unlabeled.rows, pl);
    }
    result.pseudo_labels = std::move(pl);
    ++state.step;
    return result;
}

EnsembleModel FitResult::ema_model() const
{
    EnsembleModel m = model;
    m.set_parameter_values(ema.shadow);
    return m;
}

double evaluate_error(const EnsembleModel& model, const Dataset& data, std::span<const std::size_t> rows)
{
    require(!rows.empty(), "evaluate_error: no rows");
    const Tensor mean = ensemble_mean(forward(model, data.rows(rows)).probs);
    std::size_t wrong = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto p = mean.row(r);
        const auto pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        wrong += pred != data.observed_label(rows[r]) ? 1 : 0;
    }
    return static_cast<double>(wrong) / static_cast<double>(rows.size());
}

double evaluate_head_error(const EnsembleModel& model, const Dataset& data,
                           std::span<const std::size_t> rows, std::size_t m)
{
    require(!rows.empty(), "evaluate_head_error: no rows");
    const Tensor probs = head_slice(forward(model, data.rows(rows)).probs, m);
    std::size_t wrong = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto p = probs.row(r);
        const auto pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        wrong += pred != data.observed_label(rows[r]) ? 1 : 0;
    }
    return static_cast<double>(wrong) / static_cast<double>(rows.size());
}

namespace {

/// Cycles through a shuffled copy of `rows`, reshuffling on every wrap.
class CyclicSampler {
public:
    CyclicSampler(std::vector<std::size_t> rows, Rng rng) : rows_(std::move(rows)), rng_(std::move(rng))
    {
        std::shuffle(rows_.begin(), rows_.end(), rng_);
    }

    std::vector<std::size_t> next(std::size_t n)
    {
        std::vector<std::size_t> out;
        out.reserve(n);
        while (out.size() < n) {
            if (cursor_ == rows_.size()) {
                std::shuffle(rows_.begin(), rows_.end(), rng_);
                cursor_ = 0;
            }
            out.push_back(rows_[cursor_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> rows_;
    Rng rng_;
    std::size_t cursor_ = 0;
};

}  // namespace

FitResult fit(const TrainConfig& config, const Dataset& data, const EpochCallback& on_epoch)
{
    config.validate();
    const std::vector<std::size_t> labeled_rows = data.labeled_indices();
    const std::vector<std::size_t> unlabeled_rows = data.unlabeled_indices();
    const std::vector<std::size_t> test_rows = data.test_indices();
    {
        std::vector<std::size_t> per_class(data.classes(), 0);
        for (ClassIndex y : data.labels_of(labeled_rows)) {
            ++per_class[y];
        }
        for (std::size_t c = 0; c < per_class.size(); ++c) {
            require(per_class[c] >= 1, "dataset has no labeled sample of class " + std::to_string(c));
        }
    }
    require(!unlabeled_rows.empty(), "dataset has no unlabeled training rows");

    TrainState state = make_train_state(config, data.dim(), data.classes());
    TrainConfig resolved = config;
    resolved.model = state.model.spec();
    const LabelOracle oracle = data.oracle();

    CyclicSampler labeled_sampler(labeled_rows, make_stream(config.seed, {stream::sampler, 0}));
    CyclicSampler unlabeled_sampler(unlabeled_rows, make_stream(config.seed, {stream::sampler, 1}));

    FitResult result{state.model, state.ema, {}};
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        MetricsRecord record;
        record.epoch = epoch + 1;
        record.confusion = ConfusionMatrix(data.classes());
        double head_corr = 0.0;
        const double iters = static_cast<double>(config.iterations_per_epoch);
        for (std::size_t it = 0; it < config.iterations_per_epoch; ++it) {
            const auto lrows = labeled_sampler.next(config.labeled_batch);
            const auto urows = unlabeled_sampler.next(config.unlabeled_batch());
            LabeledBatch lb{data.rows(lrows), data.labels_of(lrows)};
            UnlabeledBatch ub{data.rows(urows), urows};
            const StepResult r = train_step(state, lb, ub, resolved, oracle);

            record.losses.supervised += r.losses.supervised / iters;
            record.losses.ensemble += r.losses.ensemble / iters;
            record.losses.low_bias += r.losses.low_bias / iters;
            record.losses.low_variance += r.losses.low_variance / iters;
            record.losses.total += r.losses.total / iters;
            record.eta += r.eta / iters;
            record.eta_cbe += r.eta_cbe / iters;
            head_corr += r.head_corr.value_or(0.0) / iters;
            if (r.confusion) {
                record.confusion += *r.confusion;
            }
        }
        if (state.model.spec().heads >= 2 && state.model.spec().private_channels >= 2) {
            record.head_corr = head_corr;
        }
        if (record.confusion.total() > 0) {
            record.pl_accuracy = static_cast<double>(record.confusion.trace()) /
                                 static_cast<double>(record.confusion.total());
        }
        if (!test_rows.empty()) {
            EnsembleModel ema_model = state.model;
            ema_model.set_parameter_values(state.ema.shadow);
            record.test_error = evaluate_error(ema_model, data, test_rows);
        }
        result.history.push_back(record);
        if (on_epoch) {
            on_epoch(record);
        }
    }
    result.model = std::move(state.model);
    result.ema = std::move(state.ema);
    return result;
}

}  // namespace cbe
