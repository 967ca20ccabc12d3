#include "cbe/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "cbe/chebyshev.hpp"
#include "cbe/config.hpp"
#include "cbe/error.hpp"
#include "cbe/metrics.hpp"
#include "cbe/model.hpp"
#include "cbe/trainer.hpp"

namespace fs = std::filesystem;

namespace cbe {

namespace {

std::string utc_now()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_file(const fs::path& path, const std::string& content)
{
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot write '" + path.string() + "'");
    f << content;
    require(f.good(), "write failed for '" + path.string() + "'");
}

struct TrainArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out)
{
    RunConfig config = parse_config_file(a.config);
    if (a.seed) {
        // The data seed follows train.seed unless the config pins it.
        config.train.seed = *a.seed;
    }
    if (a.epochs) {
        config.train.epochs = *a.epochs;
    }
    config.validate();

    const std::string started = utc_now();
    const Dataset data = build_dataset(config);
    const FitResult result = fit(config.train, data, [&](const MetricsRecord& r) {
        if (!a.quiet) {
            out << "epoch " << r.epoch << "/" << config.train.epochs << " loss=" << format_value(r.losses.total)
                << " pl_accuracy=" << format_value(r.pl_accuracy) << " eta=" << format_value(r.eta)
                << " eta_cbe=" << format_value(r.eta_cbe) << " test_error=" << format_value(r.test_error)
                << "\n";
        }
    });

    const fs::path dir(a.out);
    fs::create_directories(dir);
    save_checkpoint((dir / "checkpoint.bin").string(), result.model);
    save_checkpoint((dir / "ema_checkpoint.bin").string(), result.ema_model());
    std::ostringstream log;
    write_metric_log(log, result.history, data.classes());
    write_file(dir / "metrics.csv", log.str());

    const std::string config_text = to_text(config);
    std::ostringstream manifest;
    manifest << "# run manifest; parses as a config to replay the run\n"
             << "manifest.config_hash = " << content_hash(config_text) << "\n"
             << "manifest.started = " << started << "\n"
             << "manifest.finished = " << utc_now() << "\n"
             << "manifest.checkpoint = checkpoint.bin\n"
             << "manifest.ema_checkpoint = ema_checkpoint.bin\n"
             << "manifest.metric_log = metrics.csv\n"
             << config_text;
    write_file(dir / "manifest.txt", manifest.str());
    out << "wrote " << (dir / "metrics.csv").string() << ", checkpoints and manifest.txt\n";
    return kExitOk;
}

struct EvalArgs {
    std::string config;
    std::string checkpoint;
    std::size_t augmentations = 8;
    std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out)
{
    const RunConfig config = parse_config_file(a.config);
    const Dataset data = build_dataset(config);
    const EnsembleModel model = load_checkpoint(a.checkpoint);
    const ModelSpec& spec = model.spec();

    const auto test_rows = data.test_indices();
    if (test_rows.empty() || !data.truth_known()) {
        out << "test_error = na\n";
    } else {
        out << "test_error = " << format_value(evaluate_error(model, data, test_rows)) << "\n";
        for (std::size_t m = 0; m < spec.heads; ++m) {
            out << "head_" << m << "_test_error = "
                << format_value(evaluate_head_error(model, data, test_rows, m)) << "\n";
        }
    }

    const auto stats = measure_trained_model(model, data.features(), a.augmentations,
                                             config.train.augment.sigma_weak, config.train.seed);
    std::size_t violations = 0;
    double ens_var = 0.0;
    double bound = 0.0;
    for (const auto& s : stats) {
        violations += s.holds ? 0 : 1;
        ens_var += s.ensemble_variance / static_cast<double>(stats.size());
        bound += s.bound / static_cast<double>(stats.size());
    }
    out << "variance_samples = " << stats.size() << "\n"
        << "mean_ensemble_variance = " << format_value(ens_var) << "\n"
        << "mean_variance_bound = " << format_value(bound) << "\n"
        << "variance_violations = " << violations << "\n";

    if (!a.out.empty()) {
        fs::create_directories(a.out);
        Table t;
        t.columns = {"sample", "ensemble_variance", "mean_pairwise_covariance", "bound", "holds"};
        for (std::size_t m = 0; m < spec.heads; ++m) {
            t.columns.push_back("head_" + std::to_string(m) + "_variance");
        }
        for (std::size_t i = 0; i < stats.size(); ++i) {
            std::vector<std::string> row = {std::to_string(i), format_value(stats[i].ensemble_variance),
                                            format_value(stats[i].mean_pairwise_covariance),
                                            format_value(stats[i].bound), stats[i].holds ? "yes" : "no"};
            for (double v : stats[i].head_variance) {
                row.push_back(format_value(v));
            }
            t.rows.push_back(std::move(row));
        }
        std::ostringstream s;
        write_table(s, t);
        write_file(fs::path(a.out) / "variance.csv", s.str());
    }
    if (violations > 0) {
        throw BoundViolation(std::to_string(violations) + " samples violate the ensemble variance bound");
    }
    return kExitOk;
}

struct VerifyArgs {
    std::size_t heads = 5;
    double sigma2 = 1.0;
    double rho = 0.0;
    std::vector<double> epsilons{1.0};
    std::size_t trials = 100000;
    std::uint64_t seed = 1388;
    std::string out;
};

int cmd_verify_bounds(const VerifyArgs& a, std::ostream& out)
{
    require(a.trials >= kMinTrials, "--trials must be >= " + std::to_string(kMinTrials) + " (the minimum), got " +
                                        std::to_string(a.trials));
    const auto model = SimulatedHeadModel::equicorrelated(a.heads, a.sigma2, a.rho, a.trials);
    model.validate();
    const auto tails = simulate_lemma1(model, a.epsilons, a.seed);
    const BoundReport variance = simulate_lemma2(model, a.seed);

    Table t;
    t.columns = {"lemma", "M", "sigma2", "rho", "epsilon", "empirical", "bound", "slack", "holds"};
    const std::vector<std::string> common = {std::to_string(a.heads), format_value(a.sigma2), format_value(a.rho)};
    bool ok = true;
    for (const auto& r : tails) {
        std::vector<std::string> row = {"1"};
        row.insert(row.end(), common.begin(), common.end());
        row.insert(row.end(), {format_value(r.epsilon), format_value(r.empirical_tail),
                               format_value(r.chebyshev_bound), format_value(r.tail_slack),
                               r.tail_holds ? "yes" : "no"});
        t.rows.push_back(std::move(row));
        ok = ok && r.tail_holds;
    }
    std::vector<std::string> row = {"2"};
    row.insert(row.end(), common.begin(), common.end());
    row.insert(row.end(), {"na", format_value(variance.empirical_ensemble_variance),
                           format_value(variance.lemma2_bound),
                           format_value(variance.lemma2_bound * kVarianceSlack),
                           variance.variance_holds ? "yes" : "no"});
    t.rows.push_back(std::move(row));
    ok = ok && variance.variance_holds;

    std::ostringstream s;
    write_table(s, t);
    out << s.str();
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_file(fs::path(a.out) / "bounds.csv", s.str());
    }
    if (!ok) {
        throw BoundViolation("bound violated beyond slack");
    }
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& logs, const std::string& out_dir, std::ostream& out,
               std::ostream& err)
{
    const MergedReport report = merge_metric_logs(logs, err);
    if (out_dir.empty()) {
        out << report.table << "\n" << report.summary;
        return kExitOk;
    }
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "merged.csv", report.table);
    write_file(fs::path(out_dir) / "summary.csv", report.summary);
    out << report.summary;
    return kExitOk;
}

std::string join(const std::vector<std::string>& v)
{
    std::string s;
    for (const auto& x : v) {
        s += (s.empty() ? "" : ", ") + x;
    }
    return s;
}

}  // namespace

MergedReport merge_metric_logs(const std::vector<std::string>& paths, std::ostream& err)
{
    require(!paths.empty(), "report needs at least one metric log");
    std::vector<Table> tables;
    for (const auto& p : paths) {
        tables.push_back(read_table(p));
    }

    const Table& first = tables.front();
    for (std::size_t i = 1; i < tables.size(); ++i) {
        if (tables[i].columns == first.columns) {
            continue;
        }
        std::vector<std::string> missing, extra;
        for (const auto& c : first.columns) {
            if (std::find(tables[i].columns.begin(), tables[i].columns.end(), c) == tables[i].columns.end()) {
                missing.push_back(c);
            }
        }
        for (const auto& c : tables[i].columns) {
            if (std::find(first.columns.begin(), first.columns.end(), c) == first.columns.end()) {
                extra.push_back(c);
            }
        }
        std::string msg = "schema mismatch between '" + paths[0] + "' and '" + paths[i] + "':";
        if (!missing.empty()) {
            msg += " missing columns [" + join(missing) + "]";
        }
        if (!extra.empty()) {
            msg += " unexpected columns [" + join(extra) + "]";
        }
        if (missing.empty() && extra.empty()) {
            msg += " columns [" + join(tables[i].columns) + "] are in a different order";
        }
        throw ValidationError(msg);
    }

    std::size_t rows = first.rows.size();
    bool unequal = false;
    for (const auto& t : tables) {
        unequal = unequal || t.rows.size() != rows;
        rows = std::min(rows, t.rows.size());
    }
    if (unequal) {
        err << "warning: metric logs have unequal lengths; truncating to the first " << rows << " epochs\n";
    }

    const std::size_t epoch_col = first.column("epoch");
    Table merged;
    if (tables.size() == 1) {
        merged = first;
    } else {
        merged.columns.push_back("epoch");
        for (std::size_t r = 0; r < tables.size(); ++r) {
            for (std::size_t c = 0; c < first.columns.size(); ++c) {
                if (c != epoch_col) {
                    merged.columns.push_back(first.columns[c] + "_r" + std::to_string(r + 1));
                }
            }
        }
        for (std::size_t i = 0; i < rows; ++i) {
            const std::string& epoch = first.rows[i][epoch_col];
            std::vector<std::string> row = {epoch};
            for (std::size_t r = 0; r < tables.size(); ++r) {
                require(tables[r].rows[i][epoch_col] == epoch,
                        "epoch column differs at row " + std::to_string(i + 1) + " of '" + paths[r] + "'");
                for (std::size_t c = 0; c < first.columns.size(); ++c) {
                    if (c != epoch_col) {
                        row.push_back(tables[r].rows[i][c]);
                    }
                }
            }
            merged.rows.push_back(std::move(row));
        }
    }

    Table summary;
    summary.columns = {"run", "epoch", "pl_accuracy", "eta", "eta_cbe", "head_corr", "test_error"};
    for (std::size_t r = 0; r < tables.size() && rows > 0; ++r) {
        const auto& last = tables[r].rows[rows - 1];
        std::vector<std::string> row = {paths[r]};
        for (std::size_t c = 1; c < summary.columns.size(); ++c) {
            row.push_back(last[tables[r].column(summary.columns[c])]);
        }
        summary.rows.push_back(std::move(row));
    }

    MergedReport result;
    std::ostringstream a, b;
    write_table(a, merged);
    write_table(b, summary);
    result.table = a.str();
    result.summary = b.str();
    return result;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Channel-based ensemble semi-supervised training and bound verification", "cbe"};
    app.require_subcommand(1);

    TrainArgs train;
    std::uint64_t train_seed = 0;
    std::size_t train_epochs = 0;
    auto* train_cmd = app.add_subcommand("train", "Train on a configured dataset and write a run directory");
    train_cmd->add_option("--config", train.config, "Config file (a run manifest also works)")->required();
    train_cmd->add_option("--out", train.out, "Output directory")->required();
    auto* seed_opt = train_cmd->add_option("--seed", train_seed, "Override train.seed");
    auto* epochs_opt = train_cmd->add_option("--epochs", train_epochs, "Override train.epochs");
    train_cmd->add_flag("--quiet", train.quiet, "No per-epoch progress");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint: test error and per-sample variance bound");
    eval_cmd->add_option("--config", eval.config, "Config or manifest describing the data")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--augmentations", eval.augmentations, "Weak augmentations per sample")
        ->capture_default_str();
    eval_cmd->add_option("--out", eval.out, "Directory for variance.csv");

    VerifyArgs verify;
    auto* verify_cmd =
        app.add_subcommand("verify-bounds", "Monte-Carlo check of the ensemble tail and variance bounds");
    verify_cmd->add_option("-M,--heads", verify.heads, "Number of heads")->capture_default_str();
    verify_cmd->add_option("--sigma2", verify.sigma2, "Per-head variance")->capture_default_str();
    verify_cmd->add_option("--rho", verify.rho, "Pairwise correlation")->capture_default_str();
    verify_cmd->add_option("--epsilon", verify.epsilons, "Deviation thresholds")->delimiter(',');
    verify_cmd->add_option("--trials", verify.trials, "Monte-Carlo trials")->capture_default_str();
    verify_cmd->add_option("--seed", verify.seed, "Seed")->capture_default_str();
    verify_cmd->add_option("--out", verify.out, "Directory for bounds.csv");

    std::vector<std::string> logs;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "Merge metric logs into aligned tables");
    report_cmd->add_option("logs", logs, "Metric logs")->required();
    report_cmd->add_option("--out", report_out, "Directory for merged.csv and summary.csv");

    std::vector<std::string> argv_store = {"cbe"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_store) {
        argv.push_back(s.data());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        if (*train_cmd) {
            if (*seed_opt) {
                train.seed = train_seed;
            }
            if (*epochs_opt) {
                train.epochs = train_epochs;
            }
            return cmd_train(train, out);
        }
        if (*eval_cmd) {
            return cmd_eval(eval, out);
        }
        if (*verify_cmd) {
            return cmd_verify_bounds(verify, out);
        }
        return cmd_report(logs, report_out, out, err);
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const BoundViolation& e) {
        err << "bound violation: " << e.what() << "\n";
        return kExitBoundViolation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace cbe
