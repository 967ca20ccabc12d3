#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cbe/dataset.hpp"
#include "cbe/losses.hpp"

namespace cbe {

/// Per-epoch training diagnostics.
struct MetricsRecord {
    std::size_t epoch = 0;
    LossComponents losses;             // epoch means
    std::optional<double> pl_accuracy; // absent when no pseudo-label was masked in
    double eta = 0.0;                  // sampling rate of the ensemble-mean prediction
    double eta_cbe = 0.0;              // head-majority sampling rate
    ConfusionMatrix confusion;         // pseudo-labels of the whole epoch
    std::optional<double> head_corr;   // mean |corr| over head pairs; absent for M < 2
    std::optional<double> test_error;  // EMA model on the test split; absent without one
};

/// Column names of the metric log for K classes.
std::vector<std::string> metric_log_columns(std::size_t classes);

// One header row, then one row per epoch; decimal text, "na" for absent values.
void write_metric_log(std::ostream& out, const std::vector<MetricsRecord>& history, std::size_t classes);

/// A parsed comma-separated table with a header row.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    /// Index of `name`, or throws naming the missing column.
    std::size_t column(const std::string& name) const;
};

Table read_table(std::istream& in);
Table read_table(const std::string& path);
void write_table(std::ostream& out, const Table& table);

/// Formats a double the way metric logs do.
std::string format_value(double v);
std::string format_value(const std::optional<double>& v);

}  // namespace cbe
