#include "cbe/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cbe/error.hpp"

namespace cbe {

std::string format_value(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string format_value(const std::optional<double>& v)
{
    return v ? format_value(*v) : "na";
}

std::vector<std::string> metric_log_columns(std::size_t classes)
{
    std::vector<std::string> cols = {"epoch",       "loss_l",  "loss_e",  "loss_fu",
                                     "loss_lv",     "loss_total", "pl_accuracy", "eta",
                                     "eta_cbe",     "head_corr",  "test_error"};
    for (std::size_t t = 0; t < classes; ++t) {
        for (std::size_t p = 0; p < classes; ++p) {
            cols.push_back("confusion_" + std::to_string(t) + "_" + std::to_string(p));
        }
    }
    return cols;
}

void write_metric_log(std::ostream& out, const std::vector<MetricsRecord>& history, std::size_t classes)
{
    Table table;
    table.columns = metric_log_columns(classes);
    for (const auto& r : history) {
        require(r.confusion.classes == classes, "metric record has wrong confusion size");
        std::vector<std::string> row = {std::to_string(r.epoch),
                                        format_value(r.losses.supervised),
                                        format_value(r.losses.ensemble),
                                        format_value(r.losses.low_bias),
                                        format_value(r.losses.low_variance),
                                        format_value(r.losses.total),
                                        format_value(r.pl_accuracy),
                                        format_value(r.eta),
                                        format_value(r.eta_cbe),
                                        format_value(r.head_corr),
                                        format_value(r.test_error)};
        for (std::size_t v : r.confusion.counts) {
            row.push_back(std::to_string(v));
        }
        table.rows.push_back(std::move(row));
    }
    write_table(out, table);
}

std::size_t Table::column(const std::string& name) const
{
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == name) {
            return i;
        }
    }
    throw ValidationError("missing column '" + name + "'");
}

namespace {

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        cells.emplace_back();
    }
    return cells;
}

}  // namespace

Table read_table(std::istream& in)
{
    Table t;
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "table has no header");
    t.columns = split_csv(line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        auto cells = split_csv(line);
        require(cells.size() == t.columns.size(),
                "table line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                    " cells, header has " + std::to_string(t.columns.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

Table read_table(const std::string& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open '" + path + "'");
    return read_table(in);
}

void write_table(std::ostream& out, const Table& table)
{
    auto write_row = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i > 0) {
                out << ',';
            }
            out << cells[i];
        }
        out << '\n';
    };
    write_row(table.columns);
    for (const auto& r : table.rows) {
        write_row(r);
    }
}

}  // namespace cbe
