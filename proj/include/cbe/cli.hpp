#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cbe {

/// Process exit statuses.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitValidation = 2,
    kExitNumeric = 3,
    kExitBoundViolation = 4,
};

/// Runs one command. `args` excludes the program name, e.g.
/// {"train", "--config", "run.cfg", "--out", "runs/a"}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Merges metric logs for `report`. One log passes through unchanged;
/// several become one table with "_r<i>" suffixed columns, truncated to the
/// shortest log. Warnings go to `err`.
struct MergedReport {
    std::string table;    // merged per-epoch table
    std::string summary;  // final-epoch row per run
};
MergedReport merge_metric_logs(const std::vector<std::string>& paths, std::ostream& err);

}  // namespace cbe
