#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "cbe/dataset.hpp"
#include "cbe/trainer.hpp"

namespace cbe {

/// Where the training data comes from.
struct DataConfig {
    std::string source = "two_moons";  // two_moons | blobs | file
    std::string path;                  // source = file
    std::size_t samples = 1000;
    double noise = 0.1;                // two_moons noise sd
    std::size_t classes = 2;           // blobs
    double sd = 0.5;                   // blobs cluster sd
    double radius = 3.0;               // blobs centers sit on a circle of this radius
    std::size_t labels_per_class = 2;
    double test_fraction = 0.2;
    std::optional<std::uint64_t> seed; // defaults to train.seed

    void validate() const;
};

struct RunConfig {
    TrainConfig train;
    DataConfig data;

    std::uint64_t data_seed() const { return data.seed.value_or(train.seed); }
    void validate() const;
};

/// Parses `key = value` lines. `#` starts a comment. Keys under `manifest.`
/// are run metadata and are skipped, so a run manifest parses as a config.
/// Unknown or repeated keys are errors; missing required keys are listed
/// together in one ValidationError.
RunConfig parse_config(std::istream& in);
RunConfig parse_config_file(const std::string& path);

/// Canonical text of every key, with doubles printed round-trip exact.
std::string to_text(const RunConfig& config);

/// Hash git would give `content` as a blob: sha1("blob <len>\0" + content), hex.
std::string content_hash(std::string_view content);

/// Generates or reads the dataset, then applies the test and label splits
/// (generated sources only; a file keeps its own splits).
Dataset build_dataset(const RunConfig& config);

}  // namespace cbe
