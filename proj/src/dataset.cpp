#include "cbe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "cbe/error.hpp"
#include "cbe/rng.hpp"

namespace cbe {

std::size_t ConfusionMatrix::total() const
{
    std::size_t t = 0;
    for (std::size_t v : counts) {
        t += v;
    }
    return t;
}

std::size_t ConfusionMatrix::trace() const
{
    std::size_t t = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        t += at(c, c);
    }
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other)
{
    require(classes == other.classes, "confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        counts[i] += other.counts[i];
    }
    return *this;
}

ConfusionMatrix confusion_matrix(const PseudoLabelBatch& pl, std::span<const ClassIndex> true_labels,
                                 std::size_t classes)
{
    require(true_labels.size() == pl.size(), "confusion_matrix: " + std::to_string(true_labels.size()) +
                                                 " labels for " + std::to_string(pl.size()) +
                                                 " pseudo-labels");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < pl.size(); ++i) {
        if (pl.mask[i]) {
            require(true_labels[i] < classes, "confusion_matrix: label out of range");
            ++cm.at(true_labels[i], pl.label(i));
        }
    }
    return cm;
}

std::optional<double> pl_accuracy(const PseudoLabelBatch& pl, std::span<const ClassIndex> true_labels)
{
    require(true_labels.size() == pl.size(), "pl_accuracy: length mismatch");
    std::size_t in = 0, correct = 0;
    for (std::size_t i = 0; i < pl.size(); ++i) {
        if (pl.mask[i]) {
            ++in;
            correct += pl.label(i) == true_labels[i] ? 1 : 0;
        }
    }
    if (in == 0) {
        return std::nullopt;
    }
    return static_cast<double>(correct) / static_cast<double>(in);
}

ConfusionMatrix LabelOracle::confusion(std::span<const std::size_t> indices,
                                       const PseudoLabelBatch& pl) const
{
    require(available(), "ground truth unavailable for this dataset");
    require(indices.size() == pl.size(), "oracle: index count does not match pseudo-labels");
    std::vector<ClassIndex> truth(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        truth[i] = (*truth_).at(indices[i]);
    }
    return confusion_matrix(pl, truth, classes_);
}

Dataset::Dataset(Tensor features, std::vector<ClassIndex> labels, std::size_t classes)
    : features_(std::move(features)), classes_(classes)
{
    require(features_.rank() == 2, "dataset features must be [N, D]");
    require(labels.size() == features_.dim(0), "dataset: one label per row");
    require(classes_ >= 2, "dataset needs K >= 2");
    for (ClassIndex y : labels) {
        require(y < classes_, "dataset label out of range");
    }
    truth_ = std::make_shared<const std::vector<ClassIndex>>(std::move(labels));
    split_.assign(size(), Split::train);
    labeled_.assign(size(), 1);
}

std::size_t Dataset::labeled_count() const
{
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(); ++i) {
        n += (split_[i] == Split::train && labeled_[i]) ? 1 : 0;
    }
    return n;
}

int Dataset::observed_label(std::size_t i) const
{
    if (split_[i] == Split::test || labeled_[i]) {
        return static_cast<int>((*truth_)[i]);
    }
    return -1;
}

std::vector<std::size_t> Dataset::labeled_indices() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (split_[i] == Split::train && labeled_[i]) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::size_t> Dataset::unlabeled_indices() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (split_[i] == Split::train && !labeled_[i]) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::size_t> Dataset::test_indices() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (split_[i] == Split::test) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<ClassIndex> Dataset::labels_of(std::span<const std::size_t> labeled_rows) const
{
    std::vector<ClassIndex> out;
    out.reserve(labeled_rows.size());
    for (std::size_t i : labeled_rows) {
        const int y = observed_label(i);
        require(y >= 0, "row " + std::to_string(i) + " is unlabeled");
        out.push_back(static_cast<ClassIndex>(y));
    }
    return out;
}

LabelOracle Dataset::oracle() const
{
    if (!truth_known_) {
        return LabelOracle{};
    }
    return LabelOracle(truth_, classes_);
}

Tensor Dataset::rows(std::span<const std::size_t> indices) const
{
    const std::size_t d = dim();
    Tensor out({indices.size(), d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        auto src = features_.row(indices[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

Dataset generate_two_moons(std::size_t n, double noise_sd, std::uint64_t seed)
{
    require(n >= 2 && n % 2 == 0, "two moons needs an even sample count, got " + std::to_string(n));
    require(noise_sd >= 0.0, "two moons noise must be >= 0");
    const std::size_t half = n / 2;
    Rng rng = make_stream(seed, {stream::data});
    std::normal_distribution<double> noise(0.0, 1.0);

    Tensor x({n, 2});
    std::vector<ClassIndex> y(n);
    for (std::size_t i = 0; i < half; ++i) {
        const double t =
            half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1);
        x.at(i, 0) = std::cos(t);
        x.at(i, 1) = std::sin(t);
        y[i] = 0;
        x.at(half + i, 0) = 1.0 - std::cos(t);
        x.at(half + i, 1) = 0.5 - std::sin(t);
        y[half + i] = 1;
    }
    if (noise_sd > 0.0) {
        for (double& v : x.data()) {
            v += noise_sd * noise(rng);
        }
    }
    return Dataset(std::move(x), std::move(y), 2);
}

Dataset generate_blobs(std::size_t n, std::size_t classes, std::span<const std::vector<double>> centers,
                       double sd, std::uint64_t seed)
{
    require(classes >= 2, "blobs need K >= 2");
    require(centers.size() == classes, "blobs need one center per class");
    require(sd >= 0.0, "blob sd must be >= 0");
    const std::size_t d = centers[0].size();
    require(d >= 1, "blob centers must have at least one coordinate");
    for (const auto& c : centers) {
        require(c.size() == d, "blob centers have different dimensions");
    }
    Rng rng = make_stream(seed, {stream::data});
    std::normal_distribution<double> noise(0.0, 1.0);
    Tensor x({n, d});
    std::vector<ClassIndex> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % classes;
        for (std::size_t j = 0; j < d; ++j) {
            x.at(i, j) = centers[y[i]][j] + (sd > 0.0 ? sd * noise(rng) : 0.0);
        }
    }
    return Dataset(std::move(x), std::move(y), classes);
}

namespace {

std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& data, const std::vector<ClassIndex>& truth,
                                                    Split split)
{
    std::vector<std::vector<std::size_t>> by_class(data.classes());
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.split(i) == split) {
            by_class[truth[i]].push_back(i);
        }
    }
    return by_class;
}

}  // namespace

// Splitting needs the truth; it runs before any trainer sees the dataset.
Dataset assign_test_split(Dataset data, double test_fraction, std::uint64_t seed)
{
    require(test_fraction >= 0.0 && test_fraction < 1.0, "test fraction must lie in [0, 1)");
    std::vector<ClassIndex> truth(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        require(data.observed_label(i) >= 0, "assign_test_split needs a fully labeled dataset");
        truth[i] = static_cast<ClassIndex>(data.observed_label(i));
    }
    Rng rng = make_stream(seed, {stream::test_split});
    for (auto& rows : rows_by_class(data, truth, Split::train)) {
        std::shuffle(rows.begin(), rows.end(), rng);
        const auto take = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(rows.size())));
        for (std::size_t r = 0; r < take; ++r) {
            data.set_split(rows[r], Split::test);
        }
    }
    return data;
}

Dataset split_labels(Dataset data, std::size_t labels_per_class, std::uint64_t seed)
{
    require(labels_per_class >= 1, "labels_per_class must be >= 1");
    std::vector<ClassIndex> truth(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.split(i) == Split::train) {
            require(data.labeled(i), "split_labels expects a fully labeled training split");
        }
        truth[i] = data.observed_label(i) < 0 ? 0 : static_cast<ClassIndex>(data.observed_label(i));
    }
    auto by_class = rows_by_class(data, truth, Split::train);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        require(by_class[c].size() >= labels_per_class,
                "label budget infeasible: class " + std::to_string(c) + " has " +
                    std::to_string(by_class[c].size()) + " training rows, need " +
                    std::to_string(labels_per_class));
    }
    Rng rng = make_stream(seed, {stream::label_split});
    for (auto& rows : by_class) {
        std::shuffle(rows.begin(), rows.end(), rng);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            data.set_labeled(rows[r], r < labels_per_class);
        }
    }
    return data;
}

void write_dataset(std::ostream& out, const Dataset& data)
{
    for (std::size_t j = 0; j < data.dim(); ++j) {
        out << 'x' << j << ',';
    }
    out << "label,split\n";
    char buf[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data.features().row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << buf << ',';
        }
        out << data.observed_label(i) << ',' << (data.split(i) == Split::train ? "train" : "test")
            << '\n';
    }
}

Dataset read_dataset(std::istream& in)
{
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "dataset file is empty");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            header.push_back(cell);
        }
    }
    require(header.size() >= 3 && header[header.size() - 2] == "label" && header.back() == "split",
            "dataset header must end with 'label,split'");
    const std::size_t d = header.size() - 2;

    std::vector<double> values;
    std::vector<int> labels;
    std::vector<Split> splits;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        require(cells.size() == d + 2, "dataset line " + std::to_string(line_no) + ": expected " +
                                           std::to_string(d + 2) + " columns");
        try {
            for (std::size_t j = 0; j < d; ++j) {
                values.push_back(std::stod(cells[j]));
            }
            labels.push_back(std::stoi(cells[d]));
        } catch (const std::exception&) {
            throw ValidationError("dataset line " + std::to_string(line_no) + ": malformed number");
        }
        require(cells[d + 1] == "train" || cells[d + 1] == "test",
                "dataset line " + std::to_string(line_no) + ": split must be train or test");
        splits.push_back(cells[d + 1] == "train" ? Split::train : Split::test);
        require(labels.back() >= -1, "dataset line " + std::to_string(line_no) + ": bad label");
        require(labels.back() >= 0 || splits.back() == Split::train,
                "dataset line " + std::to_string(line_no) + ": test rows must be labeled");
    }
    const std::size_t n = labels.size();
    require(n > 0, "dataset file has no rows");
    const int max_label = *std::max_element(labels.begin(), labels.end());
    require(max_label >= 1, "dataset needs at least two classes");

    std::vector<ClassIndex> truth(n);
    bool any_unlabeled = false;
    for (std::size_t i = 0; i < n; ++i) {
        truth[i] = labels[i] < 0 ? 0 : static_cast<ClassIndex>(labels[i]);
        any_unlabeled = any_unlabeled || labels[i] < 0;
    }
    Dataset data(Tensor({n, d}, std::move(values)), std::move(truth),
                 static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < n; ++i) {
        data.set_split(i, splits[i]);
        data.set_labeled(i, labels[i] >= 0);
    }
    if (any_unlabeled) {
        data.seal_unknown_truth();
    }
    return data;
}

}  // namespace cbe
