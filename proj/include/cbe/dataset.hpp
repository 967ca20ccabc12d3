#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbe/losses.hpp"
#include "cbe/tensor.hpp"

namespace cbe {

enum class Split : std::uint8_t { train, test };

/// K x K counts; row = true class, column = pseudo-label class.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::size_t> counts;

    explicit ConfusionMatrix(std::size_t k = 0) : classes(k), counts(k * k, 0) {}

    std::size_t& at(std::size_t truth, std::size_t predicted) { return counts[truth * classes + predicted]; }
    std::size_t at(std::size_t truth, std::size_t predicted) const
    {
        return counts[truth * classes + predicted];
    }
    std::size_t total() const;
    std::size_t trace() const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Rows = true class, columns = pseudo-label argmax, masked-in samples only.
ConfusionMatrix confusion_matrix(const PseudoLabelBatch& pl, std::span<const ClassIndex> true_labels,
                                 std::size_t classes);

/// Correct masked-in pseudo-labels / masked-in count; nullopt when nothing
/// is masked in.
std::optional<double> pl_accuracy(const PseudoLabelBatch& pl, std::span<const ClassIndex> true_labels);

/// Scores pseudo-labels of unlabeled training samples against their hidden
/// ground truth without exposing it.
class LabelOracle {
public:
    LabelOracle() = default;

    bool available() const { return truth_ != nullptr; }
    /// `indices` are dataset rows, in the order of `pl`'s samples.
    ConfusionMatrix confusion(std::span<const std::size_t> indices, const PseudoLabelBatch& pl) const;

private:
    explicit LabelOracle(std::shared_ptr<const std::vector<ClassIndex>> truth, std::size_t classes)
        : truth_(std::move(truth)), classes_(classes)
    {
    }

    std::shared_ptr<const std::vector<ClassIndex>> truth_;
    std::size_t classes_ = 0;

    friend class Dataset;
};

/// Feature matrix plus labels. Training rows outside the label budget are
/// unlabeled: their labels are only reachable through LabelOracle.
class Dataset {
public:
    Dataset(Tensor features, std::vector<ClassIndex> labels, std::size_t classes);

    const Tensor& features() const { return features_; }
    std::size_t size() const { return features_.dim(0); }
    std::size_t dim() const { return features_.dim(1); }
    std::size_t classes() const { return classes_; }

    Split split(std::size_t i) const { return split_[i]; }
    bool labeled(std::size_t i) const { return labeled_[i] != 0; }
    std::size_t labeled_count() const;

    /// Label of a labeled training row or a test row; -1 for unlabeled rows.
    int observed_label(std::size_t i) const;

    std::vector<std::size_t> labeled_indices() const;
    std::vector<std::size_t> unlabeled_indices() const;
    std::vector<std::size_t> test_indices() const;
    std::vector<ClassIndex> labels_of(std::span<const std::size_t> labeled_rows) const;

    /// Ground truth survives only behind the oracle. Unknown (never-seen)
    /// labels, as for datasets read from file, make the oracle unavailable.
    LabelOracle oracle() const;

    Tensor rows(std::span<const std::size_t> indices) const;

    // Mutators used by the splitting helpers and file loader.
    void set_split(std::size_t i, Split s) { split_[i] = s; }
    void set_labeled(std::size_t i, bool v) { labeled_[i] = v ? 1 : 0; }
    void seal_unknown_truth() { truth_known_ = false; }
    bool truth_known() const { return truth_known_; }

private:
    Tensor features_;
    std::shared_ptr<const std::vector<ClassIndex>> truth_;
    std::size_t classes_;
    std::vector<Split> split_;
    std::vector<unsigned char> labeled_;
    bool truth_known_ = true;
};

/// Two interleaved half circles of radius 1: class 0 on (cos t, sin t),
/// class 1 on (1 - cos t, 0.5 - sin t), t evenly spaced on [0, pi], plus
/// Gaussian coordinate noise. n must be even; all rows train and labeled.
Dataset generate_two_moons(std::size_t n, double noise_sd, std::uint64_t seed);

/// Isotropic Gaussian clusters; sample i belongs to class i mod K.
Dataset generate_blobs(std::size_t n, std::size_t classes, std::span<const std::vector<double>> centers,
                       double sd, std::uint64_t seed);

/// Marks a stratified `test_fraction` of rows as test (always labeled).
Dataset assign_test_split(Dataset data, double test_fraction, std::uint64_t seed);

/// Keeps exactly `labels_per_class` labeled training rows per class.
Dataset split_labels(Dataset data, std::size_t labels_per_class, std::uint64_t seed);

// Text table: header "x0,...,x{D-1},label,split"; label -1 marks unlabeled.
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);

}  // namespace cbe
