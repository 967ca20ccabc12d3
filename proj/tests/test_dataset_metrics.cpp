#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cbe/dataset.hpp"
#include "cbe/error.hpp"
#include "cbe/metrics.hpp"

using namespace cbe;

namespace {

PseudoLabelBatch labels_as_pl(std::initializer_list<ClassIndex> argmax, std::initializer_list<int> mask)
{
    PseudoLabelBatch pl;
    pl.targets = Tensor({argmax.size(), 2});
    std::size_t i = 0;
    for (ClassIndex c : argmax) {
        pl.targets.at(i++, c) = 1.0;
    }
    for (int m : mask) {
        pl.mask.push_back(static_cast<unsigned char>(m));
        pl.passing_counts.push_back(m ? 1 : 0);
    }
    return pl;
}

}  // namespace

TEST_CASE("two moons lie on their arcs without noise")
{
    const Dataset d = generate_two_moons(200, 0.0, 1);
    std::size_t counts[2] = {0, 0};
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double x = d.features().at(i, 0);
        const double y = d.features().at(i, 1);
        const auto label = static_cast<std::size_t>(d.observed_label(i));
        ++counts[label];
        if (label == 0) {
            CHECK(std::fabs(x * x + y * y - 1.0) < 1e-12);
            CHECK(y >= -1e-12);
        } else {
            CHECK(std::fabs((x - 1.0) * (x - 1.0) + (y - 0.5) * (y - 0.5) - 1.0) < 1e-12);
            CHECK(y <= 0.5 + 1e-12);
        }
    }
    CHECK(counts[0] == 100);
    CHECK(counts[1] == 100);
}

TEST_CASE("two moons balance, reproducibility and odd n")
{
    const Dataset a = generate_two_moons(1000, 0.1, 5);
    const Dataset b = generate_two_moons(1000, 0.1, 5);
    CHECK(a.features() == b.features());
    std::size_t ones = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ones += a.observed_label(i) == 1 ? 1 : 0;
    }
    CHECK(ones == 500);
    CHECK(a.features() != generate_two_moons(1000, 0.1, 6).features());
    CHECK_THROWS_AS(generate_two_moons(999, 0.1, 5), ValidationError);
}

TEST_CASE("blobs")
{
    const std::vector<std::vector<double>> centers = {{-5.0, 0.0}, {5.0, 0.0}};
    const Dataset exact = generate_blobs(10, 2, centers, 0.0, 3);
    for (std::size_t i = 0; i < exact.size(); ++i) {
        const auto& c = centers[static_cast<std::size_t>(exact.observed_label(i))];
        CHECK(exact.features().at(i, 0) == c[0]);
        CHECK(exact.features().at(i, 1) == c[1]);
    }

    // The perpendicular bisector x = 0 is the Bayes separator.
    const Dataset d = generate_blobs(4000, 2, centers, 0.5, 4);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const int predicted = d.features().at(i, 0) > 0.0 ? 1 : 0;
        correct += predicted == d.observed_label(i) ? 1 : 0;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(d.size()) >= 0.999);
    CHECK(d.features() == generate_blobs(4000, 2, centers, 0.5, 4).features());
    CHECK_THROWS_AS(generate_blobs(10, 1, std::span(centers).first(1), 0.5, 4), ValidationError);
}

TEST_CASE("label split is stratified and exact")
{
    Dataset d = assign_test_split(generate_two_moons(1000, 0.1, 7), 0.2, 7);
    CHECK(d.test_indices().size() == 200);
    d = split_labels(std::move(d), 2, 7);
    CHECK(d.labeled_count() == 4);
    const auto rows = d.labeled_indices();
    std::size_t per_class[2] = {0, 0};
    for (ClassIndex y : d.labels_of(rows)) {
        ++per_class[y];
    }
    CHECK(per_class[0] == 2);
    CHECK(per_class[1] == 2);
    for (std::size_t r : rows) {
        CHECK(d.split(r) == Split::train);
    }
    CHECK(d.unlabeled_indices().size() == 796);
    for (std::size_t r : d.unlabeled_indices()) {
        CHECK(d.observed_label(r) == -1);
    }

    const Dataset again = split_labels(assign_test_split(generate_two_moons(1000, 0.1, 7), 0.2, 7), 2, 7);
    CHECK(again.labeled_indices() == rows);

    const Dataset full = split_labels(generate_two_moons(20, 0.1, 8), 10, 8);
    CHECK(full.labeled_count() == 20);
    CHECK(full.unlabeled_indices().empty());

    CHECK_THROWS_AS(split_labels(generate_two_moons(20, 0.1, 8), 11, 8), ValidationError);
    CHECK_THROWS_AS(split_labels(generate_two_moons(20, 0.1, 8), 0, 8), ValidationError);
}

TEST_CASE("confusion matrix and pseudo-label accuracy")
{
    const std::vector<ClassIndex> truth = {0, 0, 1};
    const PseudoLabelBatch pl = labels_as_pl({0, 1, 1}, {1, 1, 1});
    const ConfusionMatrix cm = confusion_matrix(pl, truth, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 0);
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.total() == pl.masked_in());
    CHECK(*pl_accuracy(pl, truth) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(*pl_accuracy(pl, truth) == static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));

    const PseudoLabelBatch correct = labels_as_pl({0, 0, 1}, {1, 1, 1});
    const ConfusionMatrix diag = confusion_matrix(correct, truth, 2);
    CHECK(diag.at(0, 1) == 0);
    CHECK(diag.at(1, 0) == 0);
    CHECK(*pl_accuracy(correct, truth) == 1.0);

    const PseudoLabelBatch none = labels_as_pl({0, 1, 1}, {0, 0, 0});
    CHECK(confusion_matrix(none, truth, 2).total() == 0);
    CHECK_FALSE(pl_accuracy(none, truth).has_value());

    const std::vector<ClassIndex> short_truth = {0};
    CHECK_THROWS_AS(confusion_matrix(pl, short_truth, 2), ValidationError);
}

TEST_CASE("label oracle scores unlabeled rows and disappears with unknown truth")
{
    Dataset d = split_labels(generate_two_moons(40, 0.1, 9), 2, 9);
    const auto rows = d.unlabeled_indices();
    PseudoLabelBatch pl;
    pl.targets = Tensor({rows.size(), 2});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        pl.targets.at(i, 0) = 1.0;
        pl.mask.push_back(1);
        pl.passing_counts.push_back(1);
    }
    const LabelOracle oracle = d.oracle();
    REQUIRE(oracle.available());
    const ConfusionMatrix cm = oracle.confusion(rows, pl);
    CHECK(cm.total() == rows.size());
    CHECK(cm.at(0, 0) == 18);
    CHECK(cm.at(1, 0) == 18);

    d.seal_unknown_truth();
    CHECK_FALSE(d.oracle().available());
}

TEST_CASE("dataset file round trip")
{
    const Dataset d = split_labels(assign_test_split(generate_two_moons(30, 0.1, 10), 0.2, 10), 2, 10);
    std::stringstream buf;
    write_dataset(buf, d);
    CHECK(buf.str().rfind("x0,x1,label,split\n", 0) == 0);
    const Dataset back = read_dataset(buf);
    CHECK(back.features() == d.features());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back.observed_label(i) == d.observed_label(i));
        CHECK(back.split(i) == d.split(i));
    }
    CHECK_FALSE(back.oracle().available());

    std::istringstream bad("x0,x1,label,split\n0.1,0.2,0,elsewhere\n");
    CHECK_THROWS_AS(read_dataset(bad), ValidationError);
}

TEST_CASE("metric log round trip")
{
    MetricsRecord r;
    r.epoch = 1;
    r.losses.supervised = 0.5;
    r.losses.total = 0.75;
    r.eta = 0.25;
    r.eta_cbe = 0.125;
    r.confusion = ConfusionMatrix(2);
    r.confusion.at(0, 0) = 3;
    r.confusion.at(1, 0) = 1;
    r.pl_accuracy = 0.75;
    MetricsRecord empty = r;
    empty.epoch = 2;
    empty.pl_accuracy.reset();
    empty.confusion = ConfusionMatrix(2);

    std::stringstream buf;
    write_metric_log(buf, {r, empty}, 2);
    const Table t = read_table(buf);
    CHECK(t.columns == metric_log_columns(2));
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][t.column("pl_accuracy")] == "0.75");
    CHECK(t.rows[1][t.column("pl_accuracy")] == "na");
    CHECK(t.rows[0][t.column("head_corr")] == "na");
    CHECK(t.rows[0][t.column("confusion_1_0")] == "1");
    CHECK(t.rows[1][t.column("confusion_0_0")] == "0");
    CHECK_THROWS_WITH_AS(t.column("nonexistent"), doctest::Contains("nonexistent"), ValidationError);
}
