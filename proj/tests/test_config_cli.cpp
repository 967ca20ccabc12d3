#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "cbe/cli.hpp"
#include "cbe/config.hpp"
#include "cbe/error.hpp"
#include "cbe/metrics.hpp"

using namespace cbe;
namespace fs = std::filesystem;

namespace {

const char* const kTinyConfig = R"(# tiny run
data.source = two_moons
data.n = 200
data.labels_per_class = 2
model.hidden = 8
model.M = 3
train.N_B = 8
train.mu = 2
train.epochs = 3
train.iterations_per_epoch = 4
train.seed = 17
)";

struct TempDir {
    fs::path path;
    TempDir()
    {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("cbe_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

void spit(const std::string& path, const std::string& content)
{
    std::ofstream(path, std::ios::binary) << content;
}

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

RunConfig parse(const std::string& text)
{
    std::istringstream in(text);
    return parse_config(in);
}

std::size_t count_lines(const std::string& s)
{
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("config parses and round trips through text")
{
    const RunConfig c = parse(kTinyConfig);
    CHECK(c.train.model.hidden == std::vector<std::size_t>{8});
    CHECK(c.train.model.heads == 3);
    CHECK(c.train.epochs == 3);
    CHECK(c.data.samples == 200);
    CHECK(c.data_seed() == 17);
    const std::string text = to_text(c);
    CHECK(to_text(parse(text)) == text);

    RunConfig odd = c;
    odd.train.learning_rate = 0.1 + 0.2;
    odd.data.seed = 5;
    const RunConfig back = parse(to_text(odd));
    CHECK(back.train.learning_rate == odd.train.learning_rate);
    CHECK(back.data_seed() == 5);
}

TEST_CASE("config errors name the offending keys")
{
    for (const char* key : {"data.source", "train.epochs", "train.iterations_per_epoch"}) {
        CHECK_THROWS_WITH_AS(parse("model.M = 3\n"), doctest::Contains(key), ValidationError);
    }
    CHECK_THROWS_WITH_AS(parse("data.source = blobs\n"),
                         doctest::Contains("missing config keys: train.epochs, train.iterations_per_epoch"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(parse(std::string(kTinyConfig) + "train.momentun = 0.9\n"),
                         doctest::Contains("train.momentun"), ValidationError);
    CHECK_THROWS_WITH_AS(parse(std::string(kTinyConfig) + "train.seed = 3\n"), doctest::Contains("repeated"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(parse(std::string(kTinyConfig) + "train.lr = fast\n"), doctest::Contains("train.lr"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(parse(std::string(kTinyConfig) + "policy.kind = sometimes\n"),
                         doctest::Contains("policy.kind"), ValidationError);

    std::string zero_mu = kTinyConfig;
    zero_mu.replace(zero_mu.find("train.mu = 2"), 12, "train.mu = 0");
    CHECK_THROWS_WITH_AS(parse(zero_mu).validate(), doctest::Contains("mu"), ValidationError);

    CHECK_NOTHROW(parse(std::string("manifest.started = x\n") + kTinyConfig));
}

TEST_CASE("content hash matches git blob ids")
{
    CHECK(content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("datasets from config")
{
    const Dataset moons = build_dataset(parse(kTinyConfig));
    CHECK(moons.size() == 200);
    CHECK(moons.labeled_count() == 4);
    CHECK(moons.test_indices().size() == 40);

    const Dataset blobs = build_dataset(parse(R"(data.source = blobs
data.n = 90
data.classes = 3
data.labels_per_class = 1
train.epochs = 1
train.iterations_per_epoch = 1
)"));
    CHECK(blobs.classes() == 3);
    CHECK(blobs.labeled_count() == 3);

    TempDir dir;
    std::ostringstream csv;
    write_dataset(csv, moons);
    spit(dir / "d.csv", csv.str());
    const Dataset from_file = build_dataset(
        parse("data.source = file\ndata.path = " + (dir / "d.csv") + "\ntrain.epochs = 1\ntrain.iterations_per_epoch = 1\n"));
    CHECK(from_file.features() == moons.features());
    CHECK(from_file.labeled_indices() == moons.labeled_indices());
}

TEST_CASE("verify-bounds command")
{
    const Run ok = cli({"verify-bounds", "-M", "5", "--sigma2", "1", "--rho", "0", "--epsilon", "1", "--trials",
                        "100000"});
    CHECK(ok.code == kExitOk);
    CHECK(ok.out.rfind("lemma,M,sigma2,rho,epsilon,empirical,bound,slack,holds\n", 0) == 0);
    CHECK(count_lines(ok.out) == 3);

    const Run grid = cli({"verify-bounds", "--epsilon", "0.5,1,2", "--trials", "2000"});
    CHECK(grid.code == kExitOk);
    CHECK(count_lines(grid.out) == 5);

    const Run rho = cli({"verify-bounds", "-M", "5", "--rho", "2"});
    CHECK(rho.code == kExitValidation);
    CHECK(rho.err.find("rho") != std::string::npos);

    const Run few = cli({"verify-bounds", "--trials", "500"});
    CHECK(few.code == kExitValidation);
    CHECK(few.err.find("1000") != std::string::npos);

    TempDir dir;
    CHECK(cli({"verify-bounds", "--trials", "1000", "--out", dir / "b"}).code == kExitOk);
    CHECK(fs::exists(dir / "b/bounds.csv"));
}

TEST_CASE("train writes a replayable run directory")
{
    TempDir dir;
    spit(dir / "tiny.cfg", kTinyConfig);
    const Run first = cli({"train", "--config", dir / "tiny.cfg", "--out", dir / "a", "--quiet"});
    REQUIRE(first.code == kExitOk);
    for (const char* f : {"checkpoint.bin", "ema_checkpoint.bin", "metrics.csv", "manifest.txt"}) {
        CHECK(fs::exists(dir / (std::string("a/") + f)));
    }
    const Table log = read_table(dir / "a/metrics.csv");
    CHECK(log.rows.size() == 3);

    const std::string manifest = slurp(dir / "a/manifest.txt");
    CHECK(manifest.find("manifest.config_hash = ") != std::string::npos);
    const Run replay = cli({"train", "--config", dir / "a/manifest.txt", "--out", dir / "b", "--quiet"});
    REQUIRE(replay.code == kExitOk);
    CHECK(slurp(dir / "a/metrics.csv") == slurp(dir / "b/metrics.csv"));
    CHECK(slurp(dir / "a/checkpoint.bin") == slurp(dir / "b/checkpoint.bin"));

    const Run verbose = cli({"train", "--config", dir / "tiny.cfg", "--out", dir / "c", "--epochs", "2", "--seed",
                             "99"});
    REQUIRE(verbose.code == kExitOk);
    CHECK(verbose.out.find("epoch 2/2") != std::string::npos);
    CHECK(read_table(dir / "c/metrics.csv").rows.size() == 2);
    CHECK(parse_config_file(dir / "c/manifest.txt").train.seed == 99);

    const Run empty = cli({"train", "--config", dir / "tiny.cfg", "--out", dir / "z", "--epochs", "0", "--quiet"});
    CHECK(empty.code == kExitOk);
    CHECK(read_table(dir / "z/metrics.csv").rows.empty());

    std::string bad = kTinyConfig;
    bad.replace(bad.find("train.mu = 2"), 12, "train.mu = 0");
    spit(dir / "bad.cfg", bad);
    const Run invalid = cli({"train", "--config", dir / "bad.cfg", "--out", dir / "d"});
    CHECK(invalid.code == kExitValidation);
    CHECK(invalid.err.find("mu") != std::string::npos);

    const Run missing = cli({"train", "--config", dir / "nowhere.cfg", "--out", dir / "e"});
    CHECK(missing.code == kExitValidation);

    SUBCASE("eval")
    {
        const Run ev = cli({"eval", "--config", dir / "a/manifest.txt", "--checkpoint", dir / "a/ema_checkpoint.bin",
                            "--augmentations", "4", "--out", dir / "ev"});
        CHECK((ev.code == kExitOk || ev.code == kExitBoundViolation));
        CHECK(ev.out.find("test_error = ") != std::string::npos);
        CHECK(ev.out.find("head_2_test_error = ") != std::string::npos);
        const Table v = read_table(dir / "ev/variance.csv");
        CHECK(v.rows.size() == 200);
        CHECK(v.columns.back() == "head_2_variance");
    }
}

TEST_CASE("report merges metric logs")
{
    TempDir dir;
    spit(dir / "tiny.cfg", kTinyConfig);
    REQUIRE(cli({"train", "--config", dir / "tiny.cfg", "--out", dir / "a", "--quiet"}).code == kExitOk);
    REQUIRE(cli({"train", "--config", dir / "tiny.cfg", "--out", dir / "b", "--quiet", "--seed", "3"}).code ==
            kExitOk);
    REQUIRE(cli({"train", "--config", dir / "tiny.cfg", "--out", dir / "c", "--quiet", "--epochs", "2"}).code ==
            kExitOk);
    const std::string a = dir / "a/metrics.csv";
    const std::string b = dir / "b/metrics.csv";
    const std::string c = dir / "c/metrics.csv";

    const MergedReport single = merge_metric_logs({a}, std::cerr);
    CHECK(single.table == slurp(a));

    std::ostringstream quiet;
    const MergedReport two = merge_metric_logs({a, b}, quiet);
    CHECK(quiet.str().empty());
    std::istringstream two_in(two.table);
    const Table merged = read_table(two_in);
    const Table ta = read_table(a);
    CHECK(merged.columns.size() == 1 + 2 * (ta.columns.size() - 1));
    CHECK(merged.columns[0] == "epoch");
    CHECK(merged.columns[1] == ta.columns[1] + "_r1");
    CHECK(merged.rows.size() == 3);
    CHECK(merged.rows[2][merged.column("eta_r1")] == ta.rows[2][ta.column("eta")]);
    std::istringstream sum_in(two.summary);
    const Table summary = read_table(sum_in);
    CHECK(summary.columns ==
          std::vector<std::string>{"run", "epoch", "pl_accuracy", "eta", "eta_cbe", "head_corr", "test_error"});
    CHECK(summary.rows.size() == 2);
    CHECK(summary.rows[0][1] == "3");

    std::ostringstream warn;
    const MergedReport uneven = merge_metric_logs({a, c}, warn);
    CHECK(warn.str().find("unequal lengths") != std::string::npos);
    CHECK(warn.str().find("first 2 epochs") != std::string::npos);
    std::istringstream uneven_in(uneven.table);
    CHECK(read_table(uneven_in).rows.size() == 2);

    std::string text = slurp(b);
    text.replace(text.find("eta_cbe"), 7, "eta_xyz");
    spit(dir / "renamed.csv", text);
    const Run mismatch = cli({"report", a, dir / "renamed.csv"});
    CHECK(mismatch.code == kExitValidation);
    CHECK(mismatch.err.find("missing columns [eta_cbe]") != std::string::npos);
    CHECK(mismatch.err.find("unexpected columns [eta_xyz]") != std::string::npos);

    const Run to_dir = cli({"report", a, b, "--out", dir / "r"});
    CHECK(to_dir.code == kExitOk);
    CHECK(slurp(dir / "r/merged.csv") == two.table);
    CHECK(slurp(dir / "r/summary.csv") == to_dir.out);
}

TEST_CASE("command line errors")
{
    CHECK(cli({}).code == kExitValidation);
    CHECK(cli({"fly"}).code == kExitValidation);
    CHECK(cli({"train", "--out", "x"}).code == kExitValidation);
    const Run help = cli({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("verify-bounds") != std::string::npos);
}
