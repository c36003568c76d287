#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "malimg/byteplot.hpp"
#include "malimg/cli.hpp"

using namespace malimg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_config(const fs::path& path, const std::string& extra = "") {
    std::ofstream out(path);
    out << R"({
      "seed": 7,
      "corpus": {"per_family": 3, "benign": 9, "size_min": 2048, "size_max": 4096},
      "train": {"cnn": {"epochs": 4}, "rf": {"trees": 5}},
      "eval": {"k": 3, "epsilon_grid": [0.2, 0.4], "transfer_epsilon": 0.8})"
        << extra << "\n}\n";
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

int run_cli(std::initializer_list<std::string> args) {
    return malimg::cli::run(std::vector<std::string>(args));
}

}  // namespace

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run_cli({"frobnicate"}), 2);
    EXPECT_EQ(run_cli({"gen", "--no-such-flag"}), 2);
    EXPECT_EQ(run_cli({}), 2);
}

TEST(Cli, VisualizeWritesWidth32PgmForSmallFile) {
    TempDir dir("malimg-cli-vis");
    const auto bin = dir.path / "sample.bin";
    {
        std::ofstream out(bin, std::ios::binary);
        std::vector<char> bytes(5 * 1024, '\x41');
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    const auto pgm = dir.path / "sample.pgm";
    EXPECT_EQ(run_cli({"visualize", "--in", bin.string(), "--out", pgm.string()}), 0);
    const GrayImage img = read_pgm(pgm.string());
    EXPECT_EQ(img.width, 32u);
    EXPECT_EQ(img.height, (5u * 1024u + 31u) / 32u);

    EXPECT_EQ(run_cli({"visualize", "--in", (dir.path / "missing.bin").string(), "--out",
                       pgm.string()}),
              1);
}

TEST(Cli, GenIsByteIdenticalAcrossRuns) {
    // Identical invocations from two working directories must produce
    // byte-identical corpus directories, effective config included.
    TempDir dir("malimg-cli-gen");
    fs::create_directories(dir.path / "run_a");
    fs::create_directories(dir.path / "run_b");
    write_config(dir.path / "run_a" / "c.json");
    write_config(dir.path / "run_b" / "c.json");

    const auto cwd = fs::current_path();
    fs::current_path(dir.path / "run_a");
    ASSERT_EQ(run_cli({"gen", "--config", "c.json", "--seed", "7", "--corpus", "corpus"}), 0);
    fs::current_path(dir.path / "run_b");
    ASSERT_EQ(run_cli({"gen", "--config", "c.json", "--seed", "7", "--corpus", "corpus"}), 0);
    fs::current_path(cwd);

    const auto corpus_a = dir.path / "run_a" / "corpus";
    const auto corpus_b = dir.path / "run_b" / "corpus";

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(corpus_a))
        if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), corpus_a));
    ASSERT_FALSE(files.empty());
    for (const auto& rel : files) {
        EXPECT_EQ(slurp(corpus_a / rel), slurp(corpus_b / rel)) << rel;
    }
    EXPECT_TRUE(fs::exists(corpus_a / "effective-config.json"));
    EXPECT_TRUE(fs::exists(corpus_a / "labels.csv"));
}

TEST(Cli, TrainAttackEvaluateTransferReportPipeline) {
    TempDir dir("malimg-cli-pipe");
    const auto config = dir.path / "c.json";
    write_config(config);
    const auto corpus = dir.path / "corpus";
    ASSERT_EQ(run_cli({"gen", "--config", config.string(), "--corpus", corpus.string()}), 0);

    // train a cnn surrogate
    const auto model = dir.path / "cnn.bin";
    ASSERT_EQ(run_cli({"train", "--config", config.string(), "--corpus", corpus.string(),
                       "--model", model.string(), "--out", (dir.path / "train").string()}),
              0);
    ASSERT_TRUE(fs::exists(model));

    // craft AEs with it
    const auto attack_dir = dir.path / "attackrun";
    ASSERT_EQ(run_cli({"attack", "--config", config.string(), "--corpus", corpus.string(),
                       "--model", model.string(), "--out", attack_dir.string()}),
              0);
    EXPECT_TRUE(fs::exists(attack_dir / "aes" / "manifest.json"));
    const auto manifest = nlohmann::ordered_json::parse(slurp(attack_dir / "aes" / "manifest.json"));
    EXPECT_EQ(manifest.at("samples").size(), 27u);  // 9 families x 3

    // evaluate: fold-replacement CV with the rf detector
    write_config(config, R"(, "detector": {"algorithm": "rf", "pipeline": "raw"})");
    const auto eval_dir = dir.path / "evalrun";
    ASSERT_EQ(run_cli({"evaluate", "--config", config.string(), "--corpus", corpus.string(),
                       "--out", eval_dir.string()}),
              0);
    const auto cv = nlohmann::ordered_json::parse(slurp(eval_dir / "reports" / "cv_report.json"));
    EXPECT_EQ(cv.at("kind"), "cv_report");
    EXPECT_EQ(cv.at("k").get<int>(), 3);
    EXPECT_EQ(cv.at("detector"), "rf");
    EXPECT_TRUE(fs::exists(eval_dir / "effective-config.json"));

    // transfer: 6x6 matrix with a 100% diagonal
    const auto transfer_dir = dir.path / "transferrun";
    ASSERT_EQ(run_cli({"transfer", "--config", config.string(), "--corpus", corpus.string(),
                       "--out", transfer_dir.string()}),
              0);
    const auto tj =
        nlohmann::ordered_json::parse(slurp(transfer_dir / "reports" / "transfer.json"));
    ASSERT_EQ(tj.at("detectors").size(), 6u);
    EXPECT_EQ(tj.at("detectors")[0], "cnn");
    EXPECT_EQ(tj.at("detectors")[3], "wavelet-cnn");
    for (int i = 0; i < 6; ++i)
        EXPECT_DOUBLE_EQ(tj.at("rate")[i][i].get<double>(), 100.0);

    // report merges the transfer run's json files
    ASSERT_EQ(run_cli({"report", "--run", transfer_dir.string()}), 0);
    const auto summary = nlohmann::ordered_json::parse(slurp(transfer_dir / "summary.json"));
    EXPECT_EQ(summary.at("kind"), "summary");
    EXPECT_TRUE(summary.at("reports").contains("transfer.json"));

    EXPECT_EQ(run_cli({"report", "--run", (dir.path / "nope").string()}), 1);
}

TEST(Cli, AttackRejectsNonCnnSurrogate) {
    TempDir dir("malimg-cli-surrogate");
    const auto config = dir.path / "c.json";
    write_config(config, R"(, "detector": {"algorithm": "rf", "pipeline": "raw"})");
    const auto corpus = dir.path / "corpus";
    ASSERT_EQ(run_cli({"gen", "--config", config.string(), "--corpus", corpus.string()}), 0);

    const auto model = dir.path / "rf.bin";
    ASSERT_EQ(run_cli({"train", "--config", config.string(), "--corpus", corpus.string(),
                       "--model", model.string(), "--out", (dir.path / "t").string()}),
              0);
    EXPECT_EQ(run_cli({"attack", "--config", config.string(), "--corpus", corpus.string(),
                       "--model", model.string(), "--out", (dir.path / "a").string()}),
              1);
}

TEST(Cli, MissingConfigIsDomainError) {
    EXPECT_EQ(run_cli({"gen"}), 1);
    EXPECT_EQ(run_cli({"evaluate", "--config", "/does/not/exist.json"}), 1);
}
