#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "support.hpp"

using namespace rise;
using rise::testing::TempDir;
using rise::testing::read_file;
using rise::testing::write_file;

namespace {

// Runs the CLI with stdout/stderr captured into files under `dir`.
int run(const TempDir& dir, const std::string& args, std::string* out = nullptr) {
    const auto out_path = dir / "stdout.txt";
    const auto err_path = dir / "stderr.txt";
    const std::string cmd = std::string(RISE_CLI_PATH) + " " + args + " > '" + out_path.string() + "' 2> '" +
                            err_path.string() + "'";
    const int status = std::system(cmd.c_str());
    if (out) *out = read_file(out_path);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

fs::path make_bundle(const TempDir& dir) {
    std::string out;
    EXPECT_EQ(run(dir, "synth --n 30 --confusable 0:1 --out " + q(dir / "bundle"), &out), 0);
    return dir / "bundle" / "manifest.json";
}

}  // namespace

TEST(Cli, SynthThenValidate) {
    TempDir dir("cli");
    const auto m = make_bundle(dir);
    std::string out;
    EXPECT_EQ(run(dir, "validate " + q(m), &out), 0);
    EXPECT_NE(out.find("ok: 6 labels, 540 examples"), std::string::npos) << out;
}

TEST(Cli, ValidateRejectsBrokenBundle) {
    TempDir dir("cli");
    const auto m = make_bundle(dir);
    write_file(dir / "bundle" / "gold.txt", "0\n");
    std::string out;
    EXPECT_EQ(run(dir, "validate " + q(m), &out), 2);
    EXPECT_NE(out.find("invalid"), std::string::npos);
    EXPECT_EQ(run(dir, "validate " + q(dir / "nothing.json")), 2);
}

TEST(Cli, UsageErrorsAreValidationErrors) {
    TempDir dir("cli");
    EXPECT_EQ(run(dir, "no-such-command"), 2);
    EXPECT_EQ(run(dir, "train-embedder x.json"), 2);
    EXPECT_EQ(run(dir, "--help"), 0);
}

TEST(Cli, StepByStepMatchesPipeline) {
    TempDir dir("cli");
    const auto m = make_bundle(dir);
    ASSERT_EQ(run(dir, "detect-hard " + q(m) + " --out " + q(dir / "hardness.jsonl")), 0);
    ASSERT_EQ(run(dir, "fit-confusion " + q(m) + " --out " + q(dir / "confusion.csv")), 0);
    ASSERT_EQ(run(dir, "train-embedder " + q(m) + " --confusion " + q(dir / "confusion.csv") +
                           " --epochs 3 --out " + q(dir / "params.json")),
              0);
    ASSERT_EQ(run(dir, "rerank " + q(m) + " --hardness " + q(dir / "hardness.jsonl") + " --params " +
                           q(dir / "params.json") + " --out " + q(dir / "results.jsonl")),
              0);
    std::string out;
    ASSERT_EQ(run(dir, "evaluate --gold " + q(m) + " --pred " + q(dir / "results.jsonl") + " --topk 1,2,6", &out), 0);
    const auto ev = nlohmann::json::parse(out);
    EXPECT_EQ(ev["n"], 180u);
    EXPECT_EQ(ev["topk_oracle"].size(), 3u);
    EXPECT_EQ(ev["topk_oracle"][2]["accuracy"], 1.0);

    // The pipeline with the same settings writes the same intermediate files.
    write_file(dir / "run.json", R"({"manifest": "bundle/manifest.json", "output_dir": "run", "train": {"epochs": 3}})");
    ASSERT_EQ(run(dir, "pipeline --config " + q(dir / "run.json")), 0);
    for (const char* f : {"hardness.jsonl", "confusion.csv", "params.json", "results.jsonl"}) {
        EXPECT_EQ(read_file(dir / f), read_file(dir / "run" / f)) << f;
    }
    const auto report = nlohmann::json::parse(read_file(dir / "run" / "report.json"));
    EXPECT_EQ(report["overall"]["reranked"]["macro_f1"], ev["reranked"]["macro_f1"]);

    ASSERT_EQ(run(dir, "evaluate --gold " + q(m) + " --pred " + q(dir / "results.jsonl") + " --hard-only --hardness " +
                           q(dir / "hardness.jsonl"),
                  &out),
              0);
    const auto hard = nlohmann::json::parse(out);
    EXPECT_EQ(hard["n"], report["hard_count"]);
    EXPECT_EQ(hard["reranked"]["macro_f1"], report["hard_subset"]["reranked"]["macro_f1"]);
}

TEST(Cli, EvaluateWithAlignedGoldFile) {
    TempDir dir("cli");
    const auto m = make_bundle(dir);
    write_file(dir / "run.json", R"({"manifest": "bundle/manifest.json", "output_dir": "run", "train": {"epochs": 1}})");
    ASSERT_EQ(run(dir, "pipeline --config " + q(dir / "run.json")), 0);
    const auto b = load_bundle(m);
    std::string gold;
    for (auto i : b.indices_of(Split::Test)) gold += std::to_string(b.examples[i].gold) + "\n";
    write_file(dir / "test_gold.txt", gold);
    std::string out;
    ASSERT_EQ(run(dir, "evaluate --gold " + q(dir / "test_gold.txt") + " --pred " + q(dir / "run" / "results.jsonl"), &out), 0);
    const auto report = nlohmann::json::parse(read_file(dir / "run" / "report.json"));
    EXPECT_EQ(nlohmann::json::parse(out)["reranked"]["macro_f1"], report["overall"]["reranked"]["macro_f1"]);
    write_file(dir / "short_gold.txt", "0\n1\n");
    EXPECT_EQ(run(dir, "evaluate --gold " + q(dir / "short_gold.txt") + " --pred " + q(dir / "run" / "results.jsonl")), 2);
}

TEST(Cli, PipelineTwiceIsByteIdentical) {
    TempDir dir("cli");
    make_bundle(dir);
    write_file(dir / "run.json", R"({"manifest": "bundle/manifest.json", "seed": 3, "train": {"epochs": 4}})");
    ASSERT_EQ(run(dir, "pipeline --config " + q(dir / "run.json") + " --out " + q(dir / "a")), 0);
    ASSERT_EQ(run(dir, "pipeline --config " + q(dir / "run.json") + " --out " + q(dir / "b")), 0);
    EXPECT_EQ(read_file(dir / "a" / "report.json"), read_file(dir / "b" / "report.json"));
    EXPECT_FALSE(read_file(dir / "a" / "report.json").empty());
}

TEST(Cli, FlagOverridesReachTheResolvedConfig) {
    TempDir dir("cli");
    make_bundle(dir);
    write_file(dir / "run.json", R"({"manifest": "bundle/manifest.json", "train": {"epochs": 1}})");
    ASSERT_EQ(run(dir, "pipeline --config " + q(dir / "run.json") + " --out " + q(dir / "r") + " --threshold 0 --seed 9"), 0);
    const auto cfg = nlohmann::json::parse(read_file(dir / "r" / "config.json"));
    EXPECT_EQ(cfg["seed"], 9);
    EXPECT_EQ(cfg["hardness"]["threshold"], 0.0);
    const auto report = nlohmann::json::parse(read_file(dir / "r" / "report.json"));
    EXPECT_EQ(report["hard_count"], 0);
}

TEST(Cli, StageFailureExitsWithThree) {
    TempDir dir("cli");
    make_bundle(dir);
    write_file(dir / "run.json", R"({"manifest": "bundle/manifest.json", "train": {"epochs": 5, "lr": 1e300}})");
    EXPECT_EQ(run(dir, "pipeline --config " + q(dir / "run.json")), 3);
    EXPECT_NE(read_file(dir / "stderr.txt").find("stage 'train'"), std::string::npos);
    write_file(dir / "bad.json", R"({"manifest": "bundle/manifest.json", "train": {"tau": -1}})");
    EXPECT_EQ(run(dir, "pipeline --config " + q(dir / "bad.json")), 2);
}

TEST(Cli, AblateWritesTableAndJson) {
    TempDir dir("cli");
    make_bundle(dir);
    write_file(dir / "run.json", R"({"manifest": "bundle/manifest.json", "output_dir": "abl", "train": {"epochs": 1}})");
    std::string out;
    ASSERT_EQ(run(dir, "ablate --config " + q(dir / "run.json") + " --modes full,uniform_weights", &out), 0);
    EXPECT_NE(out.find("uniform_weights"), std::string::npos);
    const auto j = nlohmann::json::parse(read_file(dir / "abl" / "ablation.json"));
    EXPECT_EQ(j["rows"].size(), 2u);
    EXPECT_EQ(run(dir, "ablate --config " + q(dir / "run.json") + " --modes full,bogus"), 2);
}

TEST(Cli, SweepAndLevels) {
    TempDir dir("cli");
    const auto m = make_bundle(dir);
    write_file(dir / "run.json", R"({"manifest": "bundle/manifest.json", "output_dir": "run", "train": {"epochs": 1}})");
    ASSERT_EQ(run(dir, "pipeline --config " + q(dir / "run.json")), 0);
    std::string out;
    ASSERT_EQ(run(dir, "sweep --config " + q(dir / "run.json") + " --grid 0,1,10", &out), 0);
    std::stringstream lines(out);
    std::string line;
    std::vector<nlohmann::json> pts;
    while (std::getline(lines, line)) pts.push_back(nlohmann::json::parse(line));
    ASSERT_EQ(pts.size(), 3u);
    EXPECT_EQ(pts[0]["hard_count"], 0);

    ASSERT_EQ(run(dir, "detect-hard " + q(m) + " --threshold 5 --out " + q(dir / "h5.jsonl")), 0);
    ASSERT_EQ(run(dir, "levels " + q(dir / "run" / "hardness.jsonl") + " " + q(dir / "h5.jsonl"), &out), 0);
    std::stringstream ls(out);
    std::getline(ls, line);
    const auto first = nlohmann::json::parse(line);
    EXPECT_TRUE(first.contains("level"));
    EXPECT_LE(first["k"].get<int>(), 2);
}
