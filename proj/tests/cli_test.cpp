#include <gtest/gtest.h>

#include <cstdlib>

#include <json.hpp>

#include "birr/io.hpp"
#include "cli_support.hpp"

namespace birr {
namespace {

namespace fs = std::filesystem;
using clitest::cli;
using clitest::quote;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = clitest::fresh_dir(::testing::UnitTest::GetInstance()->current_test_info()->name()); }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CliTest, SplitTwiceGivesIdenticalFiles) {
  ASSERT_EQ(cli("synth --out " + quote(dir_ / "data") + " --per-class 10").exit_code, 0);
  for (const char* name : {"a.tsv", "b.tsv"}) {
    ASSERT_EQ(cli("split --root " + quote(dir_ / "data") + " --out " + quote(dir_ / name) +
                  " --train 0.70 --val 0.15 --test 0.15 --seed 7")
                  .exit_code,
              0);
  }
  EXPECT_EQ(read_file(dir_ / "a.tsv"), read_file(dir_ / "b.tsv"));
  ASSERT_EQ(cli("split --root " + quote(dir_ / "data") + " --out " + quote(dir_ / "c.tsv") +
                " --seed 8")
                .exit_code,
            0);
  EXPECT_NE(read_file(dir_ / "a.tsv"), read_file(dir_ / "c.tsv"));
}

TEST_F(CliTest, BadFractionsFail) {
  ASSERT_EQ(cli("synth --out " + quote(dir_ / "data") + " --per-class 4").exit_code, 0);
  const auto r = cli("split --root " + quote(dir_ / "data") + " --out " + quote(dir_ / "s.tsv") +
                         " --train 0.5 --val 0.1 --test 0.1",
                     true);
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.out.find("fractions"), std::string::npos);
}

TEST_F(CliTest, EvaluateMemorizedTrainPartIsPerfect) {
  const auto run = clitest::train_overfit_model(dir_);
  const auto r = cli("evaluate --model " + quote(run.weights) + " --split " + quote(run.split) +
                     " --subset train --json " + quote(dir_ / "report.json"));
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("accuracy 1.0000"), std::string::npos) << r.out;
  const auto j = nlohmann::json::parse(read_text(dir_ / "report.json"));
  EXPECT_EQ(j["accuracy"], 1.0);
  EXPECT_EQ(j["evaluated"], 12);
}

TEST_F(CliTest, ClassifyIsByteIdenticalAcrossRuns) {
  const auto run = clitest::train_overfit_model(dir_);
  const std::string image = quote(clitest::train_image(run, "ETB_5"));
  const auto a = cli("classify " + image + " --model " + quote(run.weights));
  const auto b = cli("classify " + image + " --model " + quote(run.weights));
  ASSERT_EQ(a.exit_code, 0);
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j["label_code"], "ETB_5");
  EXPECT_FALSE(j.contains("latency_ms"));
  EXPECT_EQ(j["model_id"], sha256_hex(read_file(run.weights)));
}

TEST_F(CliTest, ModelPathFromEnvironment) {
  const auto run = clitest::train_overfit_model(dir_);
  const std::string image = quote(clitest::train_image(run, "ETB_200", 1));
  const auto flagged = cli("classify " + image + " --model " + quote(run.weights));
  const auto env = clitest::run("BIRR_MODEL_PATH=" + quote(run.weights) + " " + quote(clitest::kCli) +
                                " classify " + image);
  ASSERT_EQ(env.exit_code, 0);
  EXPECT_EQ(env.out, flagged.out);
  const auto none = clitest::run("env -u BIRR_MODEL_PATH " + quote(clitest::kCli) + " classify " + image, true);
  EXPECT_NE(none.exit_code, 0);
  EXPECT_NE(none.out.find("BIRR_MODEL_PATH"), std::string::npos);
}

TEST_F(CliTest, TimingAddsOnlyLatency) {
  const auto run = clitest::train_overfit_model(dir_);
  const std::string image = quote(clitest::train_image(run, "OTHER"));
  auto plain = nlohmann::json::parse(cli("classify " + image + " --model " + quote(run.weights)).out);
  auto timed = nlohmann::json::parse(
      cli("classify " + image + " --timing --model " + quote(run.weights)).out);
  ASSERT_TRUE(timed.contains("latency_ms"));
  EXPECT_GE(timed["latency_ms"].get<double>(), 0.0);
  timed.erase("latency_ms");
  EXPECT_EQ(plain, timed);
}

TEST_F(CliTest, CorruptImageFailsWithDecodeMessage) {
  const auto run = clitest::train_overfit_model(dir_);
  write_text(dir_ / "bad.png", "\x89PNG\r\n\x1a\n garbage");
  const auto r = cli("classify " + quote(dir_ / "bad.png") + " --model " + quote(run.weights), true);
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.out.find("decode"), std::string::npos) << r.out;
}

TEST_F(CliTest, UnfrozenTrainingBeatsFrozenBackbone) {
  ASSERT_EQ(cli("synth --out " + quote(dir_ / "data") + " --per-class 60 --seed 0").exit_code, 0);
  ASSERT_EQ(cli("split --root " + quote(dir_ / "data") + " --out " + quote(dir_ / "split.tsv") +
                " --seed 0")
                .exit_code,
            0);
  auto accuracy = [&](const std::string& policy) {
    const fs::path weights = dir_ / (policy + ".weights");
    const fs::path report = dir_ / (policy + ".json");
    const std::string common = " --epochs 40 --lr 1e-3 --batch 32 --width 0.25 --resolution 32 --quiet";
    EXPECT_EQ(cli("train --split " + quote(dir_ / "split.tsv") + " --out " + quote(weights) +
                  " --" + policy + common)
                  .exit_code,
              0);
    EXPECT_EQ(cli("evaluate --model " + quote(weights) + " --split " + quote(dir_ / "split.tsv") +
                  " --subset test --json " + quote(report))
                  .exit_code,
              0);
    return nlohmann::json::parse(read_text(report))["accuracy"].get<double>();
  };
  const double frozen = accuracy("freeze-backbone");
  const double unfrozen = accuracy("unfreeze-all");
  EXPECT_GT(unfrozen, frozen) << "frozen " << frozen << " unfrozen " << unfrozen;
}

TEST_F(CliTest, TrainReadsConfigFileAndFlagsOverride) {
  ASSERT_EQ(cli("synth --out " + quote(dir_ / "data") + " --per-class 4").exit_code, 0);
  ASSERT_EQ(cli("split --root " + quote(dir_ / "data") + " --out " + quote(dir_ / "s.tsv")).exit_code, 0);
  write_text(dir_ / "cfg.json",
             R"({"train": {"epochs": 5, "learning_rate": 0.001},)"
             R"( "model": {"width_multiplier": 0.25, "input_resolution": 32}})");
  const auto r = cli("train --split " + quote(dir_ / "s.tsv") + " --out " + quote(dir_ / "m.weights") +
                     " --config " + quote(dir_ / "cfg.json") + " --epochs 2 --quiet --history " +
                     quote(dir_ / "h.csv"));
  ASSERT_EQ(r.exit_code, 0) << r.out;
  const std::string csv = read_text(dir_ / "h.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);  // header + 2 epochs
  EXPECT_NE(cli("train --split " + quote(dir_ / "s.tsv") + " --out " + quote(dir_ / "m.weights")).exit_code, 0);
}

TEST_F(CliTest, LabelsPrintsTable) {
  const auto r = cli("labels");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("ETB_200"), std::string::npos);
}

}  // namespace
}  // namespace birr
