#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mgproto/checkpoint.hpp"
#include "mgproto/cli.hpp"
#include "mgproto/config.hpp"
#include "mgproto/errors.hpp"

using namespace mgproto;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "mgproto_cli_test";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Reads a metrics.csv value by name and split.
double metric(const fs::path& csv, const std::string& name, const std::string& split) {
  std::ifstream in(csv);
  std::string line;
  const std::string key = name + "," + split + ",";
  while (std::getline(in, line)) {
    if (line.rfind(key, 0) == 0) return std::stod(line.substr(key.size()));
  }
  ADD_FAILURE() << "no " << key << " in " << csv;
  return 0.0;
}

// Runs the real binary and returns exit code plus combined output.
std::pair<int, std::string> run_binary(const std::string& args) {
  const std::string cmd = std::string(MGPROTO_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[256];
  while (fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

fs::path write_config(const std::string& name, const std::string& extra = "") {
  fs::create_directories(kRoot);
  const auto path = kRoot / (name + ".json");
  std::ofstream(path) << R"({"num_classes": 2, "raw_dim": 8, "dim": 8, "height": 4, "width": 4,
    "num_prototypes": 3, "levels": 3, "bank_capacity": 60, "epochs": 3, "lr_decay_every": 2,
    "train_per_class": 20, "test_per_class": 20, "ood_samples": 20, "seed": 5, "output_dir": ")"
                      << (kRoot / name).string() << "\"" << extra << "}";
  return path;
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    ASSERT_EQ(run_cli({"train", "--config", write_config("base").string()}), kExitOk);
  }
  static fs::path run() { return kRoot / "base"; }
};

}  // namespace

TEST_F(CliRun, TrainWritesArtifacts) {
  for (const char* name : {"checkpoint.bin", "checkpoint.json", "metrics.csv", "losses.csv", "priors.csv",
                           "grounding.csv", "config.json", "data/train.bin", "data/test.bin", "data/ood.bin"}) {
    EXPECT_TRUE(fs::exists(run() / name)) << name;
  }
  const auto ckpt = read_checkpoint(run() / "checkpoint.bin");
  EXPECT_EQ(ckpt.head.num_classes(), 2u);
  EXPECT_EQ(ckpt.head.num_prototypes(), 3u);
}

TEST_F(CliRun, SameConfigIsByteIdentical) {
  ASSERT_EQ(run_cli({"train", "--config", write_config("base").string(), "--out", (kRoot / "again").string()}),
            kExitOk);
  EXPECT_EQ(slurp(run() / "metrics.csv"), slurp(kRoot / "again" / "metrics.csv"));
  EXPECT_EQ(slurp(run() / "checkpoint.bin"), slurp(kRoot / "again" / "checkpoint.bin"));
}

TEST_F(CliRun, EvalReproducesLoggedAccuracy) {
  const auto out = kRoot / "eval";
  ASSERT_EQ(run_cli({"eval", "--checkpoint", (run() / "checkpoint.bin").string(), "--data",
                     (run() / "data/test.bin").string(), "--out", out.string()}),
            kExitOk);
  EXPECT_NEAR(metric(out / "metrics.csv", "accuracy", "eval"), metric(run() / "metrics.csv", "accuracy", "test"),
              1e-12);
}

TEST_F(CliRun, EvalOnOodReportsAbstention) {
  const auto out = kRoot / "eval_ood";
  ASSERT_EQ(run_cli({"eval", "--checkpoint", (run() / "checkpoint.bin").string(), "--data",
                     (run() / "data/ood.bin").string(), "--abstain-threshold", "1e300", "--out", out.string()}),
            kExitOk);
  EXPECT_EQ(metric(out / "metrics.csv", "abstention_rate", "eval"), 1.0);
}

TEST_F(CliRun, CorruptCheckpointIsUsageError) {
  auto bytes = slurp(run() / "checkpoint.bin");
  bytes[0] = 'Z';
  std::ofstream(kRoot / "bad.bin", std::ios::binary) << bytes;
  const auto [code, out] = run_binary("eval --checkpoint " + (kRoot / "bad.bin").string() + " --data " +
                                      (run() / "data/test.bin").string());
  EXPECT_EQ(code, kExitUsage);
  EXPECT_NE(out.find("bad magic"), std::string::npos) << out;
}

TEST_F(CliRun, OodIdenticalFilesGiveHalfAuroc) {
  const auto out = kRoot / "ood_same";
  const auto test = (run() / "data/test.bin").string();
  ASSERT_EQ(run_cli({"ood", "--checkpoint", (run() / "checkpoint.bin").string(), "--id-data", test, "--ood-data",
                     test, "--out", out.string()}),
            kExitOk);
  EXPECT_NEAR(metric(out / "metrics.csv", "auroc", "ood"), 0.5, 1e-12);
  EXPECT_TRUE(fs::exists(out / "histogram.csv"));
}

TEST_F(CliRun, OodMissingFileIsUsageError) {
  EXPECT_EQ(run_cli({"ood", "--checkpoint", (run() / "checkpoint.bin").string(), "--id-data",
                     (run() / "data/test.bin").string(), "--ood-data", (kRoot / "nope.bin").string()}),
            kExitUsage);
}

TEST_F(CliRun, PruneKeepAllIsIdentity) {
  const auto out = kRoot / "prune_all";
  ASSERT_EQ(run_cli({"prune", "--checkpoint", (run() / "checkpoint.bin").string(), "--keep", "3", "--data",
                     (run() / "data/test.bin").string(), "--out", out.string()}),
            kExitOk);
  const auto table = slurp(out / "prune.csv");
  const auto before = table.substr(table.find("before,3,") + 9, table.find('\n', table.find("before")) - table.find("before,3,") - 9);
  EXPECT_NE(table.find("after,3," + before), std::string::npos) << table;
}

TEST_F(CliRun, PrunedCheckpointReloads) {
  const auto out = kRoot / "prune_one";
  ASSERT_EQ(run_cli({"prune", "--checkpoint", (run() / "checkpoint.bin").string(), "--keep", "1", "--out",
                     out.string()}),
            kExitOk);
  EXPECT_EQ(read_checkpoint(out / "checkpoint.bin").head.num_prototypes(), 1u);
  EXPECT_EQ(run_cli({"prune", "--checkpoint", (run() / "checkpoint.bin").string(), "--keep", "4"}), kExitUsage);
}

TEST(Cli, MissingConfigNamesPath) {
  const auto [code, out] = run_binary("train --config /nonexistent/cfg.json");
  EXPECT_EQ(code, kExitUsage);
  EXPECT_NE(out.find("/nonexistent/cfg.json"), std::string::npos) << out;
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(run_cli({"frobnicate"}), kExitUsage);
  EXPECT_EQ(run_cli({}), kExitUsage);
}

TEST(Cli, GradcheckPasses) {
  const auto [code, out] = run_binary("gradcheck --instances 3");
  EXPECT_EQ(code, kExitOk) << out;
  EXPECT_EQ(out.find("FAIL"), std::string::npos) << out;
}

TEST(Cli, GenDataWritesSplits) {
  const auto cfg = write_config("gen");
  ASSERT_EQ(run_cli({"gen-data", "--config", cfg.string(), "--out", (kRoot / "gen_out").string()}), kExitOk);
  EXPECT_TRUE(fs::exists(kRoot / "gen_out" / "train.bin"));
  EXPECT_TRUE(fs::exists(kRoot / "gen_out" / "ood.bin.json"));
}

TEST(Config, UnknownKeyRejected) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"epochz": 3})"), false), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"epochs": "three"})"), false), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"num_prototypes": 0})"), false), ConfigError);
}

TEST(Config, RoundTripAndDefaults) {
  const auto cfg = config_from_json(nlohmann::json::parse(R"({"lambda1": 0.0, "part_weights": [1, 0.5]})"), false);
  EXPECT_EQ(cfg.train.lambda1, 0.0);
  EXPECT_EQ(cfg.train.num_prototypes, 10u);
  EXPECT_EQ(cfg.train.em.loops, 3u);
  EXPECT_EQ(cfg.train.em.ema_tau, 0.99);
  const auto back = config_from_json(nlohmann::json::parse(config_to_json(cfg).dump()), false);
  EXPECT_EQ(config_to_json(back).dump(), config_to_json(cfg).dump());
  EXPECT_EQ(back.data.part_weights, (std::vector<double>{1.0, 0.5}));
}

TEST(Config, EnvironmentOverride) {
  setenv("MGPROTO_EPOCHS", "7", 1);
  const auto cfg = config_from_json(nlohmann::json::object(), true);
  unsetenv("MGPROTO_EPOCHS");
  EXPECT_EQ(cfg.train.epochs, 7u);
  EXPECT_EQ(config_from_json(nlohmann::json::object(), true).train.epochs, 30u);
}
