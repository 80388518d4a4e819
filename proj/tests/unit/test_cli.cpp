#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "json.hpp"

#include "cseg/cli.hpp"
#include "cseg/config.hpp"
#include "cseg/errors.hpp"
#include "cseg/synthetic.hpp"

using namespace cseg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  auto p = fs::path(::testing::TempDir()) / ("cseg_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::string small_config(std::size_t size = 16, std::size_t steps = 1, const std::string& extra_train = "") {
  return R"({
  "encoder": {"prototype": "linear", "k": 3, "channels": [4, 8, 16]},
  "decoder": {"prototype": "cascade", "num_classes": 2},
  "loss": {"loss_kind": "cross_entropy"},
  "task": {"kind": "blobs", "image_size": [)" +
         std::to_string(size) + ", " + std::to_string(size) + R"(], "num_classes": 2, "num_samples": 4},
  "train": {"steps": )" + std::to_string(steps) + R"(, "batch": 2)" + extra_train + R"(}
})";
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Config, RoundTrip) {
  auto cfg = parse_config(small_config());
  cfg.loss.aux_weights = {0.5, 1, 2};
  cfg.task.spacing = {0.5, 2};
  cfg.output_dir = "somewhere";
  cfg.network.decoder.with_fusion_layer = false;
  EXPECT_EQ(parse_config(serialize_config(cfg)), cfg);
  const RunConfig defaults = parse_config("{}");
  EXPECT_EQ(parse_config(serialize_config(defaults)), defaults);
}

TEST(Config, UnknownKeysAreRejected) {
  try {
    parse_config(R"({"train": {"stepz": 3}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.stepz"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config(R"({"extra": 1})"), ConfigError);
}

TEST(Config, DiagnosticsNameLineAndField) {
  try {
    parse_config("{\n  \"train\": {\n    \"steps\": ,\n  }\n}", "bad.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json:3:"), std::string::npos) << e.what();
  }
  try {
    parse_config(R"({"encoder": {"channels": [4, "x", 16]}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.channels[1]"), std::string::npos) << e.what();
  }
}

TEST(Config, ValidationRules) {
  auto cfg = parse_config(small_config(50));
  EXPECT_THROW(validate(cfg), ShapeError);
  cfg = parse_config(small_config());
  cfg.network.decoder.num_classes = 3;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = parse_config(small_config());
  cfg.loss.aux_weights = {1, 1};
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = parse_config(small_config());
  cfg.train.batch = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(Cli, TrainSmoke) {
  const auto dir = scratch("train");
  const auto cfg = write_config(dir, small_config());
  const auto r = run({"train", "--config", cfg.string(), "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out" / "checkpoint.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "out" / "config.resolved.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "graph.json"));
  const auto log = slurp(dir / "out" / "train_log.csv");
  EXPECT_EQ(count_lines(log), 2u);
  EXPECT_EQ(log.substr(0, log.find('\n')), "step,total_loss,L_g,L_1,L_2,L_3");
  EXPECT_EQ(parse_config(slurp(dir / "out" / "config.resolved.json")).train.steps, 1u);
}

TEST(Cli, TrainIsDeterministic) {
  const auto dir = scratch("det");
  const auto cfg = write_config(dir, small_config(16, 4));
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "train_log.csv"), slurp(dir / "b" / "train_log.csv"));
  EXPECT_EQ(slurp(dir / "a" / "checkpoint.ckpt"), slurp(dir / "b" / "checkpoint.ckpt"));
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--seed", "9", "--out", (dir / "c").string()}).code, 0);
  EXPECT_NE(slurp(dir / "a" / "train_log.csv"), slurp(dir / "c" / "train_log.csv"));
}

TEST(Cli, InvalidConfigExitsTwo) {
  const auto dir = scratch("invalid");
  const auto r = run({"train", "--config", write_config(dir, small_config(50)).string(), "--out",
                      (dir / "out").string()});
  EXPECT_EQ(r.code, cli::kExitInvalid);
  EXPECT_NE(r.err.find("divisible by 2^(k-1)"), std::string::npos) << r.err;
  const auto typo = run({"train", "--config", write_config(dir, R"({"train": {"stepz": 1}})").string()});
  EXPECT_EQ(typo.code, cli::kExitInvalid);
  EXPECT_NE(typo.err.find("train.stepz"), std::string::npos);
  EXPECT_EQ(run({"train", "--config", (dir / "missing.json").string()}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"bogus"}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"train", "--config", write_config(dir, small_config()).string(), "--precision", "f16"}).code,
            cli::kExitInvalid);
}

TEST(Cli, DivergenceExitsThree) {
  const auto dir = scratch("diverge");
  const auto cfg = write_config(dir, small_config(16, 2, R"(, "init_std": 1e30)"));
  const auto r = run({"train", "--config", cfg.string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, cli::kExitDiverged) << r.err;
  EXPECT_NE(r.err.find("non-finite"), std::string::npos) << r.err;
}

TEST(Cli, EvalWritesMetrics) {
  const auto dir = scratch("eval");
  const auto cfg = write_config(dir, small_config(16, 2));
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "t").string()}).code, 0);
  const auto r = run({"eval", "--config", cfg.string(), "--checkpoint", (dir / "t" / "checkpoint.ckpt").string(),
                      "--out", (dir / "e").string(), "--model", "m"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir / "e" / "metrics.csv");
  EXPECT_EQ(csv, r.out);
  EXPECT_EQ(count_lines(csv), 3u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,class,dice,adb_mm,hd_mm,iou,f1,flags");
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, 4), "m,0,");

  // Checkpoint of a different architecture.
  auto other = parse_config(small_config(16, 2));
  other.network.encoder.channels = {4, 8, 8};
  const auto ocfg = dir / "other.json";
  std::ofstream(ocfg) << serialize_config(other);
  const auto bad = run({"eval", "--config", ocfg.string(), "--checkpoint", (dir / "t" / "checkpoint.ckpt").string(),
                        "--out", (dir / "e2").string()});
  EXPECT_EQ(bad.code, cli::kExitInvalid);
}

TEST(Cli, GenData) {
  const auto dir = scratch("gen");
  const auto cfg = write_config(dir, small_config());
  const auto empty = run({"gen-data", "--config", cfg.string(), "--count", "0", "--out", (dir / "z").string()});
  ASSERT_EQ(empty.code, 0) << empty.err;
  const auto zm = nlohmann::json::parse(slurp(dir / "z" / "manifest.json"));
  EXPECT_EQ(zm["count"], 0);
  EXPECT_TRUE(zm["entries"].empty());

  ASSERT_EQ(run({"gen-data", "--config", cfg.string(), "--count", "10", "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run({"gen-data", "--config", cfg.string(), "--count", "10", "--out", (dir / "b").string()}).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 21u);

  const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  const auto samples = read_dataset((dir / "a").string());
  ASSERT_EQ(samples.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    std::vector<std::size_t> h(2, 0);
    for (auto v : samples[i].label.data) ++h.at(static_cast<std::size_t>(v));
    EXPECT_EQ(m["entries"][i]["class_histogram"].get<std::vector<std::size_t>>(), h);
  }
}

TEST(Cli, GraphCommand) {
  const auto dir = scratch("graph");
  auto cfg = parse_config(small_config(32));
  cfg.network.encoder.k = 4;
  cfg.network.encoder.channels = {4, 8, 16, 32};
  cfg.task.image_size = {32, 32};
  std::ofstream(dir / "c.json") << serialize_config(cfg);
  const auto r = run({"graph", "--config", (dir / "c.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["counts"]["decoding_blocks"], 6);
  EXPECT_EQ(j["counts"]["branch_predictions"], 4);
}

TEST(Cli, AblateRowsAndSharedInit) {
  const auto dir = scratch("ablate");
  const auto cfg = write_config(dir, small_config(16, 2));
  const auto r = run({"ablate", "--config", cfg.string(), "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir / "out" / "ablation.csv");
  EXPECT_EQ(count_lines(csv), 1u + 4u * 2u);
  for (const char* v : {"full", "no_side_branch", "no_fusion", "no_db_sequence"}) {
    EXPECT_NE(csv.find(std::string("\n") + v + ","), std::string::npos) << v;
    EXPECT_TRUE(fs::exists(dir / "out" / (std::string("graph_") + v + ".json")));
  }
  EXPECT_FALSE(fs::exists(dir / "out" / "decoder_comparison.csv"));
}
