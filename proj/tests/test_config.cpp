#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "scale/run.hpp"

using namespace scale;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("scale_test_cfg_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream i(p, std::ios::binary);
  std::stringstream s;
  s << i.rdbuf();
  return s.str();
}

// Runs the CLI; returns its exit status and puts stdout+stderr in `out`.
int cli(const std::string& args, std::string* out = nullptr) {
  const auto log = fs::temp_directory_path() / "scale_test_cfg_cli.log";
  const std::string cmd = std::string(SCALE_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (out) *out = slurp(log);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// A training run on blobs that finishes in well under a second.
Json tiny(const fs::path& out, std::size_t joint = 2, std::size_t model_only = 1) {
  Json j = Json::parse(R"({
    "command": "train", "seed": 3, "precision": "float64",
    "data": {"kind": "blobs-plain", "n_train": 96, "n_test": 64},
    "model": {"arch": "2x1x1|dense:8,relu,dense:2"},
    "augment": {"blocks": [{"family": "rotation", "pi": 0.5, "alpha": 0.2}]},
    "train": {"mc_samples": 2, "batch_size": 32, "lr_model": 0.01, "lr_aug": 0.05},
    "eval": {"tta": [1, 4]}
  })");
  j["out_dir"] = out.string();
  j["train"]["epochs_joint"] = joint;
  j["train"]["epochs_model_only"] = model_only;
  return j;
}

fs::path write_json(const fs::path& p, const Json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

RunConfig config_of(const Json& j) {
  RunConfig c;
  c.arch = default_arch(c.data.kind);
  apply_json(c, j);
  validate(c);
  return c;
}

}  // namespace

TEST(Config, UnknownKeyNamesTheKey) {
  RunConfig c;
  try {
    apply_json(c, Json{{"train", {{"epochs_jiont", 3}}}});
    FAIL() << "accepted an unknown key";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epochs_jiont"), std::string::npos) << e.what();
  }
  EXPECT_THROW(apply_json(c, Json{{"bogus", 1}}), ConfigError);
  EXPECT_THROW(apply_json(c, Json{{"augment", {{"blocks", {{{"family", "warp9"}}}}}}}), ConfigError);
  EXPECT_THROW(apply_json(c, Json{{"train", {{"mc_samples", "four"}}}}), ConfigError);
}

TEST(Config, PresetsValidateAndRoundTrip) {
  for (const auto& name : preset_names()) {
    const RunConfig c = preset(name);
    EXPECT_NO_THROW(validate(c)) << name;
    const Json j = to_json(c);
    EXPECT_EQ(to_json(config_of(j)), j) << name;
  }
  EXPECT_THROW(preset("cifar"), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  RunConfig c = preset("zero-gap-demo");
  c.train.c0 = 0.7;
  EXPECT_THROW(validate(c), ConfigError);
  c = preset("zero-gap-demo");
  c.theta = default_spec();  // has a crop block, not valid on points
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Checkpoint, RoundTripAndErrors) {
  const auto d = tmpdir("ckpt");
  TrainConfig tc;
  auto st = init_state<float>(init_params<float>(Architecture::mlp({1, 3, 3}, {4}, 3), Stream(2)),
                              default_spec(), tc, 10);
  st.theta.blocks[0].pi = 0.1234567890123;
  st.epoch = 3;
  st.aug_step = 17;
  st.optim.step = 17;
  for (std::size_t i = 0; i < st.optim.m.size(); ++i) st.optim.m[i] = 0.5 * i;
  const auto path = (d / "a.ckpt").string();
  save_checkpoint(path, st);
  const auto back = load_checkpoint<float>(path);
  EXPECT_EQ(back.params.w, st.params.w);
  EXPECT_EQ(back.params.w0, st.params.w0);
  EXPECT_EQ(back.theta, st.theta);
  EXPECT_EQ(back.optim.m, st.optim.m);
  EXPECT_EQ(back.optim.v, st.optim.v);
  EXPECT_EQ(back.epoch, 3u);
  EXPECT_EQ(back.aug_step, 17u);
  EXPECT_TRUE(back.params.arch == st.params.arch);

  auto kind_of = [](const std::string& p) {
    try {
      load_checkpoint<float>(p);
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    return CheckpointErrorKind::mismatch;
  };
  EXPECT_EQ(kind_of((d / "none.ckpt").string()), CheckpointErrorKind::missing);
  std::string bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x10;
  std::ofstream((d / "bad.ckpt"), std::ios::binary) << bytes;
  EXPECT_EQ(kind_of((d / "bad.ckpt").string()), CheckpointErrorKind::corrupt);
  std::ofstream((d / "short.ckpt"), std::ios::binary) << "SCALECKP";
  EXPECT_EQ(kind_of((d / "short.ckpt").string()), CheckpointErrorKind::corrupt);
}

TEST(Run, ZeroEpochsWritesHeaderOnlyCsv) {
  const auto d = tmpdir("zero");
  const auto c = config_of(tiny(d, 0, 0));
  run_train<double>(c);
  const std::string csv = slurp(d / "metrics.csv");
  EXPECT_EQ(csv, metrics_header(c.theta) + "\n");
  EXPECT_EQ(csv.rfind("epoch,phase,train_loss,reg,", 0), 0u);
  EXPECT_NE(csv.find("pi_rotation"), std::string::npos);
  EXPECT_NE(csv.find("alpha_rotation"), std::string::npos);
}

TEST(Run, TtaWithIdentityMatchesPlainAccuracy) {
  const auto d = tmpdir("tta");
  auto c = config_of(tiny(d, 1, 0));
  const auto res = run_train<double>(c);
  AugTheta zero = c.theta;
  zero.blocks[0].pi = 0.0;
  const auto st = load_checkpoint<double>((d / "checkpoints" / "final.ckpt").string());
  const auto r = evaluate<double>(st.params, zero, load_data(c).test, c);
  EXPECT_EQ(r["accuracy_tta_1"], r["accuracy_no_tta"]);
  for (const char* k : {"accuracy_no_tta", "accuracy_tta_1", "accuracy_tta_4", "ece", "bins"})
    EXPECT_TRUE(res.report.contains(k)) << k;
}

TEST(Run, ResumeReproducesStraightRun) {
  const auto a = tmpdir("straight"), b = tmpdir("resumed");
  auto ja = tiny(a, 2, 1);
  ja["checkpoint_every"] = 1;
  run_train<double>(config_of(ja));
  auto jb = ja;
  jb["out_dir"] = b.string();
  run_train<double>(config_of(jb));
  // Redo epochs 2 and 3 from the epoch-1 checkpoint.
  run_train<double>(config_of(jb), nullptr, (b / "checkpoints" / "epoch_0001.ckpt").string());
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "checkpoints" / "final.ckpt"), slurp(b / "checkpoints" / "final.ckpt"));
}

TEST(Cli, TrainEvalAndRerunFromResolvedConfig) {
  const auto d = tmpdir("cli");
  const auto cfg = write_json(d / "run.json", tiny(d / "one"));
  std::string out;
  ASSERT_EQ(cli("train --config " + cfg.string(), &out), 0) << out;
  for (const char* f : {"metrics.csv", "theta_trajectory.csv", "report.json", "reliability.csv",
                        "resolved-config.json", "checkpoints/final.ckpt"})
    EXPECT_TRUE(fs::exists(d / "one" / f)) << f;
  ASSERT_EQ(cli("train --config " + (d / "one" / "resolved-config.json").string() + " --out " +
                (d / "two").string(), &out),
            0)
      << out;
  EXPECT_EQ(slurp(d / "one" / "metrics.csv"), slurp(d / "two" / "metrics.csv"));
  ASSERT_EQ(cli("eval --config " + cfg.string() + " --out " + (d / "one").string(), &out), 0) << out;
  const Json r = Json::parse(slurp(d / "one" / "report.json"));
  for (const char* k : {"accuracy_no_tta", "accuracy_tta_1", "accuracy_tta_4", "ece", "bins"})
    EXPECT_TRUE(r.contains(k)) << k;
}

TEST(Cli, ErrorsGiveNonzeroExit) {
  const auto d = tmpdir("clierr");
  std::string out;
  auto bad = tiny(d);
  bad["train"]["lr_modle"] = 1;
  EXPECT_NE(cli("train --config " + write_json(d / "bad.json", bad).string(), &out), 0);
  EXPECT_NE(out.find("train.lr_modle"), std::string::npos) << out;
  EXPECT_NE(cli("train --config " + (d / "missing.json").string(), &out), 0);
  EXPECT_NE(cli("eval --config " + write_json(d / "ok.json", tiny(d / "empty")).string(), &out), 0);
  EXPECT_NE(out.find("not found"), std::string::npos) << out;
  EXPECT_NE(cli("bogus", &out), 0);
}

TEST(Cli, PredictionsFixtureEce) {
  const auto d = tmpdir("pred");
  std::ofstream(d / "p.csv") << "confidence,correct\n0.9,1\n0.8,0\n0.4,1\n0.3,0\n";
  write_json(d / "b.json", Json{{"eval", {{"bins", 2}}}, {"out_dir", (d / "o").string()}});
  std::string out;
  ASSERT_EQ(cli("eval --predictions " + (d / "p.csv").string() + " --config " + (d / "b.json").string(), &out),
            0)
      << out;
  EXPECT_EQ(Json::parse(slurp(d / "o" / "report.json"))["ece"].get<double>(), 0.25);
}
