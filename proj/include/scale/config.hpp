#pragma once

// Run configuration: JSON schema, presets and the resolved (fully expanded)
// form written next to every run's outputs.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scale/augspec.hpp"
#include "scale/data.hpp"
#include "scale/net.hpp"
#include "scale/trainer.hpp"

namespace scale {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Command { train, eval, verify, demo_zero_gap };
enum class Precision { float32, float64 };
enum class DataKind { mnist, rotmnist, blobs_plain, blobs_rotinv };

inline const char* to_string(Command c) {
  switch (c) {
    case Command::train: return "train";
    case Command::eval: return "eval";
    case Command::verify: return "verify";
    case Command::demo_zero_gap: return "demo-zero-gap";
  }
  return "?";
}
inline const char* to_string(Precision p) {
  return p == Precision::float32 ? "float32" : "float64";
}
inline const char* to_string(DataKind d) {
  switch (d) {
    case DataKind::mnist: return "mnist";
    case DataKind::rotmnist: return "rotmnist";
    case DataKind::blobs_plain: return "blobs-plain";
    case DataKind::blobs_rotinv: return "blobs-rotinv";
  }
  return "?";
}

struct DataConfig {
  DataKind kind = DataKind::mnist;
  std::string dir = "data/mnist10k";  // overridden by $SCALE_DATA_DIR
  std::size_t train_subset = 10000;  // capped at what the files hold
  std::size_t test_subset = 1000;
  double val_fraction = 0.0;
  std::uint64_t rot_seed = 1;        // rotMNIST angles
  std::size_t n_train = 2000;        // 2D toys
  std::size_t n_test = 2000;
  BlobParams blobs;
};

struct EvalConfig {
  std::vector<std::size_t> tta = {4, 8};
  std::size_t bins = kDefaultBins;
  std::string checkpoint;  // eval: checkpoint to load; empty = <out>/checkpoints/final.ckpt
};

struct DemoConfig {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  double pi_invariant_min = 0.8;
  double pi_plain_max = 0.6;
  double acc_gap_max = 0.01;
};

struct RunConfig {
  Command command = Command::train;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  std::size_t workers = 1;
  Precision precision = Precision::float32;
  DataConfig data;
  Architecture arch;
  AugTheta theta = default_spec();
  TrainConfig train;
  EvalConfig eval;
  DemoConfig demo;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final one
  std::string preset;                // informational
};

namespace detail {

inline void check_keys(const Json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key()))
      throw ConfigError("config: unknown key '" + (path.empty() ? "" : path + ".") +
                        it.key() + "'");
}

template <typename V>
void get(const Json& j, const char* key, V& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: bad value for '" + (path.empty() ? "" : path + ".") + key +
                      "': " + e.what());
  }
}

template <typename E>
E enum_from(const std::string& s, std::initializer_list<E> all, const std::string& what) {
  for (E e : all)
    if (s == to_string(e)) return e;
  throw ConfigError("config: unknown " + what + " '" + s + "'");
}

inline Json theta_to_json(const AugTheta& t) {
  Json blocks = Json::array();
  for (const auto& b : t.blocks) {
    Json jb;
    jb["family"] = to_string(b.family);
    jb["pi"] = b.pi;
    if (b.is_continuous()) {
      jb["alpha"] = b.alpha;
      jb["a_max"] = b.a_max;
    } else {
      jb["n_support"] = b.n_support;
    }
    blocks.push_back(jb);
  }
  return Json{{"blocks", blocks}};
}

inline AugTheta theta_from_json(const Json& j, const std::string& path) {
  check_keys(j, path, {"blocks"});
  if (!j.contains("blocks") || !j["blocks"].is_array())
    throw ConfigError("config: '" + path + ".blocks' must be an array");
  AugTheta t;
  std::size_t i = 0;
  for (const auto& jb : j["blocks"]) {
    const std::string bp = path + ".blocks[" + std::to_string(i++) + "]";
    check_keys(jb, bp, {"family", "pi", "alpha", "a_max", "n_support"});
    std::string fam;
    get(jb, "family", fam, bp);
    Family f;
    try {
      f = family_from_string(fam);
    } catch (const std::exception&) {
      throw ConfigError("config: unknown family '" + fam + "' at " + bp);
    }
    double pi = 1.0 / 7.0;
    get(jb, "pi", pi, bp);
    if (is_continuous(f)) {
      double alpha = 0.1, a_max = f == Family::rotation ? std::numbers::pi : 1.0;
      get(jb, "alpha", alpha, bp);
      get(jb, "a_max", a_max, bp);
      if (jb.contains("n_support"))
        throw ConfigError("config: '" + bp + ".n_support' is not valid for a continuous block");
      t.blocks.push_back(AugBlock::continuous(f, pi, alpha, a_max));
    } else {
      int n = f == Family::crop ? (2 * kDefaultCropPad + 1) * (2 * kDefaultCropPad + 1) : 2;
      get(jb, "n_support", n, bp);
      if (jb.contains("alpha") || jb.contains("a_max"))
        throw ConfigError("config: '" + bp + "' is discrete and takes no alpha/a_max");
      t.blocks.push_back(AugBlock::discrete(f, pi, n));
    }
  }
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + path + ": " + e.what());
  }
  return t;
}

}  // namespace detail

inline Architecture default_arch(DataKind k) {
  if (k == DataKind::blobs_plain || k == DataKind::blobs_rotinv)
    return Architecture::mlp({2, 1, 1}, {32, 32}, 2);
  return Architecture::cnn5({1, 28, 28}, {16, 16, 32, 32, 32}, 10);
}

/// Fully expanded JSON form of `c`.
inline Json to_json(const RunConfig& c) {
  Json j;
  j["command"] = to_string(c.command);
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["workers"] = c.workers;
  j["precision"] = to_string(c.precision);
  j["data"] = {{"kind", to_string(c.data.kind)},
               {"dir", c.data.dir},
               {"train_subset", c.data.train_subset},
               {"test_subset", c.data.test_subset},
               {"val_fraction", c.data.val_fraction},
               {"rot_seed", c.data.rot_seed},
               {"n_train", c.data.n_train},
               {"n_test", c.data.n_test},
               {"blobs",
                {{"radius", c.data.blobs.radius},
                 {"offset", c.data.blobs.offset},
                 {"sigma", c.data.blobs.sigma},
                 {"ring0", {c.data.blobs.ring0_lo, c.data.blobs.ring0_hi}},
                 {"ring1", {c.data.blobs.ring1_lo, c.data.blobs.ring1_hi}}}}};
  j["model"] = {{"arch", c.arch.describe()}};
  j["augment"] = detail::theta_to_json(c.theta);
  const TrainConfig& t = c.train;
  j["train"] = {{"mc_samples", t.mc_samples},
                {"batch_size", t.batch_size},
                {"epochs_joint", t.epochs_joint},
                {"epochs_model_only", t.epochs_model_only},
                {"optimizer", to_string(t.optimizer)},
                {"lr_model", t.lr_model},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"cosine", t.cosine},
                {"lr_aug", t.lr_aug},
                {"lr_aug_decay", t.lr_aug_decay},
                {"c0", t.c0}};
  j["reg"] = {{"beta", t.reg.beta},
              {"lambda_reg", t.reg.lambda_reg},
              {"schedule", t.reg.schedule == RegSchedule::constant ? "constant" : "linear-decay"}};
  j["bound"] = {{"prior_std", t.prior_std},
                {"lipschitz", t.lipschitz},
                {"delta", t.delta},
                {"loss_range", t.loss_range}};
  j["eval"] = {{"tta", c.eval.tta}, {"bins", c.eval.bins}, {"checkpoint", c.eval.checkpoint}};
  j["demo"] = {{"seeds", c.demo.seeds},
               {"pi_invariant_min", c.demo.pi_invariant_min},
               {"pi_plain_max", c.demo.pi_plain_max},
               {"acc_gap_max", c.demo.acc_gap_max}};
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

/// Overlays `j` onto `c`. Every key must be known.
inline void apply_json(RunConfig& c, const Json& j) {
  using detail::get;
  detail::check_keys(j, "", {"command", "preset", "seed", "out_dir", "workers", "precision",
                             "data", "model", "augment", "train", "reg", "bound", "eval",
                             "demo", "checkpoint_every"});
  std::string s;
  if (j.contains("command")) {
    get(j, "command", s, "");
    c.command = detail::enum_from(s, {Command::train, Command::eval, Command::verify,
                                      Command::demo_zero_gap}, "command");
  }
  get(j, "preset", c.preset, "");
  get(j, "seed", c.seed, "");
  get(j, "out_dir", c.out_dir, "");
  get(j, "workers", c.workers, "");
  get(j, "checkpoint_every", c.checkpoint_every, "");
  if (j.contains("precision")) {
    get(j, "precision", s, "");
    c.precision = detail::enum_from(s, {Precision::float32, Precision::float64}, "precision");
  }
  bool arch_given = false;
  if (j.contains("data")) {
    const Json& d = j["data"];
    detail::check_keys(d, "data", {"kind", "dir", "train_subset", "test_subset", "val_fraction",
                                   "rot_seed", "n_train", "n_test", "blobs"});
    if (d.contains("kind")) {
      get(d, "kind", s, "data");
      c.data.kind = detail::enum_from(s, {DataKind::mnist, DataKind::rotmnist,
                                          DataKind::blobs_plain, DataKind::blobs_rotinv},
                                      "data.kind");
    }
    get(d, "dir", c.data.dir, "data");
    get(d, "train_subset", c.data.train_subset, "data");
    get(d, "test_subset", c.data.test_subset, "data");
    get(d, "val_fraction", c.data.val_fraction, "data");
    get(d, "rot_seed", c.data.rot_seed, "data");
    get(d, "n_train", c.data.n_train, "data");
    get(d, "n_test", c.data.n_test, "data");
    if (d.contains("blobs")) {
      const Json& b = d["blobs"];
      detail::check_keys(b, "data.blobs", {"radius", "offset", "sigma", "ring0", "ring1"});
      get(b, "radius", c.data.blobs.radius, "data.blobs");
      get(b, "offset", c.data.blobs.offset, "data.blobs");
      get(b, "sigma", c.data.blobs.sigma, "data.blobs");
      std::vector<double> r;
      if (b.contains("ring0")) {
        get(b, "ring0", r, "data.blobs");
        if (r.size() != 2) throw ConfigError("config: 'data.blobs.ring0' needs [lo, hi]");
        c.data.blobs.ring0_lo = r[0];
        c.data.blobs.ring0_hi = r[1];
      }
      if (b.contains("ring1")) {
        get(b, "ring1", r, "data.blobs");
        if (r.size() != 2) throw ConfigError("config: 'data.blobs.ring1' needs [lo, hi]");
        c.data.blobs.ring1_lo = r[0];
        c.data.blobs.ring1_hi = r[1];
      }
    }
  }
  if (j.contains("model")) {
    detail::check_keys(j["model"], "model", {"arch"});
    if (j["model"].contains("arch")) {
      get(j["model"], "arch", s, "model");
      try {
        c.arch = Architecture::parse(s);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config: model.arch: ") + e.what());
      }
      arch_given = true;
    }
  }
  if (!arch_given && j.contains("data") && j["data"].contains("kind"))
    c.arch = default_arch(c.data.kind);
  if (j.contains("augment")) c.theta = detail::theta_from_json(j["augment"], "augment");
  if (j.contains("train")) {
    const Json& t = j["train"];
    detail::check_keys(t, "train", {"mc_samples", "batch_size", "epochs_joint",
                                    "epochs_model_only", "optimizer", "lr_model", "momentum",
                                    "weight_decay", "cosine", "lr_aug", "lr_aug_decay", "c0"});
    get(t, "mc_samples", c.train.mc_samples, "train");
    get(t, "batch_size", c.train.batch_size, "train");
    get(t, "epochs_joint", c.train.epochs_joint, "train");
    get(t, "epochs_model_only", c.train.epochs_model_only, "train");
    if (t.contains("optimizer")) {
      get(t, "optimizer", s, "train");
      try {
        c.train.optimizer = optimizer_from_string(s);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config: train.optimizer: ") + e.what());
      }
    }
    get(t, "lr_model", c.train.lr_model, "train");
    get(t, "momentum", c.train.momentum, "train");
    get(t, "weight_decay", c.train.weight_decay, "train");
    get(t, "cosine", c.train.cosine, "train");
    get(t, "lr_aug", c.train.lr_aug, "train");
    get(t, "lr_aug_decay", c.train.lr_aug_decay, "train");
    get(t, "c0", c.train.c0, "train");
  }
  if (j.contains("reg")) {
    const Json& r = j["reg"];
    detail::check_keys(r, "reg", {"beta", "lambda_reg", "schedule"});
    get(r, "beta", c.train.reg.beta, "reg");
    get(r, "lambda_reg", c.train.reg.lambda_reg, "reg");
    if (r.contains("schedule")) {
      get(r, "schedule", s, "reg");
      if (s == "constant") c.train.reg.schedule = RegSchedule::constant;
      else if (s == "linear-decay") c.train.reg.schedule = RegSchedule::linear_decay;
      else throw ConfigError("config: unknown reg.schedule '" + s + "'");
    }
  }
  if (j.contains("bound")) {
    const Json& b = j["bound"];
    detail::check_keys(b, "bound", {"prior_std", "lipschitz", "delta", "loss_range"});
    get(b, "prior_std", c.train.prior_std, "bound");
    get(b, "lipschitz", c.train.lipschitz, "bound");
    get(b, "delta", c.train.delta, "bound");
    get(b, "loss_range", c.train.loss_range, "bound");
  }
  if (j.contains("eval")) {
    const Json& e = j["eval"];
    detail::check_keys(e, "eval", {"tta", "bins", "checkpoint"});
    get(e, "tta", c.eval.tta, "eval");
    get(e, "bins", c.eval.bins, "eval");
    get(e, "checkpoint", c.eval.checkpoint, "eval");
  }
  if (j.contains("demo")) {
    const Json& d = j["demo"];
    detail::check_keys(d, "demo", {"seeds", "pi_invariant_min", "pi_plain_max", "acc_gap_max"});
    get(d, "seeds", c.demo.seeds, "demo");
    get(d, "pi_invariant_min", c.demo.pi_invariant_min, "demo");
    get(d, "pi_plain_max", c.demo.pi_plain_max, "demo");
    get(d, "acc_gap_max", c.demo.acc_gap_max, "demo");
  }
}

inline void validate(const RunConfig& c) {
  try {
    c.train.validate();
    c.theta.validate();
    (void)c.arch.num_classes();
    BoundConfig b;
    b.prior_std = c.train.prior_std;
    b.lipschitz = c.train.lipschitz;
    b.delta = c.train.delta;
    b.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.workers < 1) throw ConfigError("config: workers must be >= 1");
  if (!(c.data.val_fraction >= 0.0 && c.data.val_fraction < 1.0))
    throw ConfigError("config: data.val_fraction must lie in [0, 1)");
  if (c.eval.bins < 1) throw ConfigError("config: eval.bins must be >= 1");
  for (std::size_t n : c.eval.tta)
    if (n < 1) throw ConfigError("config: eval.tta entries must be >= 1");
  const bool points = c.data.kind == DataKind::blobs_plain || c.data.kind == DataKind::blobs_rotinv;
  if (points && c.theta.find(Family::crop))
    throw ConfigError("config: crop blocks need image data");
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"mnist-10k", "rotmnist-10k", "zero-gap-demo",
                                                 "verify-all"};
  return names;
}

/// Desk-scale presets. The MNIST pair share every setting except the data.
inline RunConfig preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.arch = default_arch(c.data.kind);
  if (name == "mnist-10k" || name == "rotmnist-10k") {
    c.command = Command::train;
    c.data.kind = name == "mnist-10k" ? DataKind::mnist : DataKind::rotmnist;
    c.out_dir = "runs/" + name;
    c.arch = default_arch(c.data.kind);
    c.train.mc_samples = 4;
    c.train.batch_size = 128;
    c.train.epochs_joint = 18;
    c.train.epochs_model_only = 8;
    c.train.optimizer = OptimizerKind::adam;
    c.train.lr_model = 2e-3;
    c.train.lr_aug = 0.05;
    c.train.reg.lambda_reg = 0.0155;  // 0.006 at 60000 images, scaled by 1/sqrt(n) to 9000
    c.precision = Precision::float32;
    return c;
  }
  if (name == "zero-gap-demo") {
    c.command = Command::demo_zero_gap;
    c.out_dir = "runs/zero-gap-demo";
    c.data.kind = DataKind::blobs_rotinv;
    c.arch = default_arch(c.data.kind);
    c.theta = AugTheta{{AugBlock::continuous(Family::rotation, 0.5, 0.1, std::numbers::pi)}};
    c.train.mc_samples = 4;
    c.train.batch_size = 64;
    c.train.epochs_joint = 30;
    c.train.epochs_model_only = 5;
    c.train.lr_model = 1e-2;
    c.train.lr_aug = 0.2;
    c.train.reg.lambda_reg = 0.006;
    c.precision = Precision::float64;
    return c;
  }
  if (name == "verify-all") {
    c.command = Command::verify;
    c.out_dir = "runs/verify-all";
    c.precision = Precision::float64;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

/// Preset (if named), then the config file, then nothing else; CLI flags are
/// applied by the caller.
inline RunConfig load_config(const std::string& preset_name, const std::string& path) {
  RunConfig c;
  c.arch = default_arch(c.data.kind);
  if (!preset_name.empty()) c = preset(preset_name);
  if (!path.empty()) {
    const Json j = read_json_file(path);
    if (preset_name.empty() && j.contains("preset") && j["preset"].is_string() &&
        !j["preset"].get<std::string>().empty())
      c = preset(j["preset"].get<std::string>());
    apply_json(c, j);
  }
  validate(c);
  return c;
}

}  // namespace scale
