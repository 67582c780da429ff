#pragma once

// End-to-end runs behind the command-line tool: data loading, training with
// file outputs, evaluation reports, the verification suite and the zero-gap
// demo.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scale/checkpoint.hpp"
#include "scale/config.hpp"
#include "scale/data.hpp"
#include "scale/eval.hpp"
#include "scale/trainer.hpp"
#include "scale/verify.hpp"

namespace scale {

namespace fs = std::filesystem;

struct DataSplits {
  Dataset train;
  std::optional<Dataset> val;
  Dataset test;
};

inline constexpr std::uint64_t kTestDataTag = 0x7465737464617461ULL;

inline std::string data_dir(const RunConfig& c) {
  if (const char* env = std::getenv("SCALE_DATA_DIR"); env && *env) return env;
  return c.data.dir;
}

inline DataSplits load_data(const RunConfig& c) {
  DataSplits s;
  switch (c.data.kind) {
    case DataKind::mnist:
    case DataKind::rotmnist: {
      const fs::path dir = data_dir(c);
      Dataset train = load_idx((dir / "train-images-idx3-ubyte.gz").string(),
                               (dir / "train-labels-idx1-ubyte.gz").string());
      Dataset test = load_idx((dir / "t10k-images-idx3-ubyte.gz").string(),
                              (dir / "t10k-labels-idx1-ubyte.gz").string());
      train = train.slice(0, std::min(train.size(), c.data.train_subset));
      test = test.slice(0, std::min(test.size(), c.data.test_subset));
      train.name = test.name = "mnist";
      if (c.data.kind == DataKind::rotmnist) {
        train = make_rotmnist(train, c.data.rot_seed);
        test = make_rotmnist(test, c.data.rot_seed ^ kTestDataTag);
      }
      s.train = std::move(train);
      s.test = std::move(test);
      break;
    }
    case DataKind::blobs_plain:
    case DataKind::blobs_rotinv: {
      const BlobKind k = c.data.kind == DataKind::blobs_plain ? BlobKind::plain
                                                               : BlobKind::rotation_invariant;
      s.train = make_blobs2d(k, c.data.n_train, c.seed, c.data.blobs);
      s.test = make_blobs2d(k, c.data.n_test, c.seed ^ kTestDataTag, c.data.blobs);
      break;
    }
  }
  if (c.data.val_fraction > 0.0) {
    const auto n_val = static_cast<std::size_t>(c.data.val_fraction * static_cast<double>(s.train.size()));
    if (n_val > 0 && n_val < s.train.size()) {
      s.val = s.train.slice(s.train.size() - n_val, s.train.size());
      s.train = s.train.slice(0, s.train.size() - n_val);
    }
  }
  return s;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_header(const AugTheta& theta) {
  std::string h = "epoch,phase,train_loss,reg,pac_bound,acc_val";
  for (const auto& b : theta.blocks) (h += ",pi_") += to_string(b.family);
  for (const auto& b : theta.blocks)
    if (b.is_continuous()) (h += ",alpha_") += to_string(b.family);
  return h + ",weight_norm_term";
}

inline std::string metrics_row(const MetricsRecord& m) {
  std::string r = std::to_string(m.epoch) + "," + to_string(m.phase) + "," + fmt(m.train_loss) +
                  "," + fmt(m.reg) + "," + fmt(m.pac_bound) + "," + fmt(m.acc_val);
  for (const auto& b : m.theta.blocks) r += "," + fmt(b.pi);
  for (const auto& b : m.theta.blocks)
    if (b.is_continuous()) r += "," + fmt(b.alpha);
  return r + "," + fmt(m.weight_norm_term);
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << s;
  if (!out) throw std::runtime_error("short write to '" + p.string() + "'");
}

inline Json bins_json(const CalibrationBins& cb) {
  Json a = Json::array();
  for (const auto& b : cb.bins)
    a.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"acc", b.acc}, {"conf", b.conf}});
  return a;
}

/// Evaluation report: accuracy without and with TTA, ECE and reliability bins
/// of the plain predictions.
template <typename T>
Json evaluate(const ModelParams<T>& params, const AugTheta& theta, const Dataset& test,
              const RunConfig& c) {
  const auto batch = test.images.template cast<T>();
  const Eigen::MatrixXd probs = forward<T>(params, batch, c.workers);
  std::vector<double> conf;
  std::vector<int> correct;
  confidence_and_correct(probs, test.labels, conf, correct);
  const auto cb = reliability_bins(conf, correct, c.eval.bins);
  Json r;
  r["n_test"] = test.size();
  r["accuracy_no_tta"] = accuracy(probs, test.labels);
  for (std::size_t N : c.eval.tta) {
    const Stream s = Stream::derive(c.seed, {0x747461ULL, N});
    const auto p = predict_tta<T>(params, theta, batch, test.geometry, N, s, c.workers);
    r["accuracy_tta_" + std::to_string(N)] = accuracy(p, test.labels);
  }
  r["ece"] = ece_from_bins(cb);
  r["num_bins"] = c.eval.bins;
  r["bins"] = bins_json(cb);
  r["theta"] = detail::theta_to_json(theta);
  return r;
}

struct TrainOutcome {
  std::vector<MetricsRecord> metrics;
  AugTheta theta;
  Json report;
};

inline void log_line(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

/// Trains per `c`, writing resolved-config.json, metrics.csv,
/// theta_trajectory.csv, checkpoints/ and report.json under `c.out_dir`.
/// With `resume_from`, training continues from that checkpoint and the
/// first rows of an existing metrics.csv are kept.
template <typename T>
TrainOutcome run_train(const RunConfig& c, std::ostream* log = nullptr,
                       const std::string& resume_from = {}) {
  const fs::path out(c.out_dir);
  fs::create_directories(out / "checkpoints");
  write_text(out / "resolved-config.json", to_json(c).dump(2) + "\n");

  DataSplits data = load_data(c);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.workers = c.workers;

  TrainState<T> st;
  if (!resume_from.empty()) {
    st = load_checkpoint<T>(resume_from);
    if (!(st.params.arch == c.arch))
      throw CheckpointError(CheckpointErrorKind::mismatch,
                            "checkpoint architecture " + st.params.arch.describe() +
                                " differs from config " + c.arch.describe());
  } else {
    st = init_state<T>(init_params<T>(c.arch, Stream::derive(c.seed, {0x696e6974ULL})), c.theta, tc,
                       data.train.size());
  }

  // metrics.csv: header plus rows of epochs already done (resume).
  std::vector<std::string> rows;
  if (!resume_from.empty()) {
    std::ifstream prev(out / "metrics.csv");
    std::string line;
    std::getline(prev, line);
    while (rows.size() < st.epoch && std::getline(prev, line)) rows.push_back(line);
  }
  std::ofstream metrics(out / "metrics.csv", std::ios::trunc);
  std::ofstream traj(out / "theta_trajectory.csv", std::ios::trunc);
  metrics << metrics_header(c.theta) << "\n";
  for (const auto& r : rows) metrics << r << "\n";
  metrics.flush();
  traj << "epoch,block,pi,alpha\n";

  const auto t0 = std::chrono::steady_clock::now();
  auto on_epoch = [&](const TrainState<T>& s, const MetricsRecord& m) {
    metrics << metrics_row(m) << "\n";
    metrics.flush();
    for (const auto& b : m.theta.blocks)
      traj << m.epoch << "," << to_string(b.family) << "," << fmt(b.pi) << ","
           << (b.is_continuous() ? fmt(b.alpha) : std::string("")) << "\n";
    traj.flush();
    if (c.checkpoint_every > 0 && m.epoch % c.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << m.epoch << ".ckpt";
      save_checkpoint(((out / "checkpoints") / name.str()).string(), s);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream msg;
    msg << "epoch " << m.epoch << " [" << to_string(m.phase) << "] loss " << std::setprecision(4)
        << m.train_loss << " reg " << m.reg << " bound " << m.pac_bound;
    if (m.acc_val == m.acc_val) msg << " acc_val " << m.acc_val;
    msg << " (" << std::setprecision(1) << std::fixed << secs << " s)";
    log_line(log, msg.str());
  };

  TrainOutcome res;
  res.metrics = train_run<T>(st, data.train, data.val ? &*data.val : nullptr, tc, on_epoch);
  save_checkpoint(((out / "checkpoints") / "final.ckpt").string(), st);
  res.theta = st.theta;
  res.report = evaluate<T>(st.params, st.theta, data.test, c);
  if (!res.metrics.empty()) {
    res.report["pac_bound"] = res.metrics.back().pac_bound;
    res.report["train_loss"] = res.metrics.back().train_loss;
  }
  BoundConfig bc;
  bc.n = static_cast<double>(data.train.size());
  bc.p = static_cast<double>(st.params.w.size());
  bc.prior_std = tc.prior_std;
  bc.lipschitz = tc.lipschitz;
  bc.delta = tc.delta;
  bc.loss_range = tc.loss_range;
  if (bc.lipschitz > 0.0) {
    const auto bt = bound_terms(bc);
    res.report["sigma_star"] = bt.sigma_star;
    res.report["c_n"] = bt.c_n;
    if (bc.loss_range > 0.0) res.report["c_n_bounded"] = bt.c_n_bounded;
  }
  res.report["n_train"] = data.train.size();
  res.report["param_count"] = st.params.w.size();
  write_text(out / "report.json", res.report.dump(2) + "\n");
  {
    std::ofstream rel(out / "reliability.csv", std::ios::trunc);
    rel << "lo,hi,count,acc,conf\n";
    for (const auto& b : res.report["bins"])
      rel << fmt(b["lo"].get<double>()) << "," << fmt(b["hi"].get<double>()) << ","
          << b["count"].get<std::size_t>() << "," << fmt(b["acc"].get<double>()) << ","
          << fmt(b["conf"].get<double>()) << "\n";
  }
  return res;
}

/// Loads a checkpoint and writes report.json for the configured test data.
template <typename T>
Json run_eval(const RunConfig& c) {
  const fs::path out(c.out_dir);
  const std::string ckpt =
      c.eval.checkpoint.empty() ? ((out / "checkpoints") / "final.ckpt").string() : c.eval.checkpoint;
  const TrainState<T> st = load_checkpoint<T>(ckpt);
  DataSplits data = load_data(c);
  if (data.test.shape() != st.params.arch.input)
    throw CheckpointError(CheckpointErrorKind::mismatch,
                          "checkpoint input shape does not match the configured data");
  Json r = evaluate<T>(st.params, st.theta, data.test, c);
  fs::create_directories(out);
  write_text(out / "report.json", r.dump(2) + "\n");
  return r;
}

/// ECE report from a predictions CSV with header "confidence,correct".
inline Json eval_predictions_csv(const std::string& path, std::size_t bins) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions '" + path + "'");
  std::string line;
  std::getline(in, line);
  std::vector<double> conf;
  std::vector<int> correct;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    double cf = 0.0;
    int ok = 0;
    char comma = 0;
    if (!(is >> cf >> comma >> ok) || comma != ',')
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 'confidence,correct'");
    conf.push_back(cf);
    correct.push_back(ok);
  }
  const auto cb = reliability_bins(conf, correct, bins);
  Json r;
  std::size_t hits = 0;
  for (int k : correct) hits += k ? 1 : 0;
  r["n"] = conf.size();
  r["accuracy"] = static_cast<double>(hits) / static_cast<double>(conf.size());
  r["ece"] = ece_from_bins(cb);
  r["num_bins"] = bins;
  r["bins"] = bins_json(cb);
  return r;
}

inline Json report_json(const std::vector<OracleReport>& rs) {
  Json a = Json::array();
  for (const auto& r : rs)
    a.push_back({{"name", r.name}, {"closed_form", r.closed_form}, {"oracle", r.oracle},
                 {"abs_err", r.abs_err}, {"rel_err", r.rel_err}, {"tolerance", r.tolerance},
                 {"tolerance_on", r.uses_rel ? "rel" : "abs"}, {"pass", r.pass}});
  return a;
}

struct VerifyGroup {
  std::string name;
  std::vector<OracleReport> reports;
  double seconds = 0.0;
  [[nodiscard]] bool pass() const {
    for (const auto& r : reports)
      if (!r.pass) return false;
    return !reports.empty();
  }
};

/// All oracle suites. Writes verify.json and verify.txt into c.out_dir.
inline std::vector<VerifyGroup> run_verify(const RunConfig& c, std::ostream* log = nullptr) {
  std::vector<VerifyGroup> groups;
  auto timed = [&](const std::string& name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    VerifyGroup g{name, fn(), 0.0};
    g.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::size_t bad = 0;
    for (const auto& r : g.reports) bad += r.pass ? 0 : 1;
    log_line(log, name + ": " + std::to_string(g.reports.size() - bad) + "/" +
                      std::to_string(g.reports.size()) + " pass (" + fmt(g.seconds) + " s)");
    groups.push_back(std::move(g));
  };
  timed("kl", [] { return check_kl_grid(); });
  timed("reg_grad", [] { return check_reg_grad(); });
  timed("warp_grads", [] { return check_warp_grads(); });
  timed("net_grads", [] { return check_net_grads(); });
  timed("estimators", [] { return check_estimators(); });

  const fs::path out(c.out_dir);
  fs::create_directories(out);
  Json j = Json::object();
  std::ostringstream txt;
  txt << std::left << std::setw(64) << "check" << std::setw(14) << "closed" << std::setw(14)
      << "oracle" << std::setw(11) << "error" << std::setw(11) << "tol"
      << "pass\n";
  for (const auto& g : groups) {
    j[g.name] = {{"pass", g.pass()}, {"seconds", g.seconds}, {"checks", report_json(g.reports)}};
    for (const auto& r : g.reports)
      txt << std::left << std::setw(64) << (g.name + ": " + r.name) << std::setw(14)
          << std::setprecision(8) << r.closed_form << std::setw(14) << r.oracle << std::setw(11)
          << std::setprecision(3) << (r.uses_rel ? r.rel_err : r.abs_err) << std::setw(11)
          << r.tolerance << (r.pass ? "yes" : "NO") << "\n";
  }
  write_text(out / "verify.json", j.dump(2) + "\n");
  write_text(out / "verify.txt", txt.str());
  return groups;
}

// ------------------------------------------------------------ zero-gap demo

struct DemoModelResult {
  double accuracy = 0.0;
  double risk = 0.0;      // test cross-entropy, untransformed inputs
  double trm_risk = 0.0;  // test cross-entropy under g ~ Q_theta of the model
  AugTheta theta;
};

struct DemoCase {
  std::string data;
  std::uint64_t seed = 0;
  DemoModelResult rm, scale, oracle;
  [[nodiscard]] double pi_rotation() const { return scale.theta.blocks[0].pi; }
};

namespace detail {

inline double mean_ce(const Eigen::MatrixXd& p, const std::vector<int>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    acc -= std::log(std::max(p(static_cast<Eigen::Index>(i), y[i]), 1e-300));
  return acc / static_cast<double>(y.size());
}

inline DemoModelResult demo_train(const RunConfig& c, const DataSplits& d, AugTheta theta,
                                  bool learn_theta) {
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.workers = c.workers;
  if (!learn_theta) {
    tc.epochs_model_only += tc.epochs_joint;
    tc.epochs_joint = 0;
  }
  auto st = init_state<double>(init_params<double>(c.arch, Stream::derive(c.seed, {0x696e6974ULL})),
                               theta, tc, d.train.size());
  train_run<double>(st, d.train, nullptr, tc);
  DemoModelResult r;
  r.theta = st.theta;
  const auto probs = forward<double>(st.params, d.test.images, c.workers);
  r.accuracy = accuracy(probs, d.test.labels);
  r.risk = mean_ce(probs, d.test.labels);
  const auto tta_probs_risk = [&] {
    // E_g l(h(gx), y) by 8 draws per point.
    const std::size_t N = 8;
    double acc = 0.0;
    const Network<double> net(st.params.arch);
    Workspace<double> ws;
    std::vector<double> x(2), dl(2);
    for (std::size_t i = 0; i < d.test.size(); ++i)
      for (std::size_t k = 0; k < N; ++k) {
        const auto g = sample_transform(st.theta, Stream::derive(c.seed, {0x74726dULL, i, k}));
        apply_transform<double>(d.test.images.sample(i), d.test.shape(), Geometry::points, st.theta, g, x);
        acc += softmax_cross_entropy<double>(net.forward(st.params.w, x, ws),
                                             static_cast<std::size_t>(d.test.labels[i]), dl);
      }
    return acc / static_cast<double>(N * d.test.size());
  };
  r.trm_risk = tta_probs_risk();
  return r;
}

}  // namespace detail

inline Json demo_case_json(const DemoCase& dc) {
  auto model = [](const DemoModelResult& m) {
    return Json{{"accuracy", m.accuracy},
                {"risk", m.risk},
                {"trm_risk", m.trm_risk},
                {"pi_rotation", m.theta.blocks[0].pi},
                {"alpha_rotation", m.theta.blocks[0].alpha}};
  };
  return Json{{"data", dc.data},
              {"seed", dc.seed},
              {"rm", model(dc.rm)},
              {"scale", model(dc.scale)},
              {"oracle", model(dc.oracle)},
              {"trm_minus_rm_gap", dc.scale.trm_risk - dc.rm.risk},
              {"acc_scale_minus_oracle", dc.scale.accuracy - dc.oracle.accuracy}};
}

struct DemoOutcome {
  std::vector<DemoCase> cases;
  bool pass = false;
  Json report;
};

/// For each seed and for both toy datasets, trains an unaugmented model (RM),
/// SCALE, and an oracle that always applies a full-range rotation.
inline DemoOutcome run_demo(const RunConfig& base, std::ostream* log = nullptr) {
  if (base.theta.size() != 1 || base.theta.blocks[0].family != Family::rotation)
    throw ConfigError("demo-zero-gap needs a single rotation block in 'augment'");
  DemoOutcome out;
  out.pass = true;
  Json cases = Json::array();
  for (std::uint64_t seed : base.demo.seeds)
    for (DataKind kind : {DataKind::blobs_rotinv, DataKind::blobs_plain}) {
      RunConfig c = base;
      c.seed = seed;
      c.data.kind = kind;
      const DataSplits d = load_data(c);
      DemoCase dc;
      dc.data = to_string(kind);
      dc.seed = seed;
      AugTheta none = c.theta, full = c.theta;
      none.blocks[0].pi = 0.0;
      full.blocks[0].pi = 1.0;
      full.blocks[0].alpha = full.blocks[0].a_max;
      dc.rm = detail::demo_train(c, d, none, false);
      dc.scale = detail::demo_train(c, d, c.theta, true);
      dc.oracle = detail::demo_train(c, d, full, false);
      bool ok = true;
      if (kind == DataKind::blobs_rotinv)
        ok = dc.pi_rotation() >= c.demo.pi_invariant_min &&
             std::abs(dc.scale.accuracy - dc.oracle.accuracy) <= c.demo.acc_gap_max;
      else
        ok = dc.pi_rotation() <= c.demo.pi_plain_max;
      out.pass = out.pass && ok;
      Json jc = demo_case_json(dc);
      jc["pass"] = ok;
      cases.push_back(jc);
      std::ostringstream msg;
      msg << dc.data << " seed " << seed << ": pi_rot " << dc.pi_rotation() << " alpha_rot "
          << dc.scale.theta.blocks[0].alpha << " acc rm/scale/oracle " << dc.rm.accuracy << "/"
          << dc.scale.accuracy << "/" << dc.oracle.accuracy << (ok ? "  ok" : "  FAIL");
      log_line(log, msg.str());
      out.cases.push_back(std::move(dc));
    }
  out.report = Json{{"pass", out.pass}, {"cases", cases}};
  const fs::path dir(base.out_dir);
  fs::create_directories(dir);
  write_text(dir / "resolved-config.json", to_json(base).dump(2) + "\n");
  write_text(dir / "report.json", out.report.dump(2) + "\n");
  return out;
}

}  // namespace scale
