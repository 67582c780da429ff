#pragma once

// Joint training of the classifier weights w and the augmentation parameters
// theta: a joint phase that updates both, then a model-only phase that keeps
// sampling from the frozen theta.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "scale/augspec.hpp"
#include "scale/data.hpp"
#include "scale/eval.hpp"
#include "scale/gradest.hpp"
#include "scale/net.hpp"
#include "scale/optim.hpp"
#include "scale/pacreg.hpp"
#include "scale/parallel.hpp"
#include "scale/transform.hpp"

namespace scale {

struct TrainConfig {
  std::size_t mc_samples = 4;  // M
  std::size_t batch_size = 128;
  std::size_t epochs_joint = 10;
  std::size_t epochs_model_only = 0;

  OptimizerKind optimizer = OptimizerKind::adam;
  double lr_model = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool cosine = true;

  double lr_aug = 1e-3;        // for pi and alpha
  bool lr_aug_decay = true;    // linear to zero over the joint phase
  double c0 = -1.0;            // initial clamp; negative means 0.4 / K
  RegConfig reg;

  double prior_std = 1.0;      // s of the weight prior in the bound
  double lipschitz = 1.0;      // L
  double delta = 0.05;
  double loss_range = 0.0;     // b - a for the bounded-loss c_n; 0 skips it

  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (mc_samples < 1) throw std::invalid_argument("train.mc_samples must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (c0 >= 0.5) throw std::invalid_argument("train.c0 must lie in [0, 0.5)");
    if (!(lr_model >= 0.0) || !(lr_aug >= 0.0))
      throw std::invalid_argument("learning rates must be >= 0");
    reg.validate();
  }

  [[nodiscard]] double c0_for(const AugTheta& theta) const {
    return c0 >= 0.0 ? c0 : 0.4 / static_cast<double>(theta.size());
  }
};

/// c(e) = c0 (1 - e / E_joint), floored at 0.
inline double clamp_schedule(double c0, std::size_t epoch, std::size_t epochs_joint) {
  if (epochs_joint == 0) return 0.0;
  const double frac = static_cast<double>(epoch) / static_cast<double>(epochs_joint);
  return std::max(0.0, c0 * (1.0 - frac));
}

// Smallest distance of pi from {0, 1} during joint updates. The regularizer
// gradient is singular on the boundary, so a clamp of exactly 0 is lifted
// to this value.
inline constexpr double kPiInterior = 1e-6;

enum class Phase { joint, model_only };

inline const char* to_string(Phase p) {
  return p == Phase::joint ? "joint" : "model";
}

struct MetricsRecord {
  std::size_t epoch = 0;  // 1-based
  Phase phase = Phase::joint;
  double train_loss = 0.0;
  double reg = 0.0;
  double weight_norm_term = 0.0;
  double pac_bound = 0.0;
  double acc_val = std::numeric_limits<double>::quiet_NaN();
  AugTheta theta;
};

template <typename T>
struct TrainState {
  ModelParams<T> params;
  AugTheta theta;
  OptimState optim;
  std::size_t epoch = 0;     // completed epochs
  std::size_t aug_step = 0;  // completed joint steps
};

struct StepStats {
  double loss = 0.0;            // mean over the n M augmented samples
  std::size_t forward_count = 0;
  std::vector<double> pi_grad;     // data part
  std::vector<double> alpha_grad;  // data part
};

inline constexpr std::uint64_t kAugTag = 0x6175676d656e7400ULL;
inline constexpr std::uint64_t kShuffleTag = 0x73687566666c6500ULL;

/// Stream for sample j of datapoint i in batch b of epoch e.
inline Stream augment_stream(std::uint64_t seed, std::size_t epoch,
                             std::size_t batch, std::size_t i, std::size_t j) {
  return Stream::derive(seed, {kAugTag, epoch, batch, i, j});
}

/// One step of the algorithm on the datapoints `rows` of `data`. With
/// `joint` false, theta is left untouched. `lr_aug` and `clamp_c` are the
/// already-scheduled values for this step.
template <typename T>
StepStats train_step(TrainState<T>& state, const Dataset& data,
                     std::span<const std::size_t> rows, const TrainConfig& cfg,
                     std::size_t epoch, std::size_t batch, bool joint,
                     double lr_aug, double clamp_c) {
  const std::size_t n = rows.size(), M = cfg.mc_samples;
  const std::size_t K = state.theta.size();
  const Shape s = data.shape();
  const std::size_t ss = s.size();
  if (n == 0) throw std::invalid_argument("train_step: empty batch");

  ImageBatch<T> aug(n * M, s.channels, s.height, s.width);
  std::vector<std::vector<T>> pre_warp(joint ? n * M : 0);
  std::vector<SampledTransform> draws(n * M);
  std::vector<int> labels(n * M);
  parallel_chunks(n, 1, cfg.workers, [&](std::size_t, std::size_t b, std::size_t e) {
    std::vector<T> x(ss);
    for (std::size_t i = b; i < e; ++i) {
      const auto src = data.images.sample(rows[i]);
      std::copy(src.begin(), src.end(), x.begin());
      for (std::size_t j = 0; j < M; ++j) {
        const std::size_t r = i * M + j;
        draws[r] = sample_transform(state.theta, augment_stream(cfg.seed, epoch, batch, i, j));
        apply_transform<T>(x, s, data.geometry, state.theta, draws[r], aug.sample(r),
                           joint ? &pre_warp[r] : nullptr);
        labels[r] = data.labels[rows[i]];
      }
    }
  });

  const auto lg = loss_and_grad<T>(state.params, aug, labels, cfg.workers, joint);
  if (!std::isfinite(lg.loss))
    throw std::runtime_error("non-finite training loss at epoch " +
                             std::to_string(epoch + 1) + ", batch " +
                             std::to_string(batch));
  StepStats out;
  out.loss = lg.loss;
  out.forward_count = n * M;

  if (joint) {
    std::vector<SampleLossRecord> records(n * M);
    parallel_chunks(n * M, kBatchChunk, cfg.workers,
                    [&](std::size_t, std::size_t b, std::size_t e) {
                      for (std::size_t r = b; r < e; ++r) {
                        auto& rec = records[r];
                        rec.datapoint = r / M;
                        rec.sample = r % M;
                        rec.loss = lg.per_sample[r];
                        rec.applied = draws[r].applied;
                        rec.alpha_grad = transform_alpha_grads<T>(
                            pre_warp[r], s, data.geometry, state.theta, draws[r],
                            lg.input_grad.sample(r));
                      }
                    });
    out.pi_grad = pi_grads_shared(records, state.theta);
    out.alpha_grad = alpha_grads_shared(records, state.theta);
  }

  optimizer_step<T>(state.optim, state.params.w, lg.grad);

  if (joint) {
    const auto rg = reg_grad(state.theta, cfg.reg);
    const double lam = cfg.reg.lambda_at(epoch, cfg.epochs_joint);
    for (std::size_t k = 0; k < K; ++k) {
      AugBlock& blk = state.theta.blocks[k];
      blk.pi -= lr_aug * (out.pi_grad[k] + lam * rg[k].d_pi);
      if (blk.is_continuous())
        blk.alpha -= lr_aug * (out.alpha_grad[k] + lam * rg[k].d_alpha);
    }
    state.theta = clamp_theta(state.theta, std::max(clamp_c, kPiInterior));
  }
  return out;
}

/// Epoch order of the training rows: a seeded Fisher-Yates shuffle.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                            std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Stream s = Stream::derive(seed, {kShuffleTag, epoch});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[s.index(i)]);
  return idx;
}

inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

/// Fresh state: weights from `params`, theta from `theta`, optimizer buffers
/// sized to w, cosine horizon spanning both phases.
template <typename T>
TrainState<T> init_state(ModelParams<T> params, AugTheta theta,
                         const TrainConfig& cfg, std::size_t n_train) {
  theta.validate();
  params.validate();
  TrainState<T> st{std::move(params), std::move(theta), {}, 0, 0};
  st.optim.kind = cfg.optimizer;
  st.optim.lr0 = cfg.lr_model;
  st.optim.momentum = cfg.momentum;
  st.optim.weight_decay = cfg.weight_decay;
  st.optim.horizon = cfg.cosine ? (cfg.epochs_joint + cfg.epochs_model_only) *
                                      batches_per_epoch(n_train, cfg.batch_size)
                                : 0;
  st.optim.reset(st.params.w.size());
  return st;
}

template <typename T>
BoundValue bound_for(const TrainState<T>& st, double train_risk,
                     const TrainConfig& cfg, std::size_t n_train) {
  BoundConfig bc;
  bc.n = static_cast<double>(n_train);
  bc.p = static_cast<double>(st.params.w.size());
  bc.prior_std = cfg.prior_std;
  bc.lipschitz = cfg.lipschitz;
  bc.delta = cfg.delta;
  bc.loss_range = cfg.loss_range;
  double d2 = 0.0;
  for (std::size_t i = 0; i < st.params.w.size(); ++i) {
    const double d = static_cast<double>(st.params.w[i]) - static_cast<double>(st.params.w0[i]);
    d2 += d * d;
  }
  return pac_bound(train_risk, d2, st.theta, cfg.reg, bc);
}

template <typename T>
using EpochCallback = std::function<void(const TrainState<T>&, const MetricsRecord&)>;

/// Runs the remaining epochs of `state` (resumable: epochs already counted in
/// state.epoch are skipped). `val` may be null.
template <typename T>
std::vector<MetricsRecord> train_run(TrainState<T>& state, const Dataset& train,
                                     const Dataset* val, const TrainConfig& cfg,
                                     const EpochCallback<T>& on_epoch = {}) {
  cfg.validate();
  train.validate();
  if (train.size() == 0) throw std::invalid_argument("train_run: empty dataset");
  if (train.shape() != state.params.arch.input)
    throw std::invalid_argument("train_run: data shape " + to_string(train.shape()) +
                                " does not match model input " +
                                to_string(state.params.arch.input));
  const std::size_t total = cfg.epochs_joint + cfg.epochs_model_only;
  const std::size_t nb = batches_per_epoch(train.size(), cfg.batch_size);
  const std::size_t joint_steps = cfg.epochs_joint * nb;
  const double c0 = cfg.c0_for(state.theta);
  std::vector<MetricsRecord> series;

  for (std::size_t e = state.epoch; e < total; ++e) {
    const bool joint = e < cfg.epochs_joint;
    const double c = clamp_schedule(c0, e, cfg.epochs_joint);
    const auto order = epoch_order(train.size(), cfg.seed, e);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(train.size(), lo + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + lo, hi - lo);
      double lr_aug = cfg.lr_aug;
      if (cfg.lr_aug_decay && joint_steps > 0)
        lr_aug *= 1.0 - static_cast<double>(state.aug_step) / static_cast<double>(joint_steps);
      const auto stats = train_step<T>(state, train, rows, cfg, e, b, joint, lr_aug, c);
      loss_sum += stats.loss * static_cast<double>(stats.forward_count);
      loss_count += stats.forward_count;
      if (joint) ++state.aug_step;
    }
    state.epoch = e + 1;

    MetricsRecord rec;
    rec.epoch = e + 1;
    rec.phase = joint ? Phase::joint : Phase::model_only;
    rec.train_loss = loss_sum / static_cast<double>(loss_count);
    rec.reg = reg_theta(state.theta, cfg.reg);
    const auto bound = bound_for(state, rec.train_loss, cfg, train.size());
    rec.weight_norm_term = bound.weight_norm_term;
    rec.pac_bound = bound.value;
    if (val && val->size() > 0) {
      const auto vb = val->images.template cast<T>();
      rec.acc_val = accuracy(forward<T>(state.params, vb, cfg.workers), val->labels);
    }
    rec.theta = state.theta;
    series.push_back(rec);
    if (on_epoch) on_epoch(state, rec);
  }
  return series;
}

}  // namespace scale
