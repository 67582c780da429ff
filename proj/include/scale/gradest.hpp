#pragma once

// Monte-Carlo gradient estimators for the mixture weights pi and ranges alpha.
//
// Training uses the shared-sample forms, which reuse the M transforms drawn
// per datapoint for every block. The paired pi estimator needs two extra
// forward passes per block and exists for verification.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "scale/augspec.hpp"
#include "scale/rng.hpp"

namespace scale {

/// Loss of one augmented copy of one datapoint.
struct SampleLossRecord {
  std::size_t datapoint = 0;
  std::size_t sample = 0;
  double loss = 0.0;
  std::vector<std::uint8_t> applied;  // t_i per block
  std::vector<double> alpha_grad;     // dl/dalpha_i, zero when t_i = 0
};

namespace detail {

// Records grouped by datapoint, each group ordered by sample index, so that
// the reduction order is independent of how the records were produced.
inline std::map<std::size_t, std::vector<const SampleLossRecord*>> group(
    const std::vector<SampleLossRecord>& records, std::size_t K) {
  std::map<std::size_t, std::vector<const SampleLossRecord*>> g;
  for (const auto& r : records) {
    if (r.applied.size() != K)
      throw std::invalid_argument("record flag count does not match K");
    g[r.datapoint].push_back(&r);
  }
  std::size_t m = 0;
  for (auto& [dp, v] : g) {
    std::sort(v.begin(), v.end(), [](auto* a, auto* b) {
      return a->sample < b->sample;
    });
    if (m == 0) m = v.size();
    if (v.size() != m)
      throw std::invalid_argument("every datapoint needs the same M records");
  }
  return g;
}

}  // namespace detail

/// Per block s: mean over datapoints of
///   mean(loss | t_s = 1) - mean(loss | t_s = 0),
/// where a group with no members contributes 0.
inline std::vector<double> pi_grads_shared(
    const std::vector<SampleLossRecord>& records, const AugTheta& theta) {
  const std::size_t K = theta.size();
  std::vector<double> grad(K, 0.0);
  const auto groups = detail::group(records, K);
  if (groups.empty()) return grad;
  for (std::size_t s = 0; s < K; ++s) {
    double total = 0.0;
    for (const auto& [dp, recs] : groups) {
      // Losses are centered on the group minimum, so equal losses give an
      // exact zero difference.
      double ref = recs.front()->loss;
      for (const auto* r : recs) ref = std::min(ref, r->loss);
      double on = 0.0, off = 0.0;
      std::size_t n_on = 0, n_off = 0;
      for (const auto* r : recs) {
        if (r->applied[s]) {
          on += r->loss - ref;
          ++n_on;
        } else {
          off += r->loss - ref;
          ++n_off;
        }
      }
      double term = 0.0;
      if (n_on > 0) term += on / static_cast<double>(n_on);
      if (n_off > 0) term -= off / static_cast<double>(n_off);
      if (n_on > 0 && n_off == 0) term += ref;
      if (n_on == 0 && n_off > 0) term -= ref;
      total += term;
    }
    grad[s] = total / static_cast<double>(groups.size());
  }
  return grad;
}

/// Per continuous block s: (1 / nM) * sum 1(t_s = 1) * dl/dalpha_s.
/// Entries of discrete blocks are 0.
inline std::vector<double> alpha_grads_shared(
    const std::vector<SampleLossRecord>& records, const AugTheta& theta) {
  const std::size_t K = theta.size();
  std::vector<double> grad(K, 0.0);
  const auto groups = detail::group(records, K);
  if (groups.empty()) return grad;
  const std::size_t m = groups.begin()->second.size();
  const double norm = static_cast<double>(groups.size() * m);
  for (std::size_t s = 0; s < K; ++s) {
    if (!theta.blocks[s].is_continuous()) continue;
    double total = 0.0;
    for (const auto& [dp, recs] : groups)
      for (const auto* r : recs) {
        if (r->alpha_grad.size() != K)
          throw std::invalid_argument("record alpha_grad length != K");
        if (r->applied[s]) total += r->alpha_grad[s];
      }
    grad[s] = total / norm;
  }
  return grad;
}

/// Slow form of the alpha estimator: (pi_s / nM) * sum dl/dalpha_s, with
/// every record drawn with block s applied.
inline double alpha_grad_paired(const std::vector<SampleLossRecord>& records,
                                const AugTheta& theta, std::size_t s) {
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) total += r.alpha_grad.at(s);
  return theta.blocks.at(s).pi * total / static_cast<double>(records.size());
}

/// Loss of datapoint `i` under transform `g`.
using TransformLoss =
    std::function<double(std::size_t i, const SampledTransform& g)>;

/// Paired pi_s estimator:
///   (1 / nM) sum_{i,j} [ l(g^(j) with u_s applied) - l(g^(j) with s skipped) ]
/// where all other blocks of g^(j) are shared between the two terms. The
/// draw for datapoint i, sample j comes from `stream.split(i).split(j)`.
inline double pi_grad_paired(const AugTheta& theta, std::size_t s,
                             std::size_t n_datapoints, std::size_t M,
                             const TransformLoss& loss, const Stream& stream) {
  if (M == 0) throw std::invalid_argument("pi_grad_paired: M must be >= 1");
  if (s >= theta.size()) throw std::out_of_range("pi_grad_paired: block");
  double total = 0.0;
  for (std::size_t i = 0; i < n_datapoints; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      const SampledTransform g = sample_transform(theta, stream.split(i).split(j));
      auto with = g.applied;
      auto without = g.applied;
      with[s] = 1;
      without[s] = 0;
      total += loss(i, realize(theta, std::move(with), g.draw)) -
               loss(i, realize(theta, std::move(without), g.draw));
    }
  }
  return total / static_cast<double>(n_datapoints * M);
}

}  // namespace scale
