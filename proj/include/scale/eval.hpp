#pragma once

// Test-time augmentation, accuracy and calibration.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "scale/augspec.hpp"
#include "scale/data.hpp"
#include "scale/net.hpp"
#include "scale/parallel.hpp"
#include "scale/transform.hpp"

namespace scale {

/// Mean of softmax outputs over N transforms g ~ Q_theta per input. Input i,
/// draw k uses `stream.split(i).split(k)`.
template <typename T>
Eigen::MatrixXd predict_tta(const ModelParams<T>& params, const AugTheta& theta,
                            const ImageBatch<T>& batch, Geometry geo,
                            std::size_t N, const Stream& stream,
                            std::size_t workers = 1) {
  if (N == 0) throw std::invalid_argument("predict_tta: N must be >= 1");
  const Network<T> net(params.arch);
  const Shape s{batch.channels, batch.height, batch.width};
  if (s != net.input_shape())
    throw std::invalid_argument("predict_tta: batch shape does not match model");
  const std::size_t C = net.num_classes();
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(batch.n, C);
  parallel_chunks(batch.n, kBatchChunk, workers,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    Workspace<T> ws;
                    Buffer<T> x(s.size());
                    std::vector<double> row(C);
                    for (std::size_t i = b; i < e; ++i) {
                      const Stream si = stream.split(i);
                      for (std::size_t k = 0; k < N; ++k) {
                        const auto st = sample_transform(theta, si.split(k));
                        apply_transform<T>(batch.sample(i), s, geo, theta, st, x);
                        softmax<T>(net.forward(params.w, x, ws), row);
                        for (std::size_t c = 0; c < C; ++c) probs(i, c) += row[c];
                      }
                      probs.row(i) /= static_cast<double>(N);
                    }
                  });
  return probs;
}

/// argmax with ties going to the lowest class index.
inline std::size_t argmax_row(const Eigen::MatrixXd& p, Eigen::Index i) {
  std::size_t best = 0;
  for (Eigen::Index c = 1; c < p.cols(); ++c)
    if (p(i, c) > p(i, static_cast<Eigen::Index>(best)))
      best = static_cast<std::size_t>(c);
  return best;
}

inline double accuracy(const Eigen::MatrixXd& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw std::invalid_argument("accuracy: row count != label count");
  if (labels.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    if (argmax_row(probs, i) == static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]))
      ++hit;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

struct CalibrationBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double acc = 0.0;   // mean correctness, 0 for empty bins
  double conf = 0.0;  // mean confidence, 0 for empty bins
  // Raw sums in extended precision; ECE is computed from these so that
  // short fixtures come out exact (e.g. 0.25, not 0.25000000000000006).
  std::size_t hits = 0;
  long double conf_sum = 0.0L;
};

struct CalibrationBins {
  std::size_t n = 0;
  std::vector<CalibrationBin> bins;
};

inline constexpr std::size_t kDefaultBins = 15;

/// Equal-width bins on [0, 1]; bin m is [m/B, (m+1)/B) except the last, which
/// also takes confidence 1.
inline CalibrationBins reliability_bins(std::span<const double> confidences,
                                        std::span<const int> correct,
                                        std::size_t B = kDefaultBins) {
  if (confidences.size() != correct.size())
    throw std::invalid_argument("reliability_bins: length mismatch");
  if (confidences.empty())
    throw std::invalid_argument("reliability_bins: no samples");
  if (B == 0) throw std::invalid_argument("reliability_bins: B must be >= 1");
  CalibrationBins out;
  out.n = confidences.size();
  out.bins.resize(B);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0))
      throw std::domain_error("reliability_bins: confidence outside [0, 1]");
    const auto m = std::min(static_cast<std::size_t>(c * static_cast<double>(B)), B - 1);
    auto& b = out.bins[m];
    ++b.count;
    b.conf_sum += c;
    b.hits += correct[i] ? 1 : 0;
  }
  for (std::size_t m = 0; m < B; ++m) {
    auto& b = out.bins[m];
    b.lo = static_cast<double>(m) / static_cast<double>(B);
    b.hi = static_cast<double>(m + 1) / static_cast<double>(B);
    if (b.count) {
      b.acc = static_cast<double>(b.hits) / static_cast<double>(b.count);
      b.conf = static_cast<double>(b.conf_sum / static_cast<long double>(b.count));
    }
  }
  return out;
}

/// |acc - conf| |B_m| / n summed over bins, as |hits - sum conf| / n.
inline double ece_from_bins(const CalibrationBins& cb) {
  long double e = 0.0L;
  for (const auto& b : cb.bins)
    e += std::abs(static_cast<long double>(b.hits) - b.conf_sum);
  return static_cast<double>(e / static_cast<long double>(cb.n));
}

/// sum_m |acc(B_m) - conf(B_m)| |B_m| / n.
inline double ece(std::span<const double> confidences,
                  std::span<const int> correct, std::size_t B = kDefaultBins) {
  return ece_from_bins(reliability_bins(confidences, correct, B));
}

/// Max probability and correctness per row.
inline void confidence_and_correct(const Eigen::MatrixXd& probs,
                                   std::span<const int> labels,
                                   std::vector<double>& conf,
                                   std::vector<int>& correct) {
  conf.resize(static_cast<std::size_t>(probs.rows()));
  correct.resize(conf.size());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const std::size_t k = argmax_row(probs, i);
    conf[static_cast<std::size_t>(i)] =
        std::clamp(probs(i, static_cast<Eigen::Index>(k)), 0.0, 1.0);
    correct[static_cast<std::size_t>(i)] =
        k == static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]) ? 1 : 0;
  }
}

}  // namespace scale
