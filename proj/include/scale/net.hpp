#pragma once

// Small sequential classifiers (dense, 3x3 convolution, ReLU, 2x2 max-pool)
// with hand-written reverse mode and a softmax cross-entropy head.
//
// All trainable weights live in one flat vector. Layer l owns the slice
// [offset_l, offset_l + count_l): the weight matrix (out x fan_in, row-major)
// followed by the bias.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scale/parallel.hpp"
#include "scale/rng.hpp"
#include "scale/tensor.hpp"

namespace scale {

enum class LayerKind { dense, conv3x3, relu, maxpool2 };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;  // output features (dense) or channels (conv)
};

struct Architecture {
  Shape input;
  std::vector<LayerSpec> layers;

  static Architecture mlp(Shape input, const std::vector<std::size_t>& hidden,
                          std::size_t classes) {
    Architecture a{input, {}};
    for (std::size_t h : hidden) {
      a.layers.push_back({LayerKind::dense, h});
      a.layers.push_back({LayerKind::relu, 0});
    }
    a.layers.push_back({LayerKind::dense, classes});
    return a;
  }

  /// Five 3x3 conv layers with two 2x2 max-pools and a dense head.
  static Architecture cnn5(Shape input, const std::vector<std::size_t>& ch,
                           std::size_t classes) {
    if (ch.size() != 5)
      throw std::invalid_argument("cnn5 needs five channel counts");
    Architecture a{input, {}};
    auto conv = [&](std::size_t c) {
      a.layers.push_back({LayerKind::conv3x3, c});
      a.layers.push_back({LayerKind::relu, 0});
    };
    conv(ch[0]);
    conv(ch[1]);
    a.layers.push_back({LayerKind::maxpool2, 0});
    conv(ch[2]);
    conv(ch[3]);
    a.layers.push_back({LayerKind::maxpool2, 0});
    conv(ch[4]);
    a.layers.push_back({LayerKind::dense, classes});
    return a;
  }

  /// shapes()[0] is the input, shapes()[l + 1] the output of layer l.
  [[nodiscard]] std::vector<Shape> shapes() const {
    std::vector<Shape> s{input};
    for (const LayerSpec& l : layers) {
      const Shape in = s.back();
      switch (l.kind) {
        case LayerKind::dense: s.push_back({l.units, 1, 1}); break;
        case LayerKind::conv3x3:
          s.push_back({l.units, in.height, in.width});
          break;
        case LayerKind::relu: s.push_back(in); break;
        case LayerKind::maxpool2:
          if (in.height < 2 || in.width < 2)
            throw std::invalid_argument("maxpool2 on a map smaller than 2x2");
          s.push_back({in.channels, in.height / 2, in.width / 2});
          break;
      }
    }
    return s;
  }

  [[nodiscard]] std::size_t num_classes() const {
    if (layers.empty() || layers.back().kind != LayerKind::dense)
      throw std::invalid_argument("architecture must end in a dense layer");
    return layers.back().units;
  }

  [[nodiscard]] std::vector<std::size_t> param_counts() const {
    const auto s = shapes();
    std::vector<std::size_t> c;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      switch (layers[l].kind) {
        case LayerKind::dense:
          c.push_back(layers[l].units * s[l].size() + layers[l].units);
          break;
        case LayerKind::conv3x3:
          c.push_back(layers[l].units * s[l].channels * 9 + layers[l].units);
          break;
        default: c.push_back(0);
      }
    }
    return c;
  }

  [[nodiscard]] std::size_t param_count() const {
    std::size_t p = 0;
    for (std::size_t c : param_counts()) p += c;
    return p;
  }

  /// Compact text form, e.g. "1x28x28|conv:16,relu,pool,dense:10".
  [[nodiscard]] std::string describe() const {
    std::ostringstream os;
    os << input.channels << 'x' << input.height << 'x' << input.width << '|';
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (i) os << ',';
      switch (layers[i].kind) {
        case LayerKind::dense: os << "dense:" << layers[i].units; break;
        case LayerKind::conv3x3: os << "conv:" << layers[i].units; break;
        case LayerKind::relu: os << "relu"; break;
        case LayerKind::maxpool2: os << "pool"; break;
      }
    }
    return os.str();
  }

  static Architecture parse(std::string_view text) {
    const auto bar = text.find('|');
    if (bar == std::string_view::npos)
      throw std::invalid_argument("architecture string lacks '|'");
    Architecture a;
    {
      std::string head(text.substr(0, bar));
      for (char& ch : head)
        if (ch == 'x') ch = ' ';
      std::istringstream is(head);
      if (!(is >> a.input.channels >> a.input.height >> a.input.width))
        throw std::invalid_argument("bad architecture input shape");
    }
    std::string body(text.substr(bar + 1));
    std::istringstream is(body);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      auto units = [&](std::size_t pos) {
        return static_cast<std::size_t>(std::stoul(tok.substr(pos)));
      };
      if (tok.rfind("dense:", 0) == 0)
        a.layers.push_back({LayerKind::dense, units(6)});
      else if (tok.rfind("conv:", 0) == 0)
        a.layers.push_back({LayerKind::conv3x3, units(5)});
      else if (tok == "relu")
        a.layers.push_back({LayerKind::relu, 0});
      else if (tok == "pool")
        a.layers.push_back({LayerKind::maxpool2, 0});
      else
        throw std::invalid_argument("unknown layer token '" + tok + "'");
    }
    (void)a.num_classes();
    return a;
  }

  friend bool operator==(const Architecture& a, const Architecture& b) {
    return a.describe() == b.describe();
  }
};

template <typename T>
struct ModelParams {
  Architecture arch;
  Buffer<T> w;
  Buffer<T> w0;  // snapshot at initialization (PAC-Bayes prior mean)

  void validate() const {
    if (w.size() != arch.param_count() || w0.size() != w.size())
      throw std::invalid_argument("parameter vector length mismatch");
  }
};

/// Uniform fan-in initialization: U(-b, b) with b = sqrt(6 / fan_in) for
/// layers feeding a ReLU and sqrt(3 / fan_in) otherwise; biases start at 0.
template <typename T>
ModelParams<T> init_params(const Architecture& arch, Stream stream) {
  ModelParams<T> m{arch, Buffer<T>(arch.param_count(), T(0)), {}};
  const auto shapes = arch.shapes();
  const auto counts = arch.param_counts();
  std::size_t off = 0;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& L = arch.layers[l];
    if (counts[l] == 0) continue;
    const std::size_t fan_in = L.kind == LayerKind::dense
                                   ? shapes[l].size()
                                   : shapes[l].channels * 9;
    const bool relu_next = l + 1 < arch.layers.size() &&
                           arch.layers[l + 1].kind == LayerKind::relu;
    const double b =
        std::sqrt((relu_next ? 6.0 : 3.0) / static_cast<double>(fan_in));
    const std::size_t n_weights = counts[l] - L.units;
    for (std::size_t i = 0; i < n_weights; ++i)
      m.w[off + i] = static_cast<T>(stream.uniform(-b, b));
    off += counts[l];
  }
  m.w0 = m.w;
  return m;
}

/// Per-sample activations kept for the backward pass.
template <typename T>
struct Workspace {
  std::vector<Buffer<T>> acts;  // acts[0] = input, acts[l + 1] = out of l
  std::vector<std::vector<std::uint32_t>> argmax;
  Buffer<T> col;
  Buffer<T> grad, grad_next, dcol;
};

template <typename T>
class Network {
 public:
  using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  explicit Network(Architecture arch)
      : arch_(std::move(arch)),
        shapes_(arch_.shapes()),
        counts_(arch_.param_counts()) {
    std::size_t off = 0;
    for (std::size_t c : counts_) {
      offsets_.push_back(off);
      off += c;
    }
    p_ = off;
    classes_ = arch_.num_classes();
  }

  [[nodiscard]] const Architecture& arch() const noexcept { return arch_; }
  [[nodiscard]] std::size_t param_count() const noexcept { return p_; }
  [[nodiscard]] std::size_t num_classes() const noexcept { return classes_; }
  [[nodiscard]] const Shape& input_shape() const noexcept { return shapes_[0]; }

  void prepare(Workspace<T>& ws) const {
    if (ws.acts.size() == shapes_.size()) return;
    ws.acts.resize(shapes_.size());
    ws.argmax.resize(arch_.layers.size());
    for (std::size_t i = 0; i < shapes_.size(); ++i)
      ws.acts[i].assign(shapes_[i].size(), T(0));
  }

  /// Forward pass of one sample; returns the logits (valid until the next call).
  std::span<const T> forward(std::span<const T> w, std::span<const T> x,
                             Workspace<T>& ws) const {
    if (w.size() != p_) throw std::invalid_argument("forward: weight length");
    if (x.size() != shapes_[0].size())
      throw std::invalid_argument("forward: input has shape mismatch, expected " +
                                  to_string(shapes_[0]));
    prepare(ws);
    std::copy(x.begin(), x.end(), ws.acts[0].begin());
    for (std::size_t l = 0; l < arch_.layers.size(); ++l) {
      const Shape& in = shapes_[l];
      const Shape& out = shapes_[l + 1];
      const T* src = ws.acts[l].data();
      T* dst = ws.acts[l + 1].data();
      const T* wl = w.data() + offsets_[l];
      switch (arch_.layers[l].kind) {
        case LayerKind::dense: {
          const std::size_t fan = in.size(), units = out.size();
          Eigen::Map<const MatR> W(wl, units, fan);
          Eigen::Map<const Vec> b(wl + units * fan, units);
          Eigen::Map<const Vec> xv(src, fan);
          Eigen::Map<Vec> y(dst, units);
          y.noalias() = W * xv;
          y += b;
          break;
        }
        case LayerKind::conv3x3: {
          im2col(src, in, ws.col);
          const std::size_t k = in.channels * 9, hw = in.height * in.width;
          Eigen::Map<const MatR> W(wl, out.channels, k);
          Eigen::Map<const Vec> b(wl + out.channels * k, out.channels);
          Eigen::Map<const MatR> col(ws.col.data(), k, hw);
          Eigen::Map<MatR> y(dst, out.channels, hw);
          y.noalias() = W * col;
          y.colwise() += b;
          break;
        }
        case LayerKind::relu:
          for (std::size_t i = 0; i < in.size(); ++i)
            dst[i] = src[i] > T(0) ? src[i] : T(0);
          break;
        case LayerKind::maxpool2: maxpool(src, in, out, dst, ws.argmax[l]); break;
      }
    }
    return ws.acts.back();
  }

  /// Backward pass after `forward` on the same workspace. Adds dL/dw into
  /// `dw` and, when `dx` is non-empty, writes dL/dx into it.
  void backward(std::span<const T> w, Workspace<T>& ws,
                std::span<const T> dlogits, std::span<T> dw,
                std::span<T> dx) const {
    if (dw.size() != p_) throw std::invalid_argument("backward: dw length");
    ws.grad.assign(dlogits.begin(), dlogits.end());
    for (std::size_t l = arch_.layers.size(); l-- > 0;) {
      const Shape& in = shapes_[l];
      const Shape& out = shapes_[l + 1];
      const bool need_input_grad = l > 0 || !dx.empty();
      const T* src = ws.acts[l].data();
      const T* wl = w.data() + offsets_[l];
      T* dwl = dw.data() + offsets_[l];
      ws.grad_next.assign(need_input_grad ? in.size() : 0, T(0));
      switch (arch_.layers[l].kind) {
        case LayerKind::dense: {
          const std::size_t fan = in.size(), units = out.size();
          Eigen::Map<const MatR> W(wl, units, fan);
          Eigen::Map<const Vec> g(ws.grad.data(), units);
          Eigen::Map<const Vec> xv(src, fan);
          Eigen::Map<MatR> dW(dwl, units, fan);
          Eigen::Map<Vec> db(dwl + units * fan, units);
          dW.noalias() += g * xv.transpose();
          db += g;
          if (need_input_grad) {
            Eigen::Map<Vec> gx(ws.grad_next.data(), fan);
            gx.noalias() = W.transpose() * g;
          }
          break;
        }
        case LayerKind::conv3x3: {
          im2col(src, in, ws.col);
          const std::size_t k = in.channels * 9, hw = in.height * in.width;
          Eigen::Map<const MatR> W(wl, out.channels, k);
          Eigen::Map<const MatR> g(ws.grad.data(), out.channels, hw);
          Eigen::Map<const MatR> col(ws.col.data(), k, hw);
          Eigen::Map<MatR> dW(dwl, out.channels, k);
          Eigen::Map<Vec> db(dwl + out.channels * k, out.channels);
          dW.noalias() += g * col.transpose();
          db += g.rowwise().sum();
          if (need_input_grad) {
            ws.dcol.resize(k * hw);
            Eigen::Map<MatR> dcol(ws.dcol.data(), k, hw);
            dcol.noalias() = W.transpose() * g;
            col2im(ws.dcol, in, ws.grad_next.data());
          }
          break;
        }
        case LayerKind::relu:
          if (need_input_grad)
            for (std::size_t i = 0; i < in.size(); ++i)
              ws.grad_next[i] = src[i] > T(0) ? ws.grad[i] : T(0);
          break;
        case LayerKind::maxpool2:
          if (need_input_grad) {
            const auto& am = ws.argmax[l];
            for (std::size_t i = 0; i < out.size(); ++i)
              ws.grad_next[am[i]] += ws.grad[i];
          }
          break;
      }
      if (!need_input_grad) break;
      std::swap(ws.grad, ws.grad_next);
    }
    if (!dx.empty()) {
      if (dx.size() != shapes_[0].size())
        throw std::invalid_argument("backward: dx length");
      std::copy(ws.grad.begin(), ws.grad.end(), dx.begin());
    }
  }

 private:
  static void im2col(const T* src, const Shape& in, Buffer<T>& col) {
    const std::size_t H = in.height, W = in.width, hw = H * W;
    col.assign(in.channels * 9 * hw, T(0));
    for (std::size_t c = 0; c < in.channels; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          T* row = col.data() + ((c * 9) + ky * 3 + kx) * hw;
          for (std::size_t y = 0; y < H; ++y) {
            const auto sy = static_cast<std::ptrdiff_t>(y) + ky - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
            const T* srow = src + c * hw + static_cast<std::size_t>(sy) * W;
            for (std::size_t x = 0; x < W; ++x) {
              const auto sx = static_cast<std::ptrdiff_t>(x) + kx - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
              row[y * W + x] = srow[sx];
            }
          }
        }
  }

  static void col2im(const Buffer<T>& dcol, const Shape& in, T* dst) {
    const std::size_t H = in.height, W = in.width, hw = H * W;
    for (std::size_t c = 0; c < in.channels; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const T* row = dcol.data() + ((c * 9) + ky * 3 + kx) * hw;
          for (std::size_t y = 0; y < H; ++y) {
            const auto sy = static_cast<std::ptrdiff_t>(y) + ky - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
            T* drow = dst + c * hw + static_cast<std::size_t>(sy) * W;
            for (std::size_t x = 0; x < W; ++x) {
              const auto sx = static_cast<std::ptrdiff_t>(x) + kx - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
              drow[sx] += row[y * W + x];
            }
          }
        }
  }

  static void maxpool(const T* src, const Shape& in, const Shape& out, T* dst,
                      std::vector<std::uint32_t>& argmax) {
    argmax.resize(out.size());
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) {
          std::size_t best = (c * in.height + 2 * y) * in.width + 2 * x;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx =
                  (c * in.height + 2 * y + dy) * in.width + 2 * x + dx;
              if (src[idx] > src[best]) best = idx;
            }
          const std::size_t o = (c * out.height + y) * out.width + x;
          dst[o] = src[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
  }

  Architecture arch_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> offsets_;
  std::size_t p_ = 0;
  std::size_t classes_ = 0;
};

/// Numerically stable softmax of `logits` into `probs`.
template <typename T>
void softmax(std::span<const T> logits, std::span<double> probs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
}

/// Cross-entropy of one sample; writes dl/dlogits = softmax - onehot.
template <typename T>
double softmax_cross_entropy(std::span<const T> logits, std::size_t label,
                             std::span<double> dlogits) {
  if (label >= logits.size())
    throw std::out_of_range("softmax_cross_entropy: label out of range");
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i)
    dlogits[i] = std::exp(static_cast<double>(logits[i]) - lse);
  dlogits[label] -= 1.0;
  return lse - static_cast<double>(logits[label]);
}

inline constexpr std::size_t kBatchChunk = 8;

/// Class probabilities, one row per sample.
template <typename T>
Eigen::MatrixXd forward(const ModelParams<T>& params, const ImageBatch<T>& batch,
                        std::size_t workers = 1) {
  const Network<T> net(params.arch);
  const Shape& s = net.input_shape();
  if (batch.channels != s.channels || batch.height != s.height ||
      batch.width != s.width)
    throw std::invalid_argument("forward: batch shape does not match model input " +
                                to_string(s));
  Eigen::MatrixXd probs(batch.n, net.num_classes());
  parallel_chunks(batch.n, kBatchChunk, workers,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    Workspace<T> ws;
                    std::vector<double> row(net.num_classes());
                    for (std::size_t i = b; i < e; ++i) {
                      auto logits = net.forward(params.w, batch.sample(i), ws);
                      softmax<T>(logits, row);
                      for (std::size_t c = 0; c < row.size(); ++c)
                        probs(i, c) = row[c];
                    }
                  });
  return probs;
}

template <typename T>
struct LossGrad {
  double loss = 0.0;                 // mean cross-entropy
  std::vector<double> per_sample;    // l_i
  std::vector<double> grad;          // d mean loss / dw
  ImageBatch<T> input_grad;          // d l_i / d x_i (not divided by n)
};

template <typename T>
LossGrad<T> loss_and_grad(const ModelParams<T>& params,
                          const ImageBatch<T>& batch,
                          std::span<const int> labels, std::size_t workers = 1,
                          bool want_input_grad = true) {
  const Network<T> net(params.arch);
  if (labels.size() != batch.n)
    throw std::invalid_argument("loss_and_grad: label count mismatch");
  const std::size_t n = batch.n, p = net.param_count(), C = net.num_classes();
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::out_of_range("loss_and_grad: label out of range");

  LossGrad<T> out;
  out.per_sample.assign(n, 0.0);
  if (want_input_grad)
    out.input_grad = ImageBatch<T>(n, batch.channels, batch.height, batch.width);
  const std::size_t n_chunks = chunk_count(n, kBatchChunk);
  std::vector<Buffer<T>> chunk_grads(n_chunks, Buffer<T>(p, T(0)));
  const T inv_n = T(1) / static_cast<T>(n);
  parallel_chunks(n, kBatchChunk, workers,
                  [&](std::size_t c, std::size_t b, std::size_t e) {
                    Workspace<T> ws;
                    std::vector<double> dl(C);
                    Buffer<T> dlt(C);
                    for (std::size_t i = b; i < e; ++i) {
                      auto logits = net.forward(params.w, batch.sample(i), ws);
                      out.per_sample[i] = softmax_cross_entropy<T>(
                          logits, static_cast<std::size_t>(labels[i]), dl);
                      for (std::size_t k = 0; k < C; ++k)
                        dlt[k] = static_cast<T>(dl[k]);
                      std::span<T> dx;
                      if (want_input_grad) dx = out.input_grad.sample(i);
                      net.backward(params.w, ws, dlt, chunk_grads[c], dx);
                    }
                  });
  out.grad.assign(p, 0.0);
  for (const auto& g : chunk_grads)
    for (std::size_t j = 0; j < p; ++j) out.grad[j] += static_cast<double>(g[j]);
  for (double& g : out.grad) g *= static_cast<double>(inv_n);
  for (double l : out.per_sample) out.loss += l;
  out.loss /= static_cast<double>(n);
  return out;
}

}  // namespace scale
