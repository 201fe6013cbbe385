#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedbev/common.hpp"
#include "fedbev/dataset.hpp"
#include "fedbev/io.hpp"

namespace fedbev::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Layer geometry shared by every participant of a federation.
struct ShapeDescriptor {
  std::size_t window = 30;
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{50, 50};

  /// Sum over layers of 4 h (in + h + 1), plus h_last + 1 for the dense head.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    std::size_t in = input_dim;
    for (std::size_t h : hidden) {
      n += 4 * h * (in + h + 1);
      in = h;
    }
    return n + in + 1;
  }

  bool operator==(const ShapeDescriptor&) const = default;
};

struct ModelConfig {
  std::size_t window = 30;
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{50, 50};
  double dropout_rate = 0.2;
  std::uint64_t seed = 0;

  ShapeDescriptor shape() const { return {window, input_dim, hidden}; }

  void validate() const {
    require(window >= 1, "model: window must be at least 1");
    require(input_dim >= 1, "model: input_dim must be at least 1");
    require(!hidden.empty(), "model: hidden must list at least one layer");
    for (std::size_t h : hidden) require(h >= 1, "model: hidden widths must be positive");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "model: dropout_rate must lie in [0, 1)");
  }
};

/// Flat parameter vector plus the shape that gives it meaning.
struct ModelParameters {
  ShapeDescriptor shape;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const ModelParameters&) const = default;
};

/// Offsets of each tensor inside the flat vector. Per LSTM layer: W_x
/// (4h x in), W_h (4h x h), b (4h), each column-major, gate row blocks in
/// the order input, forget, candidate, output. Then the dense head W_d
/// (1 x h_last) and b_d.
struct Layout {
  struct Lstm {
    std::size_t in = 0, hidden = 0;
    std::size_t wx = 0, wh = 0, b = 0;
  };
  std::vector<Lstm> layers;
  std::size_t wd = 0, bd = 0, total = 0;

  static Layout of(const ShapeDescriptor& shape) {
    Layout out;
    std::size_t off = 0;
    std::size_t in = shape.input_dim;
    for (std::size_t h : shape.hidden) {
      Lstm l;
      l.in = in;
      l.hidden = h;
      l.wx = off;
      off += 4 * h * in;
      l.wh = off;
      off += 4 * h * h;
      l.b = off;
      off += 4 * h;
      out.layers.push_back(l);
      in = h;
    }
    out.wd = off;
    off += in;
    out.bd = off;
    off += 1;
    out.total = off;
    return out;
  }
};

/// Glorot-uniform weights, zero biases except forget-gate biases of 1.
inline ModelParameters init_params(const ModelConfig& config) {
  config.validate();
  ModelParameters p;
  p.shape = config.shape();
  const Layout layout = Layout::of(p.shape);
  p.values.assign(layout.total, 0.0);
  Rng rng(config.seed);
  auto glorot = [&](std::size_t offset, std::size_t count, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < count; ++i) p.values[offset + i] = rng.uniform(-limit, limit);
  };
  for (const auto& l : layout.layers) {
    const std::size_t h = l.hidden;
    glorot(l.wx, 4 * h * l.in, l.in, 4 * h);
    glorot(l.wh, 4 * h * h, h, 4 * h);
    for (std::size_t j = 0; j < h; ++j) p.values[l.b + h + j] = 1.0;
  }
  glorot(layout.wd, layout.layers.back().hidden, layout.layers.back().hidden, 1);
  return p;
}

enum class Mode { train, eval };

struct LayerCache {
  std::vector<Matrix> gates;   // activated (i, f, g, o), 4h x B per step
  std::vector<Matrix> cell;    // c_t
  std::vector<Matrix> tanh_c;  // tanh(c_t)
  std::vector<Matrix> hidden;  // h_t
  std::vector<Matrix> output;  // h_t after the dropout mask
  std::vector<Matrix> mask;    // empty where no mask applied
};

/// Activations retained by a forward pass for BPTT.
struct ForwardCache {
  ShapeDescriptor shape;
  std::size_t batch = 0;
  std::vector<Matrix> input;  // input_dim x B per step
  std::vector<LayerCache> layers;
  RowVector prediction;
};

namespace detail {

template <class Block>
inline void sigmoid_inplace(Block&& b) {
  b = (1.0 + (-b.array()).exp()).inverse().matrix();
}

// tanh(x) = 2 sigmoid(2x) - 1. Eigen's double tanh is scalar; exp is
// vectorized. Absolute error stays at the level of double rounding.
template <class Block>
inline void tanh_inplace(Block&& b) {
  b = (2.0 * (1.0 + (-2.0 * b.array()).exp()).inverse() - 1.0).matrix();
}

inline void fill_mask(Matrix& mask, std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  mask.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const double keep_scale = 1.0 / (1.0 - rate);
  double* d = mask.data();
  for (std::size_t i = 0; i < rows * cols; ++i) d[i] = rng.uniform() < rate ? 0.0 : keep_scale;
}

}  // namespace detail

/// Packs samples into per-step input matrices (input_dim x batch).
inline std::vector<Matrix> make_batch(std::span<const dataset::WindowedSample> samples,
                                      std::span<const std::size_t> indices, const ShapeDescriptor& shape) {
  const auto b = static_cast<Eigen::Index>(indices.size());
  const auto in = static_cast<Eigen::Index>(shape.input_dim);
  std::vector<Matrix> steps(shape.window, Matrix(in, b));
  for (Eigen::Index c = 0; c < b; ++c) {
    const auto& s = samples[indices[static_cast<std::size_t>(c)]];
    require(s.window == shape.window && s.features.size() == shape.window * shape.input_dim,
            "forward: window shape does not match the model");
    for (std::size_t t = 0; t < shape.window; ++t) {
      for (Eigen::Index f = 0; f < in; ++f) {
        steps[t](f, c) = s.features[t * shape.input_dim + static_cast<std::size_t>(f)];
      }
    }
  }
  return steps;
}

/// Batched forward pass; returns tanh-bounded predictions, one per column.
namespace detail {

/// Owned, allocator-aligned copies of the parameter blocks. Eigen picks
/// vectorization paths by pointer alignment, so computing on maps into the
/// flat vector would make results depend on where the vector was allocated.
struct UnpackedLayer {
  Matrix wx, wh;
  Eigen::VectorXd b;
};

struct Unpacked {
  std::vector<UnpackedLayer> layers;
  RowVector wd;
  double bd = 0.0;
};

inline Unpacked unpack(const ModelParameters& params, const Layout& layout) {
  const double* p = params.values.data();
  Unpacked u;
  u.layers.reserve(layout.layers.size());
  for (const auto& L : layout.layers) {
    const auto hd = static_cast<Eigen::Index>(L.hidden);
    const auto in = static_cast<Eigen::Index>(L.in);
    u.layers.push_back({Eigen::Map<const Matrix>(p + L.wx, 4 * hd, in), Eigen::Map<const Matrix>(p + L.wh, 4 * hd, hd),
                        Eigen::Map<const Eigen::VectorXd>(p + L.b, 4 * hd)});
  }
  u.wd = Eigen::Map<const RowVector>(p + layout.wd, static_cast<Eigen::Index>(layout.layers.back().hidden));
  u.bd = p[layout.bd];
  return u;
}

}  // namespace detail

/// In train mode an inverted-dropout mask (rate `dropout_rate`, drawn from
/// `rng` independently per step) multiplies every LSTM layer's output. Only
/// the final step of the last layer reaches the head, so only that step is
/// masked there. Eval mode draws nothing.
inline RowVector forward(const ModelParameters& params, const std::vector<Matrix>& inputs, Mode mode,
                         double dropout_rate, Rng* rng, ForwardCache* cache) {
  const ShapeDescriptor& shape = params.shape;
  const Layout layout = Layout::of(shape);
  require(params.values.size() == layout.total, "forward: parameter vector does not match its shape");
  require(inputs.size() == shape.window, "forward: window length does not match the model");
  require(!inputs.empty() && inputs[0].rows() == static_cast<Eigen::Index>(shape.input_dim),
          "forward: input dimension does not match the model");
  const bool train = mode == Mode::train && dropout_rate > 0.0;
  require(!train || rng != nullptr, "forward: train mode with dropout needs an rng");
  const Eigen::Index batch = inputs[0].cols();
  const std::size_t m = shape.window;
  const detail::Unpacked w = detail::unpack(params, layout);

  if (cache) {
    cache->shape = shape;
    cache->batch = static_cast<std::size_t>(batch);
    cache->input = inputs;
    cache->layers.resize(layout.layers.size());
  }

  std::vector<Matrix> scratch_out;
  const std::vector<Matrix>* seq = &inputs;
  Matrix z, c, tc, h, y;
  for (std::size_t l = 0; l < layout.layers.size(); ++l) {
    const auto& L = layout.layers[l];
    const auto hd = static_cast<Eigen::Index>(L.hidden);
    const Matrix& wx = w.layers[l].wx;
    const Matrix& wh = w.layers[l].wh;
    const Eigen::VectorXd& b = w.layers[l].b;
    const bool last_layer = l + 1 == layout.layers.size();

    LayerCache* lc = cache ? &cache->layers[l] : nullptr;
    if (lc) {
      lc->gates.resize(m);
      lc->cell.resize(m);
      lc->tanh_c.resize(m);
      lc->hidden.resize(m);
      lc->output.resize(m);
      lc->mask.assign(m, Matrix());
    }
    std::vector<Matrix> out(m);
    Matrix h_prev = Matrix::Zero(hd, batch);
    Matrix c_prev = Matrix::Zero(hd, batch);
    for (std::size_t t = 0; t < m; ++t) {
      z.noalias() = wx * (*seq)[t];
      if (t > 0) z.noalias() += wh * h_prev;
      z.colwise() += b;
      detail::sigmoid_inplace(z.topRows(2 * hd));
      detail::tanh_inplace(z.middleRows(2 * hd, hd));
      detail::sigmoid_inplace(z.bottomRows(hd));
      c = z.middleRows(hd, hd).cwiseProduct(c_prev) + z.topRows(hd).cwiseProduct(z.middleRows(2 * hd, hd));
      tc = c;
      detail::tanh_inplace(tc);
      h = z.bottomRows(hd).cwiseProduct(tc);
      Matrix mask;
      if (train && (!last_layer || t + 1 == m)) {
        detail::fill_mask(mask, L.hidden, static_cast<std::size_t>(batch), dropout_rate, *rng);
        y = h.cwiseProduct(mask);
      } else {
        y = h;
      }
      if (lc) {
        lc->gates[t] = z;
        lc->cell[t] = c;
        lc->tanh_c[t] = tc;
        lc->hidden[t] = h;
        lc->output[t] = y;
        lc->mask[t] = std::move(mask);
      }
      out[t] = y;
      h_prev.swap(h);
      c_prev.swap(c);
    }
    scratch_out = std::move(out);
    seq = &scratch_out;
  }

  RowVector a = w.wd * scratch_out.back();
  a.array() += w.bd;
  RowVector pred = a.array().tanh().matrix();
  if (cache) cache->prediction = pred;
  return pred;
}

/// Single-window convenience wrapper around the batched forward.
inline double forward(const ModelParameters& params, std::span<const double> window, Mode mode,
                      double dropout_rate, Rng* rng) {
  const auto& shape = params.shape;
  require(window.size() == shape.window * shape.input_dim, "forward: window shape does not match the model");
  std::vector<Matrix> steps(shape.window, Matrix(static_cast<Eigen::Index>(shape.input_dim), 1));
  for (std::size_t t = 0; t < shape.window; ++t) {
    for (std::size_t f = 0; f < shape.input_dim; ++f) {
      steps[t](static_cast<Eigen::Index>(f), 0) = window[t * shape.input_dim + f];
    }
  }
  return forward(params, steps, mode, dropout_rate, rng, nullptr)(0);
}

/// Eval-mode predictions (scaled units) for a list of samples.
inline std::vector<double> predict(const ModelParameters& params, std::span<const dataset::WindowedSample> samples,
                                   std::size_t chunk = 512) {
  std::vector<double> out(samples.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const RowVector y = forward(params, make_batch(samples, idx, params.shape), Mode::eval, 0.0, nullptr, nullptr);
    for (std::size_t i = start; i < end; ++i) out[i] = y(static_cast<Eigen::Index>(i - start));
  }
  return out;
}

struct LossGrad {
  double loss = 0.0;
  double grad = 0.0;
};

/// Absolute error and its derivative; the derivative is 0 at a tie.
inline LossGrad mae_loss(double prediction, double target) {
  const double d = prediction - target;
  return {std::abs(d), d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)};
}

/// Backpropagation through time. `d_prediction` holds dLoss/dy for each
/// batch column; the returned gradient is the column sum, aligned with the
/// flat parameter layout.
inline std::vector<double> backward(const ModelParameters& params, const ForwardCache& cache,
                                    const RowVector& d_prediction) {
  require(cache.shape == params.shape, "backward: cache was produced by a different model shape");
  const Layout layout = Layout::of(params.shape);
  require(params.values.size() == layout.total, "backward: parameter vector does not match its shape");
  require(cache.layers.size() == layout.layers.size() && cache.prediction.size() == d_prediction.size() &&
              static_cast<std::size_t>(d_prediction.size()) == cache.batch,
          "backward: cache does not match the gradient batch");
  const detail::Unpacked w = detail::unpack(params, layout);
  std::vector<double> grad(layout.total, 0.0);
  double* g = grad.data();
  const std::size_t m = params.shape.window;
  const Eigen::Index batch = static_cast<Eigen::Index>(cache.batch);

  // Dense tanh head.
  const auto h_last = static_cast<Eigen::Index>(layout.layers.back().hidden);
  const RowVector d_a = d_prediction.cwiseProduct((1.0 - cache.prediction.array().square()).matrix());
  const Matrix& y_last = cache.layers.back().output[m - 1];
  const RowVector g_wd = d_a * y_last.transpose();
  Eigen::Map<RowVector>(g + layout.wd, h_last) = g_wd;
  g[layout.bd] = d_a.sum();

  // Gradient w.r.t. each layer's (masked) output sequence; only the last
  // step of the top layer is non-zero.
  std::vector<Matrix> d_out(m);
  d_out[m - 1] = w.wd.transpose() * d_a;

  Matrix d_h, d_c, d_z, d_h_next, d_c_next;
  for (std::size_t li = layout.layers.size(); li-- > 0;) {
    const auto& L = layout.layers[li];
    const LayerCache& lc = cache.layers[li];
    const auto hd = static_cast<Eigen::Index>(L.hidden);
    const auto in = static_cast<Eigen::Index>(L.in);
    const Matrix& wx = w.layers[li].wx;
    const Matrix& wh = w.layers[li].wh;
    Matrix g_wx = Matrix::Zero(4 * hd, in);
    Matrix g_wh = Matrix::Zero(4 * hd, hd);
    Eigen::VectorXd g_b = Eigen::VectorXd::Zero(4 * hd);
    const std::vector<Matrix>& layer_in = li == 0 ? cache.input : cache.layers[li - 1].output;
    std::vector<Matrix> d_in(li == 0 ? 0 : m);

    d_h_next = Matrix::Zero(hd, batch);
    d_c_next = Matrix::Zero(hd, batch);
    d_z.resize(4 * hd, batch);
    for (std::size_t t = m; t-- > 0;) {
      const Matrix& gates = lc.gates[t];
      const auto gi = gates.topRows(hd).array();
      const auto gf = gates.middleRows(hd, hd).array();
      const auto gg = gates.middleRows(2 * hd, hd).array();
      const auto go = gates.bottomRows(hd).array();
      const auto tc = lc.tanh_c[t].array();

      d_h = d_h_next;
      if (d_out[t].size() != 0) {
        if (lc.mask[t].size() != 0) {
          d_h.array() += d_out[t].array() * lc.mask[t].array();
        } else {
          d_h += d_out[t];
        }
      }
      d_c = (d_h.array() * go * (1.0 - tc.square())).matrix() + d_c_next;
      d_z.bottomRows(hd) = (d_h.array() * tc * go * (1.0 - go)).matrix();
      d_z.topRows(hd) = (d_c.array() * gg * gi * (1.0 - gi)).matrix();
      d_z.middleRows(2 * hd, hd) = (d_c.array() * gi * (1.0 - gg.square())).matrix();
      if (t > 0) {
        d_z.middleRows(hd, hd) = (d_c.array() * lc.cell[t - 1].array() * gf * (1.0 - gf)).matrix();
      } else {
        d_z.middleRows(hd, hd).setZero();
      }
      d_c_next = (d_c.array() * gf).matrix();

      g_wx.noalias() += d_z * layer_in[t].transpose();
      if (t > 0) g_wh.noalias() += d_z * lc.hidden[t - 1].transpose();
      g_b.noalias() += d_z.rowwise().sum();
      if (li > 0) d_in[t].noalias() = wx.transpose() * d_z;
      d_h_next.noalias() = wh.transpose() * d_z;
    }
    Eigen::Map<Matrix>(g + L.wx, 4 * hd, in) = g_wx;
    Eigen::Map<Matrix>(g + L.wh, 4 * hd, hd) = g_wh;
    Eigen::Map<Eigen::VectorXd>(g + L.b, 4 * hd) = g_b;
    d_out = std::move(d_in);
  }
  return grad;
}

struct BatchResult {
  double loss = 0.0;  // mean absolute error over the batch
  std::vector<double> gradient;
};

/// Train-mode forward + backward over `indices`; loss and gradient are batch means.
inline BatchResult batch_gradient(const ModelParameters& params, std::span<const dataset::WindowedSample> samples,
                                  std::span<const std::size_t> indices, double dropout_rate, Rng& rng,
                                  ForwardCache* reuse = nullptr) {
  require(!indices.empty(), "batch_gradient: empty batch");
  ForwardCache local;
  ForwardCache& cache = reuse ? *reuse : local;
  const auto inputs = make_batch(samples, indices, params.shape);
  const RowVector pred = forward(params, inputs, Mode::train, dropout_rate, &rng, &cache);
  const double inv_b = 1.0 / static_cast<double>(indices.size());
  RowVector d_pred(pred.size());
  BatchResult out;
  for (Eigen::Index c = 0; c < pred.size(); ++c) {
    const auto lg = mae_loss(pred(c), samples[indices[static_cast<std::size_t>(c)]].label);
    out.loss += lg.loss;
    d_pred(c) = lg.grad * inv_b;
  }
  out.loss *= inv_b;
  out.gradient = backward(params, cache, d_pred);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers. Weight decay is an L2 term added to the gradient for both.

enum class OptimizerKind { sgd, adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw InvalidArgument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;
};

class NonFiniteGradient : public Error {
 public:
  NonFiniteGradient(std::size_t index, double value)
      : Error("non-finite gradient at parameter " + std::to_string(index) + " (value " + format_double(value) +
              "); step rejected"),
        index_(index) {}
  std::size_t index() const { return index_; }
  std::string kind() const override { return "NonFiniteGradient"; }

 private:
  std::size_t index_;
};

namespace detail {

inline void check_step_inputs(std::span<const double> w, std::span<const double> grad) {
  require(w.size() == grad.size(), "optimizer: gradient length does not match parameters");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NonFiniteGradient(i, grad[i]);
  }
}

}  // namespace detail

inline void sgd_step(std::span<double> w, std::span<const double> grad, const OptimizerState& state) {
  detail::check_step_inputs(w, grad);
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] -= state.learning_rate * (grad[i] + state.weight_decay * w[i]);
  }
}

inline void adam_step(std::span<double> w, std::span<const double> grad, OptimizerState& state) {
  detail::check_step_inputs(w, grad);
  if (state.first_moment.size() != w.size()) {
    require(state.step == 0 && state.first_moment.empty(), "adam: moment vectors do not match parameters");
    state.first_moment.assign(w.size(), 0.0);
    state.second_moment.assign(w.size(), 0.0);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = grad[i] + state.weight_decay * w[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * gi;
    v = state.beta2 * v + (1.0 - state.beta2) * gi * gi;
    w[i] -= state.learning_rate * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
  }
}

inline void optimizer_step(std::span<double> w, std::span<const double> grad, OptimizerState& state) {
  if (state.kind == OptimizerKind::sgd) {
    sgd_step(w, grad, state);
  } else {
    adam_step(w, grad, state);
  }
}

// ---------------------------------------------------------------------------
// Local training

struct Hyperparams {
  std::size_t batch_count = 5;  // batches per epoch; batch size is ceil(n / batch_count)
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;

  void validate() const {
    require(batch_count >= 1, "hyperparams: batch_count must be positive");
    require(learning_rate > 0.0, "hyperparams: learning_rate must be positive");
    require(weight_decay >= 0.0, "hyperparams: weight_decay must be non-negative");
  }
};

struct TrainSettings {
  Hyperparams hyper;
  OptimizerKind optimizer = OptimizerKind::adam;
  double dropout_rate = 0.2;
};

struct TrainResult {
  ModelParameters params;
  std::vector<double> loss_trace;  // per-epoch mean training MAE (scaled units)
};

/// Contiguous chunks of size ceil(n / count) over a permutation.
inline std::vector<std::span<const std::size_t>> partition_batches(std::span<const std::size_t> order,
                                                                   std::size_t count) {
  std::vector<std::span<const std::size_t>> out;
  if (order.empty()) return out;
  const std::size_t size = (order.size() + count - 1) / count;
  for (std::size_t start = 0; start < order.size(); start += size) {
    out.push_back(order.subspan(start, std::min(size, order.size() - start)));
  }
  return out;
}

/// Local update: per epoch a seeded shuffle, `batch_count` batches and one
/// optimizer step per batch. The optimizer state starts fresh on every call.
inline TrainResult train_local(const ModelParameters& initial, std::span<const dataset::WindowedSample> train,
                               const TrainSettings& settings, std::uint64_t seed) {
  require(!train.empty(), "train_local: empty training set");
  settings.hyper.validate();
  TrainResult out{initial, {}};
  OptimizerState opt;
  opt.kind = settings.optimizer;
  opt.learning_rate = settings.hyper.learning_rate;
  opt.weight_decay = settings.hyper.weight_decay;

  Rng shuffle_rng(derive_seed(seed, "shuffle"));
  Rng dropout_rng(derive_seed(seed, "dropout"));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  ForwardCache cache;
  for (std::size_t epoch = 0; epoch < settings.hyper.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (auto batch : partition_batches(order, settings.hyper.batch_count)) {
      auto r = batch_gradient(out.params, train, batch, settings.dropout_rate, dropout_rng, &cache);
      optimizer_step(out.params.values, r.gradient, opt);
      loss_sum += r.loss * static_cast<double>(batch.size());
    }
    out.loss_trace.push_back(loss_sum / static_cast<double>(train.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "FEDBEVCK", u32 version, u32 window, u32 input_dim, u32 layer
// count, u32 width per layer, u64 value count, then little-endian f64 values.

inline constexpr char kCheckpointMagic[8] = {'F', 'E', 'D', 'B', 'E', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
inline void put_le(std::string& buf, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
}

template <class T>
inline T get_le(const std::string& buf, std::size_t& pos, const std::string& file) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (pos + sizeof(U) > buf.size()) throw FormatError(file, "truncated checkpoint");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline std::string encode_checkpoint(const ModelParameters& params) {
  require(params.values.size() == params.shape.parameter_count(), "checkpoint: parameters do not match shape");
  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(buf, kCheckpointVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.shape.window));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.shape.input_dim));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.shape.hidden.size()));
  for (std::size_t h : params.shape.hidden) detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(h));
  detail::put_le<std::uint64_t>(buf, params.values.size());
  for (double v : params.values) detail::put_le<double>(buf, v);
  return buf;
}

inline ModelParameters decode_checkpoint(const std::string& buf, const std::string& file = "<checkpoint>") {
  if (buf.size() < sizeof(kCheckpointMagic) || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError(file, "not a checkpoint (bad magic)");
  }
  std::size_t pos = 8;
  const auto version = detail::get_le<std::uint32_t>(buf, pos, file);
  if (version != kCheckpointVersion) throw FormatError(file, "unsupported checkpoint version " + std::to_string(version));
  ModelParameters p;
  p.shape.window = detail::get_le<std::uint32_t>(buf, pos, file);
  p.shape.input_dim = detail::get_le<std::uint32_t>(buf, pos, file);
  const auto layers = detail::get_le<std::uint32_t>(buf, pos, file);
  if (layers == 0 || layers > 64) throw FormatError(file, "implausible layer count");
  p.shape.hidden.clear();
  for (std::uint32_t i = 0; i < layers; ++i) p.shape.hidden.push_back(detail::get_le<std::uint32_t>(buf, pos, file));
  const auto count = detail::get_le<std::uint64_t>(buf, pos, file);
  if (count != p.shape.parameter_count()) throw FormatError(file, "value count does not match shape");
  if (buf.size() - pos != count * 8) throw FormatError(file, "checkpoint size does not match value count");
  p.values.resize(count);
  for (auto& v : p.values) v = detail::get_le<double>(buf, pos, file);
  return p;
}

inline void save_checkpoint(const ModelParameters& params, const std::filesystem::path& path) {
  io::write_text(path, encode_checkpoint(params));
}

inline ModelParameters load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_text(path), path.string());
}

inline std::string loss_trace_csv(const std::vector<double>& trace) {
  std::string out = "epoch,loss\n";
  for (std::size_t e = 0; e < trace.size(); ++e) out += std::to_string(e + 1) + "," + format_double(trace[e]) + "\n";
  return out;
}

}  // namespace fedbev::nn
