#pragma once

// Fully-connected rectifier Q-networks with hand-written backpropagation.
//
// Batches are row-major in the sense that each row of an input matrix is one
// observation; a layer maps H (batch x in) to H W^T + 1 b^T (batch x out).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tandem/error.hpp"
#include "tandem/rng.hpp"

namespace tandem {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NetworkConfig {
  int input_dim = 1;
  int hidden_layers = 2;
  int hidden_units = 64;
  int output_dim = 2;

  int num_layers() const { return hidden_layers + 1; }

  void validate() const {
    if (input_dim < 1) throw ConfigError("input_dim must be positive", "network.input_dim");
    if (hidden_layers < 0) throw ConfigError("hidden_layers must be >= 0", "network.hidden_layers");
    if (hidden_units < 1) throw ConfigError("hidden_units must be >= 1", "network.hidden_units");
    if (output_dim < 1) throw ConfigError("output_dim must be positive", "network.output_dim");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Layer parameters ordered input to output. Every layer but the last is
/// followed by a rectifier. Gradients use the same type.
struct NetworkParams {
  std::vector<DenseLayer> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }

  bool same_shape(const NetworkParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
          layers[i].weight.cols() != other.layers[i].weight.cols()) {
        return false;
      }
    }
    return true;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }

  /// Exact (bitwise for finite values) equality of all parameters.
  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      if (a.layers[i].weight != b.layers[i].weight || a.layers[i].bias != b.layers[i].bias) {
        return false;
      }
    }
    return true;
  }

  /// A zero-valued tensor set with the same shapes.
  NetworkParams zeros_like() const {
    NetworkParams z;
    z.layers.reserve(layers.size());
    for (const auto& l : layers) {
      z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
    return z;
  }
};

/// Which layers receive updates. `k` frozen bottom layers is the usual shape.
struct FreezeMask {
  std::vector<bool> trainable;

  static FreezeMask all_trainable(int num_layers) {
    return {std::vector<bool>(static_cast<std::size_t>(num_layers), true)};
  }

  static FreezeMask bottom_frozen(int num_layers, int k) {
    if (k < 0 || k > num_layers) throw UsageError("bottom_frozen: k out of range");
    FreezeMask m = all_trainable(num_layers);
    for (int i = 0; i < k; ++i) m.trainable[static_cast<std::size_t>(i)] = false;
    return m;
  }

  bool is_trainable(int layer) const { return trainable[static_cast<std::size_t>(layer)]; }
  int size() const { return static_cast<int>(trainable.size()); }
};

inline NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  NetworkParams params;
  int fan_in = config.input_dim;
  for (int layer = 0; layer < config.num_layers(); ++layer) {
    const bool is_output = layer == config.hidden_layers;
    const int fan_out = is_output ? config.output_dim : config.hidden_units;
    // He-uniform for rectifier layers; variance-preserving for the linear head.
    const double limit = std::sqrt((is_output ? 3.0 : 6.0) / fan_in);
    DenseLayer dense{Matrix(fan_out, fan_in), Vector::Zero(fan_out)};
    for (Eigen::Index r = 0; r < dense.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < dense.weight.cols(); ++c) {
        dense.weight(r, c) = rng.uniform(-limit, limit);
      }
    }
    params.layers.push_back(std::move(dense));
    fan_in = fan_out;
  }
  return params;
}

namespace detail {

inline void check_batch(const NetworkParams& params, const Matrix& batch) {
  if (params.layers.empty()) throw UsageError("network has no layers");
  if (batch.cols() != params.input_dim()) {
    throw UsageError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                     std::to_string(params.input_dim()));
  }
}

inline Matrix affine(const DenseLayer& layer, const Matrix& h) {
  Matrix z = h * layer.weight.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

}  // namespace detail

/// Q-values for every row of `batch` (batch x output_dim). Pure.
inline Matrix forward(const NetworkParams& params, const Matrix& batch) {
  detail::check_batch(params, batch);
  Matrix h = batch;
  const int n = params.num_layers();
  for (int i = 0; i < n; ++i) {
    h = detail::affine(params.layers[static_cast<std::size_t>(i)], h);
    if (i + 1 < n) h = h.cwiseMax(0.0);
  }
  return h;
}

/// Q-values of a single observation.
inline Vector forward_one(const NetworkParams& params, std::span<const double> obs) {
  if (static_cast<int>(obs.size()) != params.input_dim()) {
    throw UsageError("observation length does not match network input");
  }
  Vector h = Eigen::Map<const Vector>(obs.data(), static_cast<Eigen::Index>(obs.size()));
  const int n = params.num_layers();
  for (int i = 0; i < n; ++i) {
    const auto& layer = params.layers[static_cast<std::size_t>(i)];
    Vector z = layer.weight * h + layer.bias;
    h = i + 1 < n ? Vector(z.cwiseMax(0.0)) : z;
  }
  return h;
}

struct LossAndGrads {
  double loss = 0.0;
  NetworkParams grads;
};

/// Mean squared TD/regression loss and its gradient.
///
/// With `action_select`, `targets` is batch x 1 and the loss is the mean over
/// rows of (Q(s_i, a_i) - t_i)^2. Without it, `targets` is batch x output_dim
/// and the mean runs over rows and actions. Frozen layers get exactly-zero
/// gradient blocks.
inline LossAndGrads loss_and_grads(const NetworkParams& params, const Matrix& batch,
                                   const Matrix& targets,
                                   std::optional<std::span<const int>> action_select,
                                   const FreezeMask& mask) {
  detail::check_batch(params, batch);
  const int n = params.num_layers();
  if (mask.size() != n) throw UsageError("freeze mask length does not match layer count");
  const Eigen::Index rows = batch.rows();
  if (rows == 0) throw UsageError("empty batch");

  // activations[i] is the input to layer i; pre[i] its affine output.
  std::vector<Matrix> activations;
  std::vector<Matrix> pre;
  activations.reserve(static_cast<std::size_t>(n));
  pre.reserve(static_cast<std::size_t>(n));
  activations.push_back(batch);
  for (int i = 0; i < n; ++i) {
    pre.push_back(detail::affine(params.layers[static_cast<std::size_t>(i)], activations.back()));
    if (i + 1 < n) activations.push_back(pre.back().cwiseMax(0.0));
  }
  const Matrix& q = pre.back();

  LossAndGrads out;
  Matrix delta = Matrix::Zero(q.rows(), q.cols());
  if (action_select) {
    const auto actions = *action_select;
    if (targets.rows() != rows || targets.cols() != 1 ||
        static_cast<Eigen::Index>(actions.size()) != rows) {
      throw UsageError("selected-action loss expects batch x 1 targets and one action per row");
    }
    double sum = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int a = actions[static_cast<std::size_t>(r)];
      if (a < 0 || a >= q.cols()) throw UsageError("selected action out of range");
      const double err = q(r, a) - targets(r, 0);
      sum += err * err;
      delta(r, a) = 2.0 * err / static_cast<double>(rows);
    }
    out.loss = sum / static_cast<double>(rows);
  } else {
    if (targets.rows() != rows || targets.cols() != q.cols()) {
      throw UsageError("full-output loss expects batch x output_dim targets");
    }
    const Matrix err = q - targets;
    const double count = static_cast<double>(err.size());
    out.loss = err.squaredNorm() / count;
    delta = 2.0 * err / count;
  }

  out.grads = params.zeros_like();
  int lowest_trainable = n;
  for (int i = 0; i < n; ++i) {
    if (mask.is_trainable(i)) {
      lowest_trainable = i;
      break;
    }
  }
  for (int i = n - 1; i >= lowest_trainable; --i) {
    const auto idx = static_cast<std::size_t>(i);
    if (mask.is_trainable(i)) {
      out.grads.layers[idx].weight.noalias() = delta.transpose() * activations[idx];
      out.grads.layers[idx].bias = delta.colwise().sum().transpose();
    }
    if (i > lowest_trainable) {
      Matrix upstream = delta * params.layers[idx].weight;
      delta = upstream.cwiseProduct((pre[idx - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return out;
}

enum class OptimizerKind { rmsprop, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "rmsprop"; }

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double rho = 0.95;       // rmsprop decay
  double beta1 = 0.9;      // adam
  double beta2 = 0.999;    // adam
  double epsilon = 1e-8;   // stabilizer; rmsprop conventionally uses 1e-5

  static OptimizerSettings rmsprop_defaults(double lr = 1e-3) {
    OptimizerSettings s;
    s.kind = OptimizerKind::rmsprop;
    s.learning_rate = lr;
    s.epsilon = 1e-5;
    return s;
  }

  static OptimizerSettings adam_defaults(double lr = 1e-3) {
    OptimizerSettings s;
    s.kind = OptimizerKind::adam;
    s.learning_rate = lr;
    s.epsilon = 1e-8;
    return s;
  }
};

/// Per-parameter optimizer state. Non-centered RMSProp or bias-corrected Adam.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const OptimizerSettings& settings, const NetworkParams& shape)
      : settings_(settings), second_(shape.zeros_like()) {
    if (settings_.kind == OptimizerKind::adam) first_ = shape.zeros_like();
  }

  const OptimizerSettings& settings() const { return settings_; }
  std::int64_t steps() const { return steps_; }
  const NetworkParams& second_moment() const { return second_; }
  const NetworkParams& first_moment() const { return first_; }

  void step(NetworkParams& params, const NetworkParams& grads, const FreezeMask& mask) {
    if (!params.same_shape(grads) || !params.same_shape(second_)) {
      throw UsageError("optimizer_step: shape mismatch");
    }
    if (mask.size() != params.num_layers()) throw UsageError("optimizer_step: mask length");
    ++steps_;
    for (int i = 0; i < params.num_layers(); ++i) {
      if (!mask.is_trainable(i)) continue;
      const auto idx = static_cast<std::size_t>(i);
      update(params.layers[idx].weight, grads.layers[idx].weight, second_.layers[idx].weight,
             settings_.kind == OptimizerKind::adam ? &first_.layers[idx].weight : nullptr);
      update(params.layers[idx].bias, grads.layers[idx].bias, second_.layers[idx].bias,
             settings_.kind == OptimizerKind::adam ? &first_.layers[idx].bias : nullptr);
    }
  }

 private:
  template <typename Tensor>
  void update(Tensor& theta, const Tensor& g, Tensor& v, Tensor* m) const {
    const double lr = settings_.learning_rate;
    const double eps = settings_.epsilon;
    if (settings_.kind == OptimizerKind::rmsprop) {
      const double rho = settings_.rho;
      v.array() = rho * v.array() + (1.0 - rho) * g.array().square();
      theta.array() -= lr * g.array() / (v.array().sqrt() + eps);
      return;
    }
    const double b1 = settings_.beta1;
    const double b2 = settings_.beta2;
    const double t = static_cast<double>(steps_);
    m->array() = b1 * m->array() + (1.0 - b1) * g.array();
    v.array() = b2 * v.array() + (1.0 - b2) * g.array().square();
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    theta.array() -= lr * (m->array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  OptimizerSettings settings_;
  NetworkParams first_;
  NetworkParams second_;
  std::int64_t steps_ = 0;
};

inline void optimizer_step(NetworkParams& params, const NetworkParams& grads, Optimizer& opt,
                           const FreezeMask& mask) {
  opt.step(params, grads, mask);
}

/// Which layers sync_params copies. `bottom_k == std::nullopt` means all.
struct LayerSelection {
  std::optional<int> bottom_k;

  static LayerSelection all() { return {}; }
  static LayerSelection bottom(int k) { return {k}; }
};

inline void sync_params(const NetworkParams& src, NetworkParams& dst,
                        LayerSelection layers = LayerSelection::all()) {
  if (!src.same_shape(dst)) throw UsageError("sync_params: architecture mismatch");
  const int n = src.num_layers();
  const int k = layers.bottom_k.value_or(n);
  if (k < 0 || k > n) throw UsageError("sync_params: k out of range");
  for (int i = 0; i < k; ++i) dst.layers[static_cast<std::size_t>(i)] = src.layers[static_cast<std::size_t>(i)];
}

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  double max_numeric_magnitude = 0.0;
  int checked = 0;
  int skipped_at_kink = 0;
};

struct FiniteDiffOptions {
  // Away from kinks the loss is quadratic in any single coordinate, so the
  // central difference has no truncation error; a larger step only shrinks
  // the cancellation error on small-gradient coordinates.
  double h = 1e-4;
  /// Coordinates sampled per instance; all coordinates when <= 0.
  int max_coordinates = 0;
  /// Denominator floor of the relative error.
  double magnitude_floor = 1e-7;
  std::uint64_t seed = 0;
};

namespace detail {

// Rectifier on/off pattern for a batch; a finite difference whose probes fall
// on different patterns straddles a kink and is not a valid derivative estimate.
inline std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> relu_pattern(
    const NetworkParams& params, const Matrix& batch) {
  std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> out;
  Matrix h = batch;
  for (int i = 0; i + 1 < params.num_layers(); ++i) {
    Matrix z = affine(params.layers[static_cast<std::size_t>(i)], h);
    out.emplace_back(z.array() > 0.0);
    h = z.cwiseMax(0.0);
  }
  return out;
}

inline bool same_pattern(const std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>>& a,
                         const std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] != b[i]).any()) return false;
  }
  return true;
}

}  // namespace detail

/// Compares analytic gradients against central differences
/// (L(θ+h) - L(θ-h)) / 2h, coordinate by coordinate.
inline FiniteDiffReport finite_diff_check(const NetworkParams& params, const Matrix& batch,
                                          const Matrix& targets,
                                          std::optional<std::span<const int>> action_select,
                                          const FiniteDiffOptions& options = {}) {
  if (!(options.h > 0.0)) throw UsageError("finite_diff_check: h must be positive");
  const FreezeMask mask = FreezeMask::all_trainable(params.num_layers());
  const LossAndGrads analytic = loss_and_grads(params, batch, targets, action_select, mask);
  const auto base_pattern = detail::relu_pattern(params, batch);

  struct Coord {
    std::size_t layer;
    bool is_bias;
    Eigen::Index row, col;
  };
  std::vector<Coord> coords;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& w = params.layers[l].weight;
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) coords.push_back({l, false, r, c});
    }
    for (Eigen::Index r = 0; r < params.layers[l].bias.size(); ++r) coords.push_back({l, true, r, 0});
  }
  if (options.max_coordinates > 0 && static_cast<std::size_t>(options.max_coordinates) < coords.size()) {
    Rng rng(options.seed);
    // Partial Fisher-Yates: the first max_coordinates entries are a uniform subset.
    for (std::size_t i = 0; i < static_cast<std::size_t>(options.max_coordinates); ++i) {
      const std::size_t j = i + rng.below(static_cast<std::uint64_t>(coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(static_cast<std::size_t>(options.max_coordinates));
  }

  FiniteDiffReport report;
  NetworkParams probe = params;
  auto loss_at = [&](const NetworkParams& p) {
    return loss_and_grads(p, batch, targets, action_select, mask).loss;
  };
  for (const Coord& c : coords) {
    double& slot = c.is_bias ? probe.layers[c.layer].bias(c.row) : probe.layers[c.layer].weight(c.row, c.col);
    const double original = slot;
    slot = original + options.h;
    const double plus = loss_at(probe);
    const bool plus_ok = detail::same_pattern(base_pattern, detail::relu_pattern(probe, batch));
    slot = original - options.h;
    const double minus = loss_at(probe);
    const bool minus_ok = detail::same_pattern(base_pattern, detail::relu_pattern(probe, batch));
    slot = original;
    if (!plus_ok || !minus_ok) {
      ++report.skipped_at_kink;
      continue;
    }
    const double numeric = (plus - minus) / (2.0 * options.h);
    const double exact = c.is_bias ? analytic.grads.layers[c.layer].bias(c.row)
                                   : analytic.grads.layers[c.layer].weight(c.row, c.col);
    const double denom = std::max({std::abs(numeric), std::abs(exact), options.magnitude_floor});
    report.max_relative_error = std::max(report.max_relative_error, std::abs(numeric - exact) / denom);
    report.max_numeric_magnitude = std::max(report.max_numeric_magnitude, std::abs(numeric));
    ++report.checked;
  }
  return report;
}

// Checkpoint format (text, one token stream):
//
//   tandem-params 1
//   layers <L>
//   layer <i> <rows> <cols>
//   <rows*cols weight values, row-major>
//   <rows bias values>
//   ... repeated for every layer
//
// Values are printed with 17 significant digits, which round-trips doubles.
inline void save_params(const NetworkParams& params, std::ostream& os) {
  os << "tandem-params 1\n" << "layers " << params.num_layers() << '\n';
  os << std::setprecision(17);
  for (int i = 0; i < params.num_layers(); ++i) {
    const auto& l = params.layers[static_cast<std::size_t>(i)];
    os << "layer " << i << ' ' << l.weight.rows() << ' ' << l.weight.cols() << '\n';
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) os << (c ? " " : "") << l.weight(r, c);
      os << '\n';
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) os << (r ? " " : "") << l.bias(r);
    os << '\n';
  }
}

inline NetworkParams load_params(std::istream& is) {
  auto expect = [&](const std::string& word) {
    std::string got;
    if (!(is >> got) || got != word) throw IoError("checkpoint: expected '" + word + "'");
  };
  expect("tandem-params");
  int version = 0;
  if (!(is >> version) || version != 1) throw IoError("checkpoint: unsupported version");
  expect("layers");
  int n = 0;
  if (!(is >> n) || n < 1) throw IoError("checkpoint: bad layer count");
  NetworkParams params;
  for (int i = 0; i < n; ++i) {
    expect("layer");
    int index = 0;
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> index >> rows >> cols) || index != i || rows < 1 || cols < 1) {
      throw IoError("checkpoint: bad layer header");
    }
    DenseLayer l{Matrix(rows, cols), Vector(rows)};
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (!(is >> l.weight(r, c))) throw IoError("checkpoint: truncated weights");
      }
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!(is >> l.bias(r))) throw IoError("checkpoint: truncated biases");
    }
    params.layers.push_back(std::move(l));
  }
  return params;
}

inline void save_params(const NetworkParams& params, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  save_params(params, os);
  if (!os) throw IoError("write failed: " + path);
}

inline NetworkParams load_params(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return load_params(is);
}

}  // namespace tandem
