#pragma once

// Small dense networks with hand-written backward passes. Samples are stored
// column-wise: an input batch is (input_dim x batch).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "phil/errors.hpp"

namespace phil::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class OutputActivation { identity, tanh };

inline std::string to_string(OutputActivation a) {
  return a == OutputActivation::tanh ? "tanh" : "identity";
}

inline OutputActivation output_activation_from_string(const std::string& s) {
  if (s == "tanh") return OutputActivation::tanh;
  if (s == "identity") return OutputActivation::identity;
  throw ConfigError("unknown output activation '" + s + "'");
}

/// Parameters of a ReLU multilayer perceptron. weights[l] maps layer l to
/// layer l+1 and has shape (layer_sizes[l+1] x layer_sizes[l]).
struct MlpParams {
  std::vector<int> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  OutputActivation output = OutputActivation::identity;
  // Bumped by every in-place update so stale forward caches can be detected.
  std::uint64_t generation = 0;

  [[nodiscard]] std::size_t num_layers() const { return weights.size(); }
  [[nodiscard]] int input_dim() const { return layer_sizes.front(); }
  [[nodiscard]] int output_dim() const { return layer_sizes.back(); }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  [[nodiscard]] bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    }
    return true;
  }

  [[nodiscard]] bool same_shape(const MlpParams& other) const {
    return layer_sizes == other.layer_sizes && output == other.output;
  }
};

/// Partial derivatives of a scalar loss, shaped like the parameters.
/// `input` holds the derivative with respect to the forward input batch.
struct GradBundle {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Matrix input;

  static GradBundle zeros_like(const MlpParams& p) {
    GradBundle g;
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
      g.weights.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
      g.biases.push_back(Vector::Zero(p.biases[l].size()));
    }
    return g;
  }

  [[nodiscard]] bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    }
    return true;
  }

  GradBundle& operator+=(const GradBundle& o) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += o.weights[l];
      biases[l] += o.biases[l];
    }
    return *this;
  }

  GradBundle& operator*=(double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] *= s;
      biases[l] *= s;
    }
    input *= s;
    return *this;
  }
};

/// Per-layer values recorded by forward() for use by backward().
struct ForwardCache {
  std::vector<int> layer_sizes;
  std::uint64_t generation = 0;
  std::vector<Matrix> activations;  // activations[0] is the input batch
  std::vector<Matrix> pre;          // pre-activation of each layer
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

inline void validate_layer_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw ConfigError("an MLP needs at least two layer sizes");
  for (int s : sizes) {
    if (s <= 0) throw ConfigError("layer sizes must be positive");
  }
}

/// Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.
inline MlpParams mlp_init(const std::vector<int>& layer_sizes, OutputActivation output,
                          std::uint64_t seed) {
  validate_layer_sizes(layer_sizes);
  MlpParams p;
  p.layer_sizes = layer_sizes;
  p.output = output;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix w(layer_sizes[l + 1], fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(layer_sizes[l + 1]));
  }
  return p;
}

namespace detail {

// tanh rounds to exactly +-1 for large arguments; keep the head strictly
// inside (-1, 1).
inline void apply_output(OutputActivation a, Matrix& z) {
  if (a != OutputActivation::tanh) return;
  static const double kEdge = std::nextafter(1.0, 0.0);
  z = z.array().tanh().cwiseMax(-kEdge).cwiseMin(kEdge).matrix();
}

}  // namespace detail

inline ForwardResult forward(const MlpParams& params, const Matrix& input) {
  if (input.rows() != params.input_dim()) {
    throw ShapeError("forward: input has " + std::to_string(input.rows()) + " rows, network expects " +
                     std::to_string(params.input_dim()));
  }
  ForwardResult res;
  auto& cache = res.cache;
  cache.layer_sizes = params.layer_sizes;
  cache.generation = params.generation;
  cache.activations.reserve(params.num_layers() + 1);
  cache.pre.reserve(params.num_layers());
  cache.activations.push_back(input);
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    Matrix z = params.weights[l] * cache.activations.back();
    z.colwise() += params.biases[l];
    const bool last = l + 1 == params.num_layers();
    Matrix a = z;
    if (last) {
      detail::apply_output(params.output, a);
    } else {
      a = a.cwiseMax(0.0);
    }
    cache.pre.push_back(std::move(z));
    cache.activations.push_back(std::move(a));
  }
  res.output = cache.activations.back();
  return res;
}

/// Forward pass without keeping a cache.
inline Matrix predict(const MlpParams& params, const Matrix& input) {
  if (input.rows() != params.input_dim()) throw ShapeError("predict: input dimension mismatch");
  Matrix a = input;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    Matrix z = params.weights[l] * a;
    z.colwise() += params.biases[l];
    if (l + 1 == params.num_layers()) {
      detail::apply_output(params.output, z);
    } else {
      z = z.cwiseMax(0.0);
    }
    a = std::move(z);
  }
  return a;
}

inline Vector predict_one(const MlpParams& params, const Vector& input) {
  return predict(params, Matrix(input));
}

/// Gradients of a scalar loss whose derivative with respect to the network
/// output batch is `upstream` (output_dim x batch).
inline GradBundle backward(const MlpParams& params, const ForwardCache& cache, const Matrix& upstream) {
  if (cache.layer_sizes != params.layer_sizes || cache.generation != params.generation ||
      cache.activations.size() != params.num_layers() + 1) {
    throw ContractViolation("backward: cache was not produced by a forward pass of these parameters");
  }
  const Matrix& out = cache.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw ShapeError("backward: upstream gradient shape does not match network output");
  }
  GradBundle g;
  const std::size_t n = params.num_layers();
  g.weights.resize(n);
  g.biases.resize(n);
  Matrix delta = upstream;
  if (params.output == OutputActivation::tanh) {
    delta = (delta.array() * (1.0 - out.array().square())).matrix();
  }
  for (std::size_t k = n; k-- > 0;) {
    if (k + 1 != n) {
      delta = (delta.array() * (cache.pre[k].array() > 0.0).cast<double>()).matrix();
    }
    g.weights[k] = delta * cache.activations[k].transpose();
    g.biases[k] = delta.rowwise().sum();
    delta = params.weights[k].transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m_w, v_w;
  std::vector<Vector> m_b, v_b;
  std::int64_t step = 0;

  static AdamState zeros_like(const MlpParams& p) {
    AdamState s;
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
      s.m_w.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
      s.v_w.push_back(s.m_w.back());
      s.m_b.push_back(Vector::Zero(p.biases[l].size()));
      s.v_b.push_back(s.m_b.back());
    }
    return s;
  }
};

/// One adaptive-moment descent step. Throws DivergenceError (and leaves
/// everything untouched) if any gradient is non-finite.
inline void adam_step(MlpParams& params, const GradBundle& grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
  if (grads.weights.size() != params.num_layers() || state.m_w.size() != params.num_layers()) {
    throw ShapeError("adam_step: gradient/optimizer shapes do not match parameters");
  }
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    if (grads.weights[l].rows() != params.weights[l].rows() || grads.weights[l].cols() != params.weights[l].cols() ||
        grads.biases[l].size() != params.biases[l].size()) {
      throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(l));
    }
  }
  if (!grads.all_finite()) throw DivergenceError("adam_step: non-finite gradient");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  };
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    update(params.weights[l], grads.weights[l], state.m_w[l], state.v_w[l]);
    update(params.biases[l], grads.biases[l], state.m_b[l], state.v_b[l]);
  }
  params.generation += 1;
}

/// target <- tau * source + (1 - tau) * target
inline void blend_into(MlpParams& target, const MlpParams& source, double tau) {
  if (!target.same_shape(source)) throw ShapeError("blend_into: networks differ in shape");
  for (std::size_t l = 0; l < target.num_layers(); ++l) {
    target.weights[l] = tau * source.weights[l] + (1.0 - tau) * target.weights[l];
    target.biases[l] = tau * source.biases[l] + (1.0 - tau) * target.biases[l];
  }
  target.generation += 1;
}

namespace detail {

// Scalar probe loss used by grad_check: sum of all outputs.
inline double probe_loss(const MlpParams& p, const Matrix& input) { return predict(p, input).sum(); }

}  // namespace detail

/// Max relative disagreement between backward() and central finite
/// differences of the loss sum(outputs), over every parameter.
inline double grad_check(const MlpParams& params, const Matrix& input, double h) {
  if (h < 1e-7 || h > 1e-3) throw ConfigError("grad_check: h must lie in [1e-7, 1e-3]");
  auto fwd = forward(params, input);
  const GradBundle analytic = backward(params, fwd.cache, Matrix::Ones(fwd.output.rows(), fwd.output.cols()));
  MlpParams probe = params;
  double worst = 0.0;
  auto compare = [&](double& slot, double a) {
    const double saved = slot;
    slot = saved + h;
    const double up = detail::probe_loss(probe, input);
    slot = saved - h;
    const double down = detail::probe_loss(probe, input);
    slot = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  };
  for (std::size_t l = 0; l < probe.num_layers(); ++l) {
    for (Eigen::Index i = 0; i < probe.weights[l].size(); ++i) {
      compare(probe.weights[l].data()[i], analytic.weights[l].data()[i]);
    }
    for (Eigen::Index i = 0; i < probe.biases[l].size(); ++i) {
      compare(probe.biases[l].data()[i], analytic.biases[l].data()[i]);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoint format: one JSON document per network. Matrices are row-major.

inline nlohmann::json to_json(const MlpParams& p) {
  nlohmann::json j;
  j["format"] = "phil-mlp";
  j["version"] = 1;
  j["layer_sizes"] = p.layer_sizes;
  j["activation"] = "relu";
  j["output_activation"] = to_string(p.output);
  nlohmann::json ws = nlohmann::json::array();
  nlohmann::json bs = nlohmann::json::array();
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(p.weights[l].size()));
    for (Eigen::Index r = 0; r < p.weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < p.weights[l].cols(); ++c) flat.push_back(p.weights[l](r, c));
    }
    ws.push_back(flat);
    bs.push_back(std::vector<double>(p.biases[l].data(), p.biases[l].data() + p.biases[l].size()));
  }
  j["weights"] = ws;
  j["biases"] = bs;
  return j;
}

inline MlpParams mlp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "phil-mlp") throw ConfigError("not a phil-mlp document");
    if (j.at("activation").get<std::string>() != "relu") throw ConfigError("unsupported hidden activation");
    MlpParams p;
    p.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    validate_layer_sizes(p.layer_sizes);
    p.output = output_activation_from_string(j.at("output_activation").get<std::string>());
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    if (ws.size() + 1 != p.layer_sizes.size() || bs.size() + 1 != p.layer_sizes.size()) {
      throw ShapeError("checkpoint layer count does not match layer_sizes");
    }
    for (std::size_t l = 0; l + 1 < p.layer_sizes.size(); ++l) {
      const auto flat = ws[l].get<std::vector<double>>();
      const auto bias = bs[l].get<std::vector<double>>();
      const int rows = p.layer_sizes[l + 1];
      const int cols = p.layer_sizes[l];
      if (flat.size() != static_cast<std::size_t>(rows) * cols || bias.size() != static_cast<std::size_t>(rows)) {
        throw ShapeError("checkpoint array sizes do not match layer_sizes at layer " + std::to_string(l));
      }
      Matrix w(rows, cols);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) w(r, c) = flat[static_cast<std::size_t>(r) * cols + c];
      }
      p.weights.push_back(std::move(w));
      p.biases.push_back(Eigen::Map<const Vector>(bias.data(), rows));
    }
    if (!p.all_finite()) throw ConfigError("checkpoint contains non-finite parameters");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const MlpParams& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json(p).dump(1) << '\n';
}

inline MlpParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network checkpoint: ") + e.what());
  }
  return mlp_from_json(j);
}

}  // namespace phil::nn
