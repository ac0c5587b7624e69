#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "dpo/core/error.hpp"
#include "dpo/core/random.hpp"

namespace dpo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Flat gradient with the same layout as Network::values().
using Gradient = Eigen::VectorXd;

enum class Activation { tanh, relu };

enum class HeadKind {
  softmax,  ///< categorical policy over `size` actions
  linear,   ///< unconstrained outputs (value function, Q-values)
};

struct OutputHead {
  HeadKind kind = HeadKind::softmax;
  int size = 1;

  static OutputHead softmax(int n_actions) { return {HeadKind::softmax, n_actions}; }
  static OutputHead scalar() { return {HeadKind::linear, 1}; }
  static OutputHead linear(int n) { return {HeadKind::linear, n}; }

  friend bool operator==(const OutputHead&, const OutputHead&) = default;
};

struct NetworkSpec {
  int input_dim = 1;
  std::vector<int> hidden_dims{130, 50};
  OutputHead output = OutputHead::scalar();
  Activation activation = Activation::relu;
  std::uint64_t init_seed = 0;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;

  /// Layer widths including input and output, e.g. {268, 130, 50, 14}.
  std::vector<int> layer_sizes() const {
    std::vector<int> sizes;
    sizes.reserve(hidden_dims.size() + 2);
    sizes.push_back(input_dim);
    sizes.insert(sizes.end(), hidden_dims.begin(), hidden_dims.end());
    sizes.push_back(output.size);
    return sizes;
  }

  void validate() const {
    for (int width : layer_sizes()) {
      if (width <= 0) throw SpecError("network spec: every layer needs a positive width");
    }
  }

  /// Sum over layers of (fan_in + 1) * fan_out.
  std::size_t parameter_count() const {
    const auto sizes = layer_sizes();
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      total += static_cast<std::size_t>(sizes[l] + 1) * static_cast<std::size_t>(sizes[l + 1]);
    }
    return total;
  }

  std::size_t layer_count() const { return hidden_dims.size() + 1; }
};

/// Weight matrix (fan_out x fan_in) and bias of one dense layer.
struct LayerParams {
  Matrix weights;
  Vector bias;
};

/// Activations retained by a batched forward pass. Column j belongs to input j.
struct ForwardTrace {
  std::vector<Matrix> activations;  ///< activations[0] is the input; one entry per layer input
  std::vector<Matrix> pre_activations;  ///< z of every layer, the last one being the head output
  Matrix probabilities;  ///< softmax of the last z for softmax heads, empty otherwise

  const Matrix& outputs() const { return pre_activations.back(); }
  Eigen::Index batch_size() const { return activations.front().cols(); }
};

/// A dense feed-forward network: spec plus flat parameter vector.
///
/// Parameters are stored layer after layer; each layer is its weight matrix in
/// column-major order followed by its bias. The spec is shared and immutable.
class Network {
 public:
  /// Randomly initialised network: weights uniform in +-sqrt(6 / (fan_in + fan_out)),
  /// biases zero, deterministic in spec.init_seed.
  explicit Network(const NetworkSpec& spec)
      : spec_(std::make_shared<const NetworkSpec>(spec)) {
    spec_->validate();
    values_ = Vector::Zero(static_cast<Eigen::Index>(spec_->parameter_count()));
    Rng rng(spec_->init_seed);
    const auto sizes = spec_->layer_sizes();
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(sizes[l] + sizes[l + 1]));
      const Eigen::Index n_weights = static_cast<Eigen::Index>(sizes[l]) * sizes[l + 1];
      for (Eigen::Index i = 0; i < n_weights; ++i) values_[offset + i] = uniform(rng, -limit, limit);
      offset += n_weights + sizes[l + 1];
    }
  }

  Network(const NetworkSpec& spec, Vector values)
      : spec_(std::make_shared<const NetworkSpec>(spec)), values_(std::move(values)) {
    spec_->validate();
    if (values_.size() != static_cast<Eigen::Index>(spec_->parameter_count())) {
      throw ShapeError("network: parameter vector has " + std::to_string(values_.size()) +
                       " entries, spec needs " + std::to_string(spec_->parameter_count()));
    }
  }

  static Network zeros(const NetworkSpec& spec) {
    spec.validate();
    return Network(spec, Vector::Zero(static_cast<Eigen::Index>(spec.parameter_count())));
  }

  const NetworkSpec& spec() const { return *spec_; }
  bool same_spec(const Network& other) const {
    return spec_ == other.spec_ || *spec_ == *other.spec_;
  }

  const Vector& values() const { return values_; }
  Vector& values() { return values_; }
  Eigen::Index size() const { return values_.size(); }

  /// Per-layer copies of the flat parameters.
  std::vector<LayerParams> unflatten() const {
    std::vector<LayerParams> layers;
    const auto sizes = spec_->layer_sizes();
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const int in = sizes[l];
      const int out = sizes[l + 1];
      LayerParams layer;
      layer.weights = Eigen::Map<const Matrix>(values_.data() + offset, out, in);
      offset += static_cast<Eigen::Index>(in) * out;
      layer.bias = values_.segment(offset, out);
      offset += out;
      layers.push_back(std::move(layer));
    }
    return layers;
  }

  /// Inverse of unflatten().
  static Vector flatten(const NetworkSpec& spec, const std::vector<LayerParams>& layers) {
    const auto sizes = spec.layer_sizes();
    if (layers.size() + 1 != sizes.size()) throw ShapeError("flatten: wrong number of layers");
    Vector flat(static_cast<Eigen::Index>(spec.parameter_count()));
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      if (layer.weights.rows() != sizes[l + 1] || layer.weights.cols() != sizes[l] ||
          layer.bias.size() != sizes[l + 1]) {
        throw ShapeError("flatten: layer " + std::to_string(l) + " has the wrong shape");
      }
      Eigen::Map<Matrix>(flat.data() + offset, sizes[l + 1], sizes[l]) = layer.weights;
      offset += layer.weights.size();
      flat.segment(offset, layer.bias.size()) = layer.bias;
      offset += layer.bias.size();
    }
    return flat;
  }

  /// Batched forward pass; each column of `inputs` is one input vector.
  ForwardTrace forward(const Matrix& inputs) const {
    const auto sizes = spec_->layer_sizes();
    if (inputs.rows() != spec_->input_dim) {
      throw ShapeError("network: input has dimension " + std::to_string(inputs.rows()) +
                       ", expected " + std::to_string(spec_->input_dim));
    }
    ForwardTrace trace;
    trace.activations.reserve(sizes.size() - 1);
    trace.pre_activations.reserve(sizes.size() - 1);
    trace.activations.push_back(inputs);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const int in = sizes[l];
      const int out = sizes[l + 1];
      Eigen::Map<const Matrix> weights(values_.data() + offset, out, in);
      offset += static_cast<Eigen::Index>(in) * out;
      auto bias = values_.segment(offset, out);
      offset += out;
      Matrix z = weights * trace.activations.back();
      z.colwise() += bias;
      const bool is_output = l + 2 == sizes.size();
      if (!is_output) trace.activations.push_back(activate(z));
      trace.pre_activations.push_back(std::move(z));
    }
    if (spec_->output.kind == HeadKind::softmax) trace.probabilities = softmax_columns(trace.outputs());
    return trace;
  }

  /// Gradient of sum_j <output_grad[:, j], z_out[:, j]> with respect to all parameters,
  /// where z_out is the head pre-activation (logits or linear outputs).
  Gradient backward(const ForwardTrace& trace, const Matrix& output_grad) const {
    const auto sizes = spec_->layer_sizes();
    const std::size_t n_layers = sizes.size() - 1;
    if (output_grad.rows() != spec_->output.size || output_grad.cols() != trace.batch_size()) {
      throw ShapeError("network: output gradient has the wrong shape");
    }
    Gradient grad(values_.size());
    // Offsets of each layer in the flat vector.
    std::vector<Eigen::Index> offsets(n_layers);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      offsets[l] = offset;
      offset += static_cast<Eigen::Index>(sizes[l] + 1) * sizes[l + 1];
    }
    Matrix delta = output_grad;
    for (std::size_t l = n_layers; l-- > 0;) {
      const int in = sizes[l];
      const int out = sizes[l + 1];
      const Eigen::Index w_size = static_cast<Eigen::Index>(in) * out;
      Eigen::Map<Matrix>(grad.data() + offsets[l], out, in).noalias() =
          delta * trace.activations[l].transpose();
      grad.segment(offsets[l] + w_size, out) = delta.rowwise().sum();
      if (l > 0) {
        Eigen::Map<const Matrix> weights(values_.data() + offsets[l], out, in);
        Matrix upstream = weights.transpose() * delta;
        delta = upstream.cwiseProduct(activation_derivative(trace.pre_activations[l - 1]));
      }
    }
    return grad;
  }

  // Single-input conveniences.

  /// pi(.|b) for a softmax head.
  Vector policy(const Vector& belief) const {
    require_head(HeadKind::softmax, "policy");
    return forward(belief).probabilities.col(0);
  }

  /// Scalar value V(b).
  double value(const Vector& belief) const {
    require_head(HeadKind::linear, "value");
    if (spec_->output.size != 1) throw SpecError("value: head is not scalar");
    return forward(belief).outputs()(0, 0);
  }

  /// Raw head outputs (e.g. Q-values for every action).
  Vector outputs(const Vector& belief) const { return forward(belief).outputs().col(0); }

  /// d log pi(action | b) / d params.
  Gradient grad_log_prob(const Vector& belief, int action) const {
    require_head(HeadKind::softmax, "grad_log_prob");
    check_action(action);
    const auto trace = forward(belief);
    Matrix dz = -trace.probabilities;
    dz(action, 0) += 1.0;
    return backward(trace, dz);
  }

  /// d V(b) / d params for a scalar head.
  Gradient grad_scalar_output(const Vector& belief) const {
    require_head(HeadKind::linear, "grad_scalar_output");
    if (spec_->output.size != 1) throw SpecError("grad_scalar_output: head is not scalar");
    const auto trace = forward(belief);
    return backward(trace, Matrix::Ones(1, 1));
  }

  void check_action(int action) const {
    if (action < 0 || action >= spec_->output.size) {
      throw ShapeError("action index " + std::to_string(action) + " out of range [0, " +
                       std::to_string(spec_->output.size) + ")");
    }
  }

  bool all_finite() const { return values_.allFinite(); }

  /// Column-wise numerically stable softmax.
  static Matrix softmax_columns(const Matrix& logits) {
    Matrix probs(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double top = logits.col(j).maxCoeff();
      Vector e = (logits.col(j).array() - top).exp().matrix();
      // Keep every probability strictly positive even for extreme logits.
      e = e.cwiseMax(std::numeric_limits<double>::min());
      probs.col(j) = e / e.sum();
    }
    return probs;
  }

  /// Column-wise log-softmax.
  static Matrix log_softmax_columns(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double top = logits.col(j).maxCoeff();
      const double lse = top + std::log((logits.col(j).array() - top).exp().sum());
      out.col(j) = logits.col(j).array() - lse;
    }
    return out;
  }

 private:
  Matrix activate(const Matrix& z) const {
    if (spec_->activation == Activation::relu) return z.cwiseMax(0.0);
    return z.array().tanh().matrix();
  }

  Matrix activation_derivative(const Matrix& z) const {
    if (spec_->activation == Activation::relu) {
      return (z.array() > 0.0).cast<double>().matrix();
    }
    return (1.0 - z.array().tanh().square()).matrix();
  }

  void require_head(HeadKind kind, const char* what) const {
    if (spec_->output.kind != kind) {
      throw SpecError(std::string(what) + ": network has the wrong output head");
    }
  }

  std::shared_ptr<const NetworkSpec> spec_;
  Vector values_;
};

/// One flag per action; true means the action is executable. An empty mask
/// allows every action.
using ActionMask = std::vector<bool>;

/// Masks as a 0/1 matrix with one column per mask. Empty masks become all-ones
/// columns; when every mask is empty the result is an empty matrix.
inline Matrix mask_matrix(const std::vector<const ActionMask*>& masks, Eigen::Index n_actions) {
  const bool any = std::any_of(masks.begin(), masks.end(), [](const ActionMask* m) { return !m->empty(); });
  if (!any) return {};
  Matrix allowed = Matrix::Ones(n_actions, static_cast<Eigen::Index>(masks.size()));
  for (std::size_t j = 0; j < masks.size(); ++j) {
    const ActionMask& m = *masks[j];
    if (m.empty()) continue;
    if (m.size() != static_cast<std::size_t>(n_actions)) throw ShapeError("action mask: wrong length");
    bool some = false;
    for (Eigen::Index a = 0; a < n_actions; ++a) {
      allowed(a, static_cast<Eigen::Index>(j)) = m[static_cast<std::size_t>(a)] ? 1.0 : 0.0;
      some = some || m[static_cast<std::size_t>(a)];
    }
    if (!some) throw SpecError("action mask: no executable action");
  }
  return allowed;
}

/// Log-softmax over the allowed entries of each column; disallowed entries are
/// -inf. An empty `allowed` means no restriction.
inline Matrix masked_log_softmax_columns(const Matrix& logits, const Matrix& allowed) {
  if (allowed.size() == 0) return Network::log_softmax_columns(logits);
  if (allowed.rows() != logits.rows() || allowed.cols() != logits.cols()) throw ShapeError("mask shape mismatch");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      if (allowed(i, j) > 0.0) top = std::max(top, logits(i, j));
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      if (allowed(i, j) > 0.0) sum += std::exp(logits(i, j) - top);
    }
    const double lse = top + std::log(sum);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      out(i, j) = allowed(i, j) > 0.0 ? logits(i, j) - lse : -std::numeric_limits<double>::infinity();
    }
  }
  return out;
}

/// Softmax over the allowed entries of each column; disallowed entries are 0.
inline Matrix masked_softmax_columns(const Matrix& logits, const Matrix& allowed) {
  if (allowed.size() == 0) return Network::softmax_columns(logits);
  Matrix probs = masked_log_softmax_columns(logits, allowed).array().exp().matrix();
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      // Vectorised exp(-inf) can come out as a denormal rather than 0.
      probs(i, j) = allowed(i, j) > 0.0 ? std::max(probs(i, j), std::numeric_limits<double>::min()) : 0.0;
    }
    probs.col(j) /= probs.col(j).sum();
  }
  return probs;
}

/// Mean over a batch of D_KL(pi_avg(b) || pi_live(b)) and its gradient with
/// respect to the live parameters (avg held fixed). With `allowed`, both
/// distributions are restricted to the executable actions of each column.
struct KlResult {
  double kl = 0.0;
  Gradient grad;
};

inline KlResult kl_and_grad(const Network& avg, const Network& live, const Matrix& beliefs,
                            const Matrix& allowed = Matrix()) {
  if (!avg.same_spec(live)) throw SpecError("kl_and_grad: networks do not share a spec");
  if (live.spec().output.kind != HeadKind::softmax) throw SpecError("kl_and_grad: softmax head required");
  const auto batch = static_cast<double>(beliefs.cols());
  const auto avg_trace = avg.forward(beliefs);
  const auto live_trace = live.forward(beliefs);
  const Matrix log_avg = masked_log_softmax_columns(avg_trace.outputs(), allowed);
  const Matrix log_live = masked_log_softmax_columns(live_trace.outputs(), allowed);
  const Matrix p_avg = masked_softmax_columns(avg_trace.outputs(), allowed);
  const Matrix p_live = masked_softmax_columns(live_trace.outputs(), allowed);
  KlResult result;
  for (Eigen::Index j = 0; j < beliefs.cols(); ++j) {
    for (Eigen::Index i = 0; i < p_avg.rows(); ++i) {
      if (allowed.size() == 0 || allowed(i, j) > 0.0) result.kl += p_avg(i, j) * (log_avg(i, j) - log_live(i, j));
    }
  }
  result.kl = std::max(result.kl / batch, 0.0);
  // d/dz_live of -sum_i p_avg,i log p_live,i  =  p_live - p_avg
  const Matrix dz = (p_live - p_avg) / batch;
  result.grad = live.backward(live_trace, dz);
  return result;
}

/// Stack belief vectors as columns.
inline Matrix stack_columns(const std::vector<const Vector*>& columns, Eigen::Index rows) {
  Matrix m(rows, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j]->size() != rows) throw ShapeError("stack_columns: belief dimension mismatch");
    m.col(static_cast<Eigen::Index>(j)) = *columns[j];
  }
  return m;
}

}  // namespace dpo
