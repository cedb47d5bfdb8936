#pragma once

// Dense MLP forward/backward passes and the Adam optimizer.
//
// Parameters of an MLP live in one flat vector. Layer j occupies
// fan_out*fan_in weights (row-major, one row per output unit) followed by
// fan_out biases. Hidden layers apply MlpSpec::nonlinearity; the output
// layer is always linear.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace iex {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Raised when a caller hands in inconsistent shapes or out-of-range values.
class rejected_input : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numeric computation produced NaN or Inf.
class numeric_fault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { tanh, relu, identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw rejected_input("unknown activation '" + std::string(s) + "'");
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Flat numeric array with shape metadata and an optional gradient slot.
struct ParamTensor {
  std::vector<double> data;
  std::vector<std::size_t> shape;
  std::vector<double> grad;  // empty when absent

  ParamTensor() = default;
  explicit ParamTensor(std::vector<double> values)
      : data(std::move(values)), shape{data.size()} {}
  ParamTensor(std::vector<double> values, std::vector<std::size_t> dims)
      : data(std::move(values)), shape(std::move(dims)) {
    validate();
  }

  std::size_t size() const { return data.size(); }
  bool has_grad() const { return !grad.empty(); }

  void validate() const {
    std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                    std::multiplies<>());
    if (shape.empty()) n = 0;
    if (n != data.size())
      throw rejected_input("ParamTensor shape product " + std::to_string(n) +
                           " != data length " + std::to_string(data.size()));
    if (!grad.empty() && grad.size() != data.size())
      throw rejected_input("ParamTensor grad length mismatch");
  }
};

struct MlpSpec {
  std::vector<std::size_t> layer_widths;  // input, hidden..., output
  Activation nonlinearity = Activation::tanh;

  std::size_t layer_count() const {
    return layer_widths.empty() ? 0 : layer_widths.size() - 1;
  }
  std::size_t fan_in(std::size_t j) const { return layer_widths[j]; }
  std::size_t fan_out(std::size_t j) const { return layer_widths[j + 1]; }
  std::size_t layer_param_count(std::size_t j) const {
    return fan_in(j) * fan_out(j) + fan_out(j);
  }
  std::size_t layer_offset(std::size_t j) const {
    std::size_t off = 0;
    for (std::size_t k = 0; k < j; ++k) off += layer_param_count(k);
    return off;
  }
  std::size_t param_count() const { return layer_offset(layer_count()); }
  std::size_t input_width() const { return layer_widths.front(); }
  std::size_t output_width() const { return layer_widths.back(); }

  void validate() const {
    if (layer_widths.size() < 2)
      throw rejected_input("MlpSpec needs at least an input and an output width");
    for (std::size_t w : layer_widths)
      if (w == 0) throw rejected_input("MlpSpec widths must be positive");
  }

  bool operator==(const MlpSpec&) const = default;
};

namespace detail {

inline void apply_activation(Activation a, Matrix& z) {
  switch (a) {
    case Activation::tanh: z = z.array().tanh(); break;
    case Activation::relu: z = z.array().max(0.0); break;
    case Activation::identity: break;
  }
}

// Multiplies `grad` in place by the activation derivative, expressed through
// the post-activation value `out`.
inline void activation_backward(Activation a, const Matrix& out, Matrix& grad) {
  switch (a) {
    case Activation::tanh: grad.array() *= (1.0 - out.array().square()); break;
    case Activation::relu: grad.array() *= (out.array() > 0.0).cast<double>(); break;
    case Activation::identity: break;
  }
}

inline void check_params(const MlpSpec& spec, std::size_t n) {
  spec.validate();
  if (n != spec.param_count())
    throw rejected_input("parameter length " + std::to_string(n) + " != expected " +
                         std::to_string(spec.param_count()));
}

}  // namespace detail

/// Post-activation values of every layer for a batch (rows are samples).
/// activations[0] is the input, activations.back() the network output.
struct ForwardTrace {
  std::vector<Matrix> activations;
  const Matrix& output() const { return activations.back(); }
};

inline ForwardTrace forward_trace(const MlpSpec& spec, std::span<const double> params,
                                  const Matrix& inputs) {
  detail::check_params(spec, params.size());
  if (static_cast<std::size_t>(inputs.cols()) != spec.input_width())
    throw rejected_input("input width " + std::to_string(inputs.cols()) + " != " +
                         std::to_string(spec.input_width()));
  ForwardTrace trace;
  trace.activations.reserve(spec.layer_count() + 1);
  trace.activations.push_back(inputs);
  for (std::size_t j = 0; j < spec.layer_count(); ++j) {
    const auto fi = static_cast<Eigen::Index>(spec.fan_in(j));
    const auto fo = static_cast<Eigen::Index>(spec.fan_out(j));
    const double* base = params.data() + spec.layer_offset(j);
    Eigen::Map<const Matrix> w(base, fo, fi);
    Eigen::Map<const Eigen::RowVectorXd> b(base + fo * fi, fo);
    Matrix z = trace.activations.back() * w.transpose();
    z.rowwise() += b;
    if (j + 1 < spec.layer_count()) detail::apply_activation(spec.nonlinearity, z);
    trace.activations.push_back(std::move(z));
  }
  return trace;
}

inline Matrix forward_batch(const MlpSpec& spec, std::span<const double> params,
                            const Matrix& inputs) {
  return forward_trace(spec, params, inputs).activations.back();
}

inline std::vector<double> forward(const MlpSpec& spec, std::span<const double> params,
                                   std::span<const double> input) {
  if (input.size() != spec.input_width())
    throw rejected_input("input length " + std::to_string(input.size()) + " != " +
                         std::to_string(spec.input_width()));
  Matrix x = Eigen::Map<const Matrix>(input.data(), 1, static_cast<Eigen::Index>(input.size()));
  Matrix y = forward_batch(spec, params, x);
  return {y.data(), y.data() + y.size()};
}

/// Backpropagates `output_grad` (rows match the trace batch) and accumulates
/// the parameter gradient summed over the batch into `param_grad`. Returns the
/// gradient with respect to the inputs.
inline Matrix backward_batch(const MlpSpec& spec, std::span<const double> params,
                             const ForwardTrace& trace, const Matrix& output_grad,
                             std::span<double> param_grad) {
  detail::check_params(spec, params.size());
  if (param_grad.size() != params.size())
    throw rejected_input("param_grad length mismatch");
  const Matrix& out = trace.output();
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
    throw rejected_input("output_grad shape mismatch");

  Matrix delta = output_grad;
  for (std::size_t jj = spec.layer_count(); jj-- > 0;) {
    const auto fi = static_cast<Eigen::Index>(spec.fan_in(jj));
    const auto fo = static_cast<Eigen::Index>(spec.fan_out(jj));
    const std::size_t off = spec.layer_offset(jj);
    Eigen::Map<const Matrix> w(params.data() + off, fo, fi);
    Eigen::Map<Matrix> gw(param_grad.data() + off, fo, fi);
    Eigen::Map<Eigen::RowVectorXd> gb(param_grad.data() + off + fo * fi, fo);
    const Matrix& prev = trace.activations[jj];
    gw.noalias() += delta.transpose() * prev;
    gb += delta.colwise().sum();
    Matrix prev_grad = delta * w;
    if (jj > 0) detail::activation_backward(spec.nonlinearity, prev, prev_grad);
    delta = std::move(prev_grad);
  }
  return delta;
}

struct MlpGradients {
  std::vector<double> params;
  std::vector<double> input;
};

/// Exact gradients of <forward(params, input), output_grad>.
inline MlpGradients backward(const MlpSpec& spec, std::span<const double> params,
                             std::span<const double> input,
                             std::span<const double> output_grad) {
  if (input.size() != spec.input_width())
    throw rejected_input("input length mismatch in backward");
  if (output_grad.size() != spec.output_width())
    throw rejected_input("output_grad length mismatch in backward");
  Matrix x = Eigen::Map<const Matrix>(input.data(), 1, static_cast<Eigen::Index>(input.size()));
  ForwardTrace trace = forward_trace(spec, params, x);
  Matrix g = Eigen::Map<const Matrix>(output_grad.data(), 1,
                                      static_cast<Eigen::Index>(output_grad.size()));
  MlpGradients out;
  out.params.assign(params.size(), 0.0);
  Matrix gin = backward_batch(spec, params, trace, g, out.params);
  out.input.assign(gin.data(), gin.data() + gin.size());
  return out;
}

/// Fan-in scaled uniform initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
/// weights and biases.
template <class Rng>
std::vector<double> init_params(const MlpSpec& spec, Rng& rng, double output_scale = 1.0) {
  spec.validate();
  std::vector<double> p(spec.param_count());
  for (std::size_t j = 0; j < spec.layer_count(); ++j) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in(j)));
    std::uniform_real_distribution<double> u(-bound, bound);
    const double scale = (j + 1 == spec.layer_count()) ? output_scale : 1.0;
    const std::size_t off = spec.layer_offset(j);
    for (std::size_t k = 0; k < spec.layer_param_count(j); ++k) p[off + k] = scale * u(rng);
  }
  return p;
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw rejected_input("adam learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw rejected_input("adam beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw rejected_input("adam beta2 must be in [0,1)");
    if (!(epsilon > 0.0)) throw rejected_input("adam epsilon must be > 0");
    if (!(weight_decay >= 0.0)) throw rejected_input("adam weight_decay must be >= 0");
  }
};

struct AdamState {
  AdamConfig config;
  std::size_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::size_t n)
      : config(cfg), first_moment(n, 0.0), second_moment(n, 0.0) {
    config.validate();
  }
};

/// One bias-corrected Adam step minimizing along `grads`. Weight decay enters
/// as an additive weight_decay*param term before the moment updates. Non-finite
/// gradients throw numeric_fault and leave both params and state untouched.
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (grads.size() != params.size())
    throw rejected_input("adam_step: grads length " + std::to_string(grads.size()) +
                         " != params length " + std::to_string(params.size()));
  if (state.first_moment.size() != params.size())
    throw rejected_input("adam_step: optimizer state sized for a different parameter vector");
  if (!all_finite(grads)) throw numeric_fault("adam_step: non-finite gradient");

  const AdamConfig& c = state.config;
  const std::size_t t = state.step_count + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k] + c.weight_decay * params[k];
    double& m = state.first_moment[k];
    double& v = state.second_moment[k];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    params[k] -= c.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + c.epsilon);
  }
  state.step_count = t;
}

}  // namespace iex
