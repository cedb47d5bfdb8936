#pragma once

// Stein variational gradient descent in function space.
//
// Particles are dynamics networks f_i evaluated on a batch of transitions.
// The kernel compares two networks through their batch outputs:
//   d(f_i, f_j) = (1/W) sum_l w_l |f_i(x_l) - f_j(x_l)|^2,  k = exp(-d / h),
// with h the median pairwise distance. Rows may carry integer-like weights w_l
// so a deduplicated buffer reproduces the full-buffer sums exactly.
//
// A batch may also carry unlabeled probe inputs. They join the kernel's
// measurement set but contribute nothing to the likelihood, so the repulsive
// term keeps the particles apart away from the data.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "iex/diffcore.hpp"
#include "iex/hypergen.hpp"

namespace iex {

/// Encoded transitions: model inputs (s, a) and regression targets s'.
struct RegressionBatch {
  Matrix inputs;
  Matrix targets;
  Vector weights;  // empty means every row has weight 1
  Matrix probes;   // optional unlabeled inputs, kernel only
  double probe_weight = 1.0;
  double data_kernel_weight = 1.0;  // scales the data rows' weights in the kernel only

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  double weight(std::size_t l) const {
    return weights.size() == 0 ? 1.0 : weights[static_cast<Eigen::Index>(l)];
  }
  double total_weight() const {
    return weights.size() == 0 ? static_cast<double>(size()) : weights.sum();
  }
  void validate() const {
    if (inputs.rows() == 0) throw rejected_input("batch must be nonempty");
    if (targets.rows() != inputs.rows()) throw rejected_input("batch inputs/targets row mismatch");
    if (weights.size() != 0 && weights.size() != inputs.rows())
      throw rejected_input("batch weights length mismatch");
    if (probes.rows() != 0 && probes.cols() != inputs.cols())
      throw rejected_input("batch probe width mismatch");
    if (!(probe_weight >= 0.0)) throw rejected_input("probe_weight must be >= 0");
    if (!(data_kernel_weight >= 0.0)) throw rejected_input("data_kernel_weight must be >= 0");
    if (data_kernel_weight == 0.0 && (probes.rows() == 0 || probe_weight == 0.0))
      throw rejected_input("kernel has no measurement rows: data_kernel_weight is 0 and there are no probes");
  }
};

struct KernelEval {
  Matrix matrix;
  double bandwidth = 0.0;
  Matrix pairwise_distances;
};

struct FunctionBatchEval {
  std::vector<Matrix> outputs;     // m entries, each (n + probes) x s
  Vector per_particle_loss;        // sum_l w_l * ‖f(x_l) - y_l‖²
  std::vector<Matrix> loss_grads;  // gradient of the log-likelihood w.r.t. outputs
  std::vector<ForwardTrace> traces;
  std::vector<double> row_weights;  // data rows, then probe rows
  double total_weight = 0.0;        // data rows only

  std::size_t particle_count() const { return outputs.size(); }
};

enum class PriorMode { none, weight_decay };

struct SvgdConfig {
  double step_size = 1e-4;
  std::size_t particle_count = 5;
  PriorMode prior_mode = PriorMode::weight_decay;
  double kernel_floor = 1e-8;

  void validate() const {
    if (!(step_size >= 0.0)) throw rejected_input("svgd step_size must be >= 0");
    if (particle_count == 0) throw rejected_input("svgd particle_count must be >= 1");
    if (!(kernel_floor > 0.0)) throw rejected_input("svgd kernel_floor must be > 0");
  }
};

struct SvgdDiagnostics {
  std::size_t step = 0;
  double mean_loss = 0.0;
  double bandwidth = 0.0;
  double phi_norm = 0.0;
  bool applied = false;
  std::string fault;
};

inline Matrix pairwise_function_distance(const std::vector<Matrix>& outputs,
                                         std::span<const double> row_weights = {}) {
  const std::size_t m = outputs.size();
  if (m == 0) throw rejected_input("pairwise_function_distance: no particles");
  const Eigen::Index n = outputs[0].rows();
  if (n == 0) throw rejected_input("pairwise_function_distance: empty batch");
  if (!row_weights.empty() && row_weights.size() != static_cast<std::size_t>(n))
    throw rejected_input("pairwise_function_distance: weight length mismatch");
  Vector w = row_weights.empty()
                 ? Vector::Ones(n)
                 : Vector(Eigen::Map<const Vector>(row_weights.data(), n));
  const double total = w.sum();
  Matrix d = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      double v = (outputs[i] - outputs[j]).rowwise().squaredNorm().dot(w) / total;
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      d(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  return d;
}

inline double median_off_diagonal(const Matrix& d) {
  std::vector<double> vals;
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = i + 1; j < d.cols(); ++j) vals.push_back(d(i, j));
  if (vals.empty()) return 0.0;
  std::sort(vals.begin(), vals.end());
  const std::size_t k = vals.size();
  return k % 2 ? vals[k / 2] : 0.5 * (vals[k / 2 - 1] + vals[k / 2]);
}

/// Gaussian kernel exp(-D/h) with the median heuristic, h floored at kernel_floor.
inline KernelEval rbf_kernel_median(const Matrix& distances, double kernel_floor) {
  if (distances.rows() != distances.cols()) throw rejected_input("distance matrix must be square");
  if (!(kernel_floor > 0.0)) throw rejected_input("kernel_floor must be > 0");
  KernelEval k;
  k.pairwise_distances = distances;
  k.bandwidth = std::max(median_off_diagonal(distances), kernel_floor);
  k.matrix = (-distances.array() / k.bandwidth).exp().matrix();
  k.matrix.diagonal().setOnes();
  return k;
}

namespace detail {

inline FunctionBatchEval evaluate_rows(const MlpSpec& spec, const Matrix& theta_rows,
                                       const RegressionBatch& batch) {
  batch.validate();
  if (static_cast<std::size_t>(batch.targets.cols()) != spec.output_width())
    throw rejected_input("model output width " + std::to_string(spec.output_width()) +
                         " != target width " + std::to_string(batch.targets.cols()));
  const std::size_t m = static_cast<std::size_t>(theta_rows.rows());
  const auto n = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index np = batch.probes.rows();
  FunctionBatchEval ev;
  Vector w(n);
  for (Eigen::Index l = 0; l < n; ++l) w[l] = batch.weight(static_cast<std::size_t>(l));
  ev.row_weights.assign(static_cast<std::size_t>(n + np), batch.probe_weight);
  for (Eigen::Index l = 0; l < n; ++l) ev.row_weights[static_cast<std::size_t>(l)] = batch.data_kernel_weight * w[l];
  ev.total_weight = batch.total_weight();
  Matrix stacked;
  if (np > 0) {
    stacked.resize(n + np, batch.inputs.cols());
    stacked << batch.inputs, batch.probes;
  }
  const Matrix& x = np > 0 ? stacked : batch.inputs;
  ev.per_particle_loss = Vector::Zero(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    auto row = theta_rows.row(static_cast<Eigen::Index>(i));
    ForwardTrace t = forward_trace(spec, std::span<const double>(row.data(), row.size()), x);
    Matrix resid = t.output().topRows(n) - batch.targets;
    ev.per_particle_loss[static_cast<Eigen::Index>(i)] = resid.rowwise().squaredNorm().dot(w);
    Matrix g = Matrix::Zero(n + np, resid.cols());
    g.topRows(n) = -2.0 * resid;
    g.topRows(n).array().colwise() *= w.array();
    ev.outputs.push_back(t.output());
    ev.loss_grads.push_back(std::move(g));
    ev.traces.push_back(std::move(t));
  }
  return ev;
}

}  // namespace detail

/// Evaluates every sample on the batch. The log-likelihood is
/// -sum_l w_l * |f(x_l) - y_l|^2, and loss_grads holds its gradient with
/// respect to each output entry (zero on probe rows).
inline FunctionBatchEval log_likelihood_grads(const MlpSpec& spec,
                                              const std::vector<DynamicsSample>& samples,
                                              const RegressionBatch& batch) {
  if (samples.empty()) throw rejected_input("log_likelihood_grads: no samples");
  Matrix rows(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(spec.param_count()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].theta.size() != spec.param_count())
      throw rejected_input("log_likelihood_grads: theta length mismatch");
    rows.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(samples[i].theta.data.data(),
                                             static_cast<Eigen::Index>(spec.param_count()));
  }
  return detail::evaluate_rows(spec, rows, batch);
}

/// Empirical Stein direction for every particle:
///   phi_i = (1/m) sum_l [ k(f_l, f_i) grad log p(f_l) + grad_{f_l} k(f_l, f_i) ].
inline std::vector<Matrix> compute_phi_star(const std::vector<Matrix>& outputs,
                                            const std::vector<Matrix>& logp_grads,
                                            const KernelEval& kernel,
                                            std::span<const double> row_weights = {}) {
  const std::size_t m = outputs.size();
  if (logp_grads.size() != m || static_cast<std::size_t>(kernel.matrix.rows()) != m)
    throw rejected_input("compute_phi_star: particle count mismatch");
  const Eigen::Index n = outputs.empty() ? 0 : outputs[0].rows();
  Vector w = row_weights.empty() ? Vector::Ones(n)
                                 : Vector(Eigen::Map<const Vector>(row_weights.data(), n));
  const double total = w.sum();
  const double rep_scale = -2.0 / (total * kernel.bandwidth);
  std::vector<Matrix> phi(m, Matrix::Zero(n, m ? outputs[0].cols() : 0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < m; ++l) {
      const double k = kernel.matrix(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(i));
      phi[i] += k * logp_grads[l];
      if (l != i) {
        Matrix diff = outputs[l] - outputs[i];
        diff.array().colwise() *= w.array();
        phi[i] += (k * rep_scale) * diff;
      }
    }
    phi[i] /= static_cast<double>(m);
  }
  return phi;
}

inline std::vector<Matrix> compute_phi_star(const FunctionBatchEval& eval, const KernelEval& kernel) {
  return compute_phi_star(eval.outputs, eval.loss_grads, kernel, eval.row_weights);
}

inline double frobenius_norm(const std::vector<Matrix>& xs) {
  double acc = 0.0;
  for (const auto& x : xs) acc += x.squaredNorm();
  return std::sqrt(acc);
}

/// One amortized SVGD step on the generator parameters. phi* is pushed back
/// through every sampled network and then through the generators; Adam then
/// ascends eta along the summed result with learning rate cfg.step_size.
inline SvgdDiagnostics amortized_update(GeneratorBundle& bundle,
                                        const std::vector<std::vector<double>>& noise,
                                        const RegressionBatch& batch, const SvgdConfig& cfg,
                                        AdamState& opt) {
  cfg.validate();
  if (noise.empty()) throw rejected_input("amortized_update: noise list is empty");
  const MlpSpec& spec = bundle.target_spec();

  GeneratorBundle::BatchTrace gtrace;
  Matrix theta = bundle.generate_batch(stack_rows(noise), &gtrace);
  FunctionBatchEval ev = detail::evaluate_rows(spec, theta, batch);
  KernelEval kernel = rbf_kernel_median(pairwise_function_distance(ev.outputs, ev.row_weights),
                                        cfg.kernel_floor);
  std::vector<Matrix> phi = compute_phi_star(ev, kernel);

  SvgdDiagnostics diag;
  diag.step = opt.step_count;
  diag.mean_loss = ev.per_particle_loss.mean() / ev.total_weight;
  diag.bandwidth = kernel.bandwidth;
  diag.phi_norm = frobenius_norm(phi);
  if (!std::isfinite(diag.phi_norm)) {
    diag.fault = "non-finite phi*";
    return diag;
  }
  if (cfg.step_size == 0.0) return diag;

  Matrix theta_grad = Matrix::Zero(theta.rows(), theta.cols());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    auto row = theta.row(static_cast<Eigen::Index>(i));
    std::vector<double> g(static_cast<std::size_t>(theta.cols()), 0.0);
    backward_batch(spec, std::span<const double>(row.data(), row.size()), ev.traces[i], phi[i], g);
    // Adam minimizes, so the ascent direction enters negated.
    theta_grad.row(static_cast<Eigen::Index>(i)) =
        -Eigen::Map<const Eigen::RowVectorXd>(g.data(), theta.cols());
  }
  std::vector<double> eta_grad(bundle.eta().size(), 0.0);
  bundle.backward(gtrace, theta_grad, eta_grad);

  AdamConfig saved = opt.config;
  opt.config.learning_rate = cfg.step_size;
  if (cfg.prior_mode == PriorMode::none) opt.config.weight_decay = 0.0;
  try {
    adam_step(opt, bundle.eta(), eta_grad);
  } catch (const numeric_fault& e) {
    opt.config = saved;
    diag.fault = e.what();
    return diag;
  }
  opt.config = saved;
  diag.applied = true;
  return diag;
}

/// Plain SVGD on explicit particles with a Gaussian kernel over their values:
///   x_i <- x_i + eps * phi*(x_i).
inline std::vector<Vector> particle_update(const std::vector<Vector>& particles,
                                           const std::vector<Vector>& logp_grads,
                                           double step_size, double kernel_floor = 1e-8,
                                           double* bandwidth_out = nullptr) {
  if (particles.size() != logp_grads.size())
    throw rejected_input("particle_update: gradient count mismatch");
  std::vector<Matrix> outs, grads;
  outs.reserve(particles.size());
  for (std::size_t i = 0; i < particles.size(); ++i) {
    if (logp_grads[i].size() != particles[i].size() || particles[i].size() != particles[0].size())
      throw rejected_input("particle_update: dimension mismatch");
    outs.emplace_back(particles[i].transpose());
    grads.emplace_back(logp_grads[i].transpose());
  }
  KernelEval k = rbf_kernel_median(pairwise_function_distance(outs), kernel_floor);
  if (bandwidth_out) *bandwidth_out = k.bandwidth;
  auto phi = compute_phi_star(outs, grads, k);
  std::vector<Vector> next(particles.size());
  for (std::size_t i = 0; i < particles.size(); ++i)
    next[i] = particles[i] + step_size * phi[i].transpose();
  return next;
}

/// Non-amortized function-space SVGD: each particle is a network parameter
/// vector that moves by eps * J_i^T phi*_i. Reference engine for the
/// amortized path.
inline SvgdDiagnostics function_particle_update(const MlpSpec& spec, std::vector<std::vector<double>>& thetas,
                                                const RegressionBatch& batch, double step_size,
                                                double kernel_floor = 1e-8) {
  Matrix rows = stack_rows(thetas);
  FunctionBatchEval ev = detail::evaluate_rows(spec, rows, batch);
  KernelEval kernel = rbf_kernel_median(pairwise_function_distance(ev.outputs, ev.row_weights),
                                        kernel_floor);
  auto phi = compute_phi_star(ev, kernel);
  SvgdDiagnostics diag;
  diag.mean_loss = ev.per_particle_loss.mean() / ev.total_weight;
  diag.bandwidth = kernel.bandwidth;
  diag.phi_norm = frobenius_norm(phi);
  if (!std::isfinite(diag.phi_norm)) {
    diag.fault = "non-finite phi*";
    return diag;
  }
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    std::vector<double> g(thetas[i].size(), 0.0);
    backward_batch(spec, thetas[i], ev.traces[i], phi[i], g);
    for (std::size_t k = 0; k < g.size(); ++k) thetas[i][k] += step_size * g[k];
  }
  diag.applied = true;
  return diag;
}

}  // namespace iex
