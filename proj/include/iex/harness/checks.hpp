#pragma once

// Self-checks exposed on the command line: SVGD against closed-form
// posteriors, and finite-difference gradient checks of the network and
// generator paths.

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iex/diffcore.hpp"
#include "iex/harness/config.hpp"
#include "iex/hypergen.hpp"
#include "iex/intrinsic.hpp"
#include "iex/svgd.hpp"

namespace iex {

struct CheckLine {
  std::string name;
  std::string status;  // "pass", "fail" or "not applicable"
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct CheckReport {
  std::vector<CheckLine> checks;

  bool passed() const {
    return std::none_of(checks.begin(), checks.end(), [](const CheckLine& c) { return c.status == "fail"; });
  }

  std::string text() const {
    std::ostringstream os;
    for (const auto& c : checks) {
      os << c.status << "  " << c.name;
      if (c.status != "not applicable") os << "  value=" << c.value << " threshold=" << c.threshold;
      if (!c.detail.empty()) os << "  (" << c.detail << ")";
      os << '\n';
    }
    os << (passed() ? "PASS" : "FAIL") << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks)
      arr.push_back({{"name", c.name},
                     {"status", c.status},
                     {"value", c.value},
                     {"threshold", c.threshold},
                     {"detail", c.detail}});
    return {{"passed", passed()}, {"checks", arr}};
  }
};

inline CheckLine threshold_check(std::string name, double value, double threshold, std::string detail = {}) {
  return {std::move(name), value <= threshold ? "pass" : "fail", value, threshold, std::move(detail)};
}

/// Runs particle SVGD with a caller-supplied score function. Returns the
/// final particles and the largest distance any particle moved.
template <class Score>
std::vector<Vector> run_particle_svgd(std::vector<Vector> particles, Score score, double step_size,
                                      std::size_t iterations, double* max_move = nullptr) {
  const std::vector<Vector> start = particles;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<Vector> grads;
    grads.reserve(particles.size());
    for (const auto& p : particles) grads.push_back(score(p));
    particles = particle_update(particles, grads, step_size);
  }
  if (max_move) {
    *max_move = 0.0;
    for (std::size_t i = 0; i < particles.size(); ++i)
      *max_move = std::max(*max_move, (particles[i] - start[i]).norm());
  }
  return particles;
}

/// Conjugate Bayesian linear regression: y = Phi w + N(0, 1/beta), prior
/// w ~ N(0, I/alpha).
struct LinearRegressionProblem {
  Matrix phi;
  Vector y;
  double alpha = 1.0;
  double beta = 1.0;

  Matrix precision() const { return alpha * Matrix::Identity(phi.cols(), phi.cols()) + beta * phi.transpose() * phi; }
  Vector posterior_mean() const { return precision().ldlt().solve(beta * phi.transpose() * y); }
  Vector score(const Vector& w) const { return -alpha * w + beta * phi.transpose() * (y - phi * w); }
};

template <class R>
LinearRegressionProblem make_regression_problem(R& rng, std::size_t n = 20) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.3);
  LinearRegressionProblem p;
  p.alpha = 1.0;
  p.beta = 1.0 / 0.09;
  p.phi.resize(static_cast<Eigen::Index>(n), 2);
  p.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < p.phi.rows(); ++i) {
    const double x = u(rng);
    p.phi(i, 0) = 1.0;
    p.phi(i, 1) = x;
    p.y[i] = 0.5 - 1.2 * x + noise(rng);
  }
  return p;
}

/// Particle SVGD on N(5, 2^2) and on a conjugate linear regression, compared
/// with the closed-form moments. The step size is divided by the target's
/// largest precision eigenvalue so one setting serves both problems.
inline CheckReport svgd_sanity(const SanityConfig& cfg, std::uint64_t seed) {
  CheckReport rep;
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);

  {
    const double mu = 5.0, sigma = 2.0;
    std::vector<Vector> init(cfg.particle_count, Vector(1));
    for (auto& p : init) p[0] = n01(rng);
    double moved = 0.0;
    auto out = run_particle_svgd(
        init, [&](const Vector& x) { return Vector((mu - x.array()) / (sigma * sigma)); },
        cfg.step_size * sigma * sigma, cfg.iterations, &moved);
    std::vector<double> xs;
    for (const auto& p : out) xs.push_back(p[0]);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(xs.size()));
    if (moved == 0.0) {
      rep.checks.push_back({"gaussian_movement", "fail", 0.0, 0.0, "no movement: particles never left their start"});
    }
    rep.checks.push_back(threshold_check("gaussian_mean_error", std::abs(mean - mu), 0.2,
                                         "target N(5, 2^2), " + std::to_string(cfg.particle_count) + " particles"));
    if (cfg.particle_count < 2)
      rep.checks.push_back({"gaussian_std_error", "not applicable", 0.0, 0.3, "needs at least 2 particles"});
    else
      rep.checks.push_back(threshold_check("gaussian_std_error", std::abs(sd - sigma), 0.3));
  }

  {
    Rng data_rng(seed + 1);
    LinearRegressionProblem prob = make_regression_problem(data_rng);
    const Vector truth = prob.posterior_mean();
    const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(prob.precision()).eigenvalues().maxCoeff();
    std::vector<Vector> init(cfg.regression_particles, Vector(2));
    for (auto& p : init) p << n01(rng), n01(rng);
    double moved = 0.0;
    auto out = run_particle_svgd(init, [&](const Vector& w) { return prob.score(w); }, cfg.step_size / lmax,
                                 cfg.iterations, &moved);
    Vector mean = Vector::Zero(2);
    for (const auto& p : out) mean += p;
    mean /= static_cast<double>(out.size());
    if (moved == 0.0)
      rep.checks.push_back({"regression_movement", "fail", 0.0, 0.0, "no movement: particles never left their start"});
    rep.checks.push_back(threshold_check("regression_mean_relative_error", (mean - truth).norm() / truth.norm(), 0.05,
                                         "conjugate linear regression, " +
                                             std::to_string(cfg.regression_particles) + " particles"));
  }
  return rep;
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradcheckResult {
  double max_param_error = 0.0;
  double max_input_error = 0.0;
  double max_eta_error = 0.0;
};

/// Central differences of J = sum(output .* G) against backward_batch on a
/// random small network.
template <class R>
void gradcheck_network(R& rng, GradcheckResult& res, double h = 1e-5) {
  std::uniform_int_distribution<int> width(1, 5), depth(1, 3), act(0, 2);
  std::normal_distribution<double> n01(0.0, 1.0);
  MlpSpec spec;
  spec.layer_widths.push_back(static_cast<std::size_t>(width(rng)));
  const int d = depth(rng);
  for (int k = 0; k < d; ++k) spec.layer_widths.push_back(static_cast<std::size_t>(width(rng)));
  spec.layer_widths.push_back(static_cast<std::size_t>(width(rng)));
  spec.nonlinearity = static_cast<Activation>(act(rng));
  auto params = init_params(spec, rng);
  Matrix x(3, static_cast<Eigen::Index>(spec.input_width()));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
  Matrix g(3, static_cast<Eigen::Index>(spec.output_width()));
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n01(rng);

  auto objective = [&](const std::vector<double>& p, const Matrix& in) {
    return forward_batch(spec, p, in).cwiseProduct(g).sum();
  };
  std::vector<double> analytic(params.size(), 0.0);
  ForwardTrace trace = forward_trace(spec, params, x);
  Matrix gin = backward_batch(spec, params, trace, g, analytic);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params;
    p[k] += h;
    const double up = objective(p, x);
    p[k] -= 2 * h;
    const double down = objective(p, x);
    res.max_param_error = std::max(res.max_param_error, relative_error(analytic[k], (up - down) / (2 * h)));
  }
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Matrix xp = x;
    xp.data()[k] += h;
    const double up = objective(params, xp);
    xp.data()[k] -= 2 * h;
    const double down = objective(params, xp);
    res.max_input_error = std::max(res.max_input_error, relative_error(gin.data()[k], (up - down) / (2 * h)));
  }
}

/// Central differences through the generators: J(eta) is the summed
/// log-likelihood of the sampled networks plus a random linear functional of
/// their outputs, so both the loss-gradient and the generic output-gradient
/// paths are exercised.
template <class R>
void gradcheck_generator(R& rng, GradcheckResult& res, double h = 1e-5) {
  std::uniform_int_distribution<int> width(1, 3);
  std::normal_distribution<double> n01(0.0, 1.0);
  MlpSpec target{{static_cast<std::size_t>(width(rng)), static_cast<std::size_t>(width(rng) + 1),
                  static_cast<std::size_t>(width(rng))},
                 Activation::tanh};
  GeneratorOptions opt;
  opt.noise_dim = 3;
  opt.hidden = {4};
  opt.activation = Activation::tanh;
  opt.sharing = (width(rng) % 2) ? NoiseSharing::shared : NoiseSharing::independent;
  GeneratorBundle bundle = GeneratorBundle::create(target, opt, rng);
  const Matrix z = stack_rows(sample_noise(2, bundle.noise_length(), rng));
  RegressionBatch batch;
  batch.inputs.resize(3, static_cast<Eigen::Index>(target.input_width()));
  batch.targets.resize(3, static_cast<Eigen::Index>(target.output_width()));
  for (Eigen::Index i = 0; i < batch.inputs.size(); ++i) batch.inputs.data()[i] = n01(rng);
  for (Eigen::Index i = 0; i < batch.targets.size(); ++i) batch.targets.data()[i] = n01(rng);
  std::vector<Matrix> lin(2, Matrix(3, static_cast<Eigen::Index>(target.output_width())));
  for (auto& m : lin)
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);

  auto objective = [&](const GeneratorBundle& b) {
    Matrix theta = b.generate_batch(z);
    FunctionBatchEval ev = detail::evaluate_rows(target, theta, batch);
    double j = -ev.per_particle_loss.sum();
    for (std::size_t i = 0; i < 2; ++i) j += ev.outputs[i].cwiseProduct(lin[i]).sum();
    return j;
  };

  GeneratorBundle::BatchTrace gt;
  Matrix theta = bundle.generate_batch(z, &gt);
  FunctionBatchEval ev = detail::evaluate_rows(target, theta, batch);
  Matrix theta_grad = Matrix::Zero(theta.rows(), theta.cols());
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> g(static_cast<std::size_t>(theta.cols()), 0.0);
    auto row = theta.row(static_cast<Eigen::Index>(i));
    Matrix og = ev.loss_grads[i] + lin[i];
    backward_batch(target, std::span<const double>(row.data(), row.size()), ev.traces[i], og, g);
    theta_grad.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(g.data(), theta.cols());
  }
  std::vector<double> analytic(bundle.eta().size(), 0.0);
  bundle.backward(gt, theta_grad, analytic);
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    GeneratorBundle b = bundle;
    b.eta()[k] += h;
    const double up = objective(b);
    b.eta()[k] -= 2 * h;
    const double down = objective(b);
    res.max_eta_error = std::max(res.max_eta_error, relative_error(analytic[k], (up - down) / (2 * h)));
  }
}

inline CheckReport gradcheck(const GradcheckConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  GradcheckResult r;
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    gradcheck_network(rng, r);
    gradcheck_generator(rng, r);
  }
  const std::string n = std::to_string(cfg.instances) + " random instances";
  CheckReport rep;
  rep.checks.push_back(threshold_check("network_param_gradient", r.max_param_error, cfg.tolerance, n));
  rep.checks.push_back(threshold_check("network_input_gradient", r.max_input_error, cfg.tolerance, n));
  rep.checks.push_back(threshold_check("generator_eta_gradient", r.max_eta_error, cfg.tolerance, n));
  return rep;
}

// ---------------------------------------------------------------------------
// Uncertainty decay on a fixed 1-D regression buffer

struct DecayTrace {
  double initial_inside = 0.0;
  double final_inside = 0.0;
  double final_outside = 0.0;
  double outside_input = 0.0;
};

/// Mean variance reward over `inputs`, from `count` freshly generated models.
template <class R>
double mean_variance_reward(const GeneratorBundle& g, const Matrix& inputs, std::size_t count, R& rng) {
  auto models = sample_ensemble(g, count, rng);
  std::vector<Matrix> preds;
  for (const auto& s : models) preds.push_back(forward_batch(g.target_spec(), s.theta.data, inputs));
  double acc = 0.0;
  Matrix p(static_cast<Eigen::Index>(count), preds[0].cols());
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
    for (std::size_t i = 0; i < count; ++i) p.row(static_cast<Eigen::Index>(i)) = preds[i].row(r);
    acc += variance_reward(p);
  }
  return acc / static_cast<double>(inputs.rows());
}

/// Trains the amortized sampler on y = sin(2x) + noise, x ~ U(-1, 1), and
/// records the variance reward inside the buffer before and after training
/// and at one input `outside_sigmas` input standard deviations past the
/// largest buffer input.
inline DecayTrace uncertainty_decay_trace(const DecayConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.target_noise);
  RegressionBatch batch;
  batch.inputs.resize(static_cast<Eigen::Index>(cfg.buffer_size), 1);
  batch.targets.resize(static_cast<Eigen::Index>(cfg.buffer_size), 1);
  for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
    batch.inputs(i, 0) = u(rng);
    batch.targets(i, 0) = std::sin(2.0 * batch.inputs(i, 0)) + noise(rng);
  }
  if (cfg.noise_weighted)
    batch.weights = Vector::Constant(batch.inputs.rows(), 1.0 / (2.0 * cfg.target_noise * cfg.target_noise));
  if (cfg.probe_count > 0) {
    batch.probes.resize(static_cast<Eigen::Index>(cfg.probe_count), 1);
    std::uniform_real_distribution<double> up(-cfg.probe_extent, cfg.probe_extent);
    for (Eigen::Index i = 0; i < batch.probes.rows(); ++i) batch.probes(i, 0) = up(rng);
    batch.probe_weight = cfg.probe_weight * batch.weight(0);
  }
  const double mean_x = batch.inputs.mean();
  const double sd_x =
      std::sqrt((batch.inputs.array() - mean_x).square().sum() / static_cast<double>(cfg.buffer_size - 1));

  MlpSpec spec{{1}, cfg.model_activation};
  for (auto h : cfg.model_hidden) spec.layer_widths.push_back(h);
  spec.layer_widths.push_back(1);
  GeneratorBundle bundle = GeneratorBundle::create(spec, cfg.generator, rng);
  SvgdConfig svgd;
  svgd.particle_count = cfg.particle_count;
  svgd.step_size = cfg.optimizer.learning_rate;
  AdamState opt(cfg.optimizer, bundle.eta().size());

  DecayTrace t;
  t.outside_input = batch.inputs.maxCoeff() + cfg.outside_sigmas * sd_x;
  Matrix outside(1, 1);
  outside(0, 0) = t.outside_input;
  // Evaluation uses its own stream so training draws do not depend on it.
  Rng eval_rng(seed ^ 0x5eedULL);
  t.initial_inside = mean_variance_reward(bundle, batch.inputs, cfg.eval_samples, eval_rng);
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    auto z = sample_noise(cfg.particle_count, bundle.noise_length(), rng);
    amortized_update(bundle, z, batch, svgd, opt);
  }
  t.final_inside = mean_variance_reward(bundle, batch.inputs, cfg.eval_samples, eval_rng);
  t.final_outside = mean_variance_reward(bundle, outside, cfg.eval_samples, eval_rng);
  return t;
}

inline CheckReport uncertainty_decay(const DecayConfig& cfg, std::uint64_t seed) {
  const DecayTrace t = uncertainty_decay_trace(cfg, seed);
  CheckReport rep;
  std::ostringstream d1, d2;
  d1 << "in-buffer reward " << t.initial_inside << " -> " << t.final_inside << " after " << cfg.steps << " steps";
  d2 << "reward at x=" << t.outside_input << " is " << t.final_outside << " vs " << t.final_inside << " inside";
  rep.checks.push_back(threshold_check("inside_reward_ratio", t.final_inside / t.initial_inside, cfg.decay_ratio,
                                       d1.str()));
  const double outside_ratio = t.final_outside / t.final_inside;
  rep.checks.push_back({"outside_reward_ratio", outside_ratio >= cfg.outside_ratio ? "pass" : "fail", outside_ratio,
                        cfg.outside_ratio, d2.str()});
  return rep;
}

}  // namespace iex
