#pragma once

// The exploration loop: refit the dynamics belief on the experience buffer,
// draw networks, plan against their intrinsic reward, act in the real
// environment, append the new transitions, repeat until the episode ends.

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "iex/agents/belief.hpp"
#include "iex/agents/ddqn.hpp"
#include "iex/agents/mcts.hpp"
#include "iex/agents/shooting.hpp"
#include "iex/envs.hpp"
#include "iex/intrinsic.hpp"

namespace iex {

enum class Method { ours, disagreement, icm, ddqn, random };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::ours: return "ours";
    case Method::disagreement: return "disagreement";
    case Method::icm: return "icm";
    case Method::ddqn: return "ddqn";
    case Method::random: return "random";
  }
  return "random";
}

inline Method method_from_string(std::string_view s) {
  if (s == "ours") return Method::ours;
  if (s == "disagreement") return Method::disagreement;
  if (s == "icm") return Method::icm;
  if (s == "ddqn") return Method::ddqn;
  if (s == "random") return Method::random;
  throw rejected_input("unknown method '" + std::string(s) + "'");
}

inline RewardKind reward_kind_for(Method m) {
  switch (m) {
    case Method::ours: return RewardKind::posterior_variance;
    case Method::disagreement: return RewardKind::ensemble_disagreement;
    case Method::icm: return RewardKind::prediction_error;
    default: return RewardKind::none;
  }
}

struct StepRecord {
  std::size_t step = 0;
  std::size_t episode = 0;
  double coverage = 0.0;
  double intrinsic_reward = 0.0;
  double model_loss = 0.0;
  double bandwidth = 0.0;
};

struct EpisodeMetrics {
  std::vector<StepRecord> steps;
  double final_coverage = 0.0;
  std::size_t fit_faults = 0;
  std::size_t planner_fallbacks = 0;
};

/// Everything a policy needs besides the environment and the buffer.
struct PolicyContext {
  Method method = Method::random;
  DynamicsBelief* belief = nullptr;  // model-based methods
  DdqnAgent* ddqn = nullptr;         // Method::ddqn
  RewardSpec reward;
  RunningNormalizer* normalizer = nullptr;  // used when reward.normalize
};

// ---------------------------------------------------------------------------
// Chain

struct ChainLoopConfig {
  std::size_t refit_epochs = 10;
  std::size_t steps_per_update = 1;
  MctsConfig mcts;
};

/// Experience for the chain. The environment is deterministic, so the
/// regression batch stores each distinct (s, a, s') once with its count as
/// row weight, which reproduces full-buffer sums exactly.
class ChainBuffer {
 public:
  explicit ChainBuffer(std::size_t n_states) : n_(n_states), last_next_(n_states * 2, -1) {}

  void push(const Transition& t) {
    const std::size_t s = chain_state_index(t.state);
    const std::size_t a = chain_state_index(t.action);
    const std::size_t s2 = chain_state_index(t.next_state);
    ++counts_[{s, a, s2}];
    last_next_[s * 2 + a] = static_cast<long>(s2);
    transitions_.push_back(t);
  }

  std::size_t size() const { return transitions_.size(); }
  const std::vector<Transition>& transitions() const { return transitions_; }
  const std::vector<long>& last_successors() const { return last_next_; }

  RegressionBatch batch() const {
    RegressionBatch b;
    const auto rows = static_cast<Eigen::Index>(counts_.size());
    b.inputs = Matrix::Zero(rows, static_cast<Eigen::Index>(n_ + 2));
    b.targets = Matrix::Zero(rows, static_cast<Eigen::Index>(n_));
    b.weights = Vector::Zero(rows);
    Eigen::Index r = 0;
    for (const auto& [key, count] : counts_) {
      const auto [s, a, s2] = key;
      b.inputs(r, static_cast<Eigen::Index>(s)) = 1.0;
      b.inputs(r, static_cast<Eigen::Index>(n_ + a)) = 1.0;
      b.targets(r, static_cast<Eigen::Index>(s2)) = 1.0;
      b.weights[r] = static_cast<double>(count);
      ++r;
    }
    return b;
  }

 private:
  std::size_t n_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> counts_;
  std::vector<long> last_next_;
  std::vector<Transition> transitions_;
};

inline std::vector<double> chain_model_input(std::size_t s, std::size_t a, std::size_t n) {
  std::vector<double> x(n + 2, 0.0);
  x[s] = 1.0;
  x[n + a] = 1.0;
  return x;
}

/// Fills the buffer with one episode of uniformly random actions.
template <class R>
EpisodeMetrics run_random_chain_episode(ChainEnv& env, ChainBuffer& buffer, R& rng, std::size_t episode,
                                        std::size_t& global_step) {
  EpisodeMetrics m;
  std::uniform_int_distribution<int> coin(0, 1);
  env.reset();
  while (!env.done()) {
    buffer.push(env.step(static_cast<ChainAction>(coin(rng))));
    m.steps.push_back({global_step++, episode, env.coverage(), 0.0, 0.0, 0.0});
  }
  m.final_coverage = env.coverage();
  return m;
}

template <class R>
EpisodeMetrics run_chain_episode(ChainEnv& env, const PolicyContext& ctx, const ChainLoopConfig& cfg,
                                 ChainBuffer& buffer, R& rng, std::size_t episode, std::size_t& global_step) {
  const bool model_based = ctx.belief != nullptr && ctx.reward.kind != RewardKind::none;
  if (ctx.method == Method::random || (ctx.method != Method::ddqn && !model_based))
    return run_random_chain_episode(env, buffer, rng, episode, global_step);

  EpisodeMetrics m;
  env.reset();
  const std::size_t n = env.n_states();

  if (ctx.method == Method::ddqn) {
    if (!ctx.ddqn) throw rejected_input("ddqn method requires an agent");
    while (!env.done()) {
      auto s = one_hot(env.current_state(), n);
      auto a = static_cast<ChainAction>(ctx.ddqn->act(s, rng));
      Transition t = env.step(a);
      buffer.push(t);
      const double loss = ctx.ddqn->update(t, rng);
      m.steps.push_back({global_step++, episode, env.coverage(), 0.0, loss, 0.0});
    }
    m.final_coverage = env.coverage();
    return m;
  }

  const std::size_t T = std::max<std::size_t>(1, cfg.steps_per_update);
  while (!env.done()) {
    RegressionBatch batch = buffer.batch();
    FitReport fit = ctx.belief->fit([&](Rng&) { return batch; }, cfg.refit_epochs, rng);
    m.fit_faults += fit.faults;
    ModelSet models = ctx.belief->draw(rng);
    TabularModel table = tabulate_chain_model(models, n, ctx.reward.kind, buffer.last_successors());
    if (ctx.reward.normalize && ctx.normalizer && ctx.normalizer->stddev() > 1e-12) {
      const double sd = ctx.normalizer->stddev();
      for (double& r : table.reward) r /= sd;
    }
    for (std::size_t k = 0; k < T && !env.done(); ++k) {
      const std::size_t s = env.current_state();
      const std::size_t remaining = env.episode_length() - env.steps_taken();
      MctsResult plan = mcts_plan(table, s, remaining, cfg.mcts, rng);
      if (plan.random_fallback) ++m.planner_fallbacks;
      Transition t = env.step(static_cast<ChainAction>(plan.action));
      buffer.push(t);
      double r = 0.0;
      auto x = chain_model_input(s, plan.action, n);
      if (ctx.reward.kind == RewardKind::prediction_error)
        r = reward_for_transition(models, x, t.next_state, ctx.reward);
      else if (models.size() >= 2)
        r = reward_for_transition(models, x, std::nullopt, ctx.reward);
      if (ctx.normalizer) (*ctx.normalizer)(r);
      m.steps.push_back({global_step++, episode, env.coverage(), r, fit.mean_loss, fit.bandwidth});
    }
  }
  m.final_coverage = env.coverage();
  return m;
}

// ---------------------------------------------------------------------------
// Maze

struct MazeLoopConfig {
  std::size_t steps_per_update = 25;
  std::size_t refit_iterations = 50;
  std::size_t minibatch = 256;
  ShootingConfig shooting;
};

/// Model inputs are positions rescaled to [-1, 1] plus the action; targets
/// are displacements in units of max_step.
class MazeEncoder {
 public:
  explicit MazeEncoder(const MazeConfig& cfg) : half_(0.5 * cfg.arm_length), step_(cfg.max_step) {}

  void encode_input(double x, double y, double ax, double ay, double* out) const {
    out[0] = x / half_ - 1.0;
    out[1] = y / half_ - 1.0;
    out[2] = ax;
    out[3] = ay;
  }
  double max_step() const { return step_; }

  RegressionBatch encode(const std::vector<const Transition*>& rows) const {
    RegressionBatch b;
    b.inputs.resize(static_cast<Eigen::Index>(rows.size()), 4);
    b.targets.resize(static_cast<Eigen::Index>(rows.size()), 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Transition& t = *rows[i];
      const auto r = static_cast<Eigen::Index>(i);
      encode_input(t.state[0], t.state[1], t.action[0], t.action[1], b.inputs.row(r).data());
      b.targets(r, 0) = (t.next_state[0] - t.state[0]) / step_;
      b.targets(r, 1) = (t.next_state[1] - t.state[1]) / step_;
    }
    return b;
  }

  /// Batched imagined step through the networks' mean displacement; the
  /// reward is the predictive variance of the next position.
  BatchDynamics dynamics(const ModelSet& models) const {
    return [this, &models](const Matrix& states, const Matrix& actions, Matrix& next) {
      const Eigen::Index c = states.rows();
      Matrix in(c, 4);
      for (Eigen::Index i = 0; i < c; ++i)
        encode_input(states(i, 0), states(i, 1), actions(i, 0), actions(i, 1), in.row(i).data());
      auto preds = models.predict_batch(in);
      Matrix mean = Matrix::Zero(c, 2), sq = Matrix::Zero(c, 2);
      for (const auto& p : preds) {
        mean += p;
        sq += p.array().square().matrix();
      }
      const double m = static_cast<double>(preds.size());
      mean /= m;
      sq /= m;
      Vector var = (sq - mean.array().square().matrix()).rowwise().sum().cwiseMax(0.0);
      next = states + step_ * mean;
      return Vector(step_ * step_ * var);
    };
  }

 private:
  double half_;
  double step_;
};

class MazeBuffer {
 public:
  void push(const Transition& t) { transitions_.push_back(t); }
  std::size_t size() const { return transitions_.size(); }
  const std::vector<Transition>& transitions() const { return transitions_; }

  /// Uniform minibatch with replacement; the whole buffer when it is smaller.
  template <class R>
  RegressionBatch sample(const MazeEncoder& enc, std::size_t n, R& rng) const {
    std::vector<const Transition*> rows;
    if (transitions_.size() <= n) {
      for (const auto& t : transitions_) rows.push_back(&t);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, transitions_.size() - 1);
      for (std::size_t k = 0; k < n; ++k) rows.push_back(&transitions_[pick(rng)]);
    }
    return enc.encode(rows);
  }

 private:
  std::vector<Transition> transitions_;
};

template <class R>
std::vector<double> random_maze_action(R& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double ax = u(rng);
  double ay = u(rng);
  return {ax, ay};
}

/// Runs until the episode ends or `step_budget` more real steps were taken.
/// While `random_steps_left` is positive the agent acts uniformly at random
/// (the initial buffer of random transitions) and the counter is decremented.
template <class R>
EpisodeMetrics run_maze_episode(MazeEnv& env, const PolicyContext& ctx, const MazeLoopConfig& cfg,
                                MazeBuffer& buffer, R& rng, std::size_t episode, std::size_t& global_step,
                                std::size_t step_budget, std::size_t& random_steps_left) {
  EpisodeMetrics m;
  env.reset();
  const MazeEncoder enc(env.config());
  const bool model_based = ctx.belief != nullptr && ctx.reward.kind != RewardKind::none &&
                           ctx.method != Method::random;
  std::size_t taken = 0;
  const std::size_t T = std::max<std::size_t>(1, cfg.steps_per_update);
  while (!env.done() && taken < step_budget) {
    if (!model_based || random_steps_left > 0) {
      buffer.push(env.step(random_maze_action(rng)));
      ++taken;
      if (random_steps_left > 0) --random_steps_left;
      m.steps.push_back({global_step++, episode, env.coverage(), 0.0, 0.0, 0.0});
      continue;
    }
    FitReport fit = ctx.belief->fit([&](Rng& g) { return buffer.sample(enc, cfg.minibatch, g); },
                                    cfg.refit_iterations, rng);
    m.fit_faults += fit.faults;
    ModelSet models = ctx.belief->draw(rng);
    BatchDynamics dyn = enc.dynamics(models);
    for (std::size_t k = 0; k < T && !env.done() && taken < step_budget; ++k) {
      auto pos = env.position();
      std::vector<double> start{pos[0], pos[1]};
      ShootingResult plan = shooting_plan(dyn, start, 2, cfg.shooting, rng);
      if (plan.degenerate) ++m.planner_fallbacks;
      Transition t = env.step(plan.first_action);
      buffer.push(t);
      ++taken;
      double r = 0.0;
      if (models.size() >= 2) {
        Matrix s(1, 2), a(1, 2), nx;
        s << t.state[0], t.state[1];
        a << t.action[0], t.action[1];
        r = dyn(s, a, nx)[0];
      }
      if (ctx.normalizer) (*ctx.normalizer)(r);
      m.steps.push_back({global_step++, episode, env.coverage(), r, fit.mean_loss, fit.bandwidth});
    }
  }
  m.final_coverage = env.coverage();
  return m;
}

// ---------------------------------------------------------------------------
// Kernel probes

/// Every (state, action) input of the chain.
inline Matrix chain_probe_inputs(std::size_t n_states) {
  const std::size_t A = ChainEnv::action_count;
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(n_states * A), static_cast<Eigen::Index>(n_states + A));
  for (std::size_t s = 0; s < n_states; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      p(static_cast<Eigen::Index>(s * A + a), static_cast<Eigen::Index>(s)) = 1.0;
      p(static_cast<Eigen::Index>(s * A + a), static_cast<Eigen::Index>(n_states + a)) = 1.0;
    }
  return p;
}

/// Points drawn uniformly from the encoded input box [-1, 1]^dim.
template <class R>
Matrix uniform_probe_inputs(std::size_t count, std::size_t dim, R& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix p(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index k = 0; k < p.cols(); ++k) p(i, k) = u(rng);
  return p;
}

// ---------------------------------------------------------------------------
// Entry points named after the loop they run.

template <class R>
EpisodeMetrics run_exploration_episode(ChainEnv& env, const PolicyContext& ctx, const ChainLoopConfig& cfg,
                                       ChainBuffer& buffer, R& rng, std::size_t episode,
                                       std::size_t& global_step) {
  return run_chain_episode(env, ctx, cfg, buffer, rng, episode, global_step);
}

template <class R>
EpisodeMetrics run_exploration_episode(MazeEnv& env, const PolicyContext& ctx, const MazeLoopConfig& cfg,
                                       MazeBuffer& buffer, R& rng, std::size_t episode,
                                       std::size_t& global_step, std::size_t step_budget,
                                       std::size_t& random_steps_left) {
  return run_maze_episode(env, ctx, cfg, buffer, rng, episode, global_step, step_budget, random_steps_left);
}

}  // namespace iex
