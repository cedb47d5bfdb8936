#pragma once

// Cross-entropy random shooting over imagined trajectories. Candidates are
// scored by the intrinsic reward accumulated while rolling them through a
// batched dynamics callback.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "iex/diffcore.hpp"
#include "iex/intrinsic.hpp"

namespace iex {

struct ShootingConfig {
  std::size_t candidate_count = 32;
  std::size_t plan_horizon = 10;
  double elite_fraction = 0.125;
  std::size_t iterations = 2;
  double initial_std = 1.0;
  double min_std = 0.05;

  std::size_t elite_count() const {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(elite_fraction * static_cast<double>(candidate_count))));
  }

  void validate() const {
    if (candidate_count == 0 || plan_horizon == 0 || iterations == 0)
      throw rejected_input("shooting counts must be positive");
    if (!(elite_fraction > 0.0 && elite_fraction <= 1.0))
      throw rejected_input("elite_fraction must be in (0, 1]");
  }
};

/// Advances a batch of states (rows) under a batch of actions and returns the
/// per-row intrinsic reward of that step.
using BatchDynamics = std::function<Vector(const Matrix& states, const Matrix& actions, Matrix& next_states)>;

struct ShootingResult {
  std::vector<double> first_action;
  Matrix best_sequence;  // horizon x action_dim
  double best_score = 0.0;
  Matrix final_mean;     // sampling mean after the last refit
  bool degenerate = false;
};

/// Scores each sequence (rows of `sequences`, one horizon x action_dim block
/// flattened per row) by summed imagined reward.
inline Vector score_sequences(const BatchDynamics& dyn, std::span<const double> start,
                              const std::vector<Matrix>& sequences) {
  const auto c = static_cast<Eigen::Index>(sequences.size());
  if (c == 0) return Vector();
  Matrix states(c, static_cast<Eigen::Index>(start.size()));
  for (Eigen::Index i = 0; i < c; ++i)
    for (Eigen::Index k = 0; k < states.cols(); ++k) states(i, k) = start[static_cast<std::size_t>(k)];
  const Eigen::Index horizon = sequences[0].rows();
  const Eigen::Index adim = sequences[0].cols();
  Vector score = Vector::Zero(c);
  Matrix actions(c, adim), next;
  for (Eigen::Index t = 0; t < horizon; ++t) {
    for (Eigen::Index i = 0; i < c; ++i) actions.row(i) = sequences[static_cast<std::size_t>(i)].row(t);
    score += dyn(states, actions, next);
    states = next;
  }
  return score;
}

template <class R>
ShootingResult shooting_plan(const BatchDynamics& dyn, std::span<const double> start, std::size_t action_dim,
                             const ShootingConfig& cfg, R& rng) {
  cfg.validate();
  const auto H = static_cast<Eigen::Index>(cfg.plan_horizon);
  const auto A = static_cast<Eigen::Index>(action_dim);
  Matrix mean = Matrix::Zero(H, A);
  Matrix stdev = Matrix::Constant(H, A, cfg.initial_std);
  std::normal_distribution<double> n01(0.0, 1.0);

  ShootingResult res;
  bool have_best = false;
  double last_spread = 0.0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<Matrix> cands(cfg.candidate_count, Matrix(H, A));
    for (auto& c : cands)
      for (Eigen::Index t = 0; t < H; ++t)
        for (Eigen::Index k = 0; k < A; ++k)
          c(t, k) = std::clamp(mean(t, k) + stdev(t, k) * n01(rng), -1.0, 1.0);
    Vector score = score_sequences(dyn, start, cands);

    std::vector<std::size_t> order(cands.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score[static_cast<Eigen::Index>(a)] > score[static_cast<Eigen::Index>(b)]; });
    const double top = score[static_cast<Eigen::Index>(order.front())];
    last_spread = top - score[static_cast<Eigen::Index>(order.back())];
    if (!have_best || top > res.best_score) {
      res.best_score = top;
      res.best_sequence = cands[order.front()];
      have_best = true;
    }

    const std::size_t ne = std::min(cfg.elite_count(), cands.size());
    Matrix m = Matrix::Zero(H, A), v = Matrix::Zero(H, A);
    for (std::size_t e = 0; e < ne; ++e) m += cands[order[e]];
    m /= static_cast<double>(ne);
    for (std::size_t e = 0; e < ne; ++e) v += (cands[order[e]] - m).array().square().matrix();
    v /= static_cast<double>(ne);
    mean = m;
    stdev = v.array().sqrt().max(cfg.min_std).matrix();
  }
  res.final_mean = mean;
  res.degenerate = cfg.candidate_count > 1 && last_spread == 0.0;
  res.first_action.assign(res.best_sequence.row(0).data(), res.best_sequence.row(0).data() + A);
  return res;
}

}  // namespace iex
