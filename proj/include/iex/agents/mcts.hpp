#pragma once

// Monte Carlo tree search with UCB-1 selection over a learned, tabulated
// discrete model. Each iteration expands one node and scores it by the mean
// return of a batch of uniformly random rollouts simulated through the model.

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "iex/diffcore.hpp"
#include "iex/envs.hpp"
#include "iex/hypergen.hpp"
#include "iex/intrinsic.hpp"

namespace iex {

struct MctsConfig {
  std::size_t tree_iterations = 25;
  std::size_t rollouts_per_iteration = 10;
  double ucb_constant = std::numbers::sqrt2;
  double discount = 1.0;

  void validate() const {
    if (tree_iterations == 0 || rollouts_per_iteration == 0)
      throw rejected_input("mcts iteration and rollout counts must be positive");
    if (!(ucb_constant > 0.0)) throw rejected_input("ucb_constant must be positive");
    if (!(discount > 0.0 && discount <= 1.0)) throw rejected_input("discount must be in (0, 1]");
  }
};

/// Deterministic next-state and reward tables for every (state, action).
struct TabularModel {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<std::size_t> next;
  std::vector<double> reward;

  TabularModel() = default;
  TabularModel(std::size_t states, std::size_t actions)
      : n_states(states), n_actions(actions), next(states * actions, 0), reward(states * actions, 0.0) {}

  std::size_t next_state(std::size_t s, std::size_t a) const { return next[s * n_actions + a]; }
  double reward_of(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }
  void set(std::size_t s, std::size_t a, std::size_t s2, double r) {
    next[s * n_actions + a] = s2;
    reward[s * n_actions + a] = r;
  }
};

struct MctsNode {
  std::size_t state_index = 0;
  std::size_t depth = 0;
  std::size_t visit_count = 0;
  double total_value = 0.0;
  std::vector<long> children;  // node index per action, -1 when unexpanded

  double mean_value() const {
    return visit_count ? total_value / static_cast<double>(visit_count) : 0.0;
  }
};

struct MctsResult {
  std::size_t action = 0;
  bool random_fallback = false;
  std::vector<MctsNode> tree;  // tree[0] is the root
};

/// UCB-1 score; unvisited children score +infinity.
inline double ucb1(double value_sum, std::size_t visits, std::size_t parent_visits, double c) {
  if (visits == 0) return std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(visits);
  return value_sum / n + c * std::sqrt(std::log(static_cast<double>(parent_visits)) / n);
}

template <class R>
MctsResult mcts_plan(const TabularModel& model, std::size_t root_state, std::size_t horizon,
                     const MctsConfig& cfg, R& rng) {
  cfg.validate();
  if (root_state >= model.n_states) throw rejected_input("mcts root state out of range");
  const std::size_t A = model.n_actions;
  std::uniform_int_distribution<std::size_t> uniform_action(0, A - 1);

  MctsResult res;
  auto& tree = res.tree;
  tree.push_back(MctsNode{root_state, 0, 1, 0.0, std::vector<long>(A, -1)});

  for (std::size_t it = 0; it < cfg.tree_iterations && horizon > 0; ++it) {
    std::vector<std::size_t> path{0};
    double path_return = 0.0;
    double gamma_k = 1.0;
    std::size_t node = 0;
    // Selection: descend while the node is non-terminal and fully expanded.
    while (tree[node].depth < horizon) {
      long unexpanded = -1;
      for (std::size_t a = 0; a < A; ++a)
        if (tree[node].children[a] < 0) {
          unexpanded = static_cast<long>(a);
          break;
        }
      if (unexpanded >= 0) {
        const auto a = static_cast<std::size_t>(unexpanded);
        const std::size_t s = tree[node].state_index;
        path_return += gamma_k * model.reward_of(s, a);
        gamma_k *= cfg.discount;
        MctsNode child{model.next_state(s, a), tree[node].depth + 1, 0, 0.0, std::vector<long>(A, -1)};
        tree.push_back(std::move(child));
        tree[node].children[a] = static_cast<long>(tree.size() - 1);
        node = tree.size() - 1;
        path.push_back(node);
        break;
      }
      std::size_t best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < A; ++a) {
        const auto& ch = tree[static_cast<std::size_t>(tree[node].children[a])];
        const double sc = ucb1(ch.total_value, ch.visit_count, tree[node].visit_count, cfg.ucb_constant);
        if (sc > best_score) {
          best_score = sc;
          best = a;
        }
      }
      path_return += gamma_k * model.reward_of(tree[node].state_index, best);
      gamma_k *= cfg.discount;
      node = static_cast<std::size_t>(tree[node].children[best]);
      path.push_back(node);
    }

    // Simulation from the reached node.
    double rollout_mean = 0.0;
    const std::size_t remaining = horizon - tree[node].depth;
    if (remaining > 0) {
      for (std::size_t r = 0; r < cfg.rollouts_per_iteration; ++r) {
        std::size_t s = tree[node].state_index;
        double ret = 0.0, g = gamma_k;
        for (std::size_t k = 0; k < remaining; ++k) {
          const std::size_t a = uniform_action(rng);
          ret += g * model.reward_of(s, a);
          g *= cfg.discount;
          s = model.next_state(s, a);
        }
        rollout_mean += ret;
      }
      rollout_mean /= static_cast<double>(cfg.rollouts_per_iteration);
    }

    const double value = path_return + rollout_mean;
    for (std::size_t n : path) {
      if (n == 0) continue;
      tree[n].visit_count += 1;
      tree[n].total_value += value;
    }
    tree[0].visit_count += 1;
    tree[0].total_value += value;
  }

  // Root child with the highest mean value; ties go to the lowest action.
  double best_value = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t a = 0; a < A; ++a) {
    const long c = tree[0].children[a];
    if (c < 0 || tree[static_cast<std::size_t>(c)].visit_count == 0) continue;
    const double v = tree[static_cast<std::size_t>(c)].mean_value();
    if (!any || v > best_value) {
      best_value = v;
      res.action = a;
      any = true;
    }
  }
  if (!any) {
    res.action = uniform_action(rng);
    res.random_fallback = true;
  }
  return res;
}

/// Visit-consistency check: every non-terminal node's visit count equals one
/// (its own expansion) plus the sum over its children.
inline bool mcts_counts_consistent(const std::vector<MctsNode>& tree, std::size_t horizon) {
  for (const auto& n : tree) {
    if (!std::isfinite(n.total_value)) return false;
    if (n.depth >= horizon) continue;
    std::size_t sum = 0;
    bool has_child = false;
    for (long c : n.children)
      if (c >= 0) {
        sum += tree[static_cast<std::size_t>(c)].visit_count;
        has_child = true;
      }
    if (has_child && n.visit_count != sum + 1) return false;
    if (!has_child && n.visit_count != 1 && n.depth != 0) return false;
  }
  return true;
}

/// Builds next-state / reward tables for the chain from a set of networks.
/// Transitions follow the argmax of the mean prediction. Rewards:
///   variance kinds    predictive variance across the networks
///   prediction_error  squared error against the last observed successor of
///                     (s, a); zero for pairs never observed
///   none              zero
inline TabularModel tabulate_chain_model(const ModelSet& models, std::size_t n_states,
                                         RewardKind kind,
                                         const std::vector<long>& observed_next = {}) {
  const std::size_t A = ChainEnv::action_count;
  TabularModel t(n_states, A);
  Matrix inputs = Matrix::Zero(static_cast<Eigen::Index>(n_states * A),
                               static_cast<Eigen::Index>(n_states + A));
  for (std::size_t s = 0; s < n_states; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      inputs(static_cast<Eigen::Index>(s * A + a), static_cast<Eigen::Index>(s)) = 1.0;
      inputs(static_cast<Eigen::Index>(s * A + a), static_cast<Eigen::Index>(n_states + a)) = 1.0;
    }
  auto preds = models.predict_batch(inputs);
  const auto m = static_cast<Eigen::Index>(preds.size());
  for (std::size_t row = 0; row < n_states * A; ++row) {
    const auto r = static_cast<Eigen::Index>(row);
    Matrix p(m, static_cast<Eigen::Index>(n_states));
    for (Eigen::Index i = 0; i < m; ++i) p.row(i) = preds[static_cast<std::size_t>(i)].row(r);
    Eigen::RowVectorXd mean = p.colwise().mean();
    Eigen::Index arg = 0;
    mean.maxCoeff(&arg);
    double reward = 0.0;
    switch (kind) {
      case RewardKind::posterior_variance:
      case RewardKind::ensemble_disagreement:
        reward = m >= 2 ? variance_reward(p) : 0.0;
        break;
      case RewardKind::prediction_error:
        if (!observed_next.empty() && observed_next[row] >= 0) {
          auto target = one_hot(static_cast<std::size_t>(observed_next[row]), n_states);
          reward = prediction_error_reward(std::span<const double>(mean.data(), mean.size()), target);
        }
        break;
      case RewardKind::none: break;
    }
    t.set(row / A, row % A, static_cast<std::size_t>(arg), reward);
  }
  return t;
}

}  // namespace iex
