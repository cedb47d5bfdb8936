#pragma once

// Epsilon-greedy double DQN baseline for discrete-action environments.

#include <algorithm>
#include <deque>
#include <random>
#include <vector>

#include "iex/diffcore.hpp"
#include "iex/envs.hpp"

namespace iex {

struct DdqnConfig {
  std::vector<std::size_t> hidden = {64};
  Activation activation = Activation::relu;
  double learning_rate = 1e-3;
  double gamma = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t epsilon_decay_steps = 2000;
  std::size_t batch_size = 32;
  std::size_t target_sync_interval = 100;
  std::size_t buffer_capacity = 10000;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw rejected_input("ddqn gamma must be in [0, 1]");
    if (!(epsilon_end >= 0.0 && epsilon_end <= epsilon_start && epsilon_start <= 1.0))
      throw rejected_input("ddqn epsilon schedule must satisfy 0 <= end <= start <= 1");
    if (batch_size == 0 || target_sync_interval == 0 || buffer_capacity == 0)
      throw rejected_input("ddqn sizes must be positive");
  }
};

class DdqnAgent {
 public:
  template <class R>
  DdqnAgent(std::size_t state_dim, std::size_t action_count, DdqnConfig cfg, R& rng)
      : cfg_(std::move(cfg)), actions_(action_count) {
    cfg_.validate();
    spec_.layer_widths.push_back(state_dim);
    for (auto h : cfg_.hidden) spec_.layer_widths.push_back(h);
    spec_.layer_widths.push_back(action_count);
    spec_.nonlinearity = cfg_.activation;
    online_ = init_params(spec_, rng);
    target_ = online_;
    AdamConfig ac;
    ac.learning_rate = cfg_.learning_rate;
    opt_ = AdamState(ac, online_.size());
  }

  const MlpSpec& spec() const { return spec_; }
  std::vector<double>& online_params() { return online_; }
  const std::vector<double>& online_params() const { return online_; }
  const std::vector<double>& target_params() const { return target_; }
  std::size_t update_count() const { return updates_; }
  std::size_t replay_size() const { return replay_.size(); }
  const DdqnConfig& config() const { return cfg_; }

  /// Linear decay from epsilon_start to epsilon_end over epsilon_decay_steps actions.
  double epsilon() const {
    if (acted_ >= cfg_.epsilon_decay_steps) return cfg_.epsilon_end;
    const double frac = static_cast<double>(acted_) / static_cast<double>(cfg_.epsilon_decay_steps);
    return cfg_.epsilon_start + frac * (cfg_.epsilon_end - cfg_.epsilon_start);
  }
  void set_epsilon_override(double eps) { eps_override_ = eps; }

  std::vector<double> q_values(std::span<const double> state) const { return forward(spec_, online_, state); }

  template <class R>
  std::size_t act(std::span<const double> state, R& rng) {
    const double eps = eps_override_ >= 0.0 ? eps_override_ : epsilon();
    ++acted_;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, actions_ - 1);
    if (u(rng) < eps) return pick(rng);
    auto q = q_values(state);
    return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
  }

  /// TD target r + gamma * Q_target(s', argmax_a Q_online(s', a)). Episodes
  /// end by time limit only, so the target always bootstraps.
  double td_target(const Transition& t) const {
    auto q_next_online = forward(spec_, online_, t.next_state);
    auto q_next_target = forward(spec_, target_, t.next_state);
    const auto a_star = static_cast<std::size_t>(
        std::max_element(q_next_online.begin(), q_next_online.end()) - q_next_online.begin());
    return t.external_reward + cfg_.gamma * q_next_target[a_star];
  }

  /// Stores the transition and performs one minibatch update once the replay
  /// holds a full batch. Returns the minibatch TD loss (0 before training).
  template <class R>
  double update(const Transition& t, R& rng) {
    replay_.push_back(t);
    if (replay_.size() > cfg_.buffer_capacity) replay_.pop_front();
    if (replay_.size() < cfg_.batch_size) return 0.0;

    std::uniform_int_distribution<std::size_t> pick(0, replay_.size() - 1);
    std::vector<double> grad(online_.size(), 0.0);
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
      const Transition& tr = replay_[pick(rng)];
      const double y = td_target(tr);
      auto q = forward(spec_, online_, tr.state);
      const std::size_t a = chain_state_index(tr.action);
      std::vector<double> og(actions_, 0.0);
      const double err = q[a] - y;
      og[a] = err / static_cast<double>(cfg_.batch_size);
      loss += 0.5 * err * err / static_cast<double>(cfg_.batch_size);
      auto g = backward(spec_, online_, tr.state, og);
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += g.params[k];
    }
    adam_step(opt_, online_, grad);
    ++updates_;
    if (updates_ % cfg_.target_sync_interval == 0) target_ = online_;
    return loss;
  }

 private:
  DdqnConfig cfg_;
  std::size_t actions_;
  MlpSpec spec_;
  std::vector<double> online_;
  std::vector<double> target_;
  AdamState opt_;
  std::deque<Transition> replay_;
  std::size_t acted_ = 0;
  std::size_t updates_ = 0;
  double eps_override_ = -1.0;
};

}  // namespace iex
