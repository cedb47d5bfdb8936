#pragma once

// Desk-scale exploration environments: a stochastic NChain with fixed
// flip-states and a continuous 2-D U-shaped corridor.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "iex/diffcore.hpp"

namespace iex {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  std::vector<double> next_state;
  double external_reward = 0.0;
  bool done = false;

  bool operator==(const Transition&) const = default;
};

/// CSV rows: step, state..., action..., reward, done.
inline void write_trajectory_csv(std::ostream& os, std::span<const Transition> traj) {
  if (traj.empty()) return;
  os << "step";
  for (std::size_t k = 0; k < traj[0].state.size(); ++k) os << ",s" << k;
  for (std::size_t k = 0; k < traj[0].action.size(); ++k) os << ",a" << k;
  os << ",reward,done\n";
  char buf[64];
  for (std::size_t t = 0; t < traj.size(); ++t) {
    os << t;
    for (double v : traj[t].state) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      os << buf;
    }
    for (double v : traj[t].action) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g", traj[t].external_reward);
    os << buf << ',' << (traj[t].done ? 1 : 0) << '\n';
  }
}

inline std::vector<double> one_hot(std::size_t index, std::size_t n) {
  std::vector<double> v(n, 0.0);
  v.at(index) = 1.0;
  return v;
}

enum class ChainAction : int { forward = 0, backward = 1 };

class ChainEnv {
 public:
  static constexpr double reward_small = 0.01;
  static constexpr double reward_large = 1.0;
  static constexpr std::size_t action_count = 2;

  explicit ChainEnv(std::size_t n_states = 40, std::uint64_t seed = 0, double flip_probability = 0.5)
      : n_(n_states), flip_(n_states, false), seed_(seed) {
    if (n_states < 2) throw rejected_input("chain needs at least 2 states");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution flip(flip_probability);
    for (std::size_t s = 0; s < n_; ++s) flip_[s] = flip(rng);
    reset();
  }

  /// Builds a chain with an explicit flip mask.
  ChainEnv(std::vector<bool> flip_mask, std::uint64_t seed = 0)
      : n_(flip_mask.size()), flip_(std::move(flip_mask)), seed_(seed) {
    if (n_ < 2) throw rejected_input("chain needs at least 2 states");
    reset();
  }

  std::size_t n_states() const { return n_; }
  std::size_t episode_length() const { return n_ + 9; }
  std::size_t current_state() const { return current_; }
  std::size_t steps_taken() const { return steps_; }
  bool done() const { return steps_ >= episode_length(); }
  const std::vector<bool>& flip_mask() const { return flip_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t state_dim() const { return n_; }
  std::size_t action_dim() const { return action_count; }

  std::vector<double> reset() {
    current_ = 1;
    steps_ = 0;
    visited_.insert(current_);
    return one_hot(current_, n_);
  }

  /// Deterministic successor for (state, action); the only non-zero entry of
  /// the transition kernel P(. | s, a).
  std::size_t successor(std::size_t s, ChainAction a) const {
    bool forward = (a == ChainAction::forward) != flip_.at(s);
    if (forward) return std::min(s + 1, n_ - 1);
    return s == 0 ? 0 : s - 1;
  }

  double reward_at(std::size_t s) const {
    if (s == 0) return reward_small;
    if (s == n_ - 1) return reward_large;
    return 0.0;
  }

  Transition step(ChainAction a) {
    if (done()) throw rejected_input("chain episode is done; reset before stepping");
    Transition t;
    t.state = one_hot(current_, n_);
    t.action = one_hot(static_cast<std::size_t>(a), action_count);
    current_ = successor(current_, a);
    ++steps_;
    visited_.insert(current_);
    t.next_state = one_hot(current_, n_);
    t.external_reward = reward_at(current_);
    t.done = done();
    return t;
  }

  /// Distinct states visited during this run divided by N.
  double coverage() const { return static_cast<double>(visited_.size()) / static_cast<double>(n_); }
  const std::set<std::size_t>& visited() const { return visited_; }

  bool operator==(const ChainEnv&) const = default;

 private:
  std::size_t n_;
  std::vector<bool> flip_;
  std::uint64_t seed_;
  std::size_t current_ = 1;
  std::size_t steps_ = 0;
  std::set<std::size_t> visited_;
};

inline std::size_t chain_state_index(std::span<const double> one_hot_state) {
  return static_cast<std::size_t>(
      std::max_element(one_hot_state.begin(), one_hot_state.end()) - one_hot_state.begin());
}

struct Rect {
  double x0, y0, x1, y1;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  bool operator==(const Rect&) const = default;
};

struct MazeConfig {
  double corridor_width = 2.0;
  double arm_length = 10.0;
  double max_step = 0.25;
  std::size_t horizon = 200;
  double bin_size = 0.5;
};

/// U-shaped corridor: two vertical arms joined along the bottom. Free space
/// is the closed union of three axis-aligned rectangles.
class MazeEnv {
 public:
  explicit MazeEnv(MazeConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg.corridor_width > 0 && cfg.arm_length > 2 * cfg.corridor_width && cfg.max_step > 0 &&
          cfg.bin_size > 0 && cfg.horizon > 0))
      throw rejected_input("invalid maze configuration");
    const double w = cfg.corridor_width, l = cfg.arm_length;
    free_ = {Rect{0, 0, w, l}, Rect{0, 0, l, w}, Rect{l - w, 0, l, l}};
    bins_per_side_ = static_cast<std::size_t>(std::llround(l / cfg.bin_size));
    for (std::size_t i = 0; i < bins_per_side_; ++i)
      for (std::size_t j = 0; j < bins_per_side_; ++j) {
        const double cx = (static_cast<double>(i) + 0.5) * cfg.bin_size;
        const double cy = (static_cast<double>(j) + 0.5) * cfg.bin_size;
        if (is_free(cx, cy)) ++free_bins_;
      }
    start_ = {0.5 * w, l - 0.5 * w};
    reset();
  }

  const MazeConfig& config() const { return cfg_; }
  const std::vector<Rect>& free_space() const { return free_; }
  std::array<double, 2> position() const { return pos_; }
  std::size_t steps_taken() const { return steps_; }
  bool done() const { return steps_ >= cfg_.horizon; }
  bool last_action_clamped() const { return clamped_; }
  std::size_t state_dim() const { return 2; }
  std::size_t action_dim() const { return 2; }
  std::size_t free_bin_count() const { return free_bins_; }

  /// Wall segments bounding the free space (outer boundary and the inner block).
  std::vector<std::array<double, 4>> walls() const {
    const double w = cfg_.corridor_width, l = cfg_.arm_length;
    return {{0, 0, l, 0}, {l, 0, l, l}, {l - w, l, l, l}, {l - w, w, l - w, l},
            {w, w, l - w, w}, {w, w, w, l}, {0, l, w, l}, {0, 0, 0, l}};
  }

  bool is_free(double x, double y) const {
    for (const auto& r : free_)
      if (r.contains(x, y)) return true;
    return false;
  }

  std::vector<double> reset() {
    pos_ = start_;
    steps_ = 0;
    clamped_ = false;
    visit();
    return {pos_[0], pos_[1]};
  }

  void set_position(double x, double y) {
    if (!is_free(x, y)) throw rejected_input("position is not inside the corridor");
    pos_ = {x, y};
    visit();
  }

  /// Moves by max_step * action, x first then y, stopping at walls.
  Transition step(std::span<const double> action) {
    if (action.size() != 2) throw rejected_input("maze action must be 2-D");
    if (done()) throw rejected_input("maze episode is done; reset before stepping");
    std::array<double, 2> a{action[0], action[1]};
    clamped_ = false;
    for (double& v : a) {
      if (!std::isfinite(v)) throw rejected_input("maze action must be finite");
      if (v > 1.0 || v < -1.0) clamped_ = true;
      v = std::clamp(v, -1.0, 1.0);
    }
    Transition t;
    t.state = {pos_[0], pos_[1]};
    t.action = {a[0], a[1]};
    auto [lo_x, hi_x] = reachable(pos_[0], pos_[1], true);
    pos_[0] = std::clamp(pos_[0] + cfg_.max_step * a[0], lo_x, hi_x);
    auto [lo_y, hi_y] = reachable(pos_[1], pos_[0], false);
    pos_[1] = std::clamp(pos_[1] + cfg_.max_step * a[1], lo_y, hi_y);
    ++steps_;
    visit();
    t.next_state = {pos_[0], pos_[1]};
    t.external_reward = 0.0;
    t.done = done();
    return t;
  }

  /// Coverage bin holding (x, y). Points on a cell edge go to the adjacent
  /// cell that lies inside the corridor.
  std::size_t bin_of(double x, double y) const {
    auto candidates = [&](double v) {
      const auto last = static_cast<long long>(bins_per_side_) - 1;
      auto i = std::clamp<long long>(static_cast<long long>(std::floor(v / cfg_.bin_size)), 0, last);
      std::array<long long, 2> c{i, i};
      if (i > 0 && v == static_cast<double>(i) * cfg_.bin_size) c[1] = i - 1;
      if (v >= static_cast<double>(bins_per_side_) * cfg_.bin_size) c[1] = last;
      return c;
    };
    for (long long i : candidates(x))
      for (long long j : candidates(y)) {
        const double cx = (static_cast<double>(i) + 0.5) * cfg_.bin_size;
        const double cy = (static_cast<double>(j) + 0.5) * cfg_.bin_size;
        if (is_free(cx, cy)) return static_cast<std::size_t>(i) * bins_per_side_ + static_cast<std::size_t>(j);
      }
    auto c = candidates(x)[0], r = candidates(y)[0];
    return static_cast<std::size_t>(c) * bins_per_side_ + static_cast<std::size_t>(r);
  }

  bool bin_is_free(std::size_t bin) const {
    const double cx = (static_cast<double>(bin / bins_per_side_) + 0.5) * cfg_.bin_size;
    const double cy = (static_cast<double>(bin % bins_per_side_) + 0.5) * cfg_.bin_size;
    return is_free(cx, cy);
  }

  double coverage() const {
    return static_cast<double>(visited_.size()) / static_cast<double>(free_bins_);
  }
  const std::set<std::size_t>& visited_bins() const { return visited_; }

  bool operator==(const MazeEnv&) const = default;

 private:
  // Interval of the free line through the current point along one axis.
  std::pair<double, double> reachable(double along, double fixed, bool x_axis) const {
    std::vector<std::pair<double, double>> spans;
    for (const auto& r : free_) {
      const double f0 = x_axis ? r.y0 : r.x0, f1 = x_axis ? r.y1 : r.x1;
      if (fixed < f0 || fixed > f1) continue;
      spans.emplace_back(x_axis ? r.x0 : r.y0, x_axis ? r.x1 : r.y1);
    }
    std::sort(spans.begin(), spans.end());
    double lo = along, hi = along;
    bool found = false;
    for (std::size_t k = 0; k < spans.size();) {
      double a = spans[k].first, b = spans[k].second;
      std::size_t q = k + 1;
      while (q < spans.size() && spans[q].first <= b) b = std::max(b, spans[q++].second);
      if (along >= a && along <= b) {
        lo = a;
        hi = b;
        found = true;
      }
      k = q;
    }
    if (!found) return {along, along};
    return {lo, hi};
  }

  void visit() { visited_.insert(bin_of(pos_[0], pos_[1])); }

  MazeConfig cfg_;
  std::vector<Rect> free_;
  std::size_t bins_per_side_ = 0;
  std::size_t free_bins_ = 0;
  std::array<double, 2> start_{};
  std::array<double, 2> pos_{};
  std::size_t steps_ = 0;
  bool clamped_ = false;
  std::set<std::size_t> visited_;
};

}  // namespace iex
