#pragma once

// Experiment orchestration: one seed of the chain or maze loop, and the
// multi-seed driver that writes a run directory.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iex/agents/exploration.hpp"
#include "iex/harness/aggregate.hpp"
#include "iex/harness/artifacts.hpp"
#include "iex/harness/config.hpp"

namespace iex {

/// splitmix64 of (seed, stream): independent generator streams from one seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  std::vector<double> episode_coverage;  // index k holds episode k + 1
  std::optional<std::size_t> episodes_to_full;
  double final_coverage = 0.0;
  double wall_seconds = 0.0;
  std::size_t fit_faults = 0;
  std::size_t planner_fallbacks = 0;

  /// First episode whose end-of-episode coverage reaches `level`.
  std::optional<std::size_t> episodes_to(double level) const {
    for (std::size_t k = 0; k < episode_coverage.size(); ++k)
      if (episode_coverage[k] >= level) return k + 1;
    return std::nullopt;
  }
  /// End-of-episode coverage; past the last recorded episode the final value
  /// holds (coverage never decreases).
  double coverage_at(std::size_t episode) const {
    if (episode_coverage.empty() || episode == 0) return 0.0;
    return episode_coverage[std::min(episode, episode_coverage.size()) - 1];
  }
};

using EpisodeCallback = std::function<void(const EpisodeMetrics&)>;

inline MlpSpec chain_model_spec(const RunConfig& c) {
  MlpSpec s;
  s.layer_widths.push_back(c.chain_states + ChainEnv::action_count);
  for (auto h : c.model_hidden) s.layer_widths.push_back(h);
  s.layer_widths.push_back(c.chain_states);
  s.nonlinearity = c.model_activation;
  return s;
}

inline MlpSpec maze_model_spec(const RunConfig& c) {
  MlpSpec s;
  s.layer_widths.push_back(4);
  for (auto h : c.model_hidden) s.layer_widths.push_back(h);
  s.layer_widths.push_back(2);
  s.nonlinearity = c.model_activation;
  return s;
}

/// The belief a method plans with; nullptr for model-free methods. Ensemble
/// baselines use svgd.particle_count members, the same m the generator samples.
inline std::unique_ptr<DynamicsBelief> make_belief(const RunConfig& c, const MlpSpec& spec, Rng& rng,
                                                   const Matrix& probes) {
  switch (c.method) {
    case Method::ours: {
      auto b = std::make_unique<GeneratorBelief>(GeneratorBundle::create(spec, c.generator, rng), c.svgd,
                                                 c.optimizer);
      if (c.probes.enabled && probes.rows() > 0) b->set_probes(probes, c.probes.weight);
      return b;
    }
    case Method::disagreement:
      return std::make_unique<EnsembleBelief>(spec, c.svgd.particle_count, c.optimizer, rng);
    case Method::icm: return std::make_unique<EnsembleBelief>(spec, 1, c.optimizer, rng);
    default: return nullptr;
  }
}

namespace detail {

inline nlohmann::json ddqn_checkpoint(const DdqnAgent& a) {
  return {{"spec", to_json(a.spec())},
          {"online", a.online_params()},
          {"target", a.target_params()},
          {"updates", a.update_count()},
          {"epsilon", a.epsilon()}};
}

inline void fold_episode(SeedResult& r, const EpisodeMetrics& m) {
  r.steps.insert(r.steps.end(), m.steps.begin(), m.steps.end());
  r.fit_faults += m.fit_faults;
  r.planner_fallbacks += m.planner_fallbacks;
}

}  // namespace detail

/// One seed of the chain experiment. Episode 1 is a uniformly random episode
/// for the model-based methods (the initial buffer of random transitions).
inline SeedResult run_chain_seed(const RunConfig& c, std::uint64_t seed, const EpisodeCallback& on_episode = {},
                                 nlohmann::json* checkpoint = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  SeedResult res;
  res.seed = seed;
  Rng rng(derive_seed(seed, 1));
  ChainEnv env(c.chain_states, derive_seed(seed, 0), c.flip_probability);
  const MlpSpec spec = chain_model_spec(c);
  auto belief = make_belief(c, spec, rng, chain_probe_inputs(c.chain_states));
  std::optional<DdqnAgent> ddqn;
  if (c.method == Method::ddqn) ddqn.emplace(c.chain_states, ChainEnv::action_count, c.ddqn, rng);
  RunningNormalizer normalizer;
  RewardSpec reward = c.reward;
  reward.kind = reward_kind_for(c.method);
  PolicyContext ctx{c.method, belief.get(), ddqn ? &*ddqn : nullptr, reward,
                    reward.normalize ? &normalizer : nullptr};

  ChainLoopConfig loop = c.chain_loop;
  loop.mcts = c.mcts;
  ChainBuffer buffer(c.chain_states);
  std::size_t global_step = 0;
  for (std::size_t e = 1; e <= c.episodes; ++e) {
    EpisodeMetrics m = (e == 1 && belief)
                           ? run_random_chain_episode(env, buffer, rng, e, global_step)
                           : run_exploration_episode(env, ctx, loop, buffer, rng, e, global_step);
    detail::fold_episode(res, m);
    res.episode_coverage.push_back(m.final_coverage);
    if (on_episode) on_episode(m);
    if (!res.episodes_to_full && m.final_coverage >= 1.0) res.episodes_to_full = e;
    if (c.stop_at_full_coverage && res.episodes_to_full) break;
  }
  res.final_coverage = env.coverage();
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (checkpoint) {
    nlohmann::json buf = nlohmann::json::array();
    for (const auto& t : buffer.transitions())
      buf.push_back({chain_state_index(t.state), chain_state_index(t.action), chain_state_index(t.next_state)});
    std::vector<int> mask(env.flip_mask().begin(), env.flip_mask().end());
    *checkpoint = {{"experiment", "chain"},
                   {"method", to_string(c.method)},
                   {"seed", seed},
                   {"episodes", res.episode_coverage.size()},
                   {"global_step", global_step},
                   {"flip_mask", mask},
                   {"buffer", buf}};
    if (belief) (*checkpoint)["belief"] = belief->checkpoint();
    if (ddqn) (*checkpoint)["ddqn"] = detail::ddqn_checkpoint(*ddqn);
  }
  return res;
}

/// One seed of the maze experiment: c.steps real steps in total, the first
/// c.warmup_steps of them random. Episodes end at the maze horizon.
inline SeedResult run_maze_seed(const RunConfig& c, std::uint64_t seed, const EpisodeCallback& on_episode = {},
                                nlohmann::json* checkpoint = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  SeedResult res;
  res.seed = seed;
  Rng rng(derive_seed(seed, 1));
  Rng probe_rng(derive_seed(seed, 2));
  MazeEnv env(c.maze);
  const MlpSpec spec = maze_model_spec(c);
  auto belief = make_belief(c, spec, rng, uniform_probe_inputs(c.probes.count, 4, probe_rng));
  RunningNormalizer normalizer;
  RewardSpec reward = c.reward;
  reward.kind = reward_kind_for(c.method);
  PolicyContext ctx{c.method, belief.get(), nullptr, reward, reward.normalize ? &normalizer : nullptr};

  MazeLoopConfig loop = c.maze_loop;
  loop.shooting = c.shooting;
  MazeBuffer buffer;
  std::size_t global_step = 0, taken = 0, random_left = c.warmup_steps;
  for (std::size_t e = 1; taken < c.steps; ++e) {
    EpisodeMetrics m =
        run_exploration_episode(env, ctx, loop, buffer, rng, e, global_step, c.steps - taken, random_left);
    taken += m.steps.size();
    detail::fold_episode(res, m);
    res.episode_coverage.push_back(m.final_coverage);
    if (on_episode) on_episode(m);
    if (!res.episodes_to_full && m.final_coverage >= 1.0) res.episodes_to_full = e;
  }
  res.final_coverage = env.coverage();
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (checkpoint) {
    nlohmann::json buf = nlohmann::json::array();
    for (const auto& t : buffer.transitions())
      buf.push_back({t.state[0], t.state[1], t.action[0], t.action[1], t.next_state[0], t.next_state[1]});
    *checkpoint = {{"experiment", "maze"},     {"method", to_string(c.method)}, {"seed", seed},
                   {"steps", taken},           {"global_step", global_step},   {"buffer", buf}};
    if (belief) (*checkpoint)["belief"] = belief->checkpoint();
  }
  return res;
}

inline SeedResult run_seed(const RunConfig& c, std::uint64_t seed, const EpisodeCallback& on_episode = {},
                           nlohmann::json* checkpoint = nullptr) {
  if (c.experiment == Experiment::chain) return run_chain_seed(c, seed, on_episode, checkpoint);
  if (c.experiment == Experiment::maze) return run_maze_seed(c, seed, on_episode, checkpoint);
  throw config_error("experiment: '" + std::string(to_string(c.experiment)) + "' has no exploration loop");
}

/// Runs every seed of `c` into `out_dir`:
///   config.snapshot        the input config bytes, unchanged
///   effective_config.json  every resolved field
///   seed_<k>/metrics.csv, run.json, checkpoint.json
///   summary.csv, coverage.svg, manifest.json
/// A fault inside a seed leaves an error marker in its metrics.csv, finishes
/// the manifest and is rethrown.
inline std::vector<SeedResult> run_experiment(const RunConfig& c, const std::string& config_text,
                                              const fs::path& out_dir,
                                              const std::function<void(const std::string&)>& log = {}) {
  fs::create_directories(out_dir);
  write_text(out_dir / "config.snapshot", config_text);
  write_text(out_dir / "effective_config.json", to_json(c).dump(2) + "\n");
  const std::string model_hash = sha256_hex(shared_model_config(c).dump());

  std::vector<SeedResult> results;
  for (std::uint64_t seed : c.seeds) {
    const fs::path dir = out_dir / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    const std::string context = "experiment=" + std::string(to_string(c.experiment)) +
                                " method=" + std::string(to_string(c.method)) + " seed=" + std::to_string(seed);
    MetricsWriter writer(dir / "metrics.csv", context);
    nlohmann::json ckpt;
    SeedResult r;
    try {
      r = run_seed(c, seed, [&](const EpisodeMetrics& m) { writer.write_episode(m); },
                   c.checkpoint ? &ckpt : nullptr);
    } catch (const std::exception& e) {
      writer.write_error(e.what());
      write_text(dir / "run.json", nlohmann::json({{"seed", seed},
                                                    {"experiment", to_string(c.experiment)},
                                                    {"method", to_string(c.method)},
                                                    {"error", e.what()},
                                                    {"model_config_sha256", model_hash}})
                                       .dump(2) + "\n");
      write_manifest(out_dir);
      throw;
    }
    nlohmann::json info = {{"seed", seed},
                           {"experiment", to_string(c.experiment)},
                           {"method", to_string(c.method)},
                           {"episodes", r.episode_coverage.size()},
                           {"steps", r.steps.size()},
                           {"final_coverage", r.final_coverage},
                           {"episodes_to_full_coverage", nullptr},
                           {"wall_seconds", r.wall_seconds},
                           {"fit_faults", r.fit_faults},
                           {"planner_fallbacks", r.planner_fallbacks},
                           {"model_config_sha256", model_hash}};
    if (r.episodes_to_full) info["episodes_to_full_coverage"] = *r.episodes_to_full;
    write_text(dir / "run.json", info.dump(2) + "\n");
    if (c.checkpoint) write_text(dir / "checkpoint.json", ckpt.dump() + "\n");
    if (log)
      log("seed " + std::to_string(seed) + ": final coverage " + format_real(r.final_coverage) + " after " +
          std::to_string(r.episode_coverage.size()) + " episodes");
    results.push_back(std::move(r));
  }

  AggregateResult agg = aggregate({load_run_dir(out_dir)});
  for (const auto& w : agg.warnings)
    if (log) log("warning: " + w);
  write_text(out_dir / "summary.csv", summary_csv(agg));
  write_text(out_dir / "coverage.svg", coverage_svg(agg));
  write_manifest(out_dir);
  return results;
}

}  // namespace iex
