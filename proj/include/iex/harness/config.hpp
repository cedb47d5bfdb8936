#pragma once

// Run configuration. Files are JSON objects; every key is optional, unknown
// keys are rejected, and errors name the offending field by its dotted path.

#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iex/agents/exploration.hpp"

namespace iex {

struct config_error : rejected_input {
  using rejected_input::rejected_input;
};

enum class Experiment { chain, maze, svgd_sanity, gradcheck, uncertainty_decay };

inline std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::chain: return "chain";
    case Experiment::maze: return "maze";
    case Experiment::svgd_sanity: return "svgd_sanity";
    case Experiment::gradcheck: return "gradcheck";
    case Experiment::uncertainty_decay: return "uncertainty_decay";
  }
  return "chain";
}

inline Experiment experiment_from_string(std::string_view s) {
  if (s == "chain") return Experiment::chain;
  if (s == "maze") return Experiment::maze;
  if (s == "svgd_sanity" || s == "svgd-sanity") return Experiment::svgd_sanity;
  if (s == "gradcheck") return Experiment::gradcheck;
  if (s == "uncertainty_decay" || s == "uncertainty-decay") return Experiment::uncertainty_decay;
  throw rejected_input("unknown experiment '" + std::string(s) + "'");
}

struct ProbeConfig {
  bool enabled = true;
  std::size_t count = 64;  // continuous inputs only; the chain probes every (s, a)
  double weight = 1.0;
};

struct SanityConfig {
  std::size_t particle_count = 64;
  double step_size = 0.2;
  std::size_t iterations = 2000;
  std::size_t regression_particles = 32;
};

struct GradcheckConfig {
  std::size_t instances = 20;
  double tolerance = 1e-4;
};

/// Fixed 1-D regression buffer used to watch the variance reward shrink.
struct DecayConfig {
  std::size_t buffer_size = 40;
  std::size_t steps = 500;
  std::size_t particle_count = 32;
  std::size_t eval_samples = 64;
  std::vector<std::size_t> model_hidden = {32, 32};
  Activation model_activation = Activation::tanh;
  GeneratorOptions generator;
  AdamConfig optimizer = {.learning_rate = 1e-2};
  double target_noise = 0.1;
  // Row weight 1 / (2 sigma^2) turns the squared-error loss into the Gaussian
  // log-likelihood of the known target noise.
  bool noise_weighted = true;
  double decay_ratio = 0.2;    // trained / initial in-buffer reward must not exceed this
  double outside_ratio = 2.0;  // outside / in-buffer reward must reach this
  double outside_sigmas = 4.0;
  // Kernel probes spread over [-probe_extent, probe_extent]; zero disables.
  std::size_t probe_count = 128;
  double probe_extent = 4.0;
  double probe_weight = 1.0;  // relative to one data row
};

struct RunConfig {
  Experiment experiment = Experiment::chain;
  Method method = Method::ours;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string output_dir = "runs";
  bool checkpoint = true;

  std::size_t episodes = 100;            // chain budget
  bool stop_at_full_coverage = false;    // chain: stop once every state was visited
  std::size_t steps = 10000;             // maze budget, warmup included
  std::size_t warmup_steps = 500;        // maze random steps before planning

  std::size_t chain_states = 40;
  double flip_probability = 0.5;
  MazeConfig maze;

  std::vector<std::size_t> model_hidden = {64, 64};
  Activation model_activation = Activation::tanh;
  GeneratorOptions generator;
  SvgdConfig svgd;
  ProbeConfig probes;
  AdamConfig optimizer;
  RewardSpec reward;
  MctsConfig mcts;
  ShootingConfig shooting;
  DdqnConfig ddqn;
  ChainLoopConfig chain_loop;
  MazeLoopConfig maze_loop;
  SanityConfig sanity;
  GradcheckConfig gradcheck;
  DecayConfig decay;
};

/// Defaults for one experiment. The chain follows the toy-chain settings;
/// the maze uses the continuous-control ones (m=32, weight decay 1e-5,
/// minibatch 256) at a smaller network size.
inline RunConfig default_config(Experiment e) {
  RunConfig c;
  c.experiment = e;
  c.optimizer.learning_rate = 1e-3;
  if (e == Experiment::maze) {
    c.model_hidden = {32, 32};
    c.model_activation = Activation::relu;
    c.optimizer.weight_decay = 1e-5;
    c.svgd.particle_count = 32;
    c.reward.sample_count = 32;
  } else {
    c.optimizer.weight_decay = 1e-6;
    c.svgd.particle_count = 5;
    c.reward.sample_count = 5;
  }
  c.svgd.step_size = c.optimizer.learning_rate;
  return c;
}

namespace detail {

/// Walks one JSON object, remembering which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw config_error(where() + "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw config_error(field(key) + ": wrong type");
    }
  }

  void get_positive(const std::string& key, std::size_t& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() <= 0)
      throw config_error(field(key) + ": expected a positive integer");
    out = v.get<std::size_t>();
  }

  void get_count(const std::string& key, std::size_t& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw config_error(field(key) + ": expected a non-negative integer");
    out = v.get<std::size_t>();
  }

  void get_widths(const std::string& key, std::vector<std::size_t>& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& v = j_.at(key);
    if (!v.is_array()) throw config_error(field(key) + ": expected an array of positive integers");
    std::vector<std::size_t> w;
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() <= 0)
        throw config_error(field(key) + ": expected an array of positive integers");
      w.push_back(e.get<std::size_t>());
    }
    out = std::move(w);
  }

  template <class Parse, class T>
  void get_enum(const std::string& key, T& out, Parse parse) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& v = j_.at(key);
    if (!v.is_string()) throw config_error(field(key) + ": expected a string");
    try {
      out = parse(v.get<std::string>());
    } catch (const rejected_input& e) {
      throw config_error(field(key) + ": " + e.what());
    }
  }

  /// Reads a nested object with `body`; false when the key is absent.
  bool child(const std::string& key, const std::function<void(ObjectReader&)>& body) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    ObjectReader sub(j_.at(key), field(key));
    body(sub);
    sub.finish();
    return true;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw config_error(field(it.key()) + ": unknown key");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void check_field(const std::string& field, F&& validate) {
  try {
    validate();
  } catch (const config_error&) {
    throw;
  } catch (const rejected_input& e) {
    throw config_error(field + ": " + e.what());
  }
}

}  // namespace detail

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw config_error("seed: empty entry in '" + text + "'");
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      throw config_error("seed: '" + item + "' is not a non-negative integer");
    }
    if (used != item.size() || item[0] == '-')
      throw config_error("seed: '" + item + "' is not a non-negative integer");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw config_error("seed: no seeds given");
  return seeds;
}

/// Checks cross-field constraints and the per-module validators.
inline void validate(const RunConfig& c) {
  using detail::check_field;
  if (c.seeds.empty()) throw config_error("seeds: at least one seed is required");
  check_field("model", [&] {
    MlpSpec s{{4}, c.model_activation};
    for (auto h : c.model_hidden) s.layer_widths.push_back(h);
    s.layer_widths.push_back(2);
    s.validate();
  });
  check_field("svgd", [&] { c.svgd.validate(); });
  check_field("optimizer", [&] { c.optimizer.validate(); });
  check_field("reward", [&] { c.reward.validate(); });
  check_field("mcts", [&] { c.mcts.validate(); });
  check_field("shooting", [&] { c.shooting.validate(); });
  check_field("ddqn", [&] { c.ddqn.validate(); });
  if (c.generator.noise_dim == 0) throw config_error("generator.noise_dim: must be positive");
  if (!(c.generator.output_scale > 0.0)) throw config_error("generator.output_scale: must be positive");
  if (!(c.probes.weight >= 0.0)) throw config_error("probes.weight: must be >= 0");
  if (!(c.flip_probability >= 0.0 && c.flip_probability <= 1.0))
    throw config_error("chain.flip_probability: must be in [0, 1]");
  if (c.chain_states < 2) throw config_error("chain.n_states: must be >= 2");
  check_field("maze", [&] { MazeEnv probe(c.maze); });
  if (c.experiment == Experiment::maze) {
    if (c.method == Method::icm || c.method == Method::ddqn)
      throw config_error("method: '" + std::string(to_string(c.method)) +
                         "' is only available on the chain");
    if (c.warmup_steps == 0) throw config_error("budget.warmup_steps: the maze needs warmup data");
    if (c.maze_loop.minibatch == 0) throw config_error("maze_loop.minibatch: must be positive");
  }
  if (c.experiment == Experiment::chain && c.episodes == 0)
    throw config_error("budget.episodes: must be positive");
  if (c.gradcheck.instances == 0) throw config_error("gradcheck.instances: must be positive");
  if (!(c.gradcheck.tolerance > 0.0)) throw config_error("gradcheck.tolerance: must be positive");
  if (c.decay.buffer_size < 2) throw config_error("decay.buffer_size: must be >= 2");
  if (c.decay.particle_count < 2) throw config_error("decay.particle_count: must be >= 2");
  if (c.decay.eval_samples < 2) throw config_error("decay.eval_samples: must be >= 2");
  if (!(c.decay.target_noise > 0.0)) throw config_error("decay.target_noise: must be positive");
  if (!(c.decay.probe_extent > 0.0)) throw config_error("decay.probe_extent: must be positive");
  if (!(c.decay.probe_weight >= 0.0)) throw config_error("decay.probe_weight: must be >= 0");
  check_field("decay.optimizer", [&] { c.decay.optimizer.validate(); });
  if (c.sanity.iterations == 0) throw config_error("sanity.iterations: must be positive");
  if (!(c.sanity.step_size >= 0.0)) throw config_error("sanity.step_size: must be >= 0");
  if (c.sanity.particle_count == 0) throw config_error("sanity.particle_count: must be positive");
  if (c.sanity.regression_particles == 0)
    throw config_error("sanity.regression_particles: must be positive");
}

/// Parses a config document on top of the defaults for `experiment`. A
/// document naming a different experiment is an error.
inline RunConfig parse_config(const nlohmann::json& doc, Experiment experiment) {
  using detail::ObjectReader;
  RunConfig c = default_config(experiment);
  ObjectReader root(doc, "");

  if (root.has("experiment")) {
    Experiment named = experiment;
    root.get_enum("experiment", named, experiment_from_string);
    if (named != experiment)
      throw config_error("experiment: file is for '" + std::string(to_string(named)) + "', command is '" +
                         std::string(to_string(experiment)) + "'");
  }
  root.get_enum("method", c.method, method_from_string);
  if (root.has("seeds")) {
    std::vector<long long> raw;
    root.get("seeds", raw);
    c.seeds.clear();
    for (long long s : raw) {
      if (s < 0) throw config_error("seeds: seeds must be non-negative");
      c.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  root.get("output_dir", c.output_dir);
  root.get("checkpoint", c.checkpoint);

  root.child("budget", [&](ObjectReader& r) {
    r.get_positive("episodes", c.episodes);
    r.get("stop_at_full_coverage", c.stop_at_full_coverage);
    r.get_positive("steps", c.steps);
    r.get_count("warmup_steps", c.warmup_steps);
  });
  root.child("chain", [&](ObjectReader& r) {
    r.get_positive("n_states", c.chain_states);
    r.get("flip_probability", c.flip_probability);
  });
  root.child("maze", [&](ObjectReader& r) {
    r.get("corridor_width", c.maze.corridor_width);
    r.get("arm_length", c.maze.arm_length);
    r.get("max_step", c.maze.max_step);
    r.get_positive("horizon", c.maze.horizon);
    r.get("bin_size", c.maze.bin_size);
  });
  root.child("model", [&](ObjectReader& r) {
    r.get_widths("hidden", c.model_hidden);
    r.get_enum("activation", c.model_activation, activation_from_string);
  });
  root.child("generator", [&](ObjectReader& r) {
    r.get_positive("noise_dim", c.generator.noise_dim);
    r.get_widths("hidden", c.generator.hidden);
    r.get_enum("activation", c.generator.activation, activation_from_string);
    r.get_enum("noise_sharing", c.generator.sharing, noise_sharing_from_string);
    r.get("output_scale", c.generator.output_scale);
  });
  root.child("svgd", [&](ObjectReader& r) {
    r.get_positive("particle_count", c.svgd.particle_count);
    r.get_enum("prior_mode", c.svgd.prior_mode, [](std::string_view s) {
      if (s == "none") return PriorMode::none;
      if (s == "weight_decay") return PriorMode::weight_decay;
      throw rejected_input("unknown prior_mode '" + std::string(s) + "'");
    });
    r.get("kernel_floor", c.svgd.kernel_floor);
  });
  root.child("probes", [&](ObjectReader& r) {
    r.get("enabled", c.probes.enabled);
    r.get_positive("count", c.probes.count);
    r.get("weight", c.probes.weight);
  });
  root.child("optimizer", [&](ObjectReader& r) {
    r.get("learning_rate", c.optimizer.learning_rate);
    r.get("weight_decay", c.optimizer.weight_decay);
    r.get("beta1", c.optimizer.beta1);
    r.get("beta2", c.optimizer.beta2);
    r.get("epsilon", c.optimizer.epsilon);
  });
  root.child("reward", [&](ObjectReader& r) {
    r.get_positive("sample_count", c.reward.sample_count);
    r.get("normalize", c.reward.normalize);
  });
  root.child("mcts", [&](ObjectReader& r) {
    r.get_positive("tree_iterations", c.mcts.tree_iterations);
    r.get_positive("rollouts_per_iteration", c.mcts.rollouts_per_iteration);
    r.get("ucb_constant", c.mcts.ucb_constant);
    r.get("discount", c.mcts.discount);
  });
  root.child("shooting", [&](ObjectReader& r) {
    r.get_positive("candidate_count", c.shooting.candidate_count);
    r.get_positive("plan_horizon", c.shooting.plan_horizon);
    r.get("elite_fraction", c.shooting.elite_fraction);
    r.get_positive("iterations", c.shooting.iterations);
    r.get("initial_std", c.shooting.initial_std);
    r.get("min_std", c.shooting.min_std);
  });
  root.child("ddqn", [&](ObjectReader& r) {
    r.get_widths("hidden", c.ddqn.hidden);
    r.get_enum("activation", c.ddqn.activation, activation_from_string);
    r.get("learning_rate", c.ddqn.learning_rate);
    r.get("gamma", c.ddqn.gamma);
    r.get("epsilon_start", c.ddqn.epsilon_start);
    r.get("epsilon_end", c.ddqn.epsilon_end);
    r.get_count("epsilon_decay_steps", c.ddqn.epsilon_decay_steps);
    r.get_positive("batch_size", c.ddqn.batch_size);
    r.get_positive("target_sync_interval", c.ddqn.target_sync_interval);
    r.get_positive("buffer_capacity", c.ddqn.buffer_capacity);
  });
  root.child("chain_loop", [&](ObjectReader& r) {
    r.get_count("refit_epochs", c.chain_loop.refit_epochs);
    r.get_positive("steps_per_update", c.chain_loop.steps_per_update);
  });
  root.child("maze_loop", [&](ObjectReader& r) {
    r.get_positive("steps_per_update", c.maze_loop.steps_per_update);
    r.get_count("refit_iterations", c.maze_loop.refit_iterations);
    r.get_positive("minibatch", c.maze_loop.minibatch);
  });
  root.child("sanity", [&](ObjectReader& r) {
    r.get_positive("particle_count", c.sanity.particle_count);
    r.get("step_size", c.sanity.step_size);
    r.get_positive("iterations", c.sanity.iterations);
    r.get_positive("regression_particles", c.sanity.regression_particles);
  });
  root.child("gradcheck", [&](ObjectReader& r) {
    r.get_positive("instances", c.gradcheck.instances);
    r.get("tolerance", c.gradcheck.tolerance);
  });
  root.child("decay", [&](ObjectReader& r) {
    r.get_positive("buffer_size", c.decay.buffer_size);
    r.get_count("steps", c.decay.steps);
    r.get_positive("particle_count", c.decay.particle_count);
    r.get_positive("eval_samples", c.decay.eval_samples);
    r.get("learning_rate", c.decay.optimizer.learning_rate);
    r.get("target_noise", c.decay.target_noise);
    r.get("noise_weighted", c.decay.noise_weighted);
    r.get_count("probe_count", c.decay.probe_count);
    r.get("probe_extent", c.decay.probe_extent);
    r.get("probe_weight", c.decay.probe_weight);
  });
  root.finish();

  c.svgd.step_size = c.optimizer.learning_rate;
  c.reward.kind = reward_kind_for(c.method);
  validate(c);
  return c;
}

inline RunConfig parse_config_text(const std::string& text, Experiment experiment) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc, experiment);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// The fully resolved configuration, every field spelled out.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["experiment"] = to_string(c.experiment);
  j["method"] = to_string(c.method);
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["checkpoint"] = c.checkpoint;
  j["budget"] = {{"episodes", c.episodes},
                 {"stop_at_full_coverage", c.stop_at_full_coverage},
                 {"steps", c.steps},
                 {"warmup_steps", c.warmup_steps}};
  j["chain"] = {{"n_states", c.chain_states}, {"flip_probability", c.flip_probability}};
  j["maze"] = {{"corridor_width", c.maze.corridor_width},
               {"arm_length", c.maze.arm_length},
               {"max_step", c.maze.max_step},
               {"horizon", c.maze.horizon},
               {"bin_size", c.maze.bin_size}};
  j["model"] = {{"hidden", c.model_hidden}, {"activation", to_string(c.model_activation)}};
  j["generator"] = {{"noise_dim", c.generator.noise_dim},
                    {"hidden", c.generator.hidden},
                    {"activation", to_string(c.generator.activation)},
                    {"noise_sharing", to_string(c.generator.sharing)},
                    {"output_scale", c.generator.output_scale}};
  j["svgd"] = {{"particle_count", c.svgd.particle_count},
               {"prior_mode", c.svgd.prior_mode == PriorMode::none ? "none" : "weight_decay"},
               {"kernel_floor", c.svgd.kernel_floor}};
  j["probes"] = {{"enabled", c.probes.enabled}, {"count", c.probes.count}, {"weight", c.probes.weight}};
  j["optimizer"] = {{"learning_rate", c.optimizer.learning_rate},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"epsilon", c.optimizer.epsilon}};
  j["reward"] = {{"sample_count", c.reward.sample_count}, {"normalize", c.reward.normalize}};
  j["mcts"] = {{"tree_iterations", c.mcts.tree_iterations},
               {"rollouts_per_iteration", c.mcts.rollouts_per_iteration},
               {"ucb_constant", c.mcts.ucb_constant},
               {"discount", c.mcts.discount}};
  j["shooting"] = {{"candidate_count", c.shooting.candidate_count},
                   {"plan_horizon", c.shooting.plan_horizon},
                   {"elite_fraction", c.shooting.elite_fraction},
                   {"iterations", c.shooting.iterations},
                   {"initial_std", c.shooting.initial_std},
                   {"min_std", c.shooting.min_std}};
  j["ddqn"] = {{"hidden", c.ddqn.hidden},
               {"activation", to_string(c.ddqn.activation)},
               {"learning_rate", c.ddqn.learning_rate},
               {"gamma", c.ddqn.gamma},
               {"epsilon_start", c.ddqn.epsilon_start},
               {"epsilon_end", c.ddqn.epsilon_end},
               {"epsilon_decay_steps", c.ddqn.epsilon_decay_steps},
               {"batch_size", c.ddqn.batch_size},
               {"target_sync_interval", c.ddqn.target_sync_interval},
               {"buffer_capacity", c.ddqn.buffer_capacity}};
  j["chain_loop"] = {{"refit_epochs", c.chain_loop.refit_epochs},
                     {"steps_per_update", c.chain_loop.steps_per_update}};
  j["maze_loop"] = {{"steps_per_update", c.maze_loop.steps_per_update},
                    {"refit_iterations", c.maze_loop.refit_iterations},
                    {"minibatch", c.maze_loop.minibatch}};
  j["sanity"] = {{"particle_count", c.sanity.particle_count},
                 {"step_size", c.sanity.step_size},
                 {"iterations", c.sanity.iterations},
                 {"regression_particles", c.sanity.regression_particles}};
  j["gradcheck"] = {{"instances", c.gradcheck.instances}, {"tolerance", c.gradcheck.tolerance}};
  j["decay"] = {{"buffer_size", c.decay.buffer_size},
                {"steps", c.decay.steps},
                {"particle_count", c.decay.particle_count},
                {"eval_samples", c.decay.eval_samples},
                {"learning_rate", c.decay.optimizer.learning_rate},
                {"target_noise", c.decay.target_noise},
                {"noise_weighted", c.decay.noise_weighted},
                {"probe_count", c.decay.probe_count},
                {"probe_extent", c.decay.probe_extent},
                {"probe_weight", c.decay.probe_weight}};
  return j;
}

/// The part of the config every method of one experiment must share: the
/// dynamics-model architecture, the optimizer and the refit schedule.
inline nlohmann::json shared_model_config(const RunConfig& c) {
  nlohmann::json full = to_json(c);
  return {{"experiment", full["experiment"]}, {"model", full["model"]},
          {"optimizer", full["optimizer"]},   {"chain_loop", full["chain_loop"]},
          {"maze_loop", full["maze_loop"]},   {"chain", full["chain"]},
          {"maze", full["maze"]}};
}

}  // namespace iex
