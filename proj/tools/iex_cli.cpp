// Command-line front end: runs the exploration experiments, the self-checks
// and cross-run aggregation.
//
// Exit codes: 0 success, 2 bad configuration or arguments, 1 runtime fault.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iex/harness/aggregate.hpp"
#include "iex/harness/checks.hpp"
#include "iex/harness/config.hpp"
#include "iex/harness/run.hpp"

namespace {

constexpr int exit_config = 2;
constexpr int exit_fault = 1;

struct CommonArgs {
  std::string config_path;
  std::string seeds;
  std::string out;
  std::string method;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_method) {
  cmd->add_option("--config", a.config_path, "JSON config file (defaults apply to missing keys)");
  cmd->add_option("--seed", a.seeds, "seed or comma-separated seed list, overrides the config");
  cmd->add_option("--out", a.out, "run directory, overrides IEX_OUT_ROOT and output_dir");
  if (with_method) cmd->add_option("--method", a.method, "ours, disagreement, icm, ddqn or random");
}

struct Loaded {
  iex::RunConfig config;
  std::string text;
};

Loaded load(iex::Experiment e, const CommonArgs& a) {
  Loaded l;
  l.text = a.config_path.empty() ? std::string("{}\n") : iex::read_file(a.config_path);
  l.config = iex::parse_config_text(l.text, e);
  if (!a.method.empty()) {
    try {
      l.config.method = iex::method_from_string(a.method);
    } catch (const iex::rejected_input& err) {
      throw iex::config_error(std::string("--method: ") + err.what());
    }
    l.config.reward.kind = iex::reward_kind_for(l.config.method);
  }
  if (!a.seeds.empty()) {
    try {
      l.config.seeds = iex::parse_seed_list(a.seeds);
    } catch (const iex::rejected_input& err) {
      throw iex::config_error(std::string("--seed: ") + err.what());
    }
  }
  iex::validate(l.config);
  return l;
}

/// --out names the run directory itself; otherwise a directory named after
/// the experiment (and method) is created under IEX_OUT_ROOT or output_dir.
iex::fs::path run_dir(const iex::RunConfig& c, const CommonArgs& a, bool with_method) {
  if (!a.out.empty()) return a.out;
  iex::fs::path root = c.output_dir;
  if (const char* env = std::getenv("IEX_OUT_ROOT"); env && *env) root = env;
  std::string name(iex::to_string(c.experiment));
  if (with_method) name += "-" + std::string(iex::to_string(c.method));
  return root / name;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int run_exploration(iex::Experiment e, const CommonArgs& a) {
  Loaded l = load(e, a);
  const auto dir = run_dir(l.config, a, true);
  log_line("writing " + dir.string());
  auto results = iex::run_experiment(l.config, l.text, dir, log_line);
  for (const auto& r : results) {
    std::cout << "seed " << r.seed << "  episodes " << r.episode_coverage.size() << "  final_coverage "
              << r.final_coverage;
    if (r.episodes_to_full) std::cout << "  full_coverage_episode " << *r.episodes_to_full;
    std::cout << '\n';
  }
  return 0;
}

int run_check(iex::Experiment e, const CommonArgs& a) {
  Loaded l = load(e, a);
  const std::uint64_t seed = l.config.seeds.front();
  iex::CheckReport rep;
  if (e == iex::Experiment::svgd_sanity)
    rep = iex::svgd_sanity(l.config.sanity, seed);
  else if (e == iex::Experiment::gradcheck)
    rep = iex::gradcheck(l.config.gradcheck, seed);
  else
    rep = iex::uncertainty_decay(l.config.decay, seed);
  std::cout << rep.text();
  const auto dir = run_dir(l.config, a, false);
  iex::fs::create_directories(dir);
  iex::write_text(dir / "config.snapshot", l.text);
  iex::write_text(dir / "report.json", rep.to_json().dump(2) + "\n");
  iex::write_manifest(dir);
  return rep.passed() ? 0 : exit_fault;
}

int run_aggregate(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<iex::RunSeries> runs;
  for (const auto& d : dirs) runs.push_back(iex::load_run_dir(d));
  iex::AggregateResult agg = iex::aggregate(runs);
  for (const auto& w : agg.warnings) log_line("warning: " + w);
  const iex::fs::path dir = out.empty() ? iex::fs::path(".") : iex::fs::path(out);
  iex::fs::create_directories(dir);
  iex::write_text(dir / "summary.csv", iex::summary_csv(agg));
  iex::write_text(dir / "coverage.svg", iex::coverage_svg(agg));
  std::cout << iex::summary_csv(agg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exploration with implicit dynamics posteriors"};
  app.require_subcommand(1);

  CommonArgs chain_args, maze_args, sanity_args, grad_args, decay_args;
  auto* chain = app.add_subcommand("chain", "run the chain exploration experiment");
  add_common(chain, chain_args, true);
  auto* maze = app.add_subcommand("maze", "run the continuous maze exploration experiment");
  add_common(maze, maze_args, true);
  auto* sanity = app.add_subcommand("svgd-sanity", "check SVGD against closed-form posteriors");
  add_common(sanity, sanity_args, false);
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(grad, grad_args, false);
  auto* decay = app.add_subcommand("uncertainty-decay", "watch the variance reward shrink on a fixed regression buffer");
  add_common(decay, decay_args, false);

  std::vector<std::string> agg_dirs;
  std::string agg_out;
  auto* agg = app.add_subcommand("aggregate", "merge run directories into one summary and plot");
  agg->add_option("runs", agg_dirs, "run directories")->required();
  agg->add_option("--out", agg_out, "output directory (default: current directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_config;
  }

  try {
    if (*chain) return run_exploration(iex::Experiment::chain, chain_args);
    if (*maze) return run_exploration(iex::Experiment::maze, maze_args);
    if (*sanity) return run_check(iex::Experiment::svgd_sanity, sanity_args);
    if (*grad) return run_check(iex::Experiment::gradcheck, grad_args);
    if (*decay) return run_check(iex::Experiment::uncertainty_decay, decay_args);
    if (*agg) return run_aggregate(agg_dirs, agg_out);
  } catch (const iex::config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_fault;
  }
  return exit_fault;
}
