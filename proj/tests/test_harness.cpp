#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "iex/harness/aggregate.hpp"
#include "iex/harness/artifacts.hpp"
#include "iex/harness/config.hpp"
#include "iex/harness/checks.hpp"
#include "iex/harness/run.hpp"

using namespace iex;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("iex_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunSeries series(const std::string& method, std::vector<std::vector<double>> curves, std::string hash = "") {
  RunSeries s;
  s.method = method;
  s.model_hash = std::move(hash);
  for (auto& c : curves) {
    std::vector<std::size_t> steps;
    for (std::size_t k = 0; k < c.size(); ++k) steps.push_back((k + 1) * 49 - 1);
    s.last_steps.push_back(steps);
    s.curves.push_back(std::move(c));
  }
  return s;
}

// A chain config small enough to run in a couple of seconds.
const char* tiny_chain = R"({
  "seeds": [4],
  "budget": {"episodes": 3},
  "chain": {"n_states": 12},
  "model": {"hidden": [16]},
  "generator": {"noise_dim": 8, "hidden": [16]},
  "mcts": {"tree_iterations": 4, "rollouts_per_iteration": 2},
  "chain_loop": {"refit_epochs": 2}
})";

const char* tiny_maze = R"({
  "seeds": [2],
  "budget": {"steps": 120, "warmup_steps": 60},
  "maze": {"horizon": 100},
  "model": {"hidden": [8]},
  "generator": {"noise_dim": 4, "hidden": [8]},
  "svgd": {"particle_count": 4},
  "reward": {"sample_count": 4},
  "probes": {"count": 8},
  "shooting": {"candidate_count": 8, "plan_horizon": 3},
  "maze_loop": {"refit_iterations": 2, "minibatch": 32, "steps_per_update": 10}
})";

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, EmptyDocumentGivesDefaults) {
  RunConfig c = parse_config_text("{}", Experiment::chain);
  EXPECT_EQ(c.chain_states, 40u);
  EXPECT_EQ(c.svgd.particle_count, 5u);
  EXPECT_EQ(c.mcts.tree_iterations, 25u);
  EXPECT_EQ(c.mcts.rollouts_per_iteration, 10u);
  EXPECT_EQ(c.chain_loop.refit_epochs, 10u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(c.svgd.step_size, c.optimizer.learning_rate);
  RunConfig m = parse_config_text("{}", Experiment::maze);
  EXPECT_EQ(m.svgd.particle_count, 32u);
  EXPECT_EQ(m.generator.noise_dim, 32u);
  EXPECT_EQ(m.steps, 10000u);
}

TEST(Config, UnknownKeysNameTheirPath) {
  try {
    parse_config_text(R"({"mcts": {"tree_iteration": 3}})", Experiment::chain);
    FAIL();
  } catch (const config_error& e) {
    EXPECT_NE(std::string(e.what()).find("mcts.tree_iteration"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text(R"({"colour": 1})", Experiment::chain), config_error);
}

TEST(Config, TypeAndRangeErrors) {
  EXPECT_THROW(parse_config_text(R"({"budget": {"episodes": -1}})", Experiment::chain), config_error);
  EXPECT_THROW(parse_config_text(R"({"budget": {"episodes": "ten"}})", Experiment::chain), config_error);
  EXPECT_THROW(parse_config_text(R"({"method": "sac"})", Experiment::chain), config_error);
  EXPECT_THROW(parse_config_text(R"({"chain": {"flip_probability": 2}})", Experiment::chain), config_error);
  EXPECT_THROW(parse_config_text(R"({"optimizer": {"learning_rate": 0}})", Experiment::chain), config_error);
  EXPECT_THROW(parse_config_text(R"({"method": "icm"})", Experiment::maze), config_error);
  EXPECT_THROW(parse_config_text(R"({"experiment": "maze"})", Experiment::chain), config_error);
  EXPECT_THROW(parse_config_text("{not json", Experiment::chain), config_error);
  EXPECT_THROW(parse_config_text(R"({"seeds": [-1]})", Experiment::chain), config_error);
}

TEST(Config, MethodSetsRewardKind) {
  EXPECT_EQ(parse_config_text(R"({"method": "ours"})", Experiment::chain).reward.kind,
            RewardKind::posterior_variance);
  EXPECT_EQ(parse_config_text(R"({"method": "icm"})", Experiment::chain).reward.kind,
            RewardKind::prediction_error);
  EXPECT_EQ(parse_config_text(R"({"method": "disagreement"})", Experiment::chain).reward.kind,
            RewardKind::ensemble_disagreement);
}

TEST(Config, SeedLists) {
  EXPECT_EQ(parse_seed_list("7"), (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(parse_seed_list("0,1,2"), (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_THROW(parse_seed_list(""), config_error);
  EXPECT_THROW(parse_seed_list("1,,2"), config_error);
  EXPECT_THROW(parse_seed_list("-3"), config_error);
  EXPECT_THROW(parse_seed_list("2x"), config_error);
}

TEST(Config, EffectiveConfigRoundTrips) {
  RunConfig c = parse_config_text(tiny_chain, Experiment::chain);
  nlohmann::json j = to_json(c);
  RunConfig d = parse_config(j, Experiment::chain);
  EXPECT_EQ(to_json(d), j);
}

TEST(Config, ModelHashIgnoresMethod) {
  RunConfig a = parse_config_text(R"({"method": "ours"})", Experiment::chain);
  RunConfig b = parse_config_text(R"({"method": "disagreement"})", Experiment::chain);
  RunConfig c = parse_config_text(R"({"optimizer": {"learning_rate": 0.01}})", Experiment::chain);
  EXPECT_EQ(shared_model_config(a), shared_model_config(b));
  EXPECT_NE(shared_model_config(a), shared_model_config(c));
}

// ---------------------------------------------------------------------------
// Artifacts

TEST(Artifacts, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Artifacts, MetricsRoundTrip) {
  fs::path dir = fresh_dir("metrics");
  {
    MetricsWriter w(dir / "m.csv", "unit");
    EpisodeMetrics e;
    e.steps.push_back({0, 1, 0.025, 0.0, 0.0, 0.0});
    e.steps.push_back({1, 1, 0.05, 0.1234567890123, 0.5, 1e-8});
    w.write_episode(e);
    EXPECT_THROW(w.write({1, 2, 0.05, 0, 0, 0}), std::logic_error);
  }
  MetricsTable t = read_metrics(dir / "m.csv");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[1].intrinsic_reward, 0.1234567890123);
  EXPECT_EQ(t.rows[1].bandwidth, 1e-8);
  EXPECT_FALSE(t.has_error);
}

TEST(Artifacts, ErrorMarkerIsReadBack) {
  fs::path dir = fresh_dir("error");
  {
    MetricsWriter w(dir / "m.csv", "unit");
    w.write({0, 1, 0.1, 0, 0, 0});
    w.write_error("model diverged\nbadly");
  }
  MetricsTable t = read_metrics(dir / "m.csv");
  EXPECT_TRUE(t.has_error);
  EXPECT_EQ(t.error, "model diverged badly");
  EXPECT_EQ(t.rows.size(), 1u);
}

TEST(Artifacts, EpisodeCoverageTakesLastRow) {
  std::vector<StepRecord> rows = {{0, 1, 0.1, 0, 0, 0}, {1, 1, 0.2, 0, 0, 0}, {2, 2, 0.3, 0, 0, 0}};
  EpisodeCoverage e = episode_coverage(rows);
  EXPECT_EQ(e.episode, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(e.coverage, (std::vector<double>{0.2, 0.3}));
  EXPECT_EQ(e.last_step, (std::vector<std::size_t>{1, 2}));
}

TEST(Artifacts, ManifestListsFilesWithHashes) {
  fs::path dir = fresh_dir("manifest");
  write_text(dir / "b.txt", "abc");
  fs::create_directories(dir / "sub");
  write_text(dir / "sub" / "a.txt", "");
  nlohmann::json m = write_manifest(dir);
  ASSERT_EQ(m["files"].size(), 2u);
  EXPECT_EQ(m["files"][0]["path"], "b.txt");
  EXPECT_EQ(m["files"][0]["sha256"], sha256_hex("abc"));
  EXPECT_EQ(m["files"][1]["path"], "sub/a.txt");
  EXPECT_EQ(m["files"][1]["bytes"], 0);
  EXPECT_EQ(write_manifest(dir), m);  // the manifest does not list itself
}

// ---------------------------------------------------------------------------
// Aggregation

TEST(Aggregate, SampleStdOfThreeRuns) {
  auto r = aggregate({series("ours", {{0.1, 0.2}, {0.1, 0.4}, {0.1, 0.6}})});
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_NEAR(r.rows[1].mean, 0.4, 1e-15);
  EXPECT_NEAR(r.rows[1].stddev, 0.2, 1e-15);
  EXPECT_EQ(r.rows[1].seeds, 3u);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Aggregate, SingleAndIdenticalRunsHaveZeroStd) {
  auto one = aggregate({series("ours", {{0.1, 0.5, 0.7}})});
  for (const auto& row : one.rows) EXPECT_EQ(row.stddev, 0.0);
  auto same = aggregate({series("ours", {{0.1, 0.5}, {0.1, 0.5}, {0.1, 0.5}})});
  for (const auto& row : same.rows) {
    EXPECT_EQ(row.stddev, 0.0);
    EXPECT_EQ(row.mean, row.episode == 1 ? 0.1 : 0.5);
  }
}

TEST(Aggregate, FullCoverageRunsArePadded) {
  auto r = aggregate({series("ours", {{0.5, 1.0}, {0.2, 0.6, 0.9, 1.0}})});
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_DOUBLE_EQ(r.rows[3].mean, 1.0);
  EXPECT_DOUBLE_EQ(r.rows[2].mean, 0.95);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Aggregate, MismatchedGridsAreTruncatedWithWarning) {
  auto r = aggregate({series("ddqn", {{0.1, 0.2}, {0.1, 0.2, 0.3}})});
  EXPECT_EQ(r.rows.size(), 2u);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("truncated"), std::string::npos);
}

TEST(Aggregate, DifferentModelSettingsWarn) {
  auto r = aggregate({series("ours", {{0.1}}, "aaa"), series("icm", {{0.1}}, "bbb")});
  ASSERT_EQ(r.warnings.size(), 1u);
  auto ok = aggregate({series("ours", {{0.1}}, "aaa"), series("icm", {{0.1}}, "aaa")});
  EXPECT_TRUE(ok.warnings.empty());
}

TEST(Aggregate, CsvAndSvgShape) {
  auto r = aggregate({series("ours", {{0.1, 0.2}}), series("ddqn", {{0.1, 0.1}})});
  const std::string csv = summary_csv(r);
  EXPECT_EQ(csv.rfind("# iex-summary/1", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  const std::string svg = coverage_svg(r);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find(">ddqn<"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Runs

TEST(Run, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(0, 0), derive_seed(0, 1));
  EXPECT_NE(derive_seed(0, 0), derive_seed(1, 0));
  EXPECT_EQ(derive_seed(5, 2), derive_seed(5, 2));
}

TEST(Run, RandomChainRarelyCovers) {
  RunConfig c = parse_config_text(R"({"method": "random", "budget": {"episodes": 100}})", Experiment::chain);
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    SeedResult r = run_chain_seed(c, seed);
    EXPECT_EQ(r.episode_coverage.size(), 100u);
    EXPECT_LT(r.final_coverage, 1.0);
    EXPECT_EQ(r.steps.size(), 4900u);
  }
}

TEST(Run, PlannerSectionsReachTheLoop) {
  // A one-rollout, one-iteration tree and a deep tree must give different runs.
  RunConfig a = parse_config_text(tiny_chain, Experiment::chain);
  RunConfig b = a;
  b.mcts.tree_iterations = 1;
  b.mcts.rollouts_per_iteration = 1;
  std::vector<double> ra, rb;
  for (const auto& s : run_chain_seed(a, 3).steps) ra.push_back(s.intrinsic_reward);
  for (const auto& s : run_chain_seed(b, 3).steps) rb.push_back(s.intrinsic_reward);
  EXPECT_NE(ra, rb);
}

TEST(Run, StopAtFullCoverage) {
  RunConfig c = parse_config_text(
      R"({"method": "random", "chain": {"n_states": 3}, "budget": {"episodes": 50, "stop_at_full_coverage": true}})",
      Experiment::chain);
  SeedResult r = run_chain_seed(c, 0);
  ASSERT_TRUE(r.episodes_to_full.has_value());
  EXPECT_EQ(r.episode_coverage.size(), *r.episodes_to_full);
  EXPECT_DOUBLE_EQ(r.coverage_at(50), 1.0);
  EXPECT_EQ(r.episodes_to(1.0), r.episodes_to_full);
}

TEST(Run, ChainMetricsAreByteIdenticalAcrossReruns) {
  RunConfig c = parse_config_text(tiny_chain, Experiment::chain);
  fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  run_experiment(c, tiny_chain, a);
  run_experiment(c, tiny_chain, b);
  EXPECT_EQ(slurp(a / "seed_4" / "metrics.csv"), slurp(b / "seed_4" / "metrics.csv"));
  EXPECT_EQ(slurp(a / "summary.csv"), slurp(b / "summary.csv"));
  for (const char* f : {"config.snapshot", "effective_config.json", "summary.csv", "coverage.svg", "manifest.json",
                        "seed_4/run.json", "seed_4/checkpoint.json"})
    EXPECT_TRUE(fs::exists(a / f)) << f;
  EXPECT_EQ(slurp(a / "config.snapshot"), tiny_chain);
  MetricsTable t = read_metrics(a / "seed_4" / "metrics.csv");
  EXPECT_EQ(t.rows.size(), 3u * 21u);
  for (std::size_t k = 1; k < t.rows.size(); ++k) EXPECT_GE(t.rows[k].coverage, t.rows[k - 1].coverage);
}

TEST(Run, MazeMetricsAreByteIdenticalAcrossReruns) {
  for (const char* method : {"ours", "disagreement", "random"}) {
    RunConfig c = parse_config_text(tiny_maze, Experiment::maze);
    c.method = method_from_string(method);
    c.reward.kind = reward_kind_for(c.method);
    fs::path a = fresh_dir(std::string("maze_a_") + method), b = fresh_dir(std::string("maze_b_") + method);
    run_experiment(c, tiny_maze, a);
    run_experiment(c, tiny_maze, b);
    const std::string ma = slurp(a / "seed_2" / "metrics.csv");
    EXPECT_EQ(ma, slurp(b / "seed_2" / "metrics.csv")) << method;
    EXPECT_EQ(read_metrics(a / "seed_2" / "metrics.csv").rows.size(), 120u) << method;
  }
}

TEST(Run, EveryChainMethodRuns) {
  for (const char* method : {"ours", "disagreement", "icm", "ddqn", "random"}) {
    RunConfig c = parse_config_text(tiny_chain, Experiment::chain);
    c.method = method_from_string(method);
    c.reward.kind = reward_kind_for(c.method);
    c.episodes = 2;
    SeedResult r = run_chain_seed(c, 1);
    EXPECT_EQ(r.episode_coverage.size(), 2u) << method;
    EXPECT_GT(r.final_coverage, 0.0);
    EXPECT_EQ(r.fit_faults, 0u);
  }
}

TEST(Run, LoadRunDirReadsSeeds) {
  RunConfig c = parse_config_text(tiny_chain, Experiment::chain);
  c.seeds = {1, 2};
  fs::path a = fresh_dir("load");
  run_experiment(c, tiny_chain, a);
  RunSeries s = load_run_dir(a);
  EXPECT_EQ(s.method, "ours");
  EXPECT_EQ(s.curves.size(), 2u);
  EXPECT_EQ(s.model_hash, sha256_hex(shared_model_config(c).dump()));
  EXPECT_THROW(load_run_dir(a / "seed_1"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Uncertainty decay

TEST(Decay, NoTrainingMeansNoDecay) {
  DecayConfig c;
  c.steps = 0;
  c.particle_count = 8;
  c.eval_samples = 16;
  const DecayTrace t = uncertainty_decay_trace(c, 3);
  EXPECT_GT(t.initial_inside, 0.0);
  CheckReport r = uncertainty_decay(c, 3);
  EXPECT_FALSE(r.passed());
}

TEST(Decay, ConfigSectionParses) {
  RunConfig c = parse_config_text(R"({"decay": {"steps": 7, "learning_rate": 0.05, "probe_count": 0}})",
                                  Experiment::uncertainty_decay);
  EXPECT_EQ(c.decay.steps, 7u);
  EXPECT_EQ(c.decay.optimizer.learning_rate, 0.05);
  EXPECT_EQ(c.decay.probe_count, 0u);
  EXPECT_THROW(parse_config_text(R"({"decay": {"target_noise": 0}})", Experiment::uncertainty_decay), config_error);
  EXPECT_THROW(parse_config_text(R"({"decay": {"probes": 3}})", Experiment::uncertainty_decay), config_error);
}
