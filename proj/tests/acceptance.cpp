// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. Takes tens of minutes on one core.

#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "iex/harness/checks.hpp"
#include "iex/harness/run.hpp"

using namespace iex;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << title << "  |  " << o.detail
            << std::endl;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

std::string join(const std::vector<double>& xs) {
  std::string s;
  for (double x : xs) s += (s.empty() ? "" : "/") + fmt(x);
  return s;
}

RunConfig chain_config(Method m, std::size_t episodes, bool stop_at_full) {
  RunConfig c = default_config(Experiment::chain);
  c.method = m;
  c.reward.kind = reward_kind_for(m);
  c.episodes = episodes;
  c.stop_at_full_coverage = stop_at_full;
  return c;
}

std::vector<SeedResult> run_seeds(const RunConfig& c, const char* label) {
  std::vector<SeedResult> out;
  for (std::uint64_t s : c.seeds) {
    out.push_back(run_seed(c, s));
    std::cerr << "  [" << label << " seed " << s << "] final coverage " << fmt(out.back().final_coverage) << " after "
              << out.back().episode_coverage.size() << " episodes, " << fmt(out.back().wall_seconds) << " s\n";
  }
  return out;
}

/// Episodes needed to reach `level`; runs that never reach it count as
/// budget + 1, a lower bound on their true value.
double censored_episodes(const SeedResult& r, double level, std::size_t budget) {
  auto e = r.episodes_to(level);
  return static_cast<double>(e ? *e : budget + 1);
}

double two_pass_variance(const Matrix& p) {
  const auto m = p.rows(), d = p.cols();
  std::vector<double> mu(static_cast<std::size_t>(d), 0.0);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index k = 0; k < d; ++k) mu[static_cast<std::size_t>(k)] += p(i, k);
  for (auto& x : mu) x /= static_cast<double>(m);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index k = 0; k < d; ++k) {
      const double e = p(i, k) - mu[static_cast<std::size_t>(k)];
      acc += e * e;
    }
  return acc / static_cast<double>(m);
}

}  // namespace

int main() {
  std::cout << "acceptance: chain, SVGD, gradient, reward, decay, maze and determinism criteria" << std::endl;

  // Chain runs shared by criteria 1-3. Ours stops at full coverage, so its
  // coverage after stopping is 1 for every later episode.
  const std::size_t cmp_budget = 30;
  std::vector<SeedResult> ours, ddqn, disagreement, icm;
  {
    ours = run_seeds(chain_config(Method::ours, 100, true), "ours");
  }

  report(1, "chain: ours reaches full coverage in <= 30 episodes (mean of 3 seeds)", [&] {
    std::vector<double> eps;
    for (const auto& r : ours) eps.push_back(censored_episodes(r, 1.0, 100));
    const double m = mean(eps);
    return Outcome{m <= 30.0, "episodes to full coverage " + join(eps) + ", mean " + fmt(m)};
  });

  report(2, "chain: DDQN <= 60% after 100 episodes and below ours from episode 15", [&] {
    ddqn = run_seeds(chain_config(Method::ddqn, 100, false), "ddqn");
    std::vector<double> finals;
    for (const auto& r : ddqn) finals.push_back(r.coverage_at(100));
    const double final_mean = mean(finals);
    std::size_t worst_episode = 0;
    double worst_gap = 1e9;
    for (std::size_t e = 15; e <= 100; ++e) {
      std::vector<double> a, b;
      for (const auto& r : ours) a.push_back(r.coverage_at(e));
      for (const auto& r : ddqn) b.push_back(r.coverage_at(e));
      const double gap = mean(a) - mean(b);
      if (gap < worst_gap) {
        worst_gap = gap;
        worst_episode = e;
      }
    }
    const bool ok = final_mean <= 0.6 && worst_gap > 0.0;
    return Outcome{ok, "DDQN coverage at 100 " + join(finals) + ", mean " + fmt(final_mean) +
                           "; smallest mean gap ours - DDQN " + fmt(worst_gap) + " at episode " +
                           std::to_string(worst_episode)};
  });

  report(3, "chain: episodes to 90% ours <= disagreement and ours <= icm", [&] {
    disagreement = run_seeds(chain_config(Method::disagreement, cmp_budget, true), "disagreement");
    icm = run_seeds(chain_config(Method::icm, cmp_budget, true), "icm");
    std::vector<double> o, d, i;
    for (const auto& r : ours) o.push_back(censored_episodes(r, 0.9, 100));
    for (const auto& r : disagreement) d.push_back(censored_episodes(r, 0.9, cmp_budget));
    for (const auto& r : icm) i.push_back(censored_episodes(r, 0.9, cmp_budget));
    const bool ok = mean(o) <= mean(d) && mean(o) <= mean(i);
    return Outcome{ok, "ours " + join(o) + " (mean " + fmt(mean(o)) + "), disagreement " + join(d) + " (mean " +
                           fmt(mean(d)) + "), icm " + join(i) + " (mean " + fmt(mean(i)) + "); " +
                           std::to_string(cmp_budget + 1) + " = not reached within " + std::to_string(cmp_budget)};
  });

  report(4, "SVGD: single-particle phi*, N(5, 2^2) moments, conjugate regression mean", [&] {
    Rng rng(404);
    MlpSpec spec{{3, 16, 2}, Activation::tanh};
    RegressionBatch batch;
    batch.inputs = Matrix::Random(12, 3);
    batch.targets = Matrix::Random(12, 2);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      auto theta = init_params(spec, rng);
      Matrix rows = Eigen::Map<const Matrix>(theta.data(), 1, static_cast<Eigen::Index>(theta.size()));
      FunctionBatchEval ev = detail::evaluate_rows(spec, rows, batch);
      KernelEval k = rbf_kernel_median(pairwise_function_distance(ev.outputs, ev.row_weights), 1e-8);
      auto phi = compute_phi_star(ev, k);
      Matrix grad = -2.0 * (forward_batch(spec, theta, batch.inputs) - batch.targets);
      worst = std::max(worst, (phi[0] - grad).cwiseAbs().maxCoeff());
    }
    CheckReport sanity = svgd_sanity(SanityConfig{}, 0);
    std::string lines;
    for (const auto& c : sanity.checks) lines += c.name + "=" + fmt(c.value) + " (<= " + fmt(c.threshold) + ") ";
    return Outcome{worst <= 1e-10 && sanity.passed(),
                   "max |phi* - grad log p| " + fmt(worst) + " (<= 1e-10); " + lines};
  });

  report(5, "gradients: network and generator finite differences < 1e-4 on 20 instances", [&] {
    CheckReport g = gradcheck(GradcheckConfig{}, 0);
    std::string lines;
    for (const auto& c : g.checks) lines += c.name + "=" + fmt(c.value) + " ";
    return Outcome{g.passed(), lines};
  });

  report(6, "variance reward: two-pass oracle to 1e-12, permutation and translation invariant", [&] {
    Rng rng(606);
    std::uniform_int_distribution<int> rows(2, 32), cols(1, 6);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> shift(-5.0, 5.0);
    double oracle_err = 0.0, perm_err = 0.0, shift_err = 0.0;
    for (int t = 0; t < 1000; ++t) {
      Matrix p(rows(rng), cols(rng));
      for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = n01(rng);
      const double v = variance_reward(p);
      oracle_err = std::max(oracle_err, std::abs(v - two_pass_variance(p)));
      std::vector<Eigen::Index> order(static_cast<std::size_t>(p.rows()));
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
      std::shuffle(order.begin(), order.end(), rng);
      Matrix q(p.rows(), p.cols());
      for (Eigen::Index i = 0; i < p.rows(); ++i) q.row(i) = p.row(order[static_cast<std::size_t>(i)]);
      perm_err = std::max(perm_err, std::abs(variance_reward(q) - v));
      Eigen::RowVectorXd c(p.cols());
      for (Eigen::Index k = 0; k < c.size(); ++k) c[k] = shift(rng);
      Matrix s = p.rowwise() + c;
      shift_err = std::max(shift_err, std::abs(variance_reward(s) - v));
    }
    const bool ok = oracle_err <= 1e-12 && perm_err <= 1e-12 && shift_err <= 1e-12;
    return Outcome{ok, "max errors: oracle " + fmt(oracle_err) + ", permutation " + fmt(perm_err) +
                           ", translation " + fmt(shift_err)};
  });

  report(7, "uncertainty decay: in-buffer reward <= 0.2x initial, outside >= 2x inside", [&] {
    bool ok = true;
    std::string detail;
    for (std::uint64_t s : {0, 1, 2}) {
      const DecayConfig cfg;
      const DecayTrace t = uncertainty_decay_trace(cfg, s);
      const double decay = t.final_inside / t.initial_inside, outside = t.final_outside / t.final_inside;
      ok = ok && decay <= cfg.decay_ratio && outside >= cfg.outside_ratio;
      detail += "seed " + std::to_string(s) + ": decay " + fmt(decay) + ", outside/inside " + fmt(outside) +
                " at x=" + fmt(t.outside_input) + "; ";
    }
    return Outcome{ok, detail};
  });

  report(8, "maze: ours covers >= 1.5x random at 10,000 steps (mean of 3 seeds)", [&] {
    RunConfig c = default_config(Experiment::maze);
    auto o = run_seeds(c, "maze ours");
    c.method = Method::random;
    c.reward.kind = reward_kind_for(c.method);
    auto r = run_seeds(c, "maze random");
    std::vector<double> a, b;
    for (const auto& x : o) a.push_back(x.final_coverage);
    for (const auto& x : r) b.push_back(x.final_coverage);
    const double ratio = mean(a) / mean(b);
    return Outcome{ratio >= 1.5, "ours " + join(a) + ", random " + join(b) + ", ratio " + fmt(ratio)};
  });

  report(9, "determinism: re-runs give byte-identical metrics.csv", [&] {
    const fs::path root = fs::temp_directory_path() / "iex_acceptance_determinism";
    fs::remove_all(root);
    std::vector<std::pair<std::string, RunConfig>> cases;
    for (Method m : {Method::ours, Method::disagreement, Method::icm, Method::ddqn, Method::random}) {
      RunConfig c = chain_config(m, 4, false);
      c.seeds = {7};
      cases.emplace_back("chain-" + std::string(to_string(m)), c);
    }
    for (Method m : {Method::ours, Method::random}) {
      RunConfig c = default_config(Experiment::maze);
      c.method = m;
      c.reward.kind = reward_kind_for(m);
      c.steps = 1000;
      c.seeds = {7};
      cases.emplace_back("maze-" + std::string(to_string(m)), c);
    }
    std::string bad;
    for (const auto& [name, c] : cases) {
      run_experiment(c, "{}", root / name / "a");
      run_experiment(c, "{}", root / name / "b");
      if (slurp(root / name / "a" / "seed_7" / "metrics.csv") != slurp(root / name / "b" / "seed_7" / "metrics.csv"))
        bad += name + " ";
    }
    fs::remove_all(root);
    return Outcome{bad.empty(), bad.empty() ? std::to_string(cases.size()) + " configurations identical"
                                            : "differing: " + bad};
  });

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " criteria FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
