#pragma once

// Cross-seed aggregation of coverage curves: per-episode mean and sample
// standard deviation per method, as CSV and as a standalone SVG line chart.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iex/harness/artifacts.hpp"

namespace iex {

/// Coverage curves of one method, one entry per seed.
struct RunSeries {
  std::string method;
  std::string model_hash;  // empty when unknown
  std::vector<std::vector<double>> curves;
  std::vector<std::vector<std::size_t>> last_steps;
};

struct SummaryRow {
  std::string method;
  std::size_t episode = 0;
  std::size_t step = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t seeds = 0;
};

struct AggregateResult {
  std::vector<SummaryRow> rows;
  std::vector<std::string> warnings;
};

/// Loads every seed_* subdirectory of a run directory.
inline RunSeries load_run_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a run directory");
  std::vector<fs::path> seeds;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0) seeds.push_back(e.path());
  std::sort(seeds.begin(), seeds.end());
  if (seeds.empty()) throw std::runtime_error(dir.string() + " has no seed_* directories");
  RunSeries s;
  for (const auto& sd : seeds) {
    const auto info = nlohmann::json::parse(slurp(sd / "run.json"));
    const std::string method = info.value("method", std::string("unknown"));
    if (s.method.empty()) s.method = method;
    if (method != s.method) throw std::runtime_error(dir.string() + " mixes methods");
    const std::string hash = info.value("model_config_sha256", std::string());
    if (s.model_hash.empty()) s.model_hash = hash;
    const EpisodeCoverage ec = episode_coverage(read_metrics(sd / "metrics.csv").rows);
    s.curves.push_back(ec.coverage);
    s.last_steps.push_back(ec.last_step);
  }
  return s;
}

inline double sample_stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Per-method mean and sample std of end-of-episode coverage. A curve that
/// already ended at full coverage is extended with 1.0 (coverage cannot
/// change after that). Remaining length mismatches are truncated to the
/// shortest curve with a warning. Series of one method are pooled.
inline AggregateResult aggregate(const std::vector<RunSeries>& runs) {
  AggregateResult out;
  std::map<std::string, RunSeries> by_method;
  std::vector<std::string> order;
  std::map<std::string, std::string> hashes;
  for (const auto& r : runs) {
    if (!by_method.count(r.method)) {
      order.push_back(r.method);
      by_method[r.method].method = r.method;
    }
    auto& dst = by_method[r.method];
    dst.curves.insert(dst.curves.end(), r.curves.begin(), r.curves.end());
    dst.last_steps.insert(dst.last_steps.end(), r.last_steps.begin(), r.last_steps.end());
    if (!r.model_hash.empty()) hashes[r.method] = r.model_hash;
  }
  for (const auto& [m, h] : hashes)
    if (h != hashes.begin()->second)
      out.warnings.push_back("methods '" + hashes.begin()->first + "' and '" + m +
                             "' use different model/optimizer settings");

  for (const auto& method : order) {
    RunSeries s = by_method[method];
    std::size_t longest = 0;
    for (const auto& c : s.curves) longest = std::max(longest, c.size());
    for (std::size_t i = 0; i < s.curves.size(); ++i) {
      auto& c = s.curves[i];
      auto& st = s.last_steps[i];
      if (!c.empty() && c.back() >= 1.0 && c.size() < longest) {
        const std::size_t stride = st.size() >= 2 ? st.back() - st[st.size() - 2] : 1;
        while (c.size() < longest) {
          c.push_back(1.0);
          st.push_back(st.empty() ? 0 : st.back() + stride);
        }
      }
    }
    std::size_t shortest = longest;
    for (const auto& c : s.curves) shortest = std::min(shortest, c.size());
    if (shortest < longest)
      out.warnings.push_back("method '" + method + "': episode grids differ (" + std::to_string(shortest) +
                             " vs " + std::to_string(longest) + "), truncated to " +
                             std::to_string(shortest) + " episodes");
    for (std::size_t e = 0; e < shortest; ++e) {
      std::vector<double> xs;
      for (const auto& c : s.curves) xs.push_back(c[e]);
      SummaryRow row;
      row.method = method;
      row.episode = e + 1;
      row.step = s.last_steps.front()[e];
      if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) {
        row.mean = xs.front();
      } else {
        double mean = 0.0;
        for (double x : xs) mean += x;
        row.mean = mean / static_cast<double>(xs.size());
        row.stddev = sample_stddev(xs);
      }
      row.seeds = xs.size();
      out.rows.push_back(row);
    }
  }
  return out;
}

inline std::string summary_csv(const AggregateResult& a) {
  std::string s = "# iex-summary/1 std=sample\nmethod,episode,step,mean_coverage,std_coverage,seeds\n";
  for (const auto& r : a.rows)
    s += r.method + "," + std::to_string(r.episode) + "," + std::to_string(r.step) + "," + format_real(r.mean) +
         "," + format_real(r.stddev) + "," + std::to_string(r.seeds) + "\n";
  return s;
}

/// Mean coverage per method against episode, with a +-1 std band.
inline std::string coverage_svg(const AggregateResult& a) {
  const double W = 640, H = 400, left = 60, right = 150, top = 20, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  std::size_t max_ep = 1;
  for (const auto& r : a.rows) max_ep = std::max(max_ep, r.episode);
  auto X = [&](double ep) { return left + pw * (ep - 1.0) / std::max<double>(1.0, double(max_ep) - 1.0); };
  auto Y = [&](double v) { return top + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top + ph) + "\" x2=\"" + num(left + pw) + "\" y2=\"" +
       num(top + ph) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" + num(top + ph) +
       "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    s += "<text x=\"" + num(left - 8) + "\" y=\"" + num(Y(v) + 4) + "\" text-anchor=\"end\">" + num(v) +
         "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double ep = 1.0 + (double(max_ep) - 1.0) * k / 4.0;
    s += "<text x=\"" + num(X(ep)) + "\" y=\"" + num(top + ph + 18) + "\" text-anchor=\"middle\">" +
         std::to_string(static_cast<long>(std::lround(ep))) + "</text>\n";
  }
  s += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(H - 10) + "\" text-anchor=\"middle\">episode</text>\n";
  s += "<text x=\"15\" y=\"" + num(top + ph / 2) + "\" transform=\"rotate(-90 15 " + num(top + ph / 2) +
       ")\" text-anchor=\"middle\">fraction of states visited</text>\n";

  std::vector<std::string> methods;
  for (const auto& r : a.rows)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const std::string colour = palette[mi % 6];
    std::vector<const SummaryRow*> rows;
    for (const auto& r : a.rows)
      if (r.method == methods[mi]) rows.push_back(&r);
    std::string band, line;
    for (const auto* r : rows) band += num(X(double(r->episode))) + "," + num(Y(r->mean + r->stddev)) + " ";
    for (auto it = rows.rbegin(); it != rows.rend(); ++it)
      band += num(X(double((*it)->episode))) + "," + num(Y((*it)->mean - (*it)->stddev)) + " ";
    for (const auto* r : rows) line += num(X(double(r->episode))) + "," + num(Y(r->mean)) + " ";
    s += "<polygon points=\"" + band + "\" fill=\"" + colour + "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    s += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    const double ly = top + 16.0 * double(mi + 1);
    s += "<line x1=\"" + num(left + pw + 12) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(left + pw + 32) +
         "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(left + pw + 38) + "\" y=\"" + num(ly) + "\">" + methods[mi] + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace iex
