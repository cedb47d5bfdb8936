#pragma once

// On-disk artifacts of a run: the per-step metrics CSV, hashing and the
// manifest that lists every file with its SHA-256.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "iex/agents/exploration.hpp"

namespace iex {

namespace fs = std::filesystem;

inline constexpr const char* metrics_schema = "iex-metrics/1";
inline constexpr const char* metrics_columns = "step,episode,coverage,intrinsic_reward,model_loss,bandwidth";

/// Shortest decimal form that reads back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Streams step records to a CSV file, flushing after every episode so a
/// crashed run leaves readable partial output.
class MetricsWriter {
 public:
  MetricsWriter(const fs::path& path, const std::string& context) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << "# " << metrics_schema << ' ' << context << '\n' << metrics_columns << '\n';
  }

  void write(const StepRecord& r) {
    if (wrote_ && r.step <= last_step_) throw std::logic_error("metrics records must be ordered by step");
    out_ << r.step << ',' << r.episode << ',' << format_real(r.coverage) << ','
         << format_real(r.intrinsic_reward) << ',' << format_real(r.model_loss) << ','
         << format_real(r.bandwidth) << '\n';
    last_step_ = r.step;
    wrote_ = true;
  }

  void write_episode(const EpisodeMetrics& m) {
    for (const auto& r : m.steps) write(r);
    out_.flush();
  }

  /// Marks the file as incomplete.
  void write_error(const std::string& message) {
    std::string one_line = message;
    std::replace(one_line.begin(), one_line.end(), '\n', ' ');
    out_ << "# error: " << one_line << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::size_t last_step_ = 0;
  bool wrote_ = false;
};

struct MetricsTable {
  std::vector<StepRecord> rows;
  bool has_error = false;
  std::string error;
};

inline MetricsTable read_metrics(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  MetricsTable t;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# error:", 0) == 0) {
        t.has_error = true;
        t.error = line.substr(9);
      }
      continue;
    }
    if (!header) {
      if (line != metrics_columns) throw std::runtime_error(path.string() + ": unexpected column header");
      header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string f[6];
    for (auto& x : f)
      if (!std::getline(ss, x, ',')) throw std::runtime_error(path.string() + ": short row '" + line + "'");
    StepRecord r;
    r.step = std::stoull(f[0]);
    r.episode = std::stoull(f[1]);
    r.coverage = std::stod(f[2]);
    r.intrinsic_reward = std::stod(f[3]);
    r.model_loss = std::stod(f[4]);
    r.bandwidth = std::stod(f[5]);
    t.rows.push_back(r);
  }
  if (!header) throw std::runtime_error(path.string() + ": missing column header");
  return t;
}

/// Coverage at the end of every episode, in episode order.
struct EpisodeCoverage {
  std::vector<std::size_t> episode;
  std::vector<std::size_t> last_step;
  std::vector<double> coverage;
};

inline EpisodeCoverage episode_coverage(const std::vector<StepRecord>& rows) {
  EpisodeCoverage e;
  for (const auto& r : rows) {
    if (e.episode.empty() || e.episode.back() != r.episode) {
      e.episode.push_back(r.episode);
      e.last_step.push_back(r.step);
      e.coverage.push_back(r.coverage);
    } else {
      e.last_step.back() = r.step;
      e.coverage.back() = r.coverage;
    }
  }
  return e;
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("sha256: out of memory");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[digest[i] >> 4];
    s += hex[digest[i] & 15];
  }
  return s;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

/// Hashes every regular file under `dir` (except the manifest itself) and
/// writes manifest.json with paths relative to `dir`, sorted.
inline nlohmann::json write_manifest(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& f : files) {
    const std::string bytes = slurp(dir / f);
    listing.push_back({{"path", f}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
  }
  nlohmann::json m = {{"algorithm", "sha256"}, {"files", listing}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  return m;
}

}  // namespace iex
