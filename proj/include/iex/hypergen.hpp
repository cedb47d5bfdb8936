#pragma once

// Layer-wise hypernetwork: one generator MLP per target layer, each mapping a
// Gaussian noise vector to that layer's weights and biases.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iex/diffcore.hpp"

namespace iex {

using Rng = std::mt19937_64;

enum class NoiseSharing { shared, independent };

inline std::string_view to_string(NoiseSharing s) {
  return s == NoiseSharing::shared ? "shared" : "independent";
}

inline NoiseSharing noise_sharing_from_string(std::string_view s) {
  if (s == "shared") return NoiseSharing::shared;
  if (s == "independent") return NoiseSharing::independent;
  throw rejected_input("unknown noise_sharing '" + std::string(s) + "'");
}

struct GeneratorOptions {
  std::size_t noise_dim = 32;
  std::vector<std::size_t> hidden = {64, 64};
  Activation activation = Activation::relu;
  NoiseSharing sharing = NoiseSharing::shared;
  // Spread of freshly generated target weights, as a multiple of the usual
  // fan-in initialization of the target layer.
  double output_scale = 1.0;
};

/// One sampled dynamics network.
struct DynamicsSample {
  ParamTensor theta;
  std::vector<double> source_noise;
};

class GeneratorBundle {
 public:
  GeneratorBundle() = default;

  GeneratorBundle(MlpSpec target, std::size_t noise_dim, NoiseSharing sharing,
                  std::vector<MlpSpec> generator_specs, std::vector<double> eta)
      : target_(std::move(target)),
        noise_dim_(noise_dim),
        sharing_(sharing),
        gen_specs_(std::move(generator_specs)),
        eta_(std::move(eta)) {
    finalize();
  }

  template <class R>
  static GeneratorBundle create(const MlpSpec& target, const GeneratorOptions& opt, R& rng) {
    target.validate();
    if (opt.noise_dim == 0) throw rejected_input("noise_dim must be positive");
    std::vector<MlpSpec> specs;
    std::vector<double> eta;
    for (std::size_t j = 0; j < target.layer_count(); ++j) {
      MlpSpec g;
      g.layer_widths.push_back(opt.noise_dim);
      for (auto h : opt.hidden) g.layer_widths.push_back(h);
      g.layer_widths.push_back(target.layer_param_count(j));
      g.nonlinearity = opt.activation;
      auto p = init_params(g, rng);
      calibrate_output_layer(g, p, target.fan_in(j), opt.output_scale, rng);
      eta.insert(eta.end(), p.begin(), p.end());
      specs.push_back(std::move(g));
    }
    return GeneratorBundle(target, opt.noise_dim, opt.sharing, std::move(specs), std::move(eta));
  }

  /// Redraws the generator's last layer so its outputs have the variance of a
  /// U(-s/sqrt(fan_in), s/sqrt(fan_in)) init, measured over standard-normal noise.
  template <class R>
  static void calibrate_output_layer(const MlpSpec& g, std::vector<double>& p, std::size_t target_fan_in,
                                     double scale, R& rng) {
    constexpr Eigen::Index probes = 256;
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix z(probes, static_cast<Eigen::Index>(g.layer_widths.front()));
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n01(rng);
    ForwardTrace t = forward_trace(g, p, z);
    const Matrix& h = t.activations[t.activations.size() - 2];
    const double mean_sq = h.rowwise().squaredNorm().mean();
    const double target_var = scale * scale / (3.0 * static_cast<double>(target_fan_in));
    const double bound = mean_sq > 0.0 ? std::sqrt(3.0 * target_var / mean_sq) : 0.0;
    const std::size_t last = g.layer_count() - 1;
    const std::size_t off = g.layer_offset(last);
    const std::size_t nw = g.fan_in(last) * g.fan_out(last);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t k = 0; k < nw; ++k) p[off + k] = u(rng);
    for (std::size_t k = nw; k < g.layer_param_count(last); ++k) p[off + k] = 0.0;
  }

  const MlpSpec& target_spec() const { return target_; }
  std::size_t noise_dim() const { return noise_dim_; }
  NoiseSharing noise_sharing() const { return sharing_; }
  const std::vector<MlpSpec>& generator_specs() const { return gen_specs_; }
  std::size_t generator_count() const { return gen_specs_.size(); }

  /// Length of the z vector consumed by generate(): d when shared, N*d when
  /// each layer generator reads its own slice.
  std::size_t noise_length() const {
    return sharing_ == NoiseSharing::shared ? noise_dim_ : noise_dim_ * gen_specs_.size();
  }

  std::span<const double> eta() const { return eta_; }
  std::span<double> eta() { return eta_; }
  std::span<const double> eta(std::size_t j) const {
    return std::span<const double>(eta_).subspan(eta_offsets_[j], gen_specs_[j].param_count());
  }

  /// Generator-side traces for a batch of noise rows, kept for backward().
  struct BatchTrace {
    std::vector<ForwardTrace> per_generator;
  };

  /// Generates one parameter row per noise row. Returns m x |theta|.
  Matrix generate_batch(const Matrix& noise, BatchTrace* trace = nullptr) const {
    if (static_cast<std::size_t>(noise.cols()) != noise_length())
      throw rejected_input("noise width " + std::to_string(noise.cols()) + " != " +
                           std::to_string(noise_length()));
    Matrix theta(noise.rows(), static_cast<Eigen::Index>(target_.param_count()));
    if (trace) trace->per_generator.clear();
    for (std::size_t j = 0; j < gen_specs_.size(); ++j) {
      ForwardTrace t = forward_trace(gen_specs_[j], eta(j), noise_input(noise, j));
      theta.middleCols(static_cast<Eigen::Index>(target_.layer_offset(j)),
                       static_cast<Eigen::Index>(target_.layer_param_count(j))) = t.output();
      if (trace) trace->per_generator.push_back(std::move(t));
    }
    return theta;
  }

  /// Accumulates d<theta, theta_grad>/d(eta) into eta_grad.
  void backward(const BatchTrace& trace, const Matrix& theta_grad, std::span<double> eta_grad) const {
    if (eta_grad.size() != eta_.size()) throw rejected_input("eta_grad length mismatch");
    if (static_cast<std::size_t>(theta_grad.cols()) != target_.param_count())
      throw rejected_input("theta_grad width mismatch");
    for (std::size_t j = 0; j < gen_specs_.size(); ++j) {
      Matrix g = theta_grad.middleCols(static_cast<Eigen::Index>(target_.layer_offset(j)),
                                       static_cast<Eigen::Index>(target_.layer_param_count(j)));
      backward_batch(gen_specs_[j], eta(j), trace.per_generator[j], g,
                     eta_grad.subspan(eta_offsets_[j], gen_specs_[j].param_count()));
    }
  }

  void validate() const {
    target_.validate();
    if (gen_specs_.size() != target_.layer_count())
      throw rejected_input("generator count " + std::to_string(gen_specs_.size()) +
                           " != target layer count " + std::to_string(target_.layer_count()));
    std::size_t total = 0;
    for (std::size_t j = 0; j < gen_specs_.size(); ++j) {
      gen_specs_[j].validate();
      if (gen_specs_[j].input_width() != noise_dim_)
        throw rejected_input("generator " + std::to_string(j) + " input width != noise_dim");
      if (gen_specs_[j].output_width() != target_.layer_param_count(j))
        throw rejected_input("generator " + std::to_string(j) +
                             " output width != target layer parameter count");
      total += gen_specs_[j].param_count();
    }
    if (total != eta_.size()) throw rejected_input("eta length does not match generator specs");
  }

 private:
  Matrix noise_input(const Matrix& noise, std::size_t j) const {
    if (sharing_ == NoiseSharing::shared) return noise;
    return noise.middleCols(static_cast<Eigen::Index>(j * noise_dim_),
                            static_cast<Eigen::Index>(noise_dim_));
  }

  void finalize() {
    eta_offsets_.clear();
    std::size_t off = 0;
    for (const auto& g : gen_specs_) {
      eta_offsets_.push_back(off);
      off += g.param_count();
    }
    validate();
  }

  MlpSpec target_;
  std::size_t noise_dim_ = 0;
  NoiseSharing sharing_ = NoiseSharing::shared;
  std::vector<MlpSpec> gen_specs_;
  std::vector<double> eta_;
  std::vector<std::size_t> eta_offsets_;
};

template <class R>
std::vector<std::vector<double>> sample_noise(std::size_t count, std::size_t d, R& rng) {
  if (count == 0 || d == 0) throw rejected_input("sample_noise: count and d must be >= 1");
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> out(count, std::vector<double>(d));
  for (auto& z : out)
    for (auto& x : z) x = n01(rng);
  return out;
}

inline std::vector<std::vector<double>> sample_noise(std::size_t count, std::size_t d,
                                                     std::uint64_t seed) {
  Rng rng(seed);
  return sample_noise(count, d, rng);
}

inline Matrix stack_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw rejected_input("ragged rows");
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}

inline DynamicsSample generate(const GeneratorBundle& bundle, std::span<const double> z) {
  if (z.size() != bundle.noise_length())
    throw rejected_input("generate: z length " + std::to_string(z.size()) + " != " +
                         std::to_string(bundle.noise_length()));
  Matrix zr = Eigen::Map<const Matrix>(z.data(), 1, static_cast<Eigen::Index>(z.size()));
  Matrix theta = bundle.generate_batch(zr);
  DynamicsSample s;
  s.theta = ParamTensor(std::vector<double>(theta.data(), theta.data() + theta.size()));
  s.source_noise.assign(z.begin(), z.end());
  return s;
}

template <class R>
std::vector<DynamicsSample> sample_ensemble(const GeneratorBundle& bundle, std::size_t m, R& rng) {
  if (m == 0) throw rejected_input("sample_ensemble: m must be >= 1");
  auto noise = sample_noise(m, bundle.noise_length(), rng);
  Matrix theta = bundle.generate_batch(stack_rows(noise));
  std::vector<DynamicsSample> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto row = theta.row(static_cast<Eigen::Index>(i));
    out[i].theta = ParamTensor(std::vector<double>(row.data(), row.data() + row.size()));
    out[i].source_noise = std::move(noise[i]);
  }
  return out;
}

inline std::vector<DynamicsSample> sample_ensemble(const GeneratorBundle& bundle, std::size_t m,
                                                   std::uint64_t seed) {
  Rng rng(seed);
  return sample_ensemble(bundle, m, rng);
}

// Checkpoint format. Doubles round-trip exactly through nlohmann's shortest
// representation.

inline nlohmann::json to_json(const MlpSpec& s) {
  return {{"layer_widths", s.layer_widths}, {"nonlinearity", std::string(to_string(s.nonlinearity))}};
}

inline MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.layer_widths = j.at("layer_widths").get<std::vector<std::size_t>>();
  s.nonlinearity = activation_from_string(j.at("nonlinearity").get<std::string>());
  s.validate();
  return s;
}

inline nlohmann::json to_json(const GeneratorBundle& b) {
  nlohmann::json gens = nlohmann::json::array();
  for (std::size_t j = 0; j < b.generator_count(); ++j) {
    auto e = b.eta(j);
    gens.push_back({{"spec", to_json(b.generator_specs()[j])},
                    {"eta", std::vector<double>(e.begin(), e.end())}});
  }
  return {{"format", "iex-generator-bundle/1"},
          {"target_spec", to_json(b.target_spec())},
          {"noise_dim", b.noise_dim()},
          {"noise_sharing", std::string(to_string(b.noise_sharing()))},
          {"generators", gens}};
}

inline GeneratorBundle generator_bundle_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "iex-generator-bundle/1")
    throw rejected_input("not a generator bundle checkpoint");
  std::vector<MlpSpec> specs;
  std::vector<double> eta;
  for (const auto& g : j.at("generators")) {
    specs.push_back(mlp_spec_from_json(g.at("spec")));
    auto e = g.at("eta").get<std::vector<double>>();
    eta.insert(eta.end(), e.begin(), e.end());
  }
  return GeneratorBundle(mlp_spec_from_json(j.at("target_spec")),
                         j.at("noise_dim").get<std::size_t>(),
                         noise_sharing_from_string(j.at("noise_sharing").get<std::string>()),
                         std::move(specs), std::move(eta));
}

}  // namespace iex
