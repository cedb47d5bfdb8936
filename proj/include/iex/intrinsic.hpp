#pragma once

// Intrinsic rewards: predictive variance across dynamics models and the
// prediction-error (curiosity) baseline.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iex/diffcore.hpp"
#include "iex/hypergen.hpp"

namespace iex {

enum class RewardKind { posterior_variance, ensemble_disagreement, prediction_error, none };

inline std::string_view to_string(RewardKind k) {
  switch (k) {
    case RewardKind::posterior_variance: return "posterior_variance";
    case RewardKind::ensemble_disagreement: return "ensemble_disagreement";
    case RewardKind::prediction_error: return "prediction_error";
    case RewardKind::none: return "none";
  }
  return "none";
}

struct RewardSpec {
  RewardKind kind = RewardKind::posterior_variance;
  std::size_t sample_count = 5;
  bool normalize = false;

  void validate() const {
    const bool variance = kind == RewardKind::posterior_variance ||
                          kind == RewardKind::ensemble_disagreement;
    if (variance && sample_count < 2)
      throw rejected_input("variance rewards need sample_count >= 2");
    if (kind == RewardKind::prediction_error && sample_count < 1)
      throw rejected_input("prediction_error needs sample_count >= 1");
  }
};

/// Mean over models of the squared distance to the ensemble mean prediction
/// (population variance summed over state dimensions). Rows are models.
inline double variance_reward(const Matrix& predictions) {
  if (predictions.rows() < 2) throw rejected_input("variance_reward needs at least 2 models");
  Eigen::RowVectorXd mean = predictions.colwise().mean();
  return (predictions.rowwise() - mean).rowwise().squaredNorm().mean();
}

inline double prediction_error_reward(std::span<const double> prediction,
                                      std::span<const double> observed_next) {
  if (prediction.size() != observed_next.size())
    throw rejected_input("prediction_error_reward: length mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < prediction.size(); ++k) {
    const double d = prediction[k] - observed_next[k];
    acc += d * d;
  }
  return acc;
}

/// A concrete set of dynamics networks sharing one architecture.
struct ModelSet {
  MlpSpec spec;
  std::vector<std::vector<double>> thetas;

  std::size_t size() const { return thetas.size(); }

  /// Predictions for one input: size() x output_width.
  Matrix predict(std::span<const double> input) const {
    Matrix x = Eigen::Map<const Matrix>(input.data(), 1, static_cast<Eigen::Index>(input.size()));
    Matrix out(static_cast<Eigen::Index>(thetas.size()), static_cast<Eigen::Index>(spec.output_width()));
    for (std::size_t i = 0; i < thetas.size(); ++i)
      out.row(static_cast<Eigen::Index>(i)) = forward_batch(spec, thetas[i], x);
    return out;
  }

  /// Predictions for many inputs: one n x s block per model.
  std::vector<Matrix> predict_batch(const Matrix& inputs) const {
    std::vector<Matrix> out;
    out.reserve(thetas.size());
    for (const auto& t : thetas) out.push_back(forward_batch(spec, t, inputs));
    return out;
  }
};

inline ModelSet to_model_set(const MlpSpec& spec, const std::vector<DynamicsSample>& samples) {
  ModelSet ms{spec, {}};
  for (const auto& s : samples) ms.thetas.push_back(s.theta.data);
  return ms;
}

/// Dispatches on spec.kind for one (s, a) input. A ModelSet is a fixed
/// collection; use the generator overload to resample per call.
inline double reward_for_transition(const ModelSet& models, std::span<const double> input,
                                    const std::optional<std::vector<double>>& observed_next,
                                    const RewardSpec& spec) {
  if (spec.kind == RewardKind::none) return 0.0;
  if (models.size() == 0) throw rejected_input("reward_for_transition: no models");
  switch (spec.kind) {
    case RewardKind::posterior_variance:
    case RewardKind::ensemble_disagreement:
      return variance_reward(models.predict(input));
    case RewardKind::prediction_error: {
      if (!observed_next) throw rejected_input("prediction_error reward requires observed_next");
      Matrix p = models.predict(input);
      Eigen::RowVectorXd mean = p.colwise().mean();
      return prediction_error_reward(std::span<const double>(mean.data(), mean.size()), *observed_next);
    }
    case RewardKind::none: break;
  }
  return 0.0;
}

template <class R>
double reward_for_transition(const GeneratorBundle& generator, R& rng, std::span<const double> input,
                             const std::optional<std::vector<double>>& observed_next,
                             const RewardSpec& spec) {
  if (spec.kind == RewardKind::none) return 0.0;
  auto samples = sample_ensemble(generator, spec.sample_count, rng);
  return reward_for_transition(to_model_set(generator.target_spec(), samples), input,
                               observed_next, spec);
}

/// Divides rewards by a running standard deviation (Welford).
class RunningNormalizer {
 public:
  double operator()(double r) {
    ++count_;
    const double delta = r - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (r - mean_);
    const double sd = stddev();
    return sd > 1e-12 ? r / sd : r;
  }
  double stddev() const {
    return count_ > 1 ? std::sqrt(m2_ / static_cast<double>(count_ - 1)) : 0.0;
  }
  std::size_t count() const { return count_; }

 private:
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace iex
