#pragma once

// Beliefs over environment dynamics. Each exploration method differs only in
// how it represents and trains its set of dynamics networks:
//   GeneratorBelief  amortized SVGD generator, fresh samples on every draw
//   EnsembleBelief   fixed ensemble of independently initialized networks
//                    (a single member serves the prediction-error baseline)

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iex/diffcore.hpp"
#include "iex/hypergen.hpp"
#include "iex/intrinsic.hpp"
#include "iex/svgd.hpp"

namespace iex {

struct FitReport {
  double mean_loss = 0.0;
  double bandwidth = 0.0;
  double phi_norm = 0.0;
  std::size_t steps = 0;
  std::size_t faults = 0;
  std::string last_fault;
};

class DynamicsBelief {
 public:
  virtual ~DynamicsBelief() = default;
  virtual const MlpSpec& model_spec() const = 0;
  /// The networks the planner should use right now.
  virtual ModelSet draw(Rng& rng) = 0;
  /// `batch_for_step` is invoked once per optimization step and returns the
  /// batch for that step (full buffer or a fresh minibatch).
  virtual FitReport fit(const std::function<RegressionBatch(Rng&)>& batch_for_step,
                        std::size_t steps, Rng& rng) = 0;
  virtual nlohmann::json checkpoint() const = 0;
};

class GeneratorBelief final : public DynamicsBelief {
 public:
  GeneratorBelief(GeneratorBundle bundle, SvgdConfig svgd, AdamConfig adam)
      : bundle_(std::move(bundle)), svgd_(svgd), opt_(adam, bundle_.eta().size()) {
    svgd_.validate();
  }

  const MlpSpec& model_spec() const override { return bundle_.target_spec(); }
  const GeneratorBundle& bundle() const { return bundle_; }
  const AdamState& optimizer() const { return opt_; }

  /// Unlabeled inputs appended to every training batch as kernel probes.
  void set_probes(Matrix probes, double weight = 1.0) {
    probes_ = std::move(probes);
    probe_weight_ = weight;
  }
  const Matrix& probes() const { return probes_; }

  ModelSet draw(Rng& rng) override {
    return to_model_set(bundle_.target_spec(), sample_ensemble(bundle_, svgd_.particle_count, rng));
  }

  FitReport fit(const std::function<RegressionBatch(Rng&)>& batch_for_step, std::size_t steps,
                Rng& rng) override {
    FitReport rep;
    for (std::size_t k = 0; k < steps; ++k) {
      RegressionBatch batch = batch_for_step(rng);
      if (probes_.rows() > 0) {
        batch.probes = probes_;
        batch.probe_weight = probe_weight_;
      }
      auto noise = sample_noise(svgd_.particle_count, bundle_.noise_length(), rng);
      SvgdDiagnostics d = amortized_update(bundle_, noise, batch, svgd_, opt_);
      rep.mean_loss = d.mean_loss;
      rep.bandwidth = d.bandwidth;
      rep.phi_norm = d.phi_norm;
      ++rep.steps;
      if (!d.fault.empty()) {
        ++rep.faults;
        rep.last_fault = d.fault;
      }
    }
    return rep;
  }

  nlohmann::json checkpoint() const override {
    return {{"kind", "generator"},
            {"bundle", to_json(bundle_)},
            {"optimizer",
             {{"step_count", opt_.step_count},
              {"first_moment", opt_.first_moment},
              {"second_moment", opt_.second_moment}}}};
  }

 private:
  GeneratorBundle bundle_;
  SvgdConfig svgd_;
  AdamState opt_;
  Matrix probes_;
  double probe_weight_ = 1.0;
};

class EnsembleBelief final : public DynamicsBelief {
 public:
  template <class R>
  EnsembleBelief(MlpSpec spec, std::size_t members, AdamConfig adam, R& rng) : spec_(std::move(spec)) {
    if (members == 0) throw rejected_input("ensemble needs at least one member");
    for (std::size_t i = 0; i < members; ++i) {
      members_.thetas.push_back(init_params(spec_, rng));
      opts_.emplace_back(adam, spec_.param_count());
    }
    members_.spec = spec_;
  }

  const MlpSpec& model_spec() const override { return spec_; }
  const ModelSet& members() const { return members_; }

  ModelSet draw(Rng&) override { return members_; }

  /// Every member takes one Adam step per call on the same regression loss
  /// the generator's likelihood term uses.
  FitReport fit(const std::function<RegressionBatch(Rng&)>& batch_for_step, std::size_t steps,
                Rng& rng) override {
    FitReport rep;
    for (std::size_t k = 0; k < steps; ++k) {
      RegressionBatch batch = batch_for_step(rng);
      FunctionBatchEval ev = detail::evaluate_rows(spec_, stack_rows(members_.thetas), batch);
      double loss = 0.0;
      for (std::size_t i = 0; i < members_.size(); ++i) {
        std::vector<double> g(spec_.param_count(), 0.0);
        Matrix neg = -ev.loss_grads[i];
        backward_batch(spec_, members_.thetas[i], ev.traces[i], neg, g);
        try {
          adam_step(opts_[i], members_.thetas[i], g);
        } catch (const numeric_fault& e) {
          ++rep.faults;
          rep.last_fault = e.what();
        }
        loss += ev.per_particle_loss[static_cast<Eigen::Index>(i)] / ev.total_weight;
      }
      rep.mean_loss = loss / static_cast<double>(members_.size());
      ++rep.steps;
    }
    return rep;
  }

  nlohmann::json checkpoint() const override {
    nlohmann::json ms = nlohmann::json::array();
    for (std::size_t i = 0; i < members_.size(); ++i)
      ms.push_back({{"theta", members_.thetas[i]},
                    {"step_count", opts_[i].step_count},
                    {"first_moment", opts_[i].first_moment},
                    {"second_moment", opts_[i].second_moment}});
    return {{"kind", "ensemble"}, {"spec", to_json(spec_)}, {"members", ms}};
  }

 private:
  MlpSpec spec_;
  ModelSet members_;
  std::vector<AdamState> opts_;
};

}  // namespace iex
