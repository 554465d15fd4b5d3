#pragma once

#include <string>
#include <vector>

#include "ssbwind/evaluate.hpp"
#include "ssbwind/inference.hpp"
#include "ssbwind/krige.hpp"

namespace ssbwind {

enum class ModelKind { SSB, Krige };

// One of the compared models: an SSB mixture with a given kernel or the
// Gaussian kriging baseline.
struct ModelSpec {
  std::string name;
  ModelKind kind = ModelKind::SSB;
  SSBConfig ssb;
};

// The three comparison models: uniform kernels with exponential bandwidths,
// squared-exponential kernels with inverse-gamma bandwidths, and kriging.
inline std::vector<ModelSpec> standard_models(const SSBConfig& base) {
  ModelSpec uni{"ssb-uniform", ModelKind::SSB, base};
  uni.ssb.kernel.family = KernelFamily::Uniform;
  uni.ssb.kernel.bandwidth = BandwidthModel::Exponential;
  ModelSpec sq{"ssb-sqexp", ModelKind::SSB, base};
  sq.ssb.kernel.family = KernelFamily::SquaredExponential;
  sq.ssb.kernel.bandwidth = BandwidthModel::InverseGamma;
  ModelSpec kr{"krige", ModelKind::Krige, base};
  return {uni, sq, kr};
}

inline ModelSpec model_by_name(const std::string& name, const SSBConfig& base) {
  for (auto& m : standard_models(base)) {
    if (m.name == name) return m;
  }
  throw ConfigError("unknown model '" + name + "' (expected ssb-uniform, ssb-sqexp or krige)");
}

inline PosteriorSamples fit_model(const ModelSpec& spec, const FitData& data, const McmcConfig& mcmc,
                                  const RngContract& rng, const SSBFitOptions& opts = {}) {
  if (spec.kind == ModelKind::Krige) {
    return fit_krige(data, mcmc, rng, KrigePriors::from(opts.priors), spec.ssb.kernel.lambda);
  }
  SSBConfig cfg = spec.ssb;
  cfg.response_dim = data.dims;
  if (cfg.Sigma.rows() != data.dims) cfg.Sigma = Eigen::MatrixXd::Identity(data.dims, data.dims);
  return fit_ssb(data, cfg, mcmc, rng, opts);
}

inline Eigen::MatrixXd model_replicates(const PosteriorSamples& samples, const FitData& data,
                                        const std::vector<ScalarObs>& targets, const RngContract& rng,
                                        std::size_t max_draws = 0) {
  if (samples.model == "krige") return krige_replicates(samples, data, targets, rng, max_draws);
  return ssb_replicates(samples, data, targets, rng, max_draws);
}

struct CompareOptions {
  double holdout_fraction = 0.0;  // 0 skips the holdout refit
  std::size_t max_draws = 0;      // draws used for replicates (0: all)
};

struct ModelEvaluation {
  EvalReport report;
  PosteriorSamples samples;
};

// Fits one model on the full data (EMSPE and residual map) and, when asked,
// refits on a component-level holdout split for interval coverage.
inline ModelEvaluation evaluate_model(const ModelSpec& spec, const FitData& data, const McmcConfig& mcmc,
                                      const RngContract& rng, const CompareOptions& opt,
                                      const SSBFitOptions& fit_opts = {}) {
  ModelEvaluation ev;
  ev.report.model = spec.name;
  ev.samples = fit_model(spec, data, mcmc, rng.derive(0), fit_opts);
  const Eigen::MatrixXd rep = model_replicates(ev.samples, data, data.obs, rng.derive(1), opt.max_draws);
  ev.report.emspe = emspe(rep, data.obs);
  ev.report.residuals = residual_map(rep, data, data.obs);
  if (opt.holdout_fraction > 0.0) {
    const HoldoutSplit split = holdout_split(data, opt.holdout_fraction, rng.derive(2));
    const PosteriorSamples hs = fit_model(spec, split.train, mcmc, rng.derive(3), fit_opts);
    const Eigen::MatrixXd trep = model_replicates(hs, split.train, split.test, rng.derive(4), opt.max_draws);
    ev.report.coverage = interval_coverage(trep, split.test);
  }
  return ev;
}

// Every model gets its own stream derived from `rng` by its position.
inline std::vector<ModelEvaluation> compare_models(const std::vector<ModelSpec>& specs, const FitData& data,
                                                   const McmcConfig& mcmc, const RngContract& rng,
                                                   const CompareOptions& opt, const SSBFitOptions& fit_opts = {}) {
  std::vector<ModelEvaluation> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    out.push_back(evaluate_model(specs[i], data, mcmc, rng.derive(i), opt, fit_opts));
  }
  return out;
}

}  // namespace ssbwind
