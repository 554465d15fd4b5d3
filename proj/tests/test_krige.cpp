#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "ssbwind/krige.hpp"
#include "ssbwind/synthetic.hpp"
#include "support.hpp"

using namespace ssbwind;
using testing_support::make_data;

namespace {

Site at(double s1, double s2) { return Site{s1, s2, -90.0 + s1, 20.0 + s2}; }

McmcConfig mcmc(int n_iter, int burn_in, int thin = 1) {
  McmcConfig mc;
  mc.n_iter = n_iter;
  mc.burn_in = burn_in;
  mc.adapt_until = burn_in;
  mc.thin = thin;
  return mc;
}

KrigeState some_state() {
  KrigeState st;
  st.Sigma = (Eigen::MatrixXd(2, 2) << 3.0, -0.8, -0.8, 2.0).finished();
  st.lambda = 0.25;
  st.noise_var = {{{0.7, 1.1}, {0.3, 0.4}}};
  st.bias = {-1.5, 0.8};
  return st;
}

FitData gaussian_data(std::uint64_t seed, int grid = 6) {
  TruthConfig tc;
  tc.residual = ResidualTruth::Gaussian;
  tc.grid_lon = grid;
  tc.grid_lat = grid;
  tc.n_buoys = 4;
  const auto syn = generate_synthetic(tc, {seed, 0});
  return make_fit_data(syn.dataset, holland_mean(tc.holland));
}

PosteriorSamples single_draw(const FitData& data, const KrigeState& st) {
  const KrigeLayout L{data.dims};
  PosteriorSamples s;
  s.model = "krige";
  s.columns = L.names();
  s.meta = krige_meta(data, KrigePriors{});
  s.draws = L.pack(st);
  s.chain = {0};
  return s;
}

}  // namespace

TEST(KrigeLoglik, SingleSiteIsBivariateNormal) {
  FitData data = make_data({at(0.4, 0.6)}, {{0, 0, Source::Satellite, 1.3}, {0, 1, Source::Satellite, -0.4}});
  data.mean << 0.5, 0.2;
  KrigeState st = some_state();
  st.bias = {0.0, 0.0};
  const Eigen::Matrix2d C = st.Sigma + Eigen::Matrix2d(Eigen::Vector2d(0.7, 1.1).asDiagonal());
  const Eigen::Vector2d r(1.3 - 0.5, -0.4 - 0.2);
  const double det = C(0, 0) * C(1, 1) - C(0, 1) * C(1, 0);
  const double q = (C(1, 1) * r(0) * r(0) - 2.0 * C(0, 1) * r(0) * r(1) + C(0, 0) * r(1) * r(1)) / det;
  const double expect = -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * q;
  EXPECT_NEAR(marginal_loglik(st, data), expect, 1e-12);
}

TEST(KrigeLoglik, InflatedNoiseLowersWellFitData) {
  const FitData data = gaussian_data(1);
  KrigeState st;
  st.Sigma = TruthConfig{}.gaussian_Sigma;
  st.lambda = TruthConfig{}.gaussian_lambda;
  st.noise_var = TruthConfig{}.noise_var;
  st.bias = TruthConfig{}.bias;
  KrigeState loud = st;
  for (auto& src : loud.noise_var) {
    for (double& v : src) v *= 4.0;
  }
  EXPECT_LT(marginal_loglik(loud, data), marginal_loglik(st, data));
}

TEST(KrigeLoglik, InvariantUnderObservationReordering) {
  const FitData data = gaussian_data(2);
  FitData shuffled = data;
  std::reverse(shuffled.obs.begin(), shuffled.obs.end());
  std::rotate(shuffled.obs.begin(), shuffled.obs.begin() + 17, shuffled.obs.end());
  const KrigeState st = some_state();
  EXPECT_NEAR(marginal_loglik(st, data), marginal_loglik(st, shuffled), 1e-9);
}

TEST(KrigeLoglik, DatasetOverloadMatches) {
  TruthConfig tc;
  tc.grid_lon = 4;
  tc.grid_lat = 4;
  const auto syn = generate_synthetic(tc, {3, 0});
  const KrigeState st = some_state();
  const double a = marginal_loglik(st, syn.dataset, holland_mean(tc.holland));
  const double b = marginal_loglik(st, make_fit_data(syn.dataset, holland_mean(tc.holland)));
  EXPECT_EQ(a, b);
}

TEST(KrigeCovariance, IsTensorProductOfCorrelationAndSigma) {
  const std::vector<Site> sites = {at(0.1, 0.2), at(0.3, 0.9), at(0.5, 0.5), at(0.8, 0.1), at(0.95, 0.7)};
  const KrigeState st = some_state();
  const Eigen::MatrixXd K = field_covariance(st.Sigma, st.lambda, sites);
  Eigen::MatrixXd R(5, 5);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      const double d = std::hypot(sites[static_cast<std::size_t>(i)].s1 - sites[static_cast<std::size_t>(j)].s1,
                                  sites[static_cast<std::size_t>(i)].s2 - sites[static_cast<std::size_t>(j)].s2);
      R(i, j) = std::exp(-d / st.lambda);
    }
  }
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) EXPECT_NEAR(K(2 * i + a, 2 * j + b), R(i, j) * st.Sigma(a, b), 1e-15);
      }
    }
  }
  // The observation covariance adds the per-source noise on the diagonal only.
  std::vector<ScalarObs> obs;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    for (int c = 0; c < 2; ++c) obs.push_back({i, c, i % 2 ? Source::Buoy : Source::Satellite, 0.0});
  }
  const FitData data = make_data(sites, obs);
  const Eigen::MatrixXd C = KrigeModel(data).covariance(st);
  Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(10, 10);
  for (int k = 0; k < 10; ++k) noise(k, k) = st.noise_var[static_cast<std::size_t>(obs[static_cast<std::size_t>(k)].source)][static_cast<std::size_t>(k % 2)];
  EXPECT_LT((C - K - noise).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(KrigeFactorization, JitterRescuesSemidefiniteAndReportsFailure) {
  Eigen::MatrixXd psd(2, 2);
  psd << 1.0, 1.0, 1.0, 1.0;
  EXPECT_NO_THROW(factorize_spd(psd, "test"));
  Eigen::MatrixXd indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  try {
    factorize_spd(indefinite, "test");
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("smallest eigenvalue"), std::string::npos);
  }
}

TEST(KrigePrediction, InterpolatesAnObservedBuoyAsNoiseVanishes) {
  FitData data = make_data({at(0.3, 0.3), at(0.6, 0.7), at(0.8, 0.2)},
                           {{0, 0, Source::Satellite, 2.0}, {1, 0, Source::Buoy, 3.5}, {1, 1, Source::Buoy, -1.0},
                            {2, 1, Source::Satellite, 0.4}});
  data.mean << 1.0, 0.0, 2.0, -0.5, 0.0, 1.0;
  KrigeState st = some_state();
  st.noise_var[1] = {1e-10, 1e-10};
  const auto samples = single_draw(data, st);
  const MeanField mf = [&](const Site& s) {
    for (std::size_t i = 0; i < data.sites.size(); ++i) {
      if (data.sites[i] == s) return WindVector{data.mean(static_cast<Eigen::Index>(i), 0), data.mean(static_cast<Eigen::Index>(i), 1)};
    }
    return WindVector{};
  };
  const auto pred = predict_krige(samples, data, {data.sites[1]}, mf, {4, 0});
  EXPECT_NEAR(pred.mean(0, 0), 3.5, 1e-6);
  EXPECT_NEAR(pred.mean(0, 1), -1.0, 1e-6);
  EXPECT_NEAR(pred.hi(0, 0) - pred.lo(0, 0), 0.0, 1e-3);
}

TEST(KrigePrediction, VanishingSigmaGivesMeanPlusBias) {
  const FitData data = gaussian_data(5, 4);
  KrigeState st = some_state();
  st.Sigma = 1e-14 * Eigen::MatrixXd::Identity(2, 2);
  const auto samples = single_draw(data, st);
  const MeanField mf = [](const Site& s) { return WindVector{3.0 * s.s1, 1.0 - s.s2}; };
  const std::vector<Site> sites = {at(0.2, 0.4), at(0.7, 0.9)};
  PredictOptions sat;
  sat.observation_source = Source::Satellite;
  const auto latent = predict_krige(samples, data, sites, mf, {5, 1});
  const auto obs = predict_krige(samples, data, sites, mf, {5, 1}, sat);
  for (int i = 0; i < 2; ++i) {
    const WindVector h = mf(sites[static_cast<std::size_t>(i)]);
    EXPECT_NEAR(latent.mean(i, 0), h.u, 1e-9);
    EXPECT_NEAR(latent.mean(i, 1), h.v, 1e-9);
    EXPECT_NEAR(obs.mean(i, 0), h.u + st.bias[0], 1e-9);
    EXPECT_NEAR(obs.mean(i, 1), h.v + st.bias[1], 1e-9);
  }
}

TEST(KrigePrediction, FarFieldRevertsToTheMean) {
  const FitData data = gaussian_data(6, 4);
  const KrigeState st = some_state();
  const auto samples = single_draw(data, st);
  const MeanField mf = [](const Site& s) { return WindVector{s.s1, s.s2}; };
  const Site far{80.0, 80.0, 0.0, 0.0};
  const auto pred = predict_krige(samples, data, {far}, mf, {6, 0});
  EXPECT_DOUBLE_EQ(pred.mean(0, 0), 80.0);
  EXPECT_DOUBLE_EQ(pred.mean(0, 1), 80.0);
  // The interval is the prior one: +- 1.96 sqrt(Sigma_cc) for a single draw
  // up to sampling noise of the one retained sample.
  EXPECT_GT(pred.hi(0, 0), pred.lo(0, 0) - 1e-12);
}

TEST(KrigeFit, FixedSeedGivesIdenticalChains) {
  const FitData data = gaussian_data(7, 4);
  const auto a = fit_krige(data, mcmc(200, 50), {7, 1});
  const auto b = fit_krige(data, mcmc(200, 50), {7, 1});
  const auto c = fit_krige(data, mcmc(200, 50), {7, 2});
  EXPECT_EQ(a.draws, b.draws);
  EXPECT_NE(a.draws, c.draws);
  EXPECT_EQ(a.n_draws(), 150u);
  for (const auto& [block, rate] : a.acceptance) {
    EXPECT_GT(rate, 0.0) << block;
    EXPECT_LT(rate, 1.0) << block;
  }
}

TEST(KrigeFit, PermutedObservationsGiveTheSameChain) {
  const FitData data = gaussian_data(8, 4);
  FitData perm = data;
  std::reverse(perm.obs.begin(), perm.obs.end());
  const auto a = fit_krige(data, mcmc(150, 50), {8, 1});
  const auto b = fit_krige(perm, mcmc(150, 50), {8, 1});
  EXPECT_LT((a.draws - b.draws).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(KrigeFit, BiasesConcentrateWithoutNoiseOrResidual) {
  TruthConfig tc;
  tc.residual = ResidualTruth::None;
  tc.noise_var = {{{0.0, 0.0}, {0.0, 0.0}}};
  tc.grid_lon = 5;
  tc.grid_lat = 5;
  tc.n_buoys = 3;
  const auto syn = generate_synthetic(tc, {9, 0});
  const FitData data = make_fit_data(syn.dataset, holland_mean(tc.holland));
  const auto s = fit_krige(data, mcmc(1500, 500), {9, 1});
  for (int c = 0; c < 2; ++c) {
    const auto sum = s.summary(c == 0 ? "bias_u" : "bias_v");
    EXPECT_GT(sum.q025, tc.bias[static_cast<std::size_t>(c)] - 0.1);
    EXPECT_LT(sum.q975, tc.bias[static_cast<std::size_t>(c)] + 0.1);
  }
}

TEST(KrigeFit, RecoversGaussianTruthAcrossSeeds) {
  const TruthConfig tc;
  int cover_lambda = 0, cover_sigma = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FitData data = gaussian_data(100 + seed, 8);
    const auto s = fit_krige(data, mcmc(2500, 500, 2), {100 + seed, 1});
    const auto lam = s.summary("lambda");
    const auto s11 = s.summary("Sigma11");
    cover_lambda += lam.q05 <= tc.gaussian_lambda && tc.gaussian_lambda <= lam.q95;
    cover_sigma += s11.q05 <= tc.gaussian_Sigma(0, 0) && tc.gaussian_Sigma(0, 0) <= s11.q95;
  }
  EXPECT_GE(cover_lambda, 7);
  EXPECT_GE(cover_sigma, 7);
}

TEST(KrigeReplicates, ShapeAndNoiseFreeLimit) {
  const FitData data = gaussian_data(10, 4);
  KrigeState st = some_state();
  st.noise_var = {{{1e-12, 1e-12}, {1e-12, 1e-12}}};
  const auto samples = single_draw(data, st);
  const auto rep = krige_replicates(samples, data, data.obs, {10, 1});
  ASSERT_EQ(rep.rows(), 1);
  ASSERT_EQ(rep.cols(), static_cast<Eigen::Index>(data.obs.size()));
  for (std::size_t k = 0; k < data.obs.size(); ++k) EXPECT_NEAR(rep(0, static_cast<Eigen::Index>(k)), data.obs[k].value, 1e-4);
}
