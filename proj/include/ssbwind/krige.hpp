#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ssbwind/error.hpp"
#include "ssbwind/fit_data.hpp"
#include "ssbwind/inference.hpp"
#include "ssbwind/mcmc.hpp"
#include "ssbwind/prediction.hpp"
#include "ssbwind/rng.hpp"

namespace ssbwind {

struct KrigeState {
  Eigen::MatrixXd Sigma = Eigen::MatrixXd::Identity(2, 2);
  double lambda = 0.2;
  NoiseVar noise_var{{{1.0, 1.0}, {1.0, 1.0}}};
  std::array<double, 2> bias{0.0, 0.0};
};

// Cholesky factorization with the jitter policy: on failure add 1e-10 times
// the mean diagonal once and retry; a second failure reports the smallest
// eigenvalue.
inline Eigen::LLT<Eigen::MatrixXd> factorize_spd(Eigen::MatrixXd K, const std::string& what) {
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() == Eigen::Success) return llt;
  K.diagonal().array() += 1e-10 * K.diagonal().mean();
  llt.compute(K);
  if (llt.info() == Eigen::Success) return llt;
  const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(K, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  throw NumericError(what + ": covariance not positive definite after jitter (smallest eigenvalue " +
                     io::format_double(min_eig) + ")");
}

// Separable covariance Sigma(c, c') exp(-||s - s'|| / lambda) between
// (site, component) pairs.
inline double field_cov(const Eigen::MatrixXd& Sigma, double lambda, const Site& s, int c, const Site& t, int ct) {
  return Sigma(c, ct) * std::exp(-std::hypot(s.s1 - t.s1, s.s2 - t.s2) / lambda);
}

// Latent-field covariance over all components at the given sites, ordered
// site-major: (s_0, u), (s_0, v), (s_1, u), ...
inline Eigen::MatrixXd field_covariance(const Eigen::MatrixXd& Sigma, double lambda, const std::vector<Site>& sites) {
  const auto d = Sigma.rows();
  const auto n = static_cast<Eigen::Index>(sites.size());
  Eigen::MatrixXd K(n * d, n * d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = 0; b < d; ++b) {
          K(i * d + a, j * d + b) = field_cov(Sigma, lambda, sites[static_cast<std::size_t>(i)], static_cast<int>(a),
                                              sites[static_cast<std::size_t>(j)], static_cast<int>(b));
        }
      }
    }
  }
  return K;
}

// Gaussian model of the observed scalars with the latent field marginalized.
class KrigeModel {
 public:
  explicit KrigeModel(const FitData& data) : data_(data) {
    const auto N = static_cast<Eigen::Index>(data.obs.size());
    dist_.resize(N, N);
    for (Eigen::Index k = 0; k < N; ++k) {
      const Site& s = data.sites[data.obs[static_cast<std::size_t>(k)].site];
      for (Eigen::Index l = 0; l <= k; ++l) {
        const Site& t = data.sites[data.obs[static_cast<std::size_t>(l)].site];
        dist_(k, l) = dist_(l, k) = std::hypot(s.s1 - t.s1, s.s2 - t.s2);
      }
    }
  }

  const FitData& data() const { return data_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(data_.obs.size()); }

  Eigen::MatrixXd covariance(const KrigeState& st) const {
    const Eigen::Index N = size();
    Eigen::MatrixXd K(N, N);
    const Eigen::MatrixXd rho = (-dist_.array() / st.lambda).exp().matrix();
    for (Eigen::Index k = 0; k < N; ++k) {
      const auto& ok = data_.obs[static_cast<std::size_t>(k)];
      for (Eigen::Index l = 0; l < N; ++l) {
        K(k, l) = st.Sigma(ok.component, data_.obs[static_cast<std::size_t>(l)].component) * rho(k, l);
      }
      K(k, k) += st.noise_var[static_cast<std::size_t>(ok.source)][static_cast<std::size_t>(ok.component)];
    }
    return K;
  }

  // Observations minus Holland mean and satellite bias.
  Eigen::VectorXd centered(const KrigeState& st) const {
    Eigen::VectorXd r(size());
    for (Eigen::Index k = 0; k < size(); ++k) {
      const auto& o = data_.obs[static_cast<std::size_t>(k)];
      r(k) = o.value - data_.mean_of(o) - (o.source == Source::Satellite ? st.bias[static_cast<std::size_t>(o.component)] : 0.0);
    }
    return r;
  }

  static double loglik_from(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& r) {
    const Eigen::VectorXd z = llt.matrixL().solve(r);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * (z.squaredNorm() + logdet + static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi));
  }

  double loglik(const KrigeState& st) const {
    return loglik_from(factorize_spd(covariance(st), "kriging log-likelihood"), centered(st));
  }

 private:
  FitData data_;
  Eigen::MatrixXd dist_;
};

inline double marginal_loglik(const KrigeState& st, const FitData& data) { return KrigeModel(data).loglik(st); }

inline double marginal_loglik(const KrigeState& st, const Dataset& ds, const MeanField& mean_field) {
  const FitData data = make_fit_data(ds, mean_field, static_cast<int>(st.Sigma.rows()));
  return marginal_loglik(st, data);
}

struct KrigePriors {
  double lambda_max = 1.0;
  double var_shape = 0.01;
  double var_scale = 0.01;
  double tau_shape = 0.01;
  double tau_scale = 0.01;
  double wishart_df = 0.1;
  double wishart_scale = 0.1;
  double bias_var = 100.0;
  double sigma_eig_min = 1e-8;
  double sigma_eig_max = 1e8;

  static KrigePriors from(const SSBPriors& p) {
    return {p.lambda_max, p.var_shape,  p.var_scale,     p.tau_shape,     p.tau_scale,
            p.wishart_df, p.wishart_scale, p.bias_var, p.sigma_eig_min, p.sigma_eig_max};
  }
};

// Column order of a kriging draw.
struct KrigeLayout {
  int dims = 2;
  int n_sigma() const { return dims == 1 ? 1 : 3; }
  Eigen::Index sigma() const { return 0; }
  Eigen::Index lambda() const { return n_sigma(); }
  Eigen::Index variance(int src, int c) const { return n_sigma() + 1 + src * dims + c; }
  Eigen::Index bias(int c) const { return n_sigma() + 1 + 2 * dims + c; }
  Eigen::Index size() const { return bias(0) + dims; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    if (dims == 1) {
      out.push_back("tau2");
    } else {
      out.insert(out.end(), {"Sigma11", "Sigma12", "Sigma22"});
    }
    out.push_back("lambda");
    const char* src[] = {"sat", "buoy"};
    const char* comp[] = {"u", "v"};
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < dims; ++c) out.push_back(std::string("sigma2_") + src[s] + "_" + comp[c]);
    }
    for (int c = 0; c < dims; ++c) out.push_back(std::string("bias_") + comp[c]);
    return out;
  }

  Eigen::RowVectorXd pack(const KrigeState& st) const {
    Eigen::RowVectorXd row(size());
    if (dims == 1) {
      row(0) = st.Sigma(0, 0);
    } else {
      row(0) = st.Sigma(0, 0);
      row(1) = st.Sigma(0, 1);
      row(2) = st.Sigma(1, 1);
    }
    row(lambda()) = st.lambda;
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < dims; ++c) row(variance(s, c)) = st.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < dims; ++c) row(bias(c)) = st.bias[static_cast<std::size_t>(c)];
    return row;
  }

  KrigeState unpack(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    KrigeState st;
    st.Sigma.resize(dims, dims);
    if (dims == 1) {
      st.Sigma(0, 0) = row(0);
    } else {
      st.Sigma << row(0), row(1), row(1), row(2);
    }
    st.lambda = row(lambda());
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < dims; ++c) st.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] = row(variance(s, c));
    }
    for (int c = 0; c < dims; ++c) st.bias[static_cast<std::size_t>(c)] = row(bias(c));
    return st;
  }
};

// Metropolis-within-Gibbs over (Sigma, lambda, error variances) against the
// marginal likelihood, with an exact Gibbs step for the biases.
class KrigeChain {
 public:
  KrigeChain(const FitData& data, const McmcConfig& mcmc, const RngContract& rng, const KrigePriors& pr = {},
             double lambda_init = 0.2)
      : model_(data), mcmc_(mcmc), pr_(pr), eng_(make_engine(rng)) {
    mcmc_.validate();
    if (data.obs.empty()) throw ConfigError("kriging: no observations");
    if (!(lambda_init > 0.0 && lambda_init < pr_.lambda_max)) throw ConfigError("kriging: initial lambda out of range");
    for (const auto& o : data.obs) ++cell_count_[static_cast<std::size_t>(o.source)][static_cast<std::size_t>(o.component)];
    sc_sigma_ = ProposalScale(mcmc_.scale_sigma);
    sc_lambda_ = ProposalScale(mcmc_.scale_lambda);
    sc_var_ = ProposalScale(mcmc_.scale_variance);
    initialize(lambda_init);
  }

  const KrigeState& state() const { return st_; }
  double current_loglik() const { return loglik_; }

  void set_state(const KrigeState& st) {
    st_ = st;
    refresh();
  }

  double log_prior_sigma(const Eigen::MatrixXd& S) const {
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S, Eigen::EigenvaluesOnly).eigenvalues();
    if (!(ev.minCoeff() >= pr_.sigma_eig_min && ev.maxCoeff() <= pr_.sigma_eig_max)) {
      return -std::numeric_limits<double>::infinity();
    }
    if (S.rows() == 1) {
      const double t = S(0, 0);
      return -(pr_.tau_shape + 1.0) * std::log(t) - pr_.tau_scale / t;
    }
    const double p = 2.0;
    return -0.5 * (pr_.wishart_df + p + 1.0) * std::log(S.determinant()) -
           0.5 * pr_.wishart_scale * S.inverse().trace();
  }

  bool update_Sigma(int iter) {
    const int d = static_cast<int>(st_.Sigma.rows());
    KrigeState prop = st_;
    double log_jac_cur = 0.0, log_jac_new = 0.0;
    const double h = sc_sigma_.scale();
    if (d == 1) {
      prop.Sigma(0, 0) = st_.Sigma(0, 0) * std::exp(h * random::normal(eng_));
      log_jac_cur = std::log(st_.Sigma(0, 0));
      log_jac_new = std::log(prop.Sigma(0, 0));
    } else {
      const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(st_.Sigma).matrixL();
      const double l11 = L(0, 0) * std::exp(h * random::normal(eng_));
      const double l21 = L(1, 0) + h * random::normal(eng_);
      const double l22 = L(1, 1) * std::exp(h * random::normal(eng_));
      Eigen::MatrixXd Lp(2, 2);
      Lp << l11, 0.0, l21, l22;
      prop.Sigma = Lp * Lp.transpose();
      log_jac_cur = 3.0 * std::log(L(0, 0)) + 2.0 * std::log(L(1, 1));
      log_jac_new = 3.0 * std::log(l11) + 2.0 * std::log(l22);
    }
    const double base = log_prior_sigma(st_.Sigma) + log_jac_cur;
    return mh(prop, log_prior_sigma(prop.Sigma) + log_jac_new - base, sc_sigma_, iter);
  }

  bool update_lambda(int iter) {
    const double lmax = pr_.lambda_max;
    KrigeState prop = st_;
    prop.lambda = lmax * inv_logit(logit(st_.lambda / lmax) + sc_lambda_.scale() * random::normal(eng_));
    if (!(prop.lambda > 0.0 && prop.lambda < lmax)) {
      sc_lambda_.record(false, iter, mcmc_);
      return false;
    }
    auto jac = [&](double l) { return std::log(l) + std::log(lmax - l); };
    return mh(prop, jac(prop.lambda) - jac(st_.lambda), sc_lambda_, iter);
  }

  // Joint log-scale random walk over the variances of observed cells.
  bool update_variances(int iter) {
    KrigeState prop = st_;
    double lr = 0.0;
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < 2; ++c) {
        if (cell_count_[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] == 0) continue;
        const double cur = st_.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
        const double nv = cur * std::exp(sc_var_.scale() * random::normal(eng_));
        prop.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] = nv;
        auto lp = [&](double v) { return -pr_.var_shape * std::log(v) - pr_.var_scale / v; };
        lr += lp(nv) - lp(cur);
      }
    }
    return mh(prop, lr, sc_var_, iter);
  }

  // (mean, covariance) of the Gaussian full conditional of the biases.
  GaussianConditional bias_conditional() const {
    const int d = static_cast<int>(st_.Sigma.rows());
    const auto& data = model_.data();
    const Eigen::Index N = model_.size();
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N, d);
    Eigen::VectorXd r(N);
    for (Eigen::Index k = 0; k < N; ++k) {
      const auto& o = data.obs[static_cast<std::size_t>(k)];
      if (o.source == Source::Satellite) X(k, o.component) = 1.0;
      r(k) = o.value - data.mean_of(o);
    }
    const Eigen::MatrixXd KiX = llt_.solve(X);
    Eigen::MatrixXd P = X.transpose() * KiX;
    P.diagonal().array() += 1.0 / pr_.bias_var;
    Eigen::LLT<Eigen::MatrixXd> pl(P);
    GaussianConditional g;
    g.cov = pl.solve(Eigen::MatrixXd::Identity(d, d));
    g.mean = pl.solve(KiX.transpose() * r);
    return g;
  }

  void update_bias() {
    const auto g = bias_conditional();
    const Eigen::VectorXd b = random::mvnormal(eng_, g.mean, 0.5 * (g.cov + g.cov.transpose()));
    for (Eigen::Index c = 0; c < b.size(); ++c) st_.bias[static_cast<std::size_t>(c)] = b(c);
    loglik_ = KrigeModel::loglik_from(llt_, model_.centered(st_));
  }

  void sweep(int iter) {
    update_Sigma(iter);
    update_lambda(iter);
    update_variances(iter);
    update_bias();
  }

  std::map<std::string, double> acceptance() const {
    return {{"Sigma", acceptance_rate(sc_sigma_.accepts(), sc_sigma_.tries())},
            {"lambda", acceptance_rate(sc_lambda_.accepts(), sc_lambda_.tries())},
            {"variances", acceptance_rate(sc_var_.accepts(), sc_var_.tries())}};
  }

 private:
  bool mh(const KrigeState& prop, double log_prior_ratio, ProposalScale& sc, int iter) {
    bool ok = false;
    try {
      if (!std::isfinite(log_prior_ratio)) throw NumericError("proposal outside the prior support");
      const auto llt = factorize_spd(model_.covariance(prop), "kriging proposal");
      const double ll = KrigeModel::loglik_from(llt, model_.centered(prop));
      ok = std::isfinite(ll) && metropolis_accept(ll - loglik_ + log_prior_ratio, eng_);
      if (ok) {
        st_ = prop;
        llt_ = llt;
        loglik_ = ll;
      }
    } catch (const NumericError&) {
      ok = false;
    }
    sc.record(ok, iter, mcmc_);
    return ok;
  }

  void refresh() {
    llt_ = factorize_spd(model_.covariance(st_), "kriging");
    loglik_ = KrigeModel::loglik_from(llt_, model_.centered(st_));
  }

  // Sigma from the per-component variance of the residuals from the mean,
  // error variances at a tenth of it, biases at zero.
  void initialize(double lambda_init) {
    const auto& data = model_.data();
    const int d = data.dims;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sumsq = Eigen::VectorXd::Zero(d), n = Eigen::VectorXd::Zero(d);
    for (const auto& o : data.obs) {
      const double r = o.value - data.mean_of(o);
      sum(o.component) += r;
      sumsq(o.component) += r * r;
      n(o.component) += 1.0;
    }
    st_.Sigma = Eigen::MatrixXd::Identity(d, d);
    for (int c = 0; c < d; ++c) {
      if (n(c) >= 2.0) st_.Sigma(c, c) = std::max(1e-2, sumsq(c) / n(c) - (sum(c) / n(c)) * (sum(c) / n(c)));
    }
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < 2; ++c) {
        st_.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] =
            c < d ? std::max(1e-2, 0.1 * st_.Sigma(c, c)) : 1.0;
      }
    }
    st_.lambda = lambda_init;
    st_.bias = {0.0, 0.0};
    refresh();
    if (!std::isfinite(loglik_)) throw NumericError("kriging: non-finite log-likelihood at initialization");
  }

  KrigeModel model_;
  McmcConfig mcmc_;
  KrigePriors pr_;
  Engine eng_;
  KrigeState st_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double loglik_ = 0.0;
  std::array<std::array<std::size_t, 2>, 2> cell_count_{};
  ProposalScale sc_sigma_, sc_lambda_, sc_var_;
};

inline nlohmann::json krige_meta(const FitData& data, const KrigePriors& pr) {
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : data.sites) sites.push_back({s.s1, s.s2, s.raw_lon, s.raw_lat});
  return {{"dims", data.dims}, {"n_sites", data.n_sites()}, {"lambda_max", pr.lambda_max}, {"sites", sites}};
}

inline PosteriorSamples fit_krige(const FitData& data, const McmcConfig& mcmc, const RngContract& rng,
                                  const KrigePriors& pr = {}, double lambda_init = 0.2) {
  mcmc.validate();
  return run_chains(mcmc.n_chains, [&](int c) {
    KrigeChain chain(data, mcmc, rng.derive(c), pr, lambda_init);
    const KrigeLayout L{data.dims};
    PosteriorSamples out;
    out.model = "krige";
    out.columns = L.names();
    out.meta = krige_meta(data, pr);
    const int n_keep = mcmc.draws_per_chain();
    out.draws.resize(n_keep, L.size());
    int r = 0;
    for (int it = 0; it < mcmc.n_iter; ++it) {
      chain.sweep(it);
      if (mcmc.retained(it) && r < n_keep) {
        out.draws.row(r++) = L.pack(chain.state());
        out.chain.push_back(c);
      }
    }
    out.acceptance = chain.acceptance();
    return out;
  });
}

inline PosteriorSamples fit_krige(const Dataset& ds, const MeanField& mean_field, const McmcConfig& mcmc,
                                  const RngContract& rng, const KrigePriors& pr = {}, double lambda_init = 0.2) {
  return fit_krige(make_fit_data(ds, mean_field, 2), mcmc, rng, pr, lambda_init);
}

namespace detail {

// Conditional mean and variance of the latent field at (site, component)
// targets given the observations, for one parameter draw.
struct LatentConditional {
  Eigen::VectorXd mean;  // field part only (add the Holland mean)
  Eigen::VectorXd var;
};

inline LatentConditional krige_conditional(const KrigeModel& model, const KrigeState& st,
                                           const std::vector<Site>& sites, const std::vector<int>& comps) {
  const auto& data = model.data();
  const auto llt = factorize_spd(model.covariance(st), "kriging prediction");
  const Eigen::VectorXd alpha = llt.solve(model.centered(st));
  const Eigen::Index N = model.size();
  const auto M = static_cast<Eigen::Index>(sites.size());
  Eigen::MatrixXd Kx(N, M);
  for (Eigen::Index k = 0; k < N; ++k) {
    const auto& o = data.obs[static_cast<std::size_t>(k)];
    for (Eigen::Index t = 0; t < M; ++t) {
      Kx(k, t) = field_cov(st.Sigma, st.lambda, data.sites[o.site], o.component, sites[static_cast<std::size_t>(t)],
                           comps[static_cast<std::size_t>(t)]);
    }
  }
  const Eigen::MatrixXd V = llt.matrixL().solve(Kx);
  LatentConditional out;
  out.mean = Kx.transpose() * alpha;
  out.var.resize(M);
  for (Eigen::Index t = 0; t < M; ++t) {
    const int c = comps[static_cast<std::size_t>(t)];
    out.var(t) = std::max(0.0, st.Sigma(c, c) - V.col(t).squaredNorm());
  }
  return out;
}

}  // namespace detail

// Pooled Gaussian-conditioning predictions at new sites. Each retained draw
// contributes its conditional mean and one sample per site.
inline PredictionTable predict_krige(const PosteriorSamples& samples, const FitData& data,
                                     const std::vector<Site>& new_sites, const MeanField& mean_field,
                                     const RngContract& rng, const PredictOptions& opt = {}) {
  if (samples.model != "krige") throw ConfigError("predict_krige: samples are not from a kriging fit");
  const KrigeLayout L{samples.meta.value("dims", 2)};
  if (L.dims != data.dims) throw ConfigError("predict_krige: data dimension differs from the fit");
  const KrigeModel model(data);
  const auto idx = detail::draw_subset(samples.n_draws(), opt.max_draws);
  const auto n = static_cast<Eigen::Index>(new_sites.size());
  const auto D = static_cast<Eigen::Index>(idx.size());
  std::vector<Site> tsites;
  std::vector<int> tcomps;
  for (const auto& s : new_sites) {
    for (int c = 0; c < L.dims; ++c) {
      tsites.push_back(s);
      tcomps.push_back(c);
    }
  }
  Eigen::MatrixXd H(n, L.dims);
  for (Eigen::Index i = 0; i < n; ++i) {
    const WindVector h = mean_field(new_sites[static_cast<std::size_t>(i)]);
    for (int c = 0; c < L.dims; ++c) H(i, c) = h.component(c);
  }
  std::vector<Eigen::MatrixXd> draws(static_cast<std::size_t>(L.dims), Eigen::MatrixXd(D, n));
  std::vector<Eigen::MatrixXd> means(static_cast<std::size_t>(L.dims), Eigen::MatrixXd(D, n));
  Engine eng = make_engine(rng);
  for (Eigen::Index d = 0; d < D; ++d) {
    const KrigeState st = L.unpack(samples.draws.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(d)])));
    const auto cond = detail::krige_conditional(model, st, tsites, tcomps);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < L.dims; ++c) {
        const Eigen::Index t = i * L.dims + c;
        double shift = H(i, c);
        double var = cond.var(t);
        if (opt.observation_source) {
          if (*opt.observation_source == Source::Satellite) shift += st.bias[static_cast<std::size_t>(c)];
          var += st.noise_var[static_cast<std::size_t>(*opt.observation_source)][static_cast<std::size_t>(c)];
        }
        means[static_cast<std::size_t>(c)](d, i) = shift + cond.mean(t);
        draws[static_cast<std::size_t>(c)](d, i) = shift + cond.mean(t) + std::sqrt(var) * random::normal(eng);
      }
    }
  }
  return summarize_predictions(new_sites, draws, means);
}

// Posterior predictive replicates of observed scalars (draws x targets): the
// latent field drawn from its conditional given the data, plus satellite bias
// and source noise.
inline Eigen::MatrixXd krige_replicates(const PosteriorSamples& samples, const FitData& data,
                                        const std::vector<ScalarObs>& targets, const RngContract& rng,
                                        std::size_t max_draws = 0) {
  if (samples.model != "krige") throw ConfigError("krige_replicates: samples are not from a kriging fit");
  const KrigeLayout L{samples.meta.value("dims", 2)};
  const KrigeModel model(data);
  const auto idx = detail::draw_subset(samples.n_draws(), max_draws);
  std::vector<Site> tsites;
  std::vector<int> tcomps;
  for (const auto& t : targets) {
    tsites.push_back(data.sites[t.site]);
    tcomps.push_back(t.component);
  }
  Engine eng = make_engine(rng);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(targets.size()));
  for (std::size_t d = 0; d < idx.size(); ++d) {
    const KrigeState st = L.unpack(samples.draws.row(static_cast<Eigen::Index>(idx[d])));
    const auto cond = detail::krige_conditional(model, st, tsites, tcomps);
    for (std::size_t k = 0; k < targets.size(); ++k) {
      const auto& t = targets[k];
      const auto c = static_cast<std::size_t>(t.component);
      double y = data.mean_of(t) + cond.mean(static_cast<Eigen::Index>(k)) +
                 std::sqrt(cond.var(static_cast<Eigen::Index>(k))) * random::normal(eng);
      if (t.source == Source::Satellite) y += st.bias[c];
      y += std::sqrt(st.noise_var[static_cast<std::size_t>(t.source)][c]) * random::normal(eng);
      out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) = y;
    }
  }
  return out;
}

}  // namespace ssbwind
