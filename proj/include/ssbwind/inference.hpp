#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ssbwind/error.hpp"
#include "ssbwind/fit_data.hpp"
#include "ssbwind/kernels.hpp"
#include "ssbwind/mcmc.hpp"
#include "ssbwind/prediction.hpp"
#include "ssbwind/rng.hpp"
#include "ssbwind/ssb_prior.hpp"

namespace ssbwind {

struct SSBPriors {
  double ab_max = 10.0;      // a, b ~ Uniform(0, ab_max)
  double lambda_max = 1.0;   // lambda ~ Uniform(0, lambda_max)
  double var_shape = 0.01;   // error variances ~ InvGamma(shape, scale)
  double var_scale = 0.01;
  double tau_shape = 0.01;   // tau^2 ~ InvGamma(shape, scale) in univariate mode
  double tau_scale = 0.01;
  double wishart_df = 0.1;   // Sigma ~ InvWish(df, scale I)
  double wishart_scale = 0.1;
  double bias_var = 100.0;   // biases ~ Normal(0, bias_var)
  // Support of the location covariance: eigenvalues inside these bounds.
  // InvWish with df below the dimension is improper, and with few occupied
  // components the unbounded conditional can run off to non-finite values.
  double sigma_eig_min = 1e-8;
  double sigma_eig_max = 1e8;

  bool sigma_in_support(const Eigen::MatrixXd& S) const {
    if (!S.allFinite()) return false;
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S, Eigen::EigenvaluesOnly).eigenvalues();
    return ev.minCoeff() >= sigma_eig_min && ev.maxCoeff() <= sigma_eig_max;
  }

  void validate() const {
    if (!(ab_max > 0.0) || !(lambda_max > 0.0)) throw ConfigError("priors: upper bounds must be positive");
    if (!(sigma_eig_min > 0.0 && sigma_eig_max > sigma_eig_min)) throw ConfigError("priors: invalid Sigma support");
    for (double x : {var_shape, var_scale, tau_shape, tau_scale, wishart_df, wishart_scale, bias_var}) {
      if (!(x > 0.0)) throw ConfigError("priors: hyperparameters must be positive");
    }
  }
};

struct SSBModelState {
  StickSet sticks;
  std::vector<int> labels;  // one component index in [0, m) per site
  Eigen::MatrixXd Sigma;    // dims x dims (tau^2 when dims == 1)
  NoiseVar noise_var{{{1.0, 1.0}, {1.0, 1.0}}};
  std::array<double, 2> bias{0.0, 0.0};
  double a = 1.0;
  double b = 1.0;
  double lambda = 0.2;

  void validate(const SSBPriors& pr, std::size_t n_sites) const {
    sticks.validate();
    if (labels.size() != n_sites) throw NumericError("state: one label per site required");
    for (int g : labels) {
      if (g < 0 || g >= sticks.m()) throw NumericError("state: label outside 0..m-1");
    }
    for (const auto& src : noise_var) {
      for (double v : src) {
        if (!(v > 0.0) || !std::isfinite(v)) throw NumericError("state: error variance not positive");
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
    if (llt.info() != Eigen::Success || !Sigma.allFinite()) throw NumericError("state: Sigma not positive definite");
    if (!pr.sigma_in_support(Sigma)) throw NumericError("state: Sigma outside the prior support");
    if (!(a > 0.0 && a < pr.ab_max) || !(b > 0.0 && b < pr.ab_max)) throw NumericError("state: a, b out of range");
    if (!(lambda > 0.0 && lambda < pr.lambda_max)) throw NumericError("state: lambda out of range");
    if (!std::isfinite(bias[0]) || !std::isfinite(bias[1])) throw NumericError("state: bias not finite");
  }
};

struct GaussianConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct SSBFitOptions {
  SSBPriors priors;
  // Warn when the posterior mean of p_m(s) exceeds this at any site.
  double pm_threshold = 0.01;
};

// --- draw layout -------------------------------------------------------------

// Column order of an SSB draw: per component j the block
//   V[j], theta_u[j] (, theta_v[j]), psi1[j], psi2[j], eps1[j], eps2[j]
// then a, b, lambda, the location covariance (tau2 or Sigma11, Sigma12,
// Sigma22), the error variances, the biases and one label g[i] per site.
struct SSBLayout {
  int m = 1;
  int dims = 2;
  int n_sites = 0;

  int block() const { return 5 + dims; }
  Eigen::Index V(int j) const { return j * block(); }
  Eigen::Index theta(int j, int c) const { return j * block() + 1 + c; }
  Eigen::Index knot(int j, int axis) const { return j * block() + 1 + dims + axis; }
  Eigen::Index eps(int j, int axis) const { return j * block() + 3 + dims + axis; }
  Eigen::Index a() const { return m * block(); }
  Eigen::Index b() const { return a() + 1; }
  Eigen::Index lambda() const { return a() + 2; }
  Eigen::Index sigma() const { return a() + 3; }
  int n_sigma() const { return dims == 1 ? 1 : 3; }
  Eigen::Index variance(int src, int c) const { return sigma() + n_sigma() + src * dims + c; }
  Eigen::Index bias(int c) const { return sigma() + n_sigma() + 2 * dims + c; }
  Eigen::Index label(int i) const { return bias(0) + dims + i; }
  Eigen::Index size() const { return label(0) + n_sites; }

  std::vector<std::string> names() const {
    std::vector<std::string> out(static_cast<std::size_t>(size()));
    auto set = [&](Eigen::Index k, std::string s) { out[static_cast<std::size_t>(k)] = std::move(s); };
    const char* tn[] = {"theta_u", "theta_v"};
    for (int j = 0; j < m; ++j) {
      const std::string idx = "[" + std::to_string(j) + "]";
      set(V(j), "V" + idx);
      for (int c = 0; c < dims; ++c) set(theta(j, c), (dims == 1 ? std::string("theta") : std::string(tn[c])) + idx);
      set(knot(j, 0), "psi1" + idx);
      set(knot(j, 1), "psi2" + idx);
      set(eps(j, 0), "eps1" + idx);
      set(eps(j, 1), "eps2" + idx);
    }
    set(a(), "a");
    set(b(), "b");
    set(lambda(), "lambda");
    if (dims == 1) {
      set(sigma(), "tau2");
    } else {
      set(sigma(), "Sigma11");
      set(sigma() + 1, "Sigma12");
      set(sigma() + 2, "Sigma22");
    }
    const char* src[] = {"sat", "buoy"};
    const char* comp[] = {"u", "v"};
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < dims; ++c) set(variance(s, c), std::string("sigma2_") + src[s] + "_" + comp[c]);
    }
    for (int c = 0; c < dims; ++c) set(bias(c), std::string("bias_") + comp[c]);
    for (int i = 0; i < n_sites; ++i) set(label(i), "g[" + std::to_string(i) + "]");
    return out;
  }
};

inline Eigen::RowVectorXd pack_state(const SSBLayout& L, const SSBModelState& st) {
  Eigen::RowVectorXd row(L.size());
  for (int j = 0; j < L.m; ++j) {
    const auto& inst = st.sticks.instances[static_cast<std::size_t>(j)];
    row(L.V(j)) = st.sticks.V[static_cast<std::size_t>(j)];
    for (int c = 0; c < L.dims; ++c) row(L.theta(j, c)) = st.sticks.theta(j, c);
    for (int ax = 0; ax < 2; ++ax) {
      row(L.knot(j, ax)) = inst.knot[static_cast<std::size_t>(ax)];
      row(L.eps(j, ax)) = inst.eps[static_cast<std::size_t>(ax)];
    }
  }
  row(L.a()) = st.a;
  row(L.b()) = st.b;
  row(L.lambda()) = st.lambda;
  if (L.dims == 1) {
    row(L.sigma()) = st.Sigma(0, 0);
  } else {
    row(L.sigma()) = st.Sigma(0, 0);
    row(L.sigma() + 1) = st.Sigma(0, 1);
    row(L.sigma() + 2) = st.Sigma(1, 1);
  }
  for (int s = 0; s < 2; ++s) {
    for (int c = 0; c < L.dims; ++c) {
      row(L.variance(s, c)) = st.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
    }
  }
  for (int c = 0; c < L.dims; ++c) row(L.bias(c)) = st.bias[static_cast<std::size_t>(c)];
  for (int i = 0; i < L.n_sites; ++i) row(L.label(i)) = st.labels[static_cast<std::size_t>(i)];
  return row;
}

inline SSBModelState unpack_state(const SSBLayout& L, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  SSBModelState st;
  st.sticks.V.resize(static_cast<std::size_t>(L.m));
  st.sticks.instances.resize(static_cast<std::size_t>(L.m));
  st.sticks.theta.resize(L.m, L.dims);
  for (int j = 0; j < L.m; ++j) {
    auto& inst = st.sticks.instances[static_cast<std::size_t>(j)];
    st.sticks.V[static_cast<std::size_t>(j)] = row(L.V(j));
    for (int c = 0; c < L.dims; ++c) st.sticks.theta(j, c) = row(L.theta(j, c));
    for (int ax = 0; ax < 2; ++ax) {
      inst.knot[static_cast<std::size_t>(ax)] = row(L.knot(j, ax));
      inst.eps[static_cast<std::size_t>(ax)] = row(L.eps(j, ax));
    }
  }
  st.a = row(L.a());
  st.b = row(L.b());
  st.lambda = row(L.lambda());
  st.Sigma.resize(L.dims, L.dims);
  if (L.dims == 1) {
    st.Sigma(0, 0) = row(L.sigma());
  } else {
    st.Sigma << row(L.sigma()), row(L.sigma() + 1), row(L.sigma() + 1), row(L.sigma() + 2);
  }
  for (int s = 0; s < 2; ++s) {
    for (int c = 0; c < L.dims; ++c) {
      st.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] = row(L.variance(s, c));
    }
  }
  for (int c = 0; c < L.dims; ++c) st.bias[static_cast<std::size_t>(c)] = row(L.bias(c));
  st.labels.resize(static_cast<std::size_t>(L.n_sites));
  for (int i = 0; i < L.n_sites; ++i) st.labels[static_cast<std::size_t>(i)] = static_cast<int>(row(L.label(i)));
  return st;
}

inline nlohmann::json ssb_meta(const SSBConfig& cfg, const SSBPriors& pr, const FitData& data) {
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : data.sites) sites.push_back({s.s1, s.s2, s.raw_lon, s.raw_lat});
  return {{"m", cfg.m},
          {"dims", data.dims},
          {"n_sites", data.n_sites()},
          {"kernel", {{"family", to_string(cfg.kernel.family)}, {"bandwidth", to_string(cfg.kernel.bandwidth)}}},
          {"knot_prior", cfg.knot_prior == KnotPrior::UniformSquare ? "uniform" : "beta"},
          {"knot_beta_shape", cfg.knot_beta_shape},
          {"lambda_max", pr.lambda_max},
          {"sites", sites}};
}

inline SSBLayout layout_of(const PosteriorSamples& s) {
  try {
    return {s.meta.at("m").get<int>(), s.meta.at("dims").get<int>(), s.meta.at("n_sites").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("posterior samples: incomplete SSB metadata: ") + e.what());
  }
}

// Kernel family, bandwidth model and knot prior recorded with the draws.
inline SSBConfig ssb_config_from_meta(const nlohmann::json& meta) {
  try {
    SSBConfig cfg;
    cfg.m = meta.at("m").get<int>();
    cfg.response_dim = meta.at("dims").get<int>();
    cfg.kernel.family = parse_kernel_family(meta.at("kernel").at("family").get<std::string>());
    cfg.kernel.bandwidth = parse_bandwidth_model(meta.at("kernel").at("bandwidth").get<std::string>());
    cfg.knot_prior = meta.at("knot_prior").get<std::string>() == "uniform" ? KnotPrior::UniformSquare
                                                                             : KnotPrior::BetaSymmetric;
    cfg.knot_beta_shape = meta.value("knot_beta_shape", 1.5);
    cfg.Sigma = Eigen::MatrixXd::Identity(cfg.response_dim, cfg.response_dim);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("posterior samples: incomplete SSB metadata: ") + e.what());
  }
}

// --- sampler -------------------------------------------------------------------

// One Metropolis-within-Gibbs chain over the truncated spatial stick-breaking
// model. The kernel matrix W (sites x components, last column ones) is cached
// so stick, knot and bandwidth moves cost O(n_sites) each.
class SSBChain {
 public:
  SSBChain(const FitData& data, const SSBConfig& cfg, const McmcConfig& mcmc, const RngContract& rng,
           const SSBFitOptions& opts = {})
      : data_(data), cfg_(cfg), mcmc_(mcmc), pr_(opts.priors), eng_(make_engine(rng)) {
    pr_.validate();
    mcmc_.validate();
    if (cfg_.response_dim != data_.dims) throw ConfigError("ssb: response_dim differs from the data dimension");
    cfg_.validate(pr_.lambda_max);
    // The chain moves lambda, a and b on logit scales, so they start strictly inside their supports.
    if (!(cfg_.kernel.lambda < pr_.lambda_max)) throw ConfigError("ssb: initial lambda must be below lambda_max");
    if (!(cfg_.a < pr_.ab_max && cfg_.b < pr_.ab_max)) throw ConfigError("ssb: initial a, b must be below ab_max");
    by_site_ = data_.obs_by_site();
    for (const auto& o : data_.obs) {
      ++cell_count_[static_cast<std::size_t>(o.source)][static_cast<std::size_t>(o.component)];
    }
    const int m = cfg_.m;
    sc_V_.assign(static_cast<std::size_t>(m), ProposalScale(mcmc_.scale_V));
    sc_knot_.assign(static_cast<std::size_t>(m), ProposalScale(mcmc_.scale_knot));
    sc_bw_.assign(static_cast<std::size_t>(m), ProposalScale(mcmc_.scale_bandwidth));
    sc_lambda_ = ProposalScale(mcmc_.scale_lambda);
    sc_a_ = ProposalScale(mcmc_.scale_ab);
    sc_b_ = ProposalScale(mcmc_.scale_ab);
    initialize();
  }

  const SSBModelState& state() const { return st_; }
  const SSBConfig& config() const { return cfg_; }
  const SSBPriors& priors() const { return pr_; }
  Engine& engine() { return eng_; }

  void set_state(SSBModelState s) {
    s.validate(pr_, data_.n_sites());
    if (s.sticks.m() != cfg_.m || s.Sigma.rows() != data_.dims) throw ConfigError("set_state: dimension mismatch");
    st_ = std::move(s);
    rebuild_kernels();
  }

  // Kernel value of component j at site i (1 for the terminal component).
  double kernel_value(std::size_t i, int j) const { return W_(static_cast<Eigen::Index>(i), j); }

  // log p_j(s_i) for every component.
  std::vector<double> log_weights(std::size_t i) const {
    const int m = cfg_.m;
    std::vector<double> lp(static_cast<std::size_t>(m));
    double log_rem = 0.0;
    for (int j = 0; j + 1 < m; ++j) {
      const double q = W_(static_cast<Eigen::Index>(i), j) * st_.sticks.V[static_cast<std::size_t>(j)];
      lp[static_cast<std::size_t>(j)] = std::log(q) + log_rem;
      log_rem += std::log1p(-q);
    }
    lp[static_cast<std::size_t>(m - 1)] = log_rem;
    return lp;
  }

  double terminal_mass(std::size_t i) const { return std::exp(log_weights(i).back()); }

  // Unnormalized log full conditional of the label at site i.
  std::vector<double> label_log_conditional(std::size_t i) const {
    std::vector<double> lp = log_weights(i);
    for (std::size_t k : by_site_[i]) {
      const auto& o = data_.obs[k];
      const double r = residual(o);
      const double var = noise(o);
      for (int j = 0; j < cfg_.m; ++j) {
        const double e = r - st_.sticks.theta(j, o.component);
        lp[static_cast<std::size_t>(j)] += -0.5 * e * e / var;
      }
    }
    return lp;
  }

  std::vector<double> label_probabilities(std::size_t i) const {
    const auto lp = label_log_conditional(i);
    const double mx = *std::max_element(lp.begin(), lp.end());
    if (!std::isfinite(mx)) throw NumericError("label conditional: every component has zero mass");
    std::vector<double> p(lp.size());
    double total = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) total += (p[j] = std::exp(lp[j] - mx));
    for (double& x : p) x /= total;
    return p;
  }

  GaussianConditional theta_conditional(int j) const {
    const auto acc = theta_sufficient();
    return theta_conditional_from(acc, j);
  }

  // sum_i log p_{g(i)}(s_i): the part of the target that depends on sticks,
  // knots, bandwidths and lambda beyond their priors.
  double label_log_target() const { return label_log_target(W_); }

  double log_likelihood() const {
    double ll = 0.0;
    for (const auto& o : data_.obs) {
      const double var = noise(o);
      const double e = residual(o) - st_.sticks.theta(st_.labels[o.site], o.component);
      ll += -0.5 * (std::log(2.0 * std::numbers::pi * var) + e * e / var);
    }
    return ll;
  }

  // --- block updates ------------------------------------------------------------

  void update_labels() {
    for (std::size_t i = 0; i < data_.n_sites(); ++i) {
      const auto lp = label_log_conditional(i);
      st_.labels[i] = static_cast<int>(random::categorical_log(eng_, lp));
    }
  }

  void update_theta() {
    const auto acc = theta_sufficient();
    for (int j = 0; j < cfg_.m; ++j) {
      const auto g = theta_conditional_from(acc, j);
      st_.sticks.theta.row(j) = random::mvnormal(eng_, g.mean, g.cov).transpose();
    }
  }

  bool update_V(int j, int iter = std::numeric_limits<int>::max()) {
    if (j < 0 || j + 1 >= cfg_.m) throw ConfigError("update_V: the terminal stick is fixed at 1");
    auto& sc = sc_V_[static_cast<std::size_t>(j)];
    const double v = st_.sticks.V[static_cast<std::size_t>(j)];
    const double step = sc.scale() * random::normal(eng_);
    const double vp = step == 0.0 ? v : inv_logit(logit(v) + step);
    const bool ok = metropolis_accept(stick_log_target(j, vp) - stick_log_target(j, v), eng_);
    if (ok) st_.sticks.V[static_cast<std::size_t>(j)] = vp;
    sc.record(ok, iter, mcmc_);
    return ok;
  }

  bool update_knot(int j, int iter = std::numeric_limits<int>::max()) {
    auto& inst = st_.sticks.instances[static_cast<std::size_t>(j)];
    if (j + 1 == cfg_.m) {
      inst.knot = {draw_knot_coord(cfg_, eng_), draw_knot_coord(cfg_, eng_)};
      return true;
    }
    auto& sc = sc_knot_[static_cast<std::size_t>(j)];
    KernelInstance prop = inst;
    for (auto& k : prop.knot) k += sc.scale() * random::normal(eng_);
    double lr = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd col;
    const double lp_new = knot_log_prior(cfg_, prop.knot[0]) + knot_log_prior(cfg_, prop.knot[1]);
    if (std::isfinite(lp_new)) {
      col = kernel_column(prop);
      lr = lp_new - knot_log_prior(cfg_, inst.knot[0]) - knot_log_prior(cfg_, inst.knot[1]) +
           column_log_target(j, col) - column_log_target(j, W_.col(j));
    }
    const bool ok = metropolis_accept(lr, eng_);
    if (ok) {
      inst = prop;
      W_.col(j) = col;
    }
    sc.record(ok, iter, mcmc_);
    return ok;
  }

  bool update_bandwidth(int j, int iter = std::numeric_limits<int>::max()) {
    if (cfg_.kernel.bandwidth == BandwidthModel::Fixed) return true;
    auto& inst = st_.sticks.instances[static_cast<std::size_t>(j)];
    if (j + 1 == cfg_.m) {
      inst.eps = draw_bandwidths(cfg_.kernel, st_.lambda, eng_);
      return true;
    }
    auto& sc = sc_bw_[static_cast<std::size_t>(j)];
    KernelInstance prop = inst;
    for (auto& e : prop.eps) e *= std::exp(sc.scale() * random::normal(eng_));
    auto prior = [&](const KernelInstance& k) {
      double s = 0.0;
      for (double e : k.eps) s += bandwidth_log_density(cfg_.kernel, e, st_.lambda) + std::log(e);
      return s;
    };
    const Eigen::VectorXd col = kernel_column(prop);
    const double lr = prior(prop) - prior(inst) + column_log_target(j, col) - column_log_target(j, W_.col(j));
    const bool ok = metropolis_accept(lr, eng_);
    if (ok) {
      inst = prop;
      W_.col(j) = col;
    }
    sc.record(ok, iter, mcmc_);
    return ok;
  }

  bool update_lambda(int iter = std::numeric_limits<int>::max()) {
    const double lmax = pr_.lambda_max;
    const double lam = st_.lambda;
    const double lp = lmax * inv_logit(logit(lam / lmax) + sc_lambda_.scale() * random::normal(eng_));
    auto jac = [&](double l) { return std::log(l) + std::log(lmax - l); };
    bool ok = false;
    if (lp > 0.0 && lp < lmax) {
      if (cfg_.kernel.bandwidth == BandwidthModel::Fixed) {
        Eigen::MatrixXd Wp = W_;
        const double e = fixed_bandwidth(cfg_.kernel.family, lp);
        for (int j = 0; j + 1 < cfg_.m; ++j) {
          KernelInstance k = st_.sticks.instances[static_cast<std::size_t>(j)];
          k.eps = {e, e};
          Wp.col(j) = kernel_column(k);
        }
        const double lr = label_log_target(Wp) - label_log_target(W_) + jac(lp) - jac(lam);
        ok = metropolis_accept(lr, eng_);
        if (ok) {
          W_ = std::move(Wp);
          for (auto& k : st_.sticks.instances) k.eps = {e, e};
        }
      } else {
        auto prior = [&](double l) {
          double s = 0.0;
          for (int j = 0; j + 1 < cfg_.m; ++j) {
            for (double e : st_.sticks.instances[static_cast<std::size_t>(j)].eps) {
              s += bandwidth_log_density(cfg_.kernel, e, l);
            }
          }
          return s;
        };
        ok = metropolis_accept(prior(lp) - prior(lam) + jac(lp) - jac(lam), eng_);
      }
    }
    if (ok) st_.lambda = lp;
    sc_lambda_.record(ok, iter, mcmc_);
    return ok;
  }

  bool update_ab(int iter = std::numeric_limits<int>::max()) {
    double slv = 0.0, sl1v = 0.0;
    const int k = cfg_.m - 1;
    for (int j = 0; j < k; ++j) {
      const double v = st_.sticks.V[static_cast<std::size_t>(j)];
      slv += std::log(v);
      sl1v += std::log1p(-v);
    }
    const double top = pr_.ab_max;
    auto target = [&](double a, double b) {
      return (a - 1.0) * slv + (b - 1.0) * sl1v - k * (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
    };
    auto jac = [&](double x) { return std::log(x) + std::log(top - x); };
    auto step = [&](double cur, ProposalScale& sc) {
      return top * inv_logit(logit(cur / top) + sc.scale() * random::normal(eng_));
    };
    const double ap = step(st_.a, sc_a_);
    bool ok_a = ap > 0.0 && ap < top &&
                metropolis_accept(target(ap, st_.b) - target(st_.a, st_.b) + jac(ap) - jac(st_.a), eng_);
    if (ok_a) st_.a = ap;
    sc_a_.record(ok_a, iter, mcmc_);
    const double bp = step(st_.b, sc_b_);
    bool ok_b = bp > 0.0 && bp < top &&
                metropolis_accept(target(st_.a, bp) - target(st_.a, st_.b) + jac(bp) - jac(st_.b), eng_);
    if (ok_b) st_.b = bp;
    sc_b_.record(ok_b, iter, mcmc_);
    return ok_a && ok_b;
  }

  // Conjugate InvGamma updates; cells without observations keep their value.
  void update_variances() {
    const auto ss = residual_squares();
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < data_.dims; ++c) {
        const auto n = cell_count_[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
        if (n == 0) continue;
        st_.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] =
            random::inv_gamma(eng_, pr_.var_shape + 0.5 * n, pr_.var_scale + 0.5 * ss[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)]);
      }
    }
  }

  void update_bias() {
    for (int c = 0; c < data_.dims; ++c) {
      const auto post = bias_conditional(c);
      st_.bias[static_cast<std::size_t>(c)] = random::normal(eng_, post.first, std::sqrt(post.second));
    }
  }

  // Conjugate draw restricted to the prior support by rejection.
  void update_Sigma() {
    const Eigen::MatrixXd& th = st_.sticks.theta;
    const double m = static_cast<double>(cfg_.m);
    const Eigen::MatrixXd T = th.transpose() * th;
    for (int attempt = 0; attempt < 10000; ++attempt) {
      Eigen::MatrixXd S(data_.dims, data_.dims);
      if (data_.dims == 1) {
        S(0, 0) = random::inv_gamma(eng_, pr_.tau_shape + 0.5 * m, pr_.tau_scale + 0.5 * T(0, 0));
      } else {
        const Eigen::MatrixXd scale = pr_.wishart_scale * Eigen::MatrixXd::Identity(2, 2) + T;
        S = random::inv_wishart(eng_, pr_.wishart_df + m, scale);
      }
      if (pr_.sigma_in_support(S)) {
        st_.Sigma = S;
        return;
      }
    }
    throw NumericError("Sigma update: conditional has no mass inside the prior support");
  }

  // (mean, variance) of the Normal full conditional of bias component c.
  std::pair<double, double> bias_conditional(int c) const {
    double prec = 1.0 / pr_.bias_var, num = 0.0;
    for (const auto& o : data_.obs) {
      if (o.source != Source::Satellite || o.component != c) continue;
      const double var = noise(o);
      prec += 1.0 / var;
      num += (o.value - data_.mean_of(o) - st_.sticks.theta(st_.labels[o.site], c)) / var;
    }
    return {num / prec, 1.0 / prec};
  }

  // Sums of squared residuals per [source][component].
  NoiseVar residual_squares() const {
    NoiseVar ss{{{0.0, 0.0}, {0.0, 0.0}}};
    for (const auto& o : data_.obs) {
      const double e = residual(o) - st_.sticks.theta(st_.labels[o.site], o.component);
      ss[static_cast<std::size_t>(o.source)][static_cast<std::size_t>(o.component)] += e * e;
    }
    return ss;
  }

  std::size_t cell_count(Source s, int c) const {
    return cell_count_[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
  }

  void sweep(int iter) {
    update_labels();
    check("labels");
    update_theta();
    check("theta");
    for (int j = 0; j + 1 < cfg_.m; ++j) update_V(j, iter);
    check("V");
    for (int j = 0; j < cfg_.m; ++j) {
      update_knot(j, iter);
      update_bandwidth(j, iter);
    }
    check("knots");
    update_lambda(iter);
    check("lambda");
    update_ab(iter);
    check("a, b");
    update_variances();
    check("variances");
    update_bias();
    check("bias");
    update_Sigma();
    check("Sigma");
  }

  std::map<std::string, double> acceptance() const {
    auto pooled = [](const std::vector<ProposalScale>& v, std::size_t n) {
      long a = 0, t = 0;
      for (std::size_t j = 0; j < n; ++j) {
        a += v[j].accepts();
        t += v[j].tries();
      }
      return acceptance_rate(a, t);
    };
    const auto k = static_cast<std::size_t>(cfg_.m - 1);
    std::map<std::string, double> out{{"V", pooled(sc_V_, k)},
                                      {"knot", pooled(sc_knot_, k)},
                                      {"lambda", acceptance_rate(sc_lambda_.accepts(), sc_lambda_.tries())},
                                      {"a", acceptance_rate(sc_a_.accepts(), sc_a_.tries())},
                                      {"b", acceptance_rate(sc_b_.accepts(), sc_b_.tries())}};
    if (cfg_.kernel.bandwidth != BandwidthModel::Fixed) out["bandwidth"] = pooled(sc_bw_, k);
    return out;
  }

 private:
  struct ThetaStats {
    Eigen::MatrixXd h;  // m x dims precision sums
    Eigen::MatrixXd r;  // m x dims precision-weighted residual sums
  };

  double residual(const ScalarObs& o) const {
    const double b = o.source == Source::Satellite ? st_.bias[static_cast<std::size_t>(o.component)] : 0.0;
    return o.value - data_.mean_of(o) - b;
  }

  double noise(const ScalarObs& o) const {
    return st_.noise_var[static_cast<std::size_t>(o.source)][static_cast<std::size_t>(o.component)];
  }

  ThetaStats theta_sufficient() const {
    ThetaStats t{Eigen::MatrixXd::Zero(cfg_.m, data_.dims), Eigen::MatrixXd::Zero(cfg_.m, data_.dims)};
    for (const auto& o : data_.obs) {
      const int j = st_.labels[o.site];
      const double var = noise(o);
      t.h(j, o.component) += 1.0 / var;
      t.r(j, o.component) += residual(o) / var;
    }
    return t;
  }

  GaussianConditional theta_conditional_from(const ThetaStats& t, int j) const {
    const Eigen::MatrixXd prior_prec = st_.Sigma.inverse();
    Eigen::MatrixXd P = prior_prec;
    P.diagonal() += t.h.row(j).transpose();
    Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (llt.info() != Eigen::Success) throw NumericError("theta conditional: precision not positive definite");
    GaussianConditional g;
    g.cov = llt.solve(Eigen::MatrixXd::Identity(data_.dims, data_.dims));
    g.cov = 0.5 * (g.cov + g.cov.transpose());
    g.mean = llt.solve(Eigen::VectorXd(t.r.row(j).transpose()));
    return g;
  }

  Eigen::VectorXd kernel_column(const KernelInstance& k) const {
    Eigen::VectorXd col(static_cast<Eigen::Index>(data_.n_sites()));
    for (std::size_t i = 0; i < data_.n_sites(); ++i) {
      col(static_cast<Eigen::Index>(i)) = evaluate(cfg_.kernel, k, data_.sites[i]);
    }
    return col;
  }

  void rebuild_kernels() {
    W_.resize(static_cast<Eigen::Index>(data_.n_sites()), cfg_.m);
    for (int j = 0; j + 1 < cfg_.m; ++j) W_.col(j) = kernel_column(st_.sticks.instances[static_cast<std::size_t>(j)]);
    W_.col(cfg_.m - 1).setOnes();
  }

  double label_log_target(const Eigen::MatrixXd& W) const {
    double total = 0.0;
    for (std::size_t i = 0; i < data_.n_sites(); ++i) {
      const int g = st_.labels[i];
      const auto r = static_cast<Eigen::Index>(i);
      for (int j = 0; j < g; ++j) total += std::log1p(-W(r, j) * st_.sticks.V[static_cast<std::size_t>(j)]);
      if (g + 1 < cfg_.m) total += std::log(W(r, g) * st_.sticks.V[static_cast<std::size_t>(g)]);
    }
    return total;
  }

  // Terms of the label target involving V_j, plus its Beta prior and the
  // logit Jacobian.
  double stick_log_target(int j, double v) const {
    if (!(v > 0.0 && v < 1.0)) return -std::numeric_limits<double>::infinity();
    double t = st_.a * std::log(v) + st_.b * std::log1p(-v);
    for (std::size_t i = 0; i < data_.n_sites(); ++i) {
      const int g = st_.labels[i];
      if (g == j) {
        t += std::log(v);
      } else if (g > j) {
        t += std::log1p(-W_(static_cast<Eigen::Index>(i), j) * v);
      }
    }
    return t;
  }

  // Terms of the label target involving kernel column j.
  double column_log_target(int j, const Eigen::Ref<const Eigen::VectorXd>& w) const {
    const double v = st_.sticks.V[static_cast<std::size_t>(j)];
    double t = 0.0;
    for (std::size_t i = 0; i < data_.n_sites(); ++i) {
      const int g = st_.labels[i];
      if (g == j) {
        t += std::log(w(static_cast<Eigen::Index>(i)));
      } else if (g > j) {
        t += std::log1p(-w(static_cast<Eigen::Index>(i)) * v);
      }
    }
    return t;
  }

  void check(const char* block) const {
    if (!mcmc_.check_invariants) return;
    try {
      st_.validate(pr_, data_.n_sites());
    } catch (const NumericError& e) {
      throw NumericError(std::string("after ") + block + " update: " + e.what());
    }
    if (!std::isfinite(label_log_target()) || !std::isfinite(log_likelihood())) {
      throw NumericError(std::string("after ") + block + " update: target not finite");
    }
  }

  // Knots, bandwidths and sticks from the prior at the configured a, b and
  // lambda; labels by nearest knot among components covering the site;
  // variances and Sigma from residual moments; biases at zero; theta from
  // its full conditional.
  void initialize() {
    const int dims = data_.dims;
    st_.a = cfg_.a;
    st_.b = cfg_.b;
    st_.lambda = cfg_.kernel.lambda;
    st_.sticks = sample_prior(cfg_, eng_);
    st_.bias = {0.0, 0.0};

    std::array<std::array<double, 2>, 2> sum{}, sumsq{};
    Eigen::VectorXd comp_sum = Eigen::VectorXd::Zero(dims), comp_sumsq = Eigen::VectorXd::Zero(dims);
    Eigen::VectorXd comp_n = Eigen::VectorXd::Zero(dims);
    for (const auto& o : data_.obs) {
      const double r = o.value - data_.mean_of(o);
      sum[static_cast<std::size_t>(o.source)][static_cast<std::size_t>(o.component)] += r;
      sumsq[static_cast<std::size_t>(o.source)][static_cast<std::size_t>(o.component)] += r * r;
      comp_sum(o.component) += r;
      comp_sumsq(o.component) += r * r;
      comp_n(o.component) += 1.0;
    }
    st_.Sigma = Eigen::MatrixXd::Identity(dims, dims);
    for (int c = 0; c < dims; ++c) {
      if (comp_n(c) >= 2.0) {
        const double mean = comp_sum(c) / comp_n(c);
        st_.Sigma(c, c) = std::max(1e-2, comp_sumsq(c) / comp_n(c) - mean * mean);
      }
    }
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < 2; ++c) {
        const auto n = static_cast<double>(cell_count_[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)]);
        double v = 1.0;
        if (n >= 2.0) {
          const double mean = sum[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] / n;
          v = std::max(1e-2, 0.5 * (sumsq[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] / n - mean * mean));
        }
        st_.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] = v;
      }
    }

    rebuild_kernels();
    st_.labels.assign(data_.n_sites(), cfg_.m - 1);
    for (std::size_t i = 0; i < data_.n_sites(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j + 1 < cfg_.m; ++j) {
        if (!(W_(static_cast<Eigen::Index>(i), j) > 0.0)) continue;
        const auto& k = st_.sticks.instances[static_cast<std::size_t>(j)].knot;
        const double d = std::hypot(data_.sites[i].s1 - k[0], data_.sites[i].s2 - k[1]);
        if (d < best) {
          best = d;
          st_.labels[i] = j;
        }
      }
    }
    update_theta();
    const auto ss = residual_squares();
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < dims; ++c) {
        const auto n = cell_count_[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
        if (n > 0) {
          st_.noise_var[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] =
              std::max(1e-2, ss[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] / static_cast<double>(n));
        }
      }
    }
    st_.validate(pr_, data_.n_sites());
    if (!std::isfinite(label_log_target()) || !std::isfinite(log_likelihood())) {
      throw NumericError("ssb: non-finite target at initialization");
    }
  }

  FitData data_;
  SSBConfig cfg_;
  McmcConfig mcmc_;
  SSBPriors pr_;
  Engine eng_;
  SSBModelState st_;
  Eigen::MatrixXd W_;
  std::vector<std::vector<std::size_t>> by_site_;
  std::array<std::array<std::size_t, 2>, 2> cell_count_{};
  std::vector<ProposalScale> sc_V_, sc_knot_, sc_bw_;
  ProposalScale sc_lambda_, sc_a_, sc_b_;
};

// Runs one chain and returns its retained draws.
inline PosteriorSamples run_ssb_chain(const FitData& data, const SSBConfig& cfg, const McmcConfig& mcmc,
                                      const RngContract& rng, const SSBFitOptions& opts, int chain_index) {
  SSBChain chain(data, cfg, mcmc, rng, opts);
  const SSBLayout L{cfg.m, data.dims, static_cast<int>(data.n_sites())};
  PosteriorSamples out;
  out.model = "ssb";
  out.columns = L.names();
  out.meta = ssb_meta(cfg, opts.priors, data);
  const int n_keep = mcmc.draws_per_chain();
  out.draws.resize(n_keep, L.size());
  out.pm_trace.resize(n_keep, static_cast<Eigen::Index>(data.n_sites()));
  int r = 0;
  for (int it = 0; it < mcmc.n_iter; ++it) {
    chain.sweep(it);
    if (mcmc.retained(it) && r < n_keep) {
      out.draws.row(r) = pack_state(L, chain.state());
      for (std::size_t i = 0; i < data.n_sites(); ++i) out.pm_trace(r, static_cast<Eigen::Index>(i)) = chain.terminal_mass(i);
      out.chain.push_back(chain_index);
      ++r;
    }
  }
  out.acceptance = chain.acceptance();
  if (out.pm_trace.rows() > 0 && out.pm_trace.cols() > 0) {
    const Eigen::RowVectorXd mean_pm = out.pm_trace.colwise().mean();
    Eigen::Index worst = 0;
    const double mx = mean_pm.maxCoeff(&worst);
    if (mx > opts.pm_threshold) {
      out.warnings.push_back("posterior mean of p_m(s) reaches " + io::format_double(mx) + " at site " +
                             std::to_string(worst) + " (threshold " + io::format_double(opts.pm_threshold) +
                             "); consider a larger m");
    }
  }
  return out;
}

inline PosteriorSamples fit_ssb(const FitData& data, const SSBConfig& cfg, const McmcConfig& mcmc,
                                const RngContract& rng, const SSBFitOptions& opts = {}) {
  mcmc.validate();
  return run_chains(mcmc.n_chains, [&](int c) { return run_ssb_chain(data, cfg, mcmc, rng.derive(c), opts, c); });
}

inline PosteriorSamples fit_ssb(const Dataset& ds, const MeanField& mean_field, const SSBConfig& cfg,
                                const McmcConfig& mcmc, const RngContract& rng, const SSBFitOptions& opts = {}) {
  const FitData data = make_fit_data(ds, mean_field, cfg.response_dim);
  return fit_ssb(data, cfg, mcmc, rng, opts);
}

// --- prediction ------------------------------------------------------------------

struct PredictOptions {
  bool tessellation = false;  // argmax component instead of a sampled label
  // Predict observations from this source (adds its noise and bias) rather
  // than the latent field.
  std::optional<Source> observation_source;
  std::size_t max_draws = 0;  // 0: use every retained draw
};

namespace detail {

inline std::vector<std::size_t> draw_subset(std::size_t n, std::size_t max_draws) {
  if (n == 0) throw NumericError("prediction: no retained draws");
  const std::size_t k = (max_draws == 0 || max_draws >= n) ? n : max_draws;
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = (i * n) / k;
  return idx;
}

}  // namespace detail

inline PredictionTable predict_ssb(const PosteriorSamples& samples, const std::vector<Site>& new_sites,
                                   const MeanField& mean_field, const RngContract& rng,
                                   const PredictOptions& opt = {}) {
  if (samples.model != "ssb") throw ConfigError("predict_ssb: samples are not from an SSB fit");
  const SSBLayout L = layout_of(samples);
  const SSBConfig cfg = ssb_config_from_meta(samples.meta);
  const auto idx = detail::draw_subset(samples.n_draws(), opt.max_draws);
  const auto n = static_cast<Eigen::Index>(new_sites.size());
  const auto D = static_cast<Eigen::Index>(idx.size());
  std::vector<Eigen::MatrixXd> draws(static_cast<std::size_t>(L.dims), Eigen::MatrixXd(D, n));
  std::vector<Eigen::MatrixXd> means(static_cast<std::size_t>(L.dims), Eigen::MatrixXd(D, n));
  Eigen::MatrixXd H(n, L.dims);
  for (Eigen::Index i = 0; i < n; ++i) {
    const WindVector h = mean_field(new_sites[static_cast<std::size_t>(i)]);
    for (int c = 0; c < L.dims; ++c) H(i, c) = h.component(c);
  }
  Engine eng = make_engine(rng);
  std::vector<double> lp(static_cast<std::size_t>(L.m));
  for (Eigen::Index d = 0; d < D; ++d) {
    const SSBModelState st = unpack_state(L, samples.draws.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(d)])));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto p = stick_weights(cfg, st.sticks, new_sites[static_cast<std::size_t>(i)]);
      int g = 0;
      if (opt.tessellation) {
        g = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      } else {
        for (std::size_t j = 0; j < p.size(); ++j) lp[j] = std::log(p[j]);
        g = static_cast<int>(random::categorical_log(eng, lp));
      }
      for (int c = 0; c < L.dims; ++c) {
        double shift = H(i, c);
        double sd = 0.0;
        if (opt.observation_source) {
          const auto s = static_cast<std::size_t>(*opt.observation_source);
          if (*opt.observation_source == Source::Satellite) shift += st.bias[static_cast<std::size_t>(c)];
          sd = std::sqrt(st.noise_var[s][static_cast<std::size_t>(c)]);
        }
        double cond_mean = 0.0;
        if (opt.tessellation) {
          cond_mean = st.sticks.theta(g, c);
        } else {
          for (std::size_t j = 0; j < p.size(); ++j) cond_mean += p[j] * st.sticks.theta(static_cast<Eigen::Index>(j), c);
        }
        means[static_cast<std::size_t>(c)](d, i) = shift + cond_mean;
        draws[static_cast<std::size_t>(c)](d, i) = shift + st.sticks.theta(g, c) + sd * random::normal(eng);
      }
    }
  }
  return summarize_predictions(new_sites, draws, means);
}

inline PredictionTable predict_ssb(const PosteriorSamples& samples, const SSBConfig&, const std::vector<Site>& new_sites,
                                   const MeanField& mean_field, const RngContract& rng,
                                   const PredictOptions& opt = {}) {
  return predict_ssb(samples, new_sites, mean_field, rng, opt);
}

// Posterior predictive replicates of observed scalars (draws x targets):
// mean + theta of the site's sampled label + satellite bias + source noise.
// Target sites index the sites of the data the model was fitted to.
inline Eigen::MatrixXd ssb_replicates(const PosteriorSamples& samples, const FitData& data,
                                      const std::vector<ScalarObs>& targets, const RngContract& rng,
                                      std::size_t max_draws = 0) {
  if (samples.model != "ssb") throw ConfigError("ssb_replicates: samples are not from an SSB fit");
  const SSBLayout L = layout_of(samples);
  if (static_cast<std::size_t>(L.n_sites) != data.n_sites()) throw ConfigError("ssb_replicates: site count mismatch");
  const auto idx = detail::draw_subset(samples.n_draws(), max_draws);
  Engine eng = make_engine(rng);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(targets.size()));
  for (std::size_t d = 0; d < idx.size(); ++d) {
    const auto& row = samples.draws.row(static_cast<Eigen::Index>(idx[d]));
    for (std::size_t k = 0; k < targets.size(); ++k) {
      const auto& t = targets[k];
      const int g = static_cast<int>(row(L.label(static_cast<int>(t.site))));
      double y = data.mean_of(t) + row(L.theta(g, t.component));
      if (t.source == Source::Satellite) y += row(L.bias(t.component));
      y += std::sqrt(row(L.variance(static_cast<int>(t.source), t.component))) * random::normal(eng);
      out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) = y;
    }
  }
  return out;
}

}  // namespace ssbwind
