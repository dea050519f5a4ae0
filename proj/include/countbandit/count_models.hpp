#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace countbandit {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// ln(1 + e^x), overflow-safe both ways
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double log_sum_exp(double a, double b) {
  double m = std::max(a, b);
  if (!std::isfinite(m)) return m;  // both -inf (or a nan propagates)
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

namespace models {

enum class ModelKind { Poisson, NB, ZIP, ZINB };

inline const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Poisson: return "poisson";
    case ModelKind::NB: return "nb";
    case ModelKind::ZIP: return "zip";
    case ModelKind::ZINB: return "zinb";
  }
  return "?";
}

inline bool has_gamma(ModelKind k) {
  return k == ModelKind::ZIP || k == ModelKind::ZINB;
}
inline bool has_dispersion(ModelKind k) {
  return k == ModelKind::NB || k == ModelKind::ZINB;
}

inline constexpr double kRMin = 1e-2;
inline constexpr double kRMax = 1e3;
// exp(eta) is capped at e^30; larger linear predictors are treated as overflow
inline constexpr double kEtaMax = 30.0;

struct Observation {
  Vector phi;
  long y = 0;
};

struct Dataset {
  std::vector<Observation> obs;
  // optional per-observation weights in [0,1]; likelihood ops ignore them,
  // EM-internal M-steps carry their own responsibility weights
  std::vector<double> weights;

  std::size_t n() const { return obs.size(); }
  Eigen::Index dim() const { return obs.empty() ? 0 : obs.front().phi.size(); }
  void add(Vector phi, long y) { obs.push_back({std::move(phi), y}); }
};

struct ModelParams {
  Vector beta;
  std::optional<Vector> gamma;
  std::optional<double> r;
};

struct PriorSpec {
  Vector center_beta;
  std::optional<Vector> center_gamma;
  double lambda = 0.0;  // penalty: -lambda*|beta-b0|^2 - lambda*|gamma-g0|^2
};

struct FitOptions {
  int max_iter_newton = 200;
  int max_iter_em = 500;
  int mstep_max_iter = 25;
  double grad_tol = 1e-8;
  double loglik_rel_tol = 1e-9;
  double jitter = 1e-6;
  int step_halving_max = 30;
};

struct FitResult {
  ModelParams params;
  Matrix info_beta;  // penalized observed information, jittered if near-singular
  std::optional<Matrix> info_gamma;
  double loglik = 0.0;  // unpenalized observed-data log-likelihood at params
  int iterations = 0;
  bool converged = false;
  int ascent_violations = 0;  // EM iterations that decreased the penalized loglik
};

struct Score {
  Vector beta;
  std::optional<Vector> gamma;

  double norm() const {
    double s = beta.squaredNorm();
    if (gamma) s += gamma->squaredNorm();
    return std::sqrt(s);
  }
};

struct Information {
  Matrix beta;
  std::optional<Matrix> gamma;
};

namespace detail {

inline void check_params(ModelKind kind, const ModelParams& p, Eigen::Index d) {
  if (p.beta.size() != d)
    throw Error("beta dimension mismatch: " + std::to_string(p.beta.size()) +
                " vs feature dimension " + std::to_string(d));
  if (has_gamma(kind)) {
    if (!p.gamma) throw Error(std::string(kind_name(kind)) + " requires gamma");
    if (p.gamma->size() != d)
      throw Error("gamma dimension mismatch: " + std::to_string(p.gamma->size()) +
                  " vs feature dimension " + std::to_string(d));
  }
  if (has_dispersion(kind)) {
    if (!p.r) throw Error(std::string(kind_name(kind)) + " requires dispersion r");
    if (!(*p.r > 0.0) || !std::isfinite(*p.r))
      throw Error("dispersion r must be positive and finite");
  }
}

inline void check_data(const Dataset& data, Eigen::Index d) {
  for (std::size_t i = 0; i < data.obs.size(); ++i) {
    if (data.obs[i].phi.size() != d)
      throw Error("feature dimension mismatch at observation " + std::to_string(i));
    if (data.obs[i].y < 0)
      throw Error("negative outcome at observation " + std::to_string(i));
  }
  if (!data.weights.empty()) {
    if (data.weights.size() != data.obs.size())
      throw Error("weights length does not match observations");
    for (double w : data.weights)
      if (!(w >= 0.0 && w <= 1.0)) throw Error("weights must lie in [0,1]");
  }
}

// Stable per-observation pieces shared by loglik/score/information/e_step.
struct ObsTerms {
  double eta = 0.0, mu = 0.0;
  double zeta = 0.0, p = 0.0, lnp = 0.0, ln1mp = 0.0;  // gamma side
  double lnq0 = 0.0;  // ln P(count part = 0):  -mu (ZIP), -r ln(1+mu/r) (ZINB)
  double lnD = 0.0;   // ln(p + (1-p) e^{lnq0})
  bool overflow = false;
};

inline ObsTerms obs_terms(ModelKind kind, const Vector& phi, const ModelParams& par) {
  ObsTerms t;
  t.eta = phi.dot(par.beta);
  if (t.eta > kEtaMax) {
    t.overflow = true;
    return t;
  }
  t.mu = std::exp(t.eta);
  if (has_gamma(kind)) {
    t.zeta = phi.dot(*par.gamma);
    t.p = sigmoid(t.zeta);
    t.lnp = -softplus(-t.zeta);
    t.ln1mp = -softplus(t.zeta);
    t.lnq0 = (kind == ModelKind::ZIP) ? -t.mu : -*par.r * std::log1p(t.mu / *par.r);
    t.lnD = log_sum_exp(t.lnp, t.ln1mp + t.lnq0);
  }
  return t;
}

inline double count_loglik_term(ModelKind kind, double eta, double mu, long y,
                                const ModelParams& par) {
  double yy = static_cast<double>(y);
  if (kind == ModelKind::Poisson || kind == ModelKind::ZIP) {
    double term = -mu - std::lgamma(yy + 1.0);
    if (y > 0) term += eta * yy;  // guarded: eta*0 would NaN at eta = -inf
    return term;
  }
  double r = *par.r;
  double term = std::lgamma(r + yy) - std::lgamma(yy + 1.0) - std::lgamma(r) -
                r * std::log1p(mu / r);
  if (y > 0) term += yy * (eta - std::log(r + mu));
  return term;
}

// -inf on overflow; bad_idx (if given) receives the offending observation
inline double loglik_impl(ModelKind kind, const Dataset& data, const ModelParams& par,
                          std::size_t* bad_idx) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.obs.size(); ++i) {
    const auto& o = data.obs[i];
    ObsTerms t = obs_terms(kind, o.phi, par);
    if (t.overflow) {
      if (bad_idx) *bad_idx = i;
      return -std::numeric_limits<double>::infinity();
    }
    if (!has_gamma(kind)) {
      total += count_loglik_term(kind, t.eta, t.mu, o.y, par);
    } else if (o.y == 0) {
      total += t.lnD;
    } else {
      total += t.ln1mp + count_loglik_term(kind, t.eta, t.mu, o.y, par);
    }
  }
  return total;
}

}  // namespace detail

inline double loglik(ModelKind kind, const Dataset& data, const ModelParams& params) {
  Eigen::Index d = params.beta.size();
  detail::check_params(kind, params, d);
  detail::check_data(data, d);
  std::size_t bad = 0;
  double v = detail::loglik_impl(kind, data, params, &bad);
  if (v == -std::numeric_limits<double>::infinity())
    throw Error("linear predictor overflow (eta > 30) at observation " + std::to_string(bad));
  return v;
}

// Expected complete-data log-likelihood at responsibilities z (zero-inflated kinds).
inline double complete_loglik(ModelKind kind, const Dataset& data,
                              const std::vector<double>& z, const ModelParams& params) {
  if (!has_gamma(kind)) throw Error("complete_loglik requires a zero-inflated kind");
  Eigen::Index d = params.beta.size();
  detail::check_params(kind, params, d);
  detail::check_data(data, d);
  if (z.size() != data.obs.size()) throw Error("responsibility vector length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < data.obs.size(); ++i) {
    if (!(z[i] >= 0.0 && z[i] <= 1.0))
      throw Error("responsibility out of [0,1] at observation " + std::to_string(i));
    const auto& o = data.obs[i];
    detail::ObsTerms t = detail::obs_terms(kind, o.phi, params);
    if (t.overflow)
      throw Error("linear predictor overflow (eta > 30) at observation " + std::to_string(i));
    total += z[i] * t.lnp + (1.0 - z[i]) * t.ln1mp +
             (1.0 - z[i]) * detail::count_loglik_term(kind, t.eta, t.mu, o.y, params);
  }
  return total;
}

inline Score score(ModelKind kind, const Dataset& data, const ModelParams& params) {
  Eigen::Index d = params.beta.size();
  detail::check_params(kind, params, d);
  detail::check_data(data, d);
  Score s;
  s.beta = Vector::Zero(d);
  if (has_gamma(kind)) s.gamma = Vector::Zero(d);
  const double r = has_dispersion(kind) ? *params.r : 0.0;
  for (std::size_t i = 0; i < data.obs.size(); ++i) {
    const auto& o = data.obs[i];
    detail::ObsTerms t = detail::obs_terms(kind, o.phi, params);
    if (t.overflow)
      throw Error("linear predictor overflow (eta > 30) at observation " + std::to_string(i));
    const double y = static_cast<double>(o.y);
    switch (kind) {
      case ModelKind::Poisson:
        s.beta += (y - t.mu) * o.phi;
        break;
      case ModelKind::NB:
        s.beta += r * (y - t.mu) / (t.mu + r) * o.phi;
        break;
      case ModelKind::ZIP:
      case ModelKind::ZINB: {
        if (o.y > 0) {
          double cb = (kind == ModelKind::ZIP) ? (y - t.mu) : r * (y - t.mu) / (t.mu + r);
          s.beta += cb * o.phi;
          *s.gamma += -t.p * o.phi;
        } else {
          // w1 = (1-p) q0 / D, the conditional count-component weight
          double w1 = std::exp(t.ln1mp + t.lnq0 - t.lnD);
          double slope = (kind == ModelKind::ZIP) ? t.mu : r * t.mu / (t.mu + r);
          s.beta += -slope * w1 * o.phi;
          double E = -std::expm1(t.lnq0);  // 1 - q0
          double u = std::exp(t.lnp + t.ln1mp - t.lnD);  // p(1-p)/D
          *s.gamma += E * u * o.phi;
        }
        break;
      }
    }
  }
  return s;
}

// Observed information (negative Hessian of loglik) per block; exact analytic forms.
inline Information information(ModelKind kind, const Dataset& data,
                               const ModelParams& params) {
  Eigen::Index d = params.beta.size();
  detail::check_params(kind, params, d);
  detail::check_data(data, d);
  Information info;
  info.beta = Matrix::Zero(d, d);
  if (has_gamma(kind)) info.gamma = Matrix::Zero(d, d);
  const double r = has_dispersion(kind) ? *params.r : 0.0;
  for (std::size_t i = 0; i < data.obs.size(); ++i) {
    const auto& o = data.obs[i];
    detail::ObsTerms t = detail::obs_terms(kind, o.phi, params);
    if (t.overflow)
      throw Error("linear predictor overflow (eta > 30) at observation " + std::to_string(i));
    const double y = static_cast<double>(o.y);
    double gb = 0.0, gg = 0.0;
    switch (kind) {
      case ModelKind::Poisson:
        gb = t.mu;
        break;
      case ModelKind::NB:
        gb = r * t.mu * (r + y) / ((r + t.mu) * (r + t.mu));
        break;
      case ModelKind::ZIP:
      case ModelKind::ZINB: {
        if (o.y > 0) {
          gb = (kind == ModelKind::ZIP)
                   ? t.mu
                   : r * t.mu * (r + y) / ((r + t.mu) * (r + t.mu));
          gg = t.p * (1.0 - t.p);
        } else {
          double w1 = std::exp(t.ln1mp + t.lnq0 - t.lnD);
          double w2 = std::exp(t.lnp - t.lnD);  // w1 + w2 = 1
          if (kind == ModelKind::ZIP) {
            gb = t.mu * w1 - t.mu * t.mu * w1 * w2;
          } else {
            double slope = r * t.mu / (t.mu + r);          // -d lnq0 / d eta
            double dslope = r * r * t.mu / ((t.mu + r) * (t.mu + r));
            gb = dslope * w1 - slope * slope * w1 * w2;
          }
          double E = -std::expm1(t.lnq0);
          double u = std::exp(t.lnp + t.ln1mp - t.lnD);
          gg = -E * (1.0 - 2.0 * t.p) * u + E * E * u * u;
        }
        break;
      }
    }
    info.beta += gb * (o.phi * o.phi.transpose());
    if (info.gamma && gg != 0.0) *info.gamma += gg * (o.phi * o.phi.transpose());
  }
  return info;
}

// Posterior probability that each observation is a structural zero.
inline std::vector<double> e_step(ModelKind kind, const Dataset& data,
                                  const ModelParams& params) {
  if (!has_gamma(kind)) throw Error("e_step requires a zero-inflated kind");
  Eigen::Index d = params.beta.size();
  detail::check_params(kind, params, d);
  detail::check_data(data, d);
  std::vector<double> z(data.obs.size(), 0.0);
  for (std::size_t i = 0; i < data.obs.size(); ++i) {
    const auto& o = data.obs[i];
    if (o.y > 0) continue;
    detail::ObsTerms t = detail::obs_terms(kind, o.phi, params);
    if (t.overflow)
      throw Error("linear predictor overflow (eta > 30) at observation " + std::to_string(i));
    z[i] = std::exp(t.lnp - t.lnD);
  }
  return z;
}

// log of the expected reward h(phi); never overflows
inline double log_mean_reward(ModelKind kind, const ModelParams& params,
                              const Vector& phi_gamma, const Vector& phi_beta) {
  detail::check_params(kind, params, phi_beta.size());
  double eta = phi_beta.dot(params.beta);
  if (!has_gamma(kind)) return eta;
  if (phi_gamma.size() != params.gamma->size())
    throw Error("gamma feature dimension mismatch in mean_reward");
  double zeta = phi_gamma.dot(*params.gamma);
  return eta - softplus(zeta);  // ln[(1 - sigmoid(zeta)) e^eta]
}

inline double mean_reward(ModelKind kind, const ModelParams& params,
                          const Vector& phi_gamma, const Vector& phi_beta) {
  double lh = log_mean_reward(kind, params, phi_gamma, phi_beta);
  double eta = phi_beta.dot(params.beta);
  if (eta > kEtaMax) throw Error("linear predictor overflow (eta > 30) in mean_reward");
  return std::exp(lh);
}

namespace detail {

inline Vector solve_spd(Matrix H, const Vector& g, double jitter) {
  double add = jitter;
  for (int attempt = 0; attempt < 10; ++attempt) {
    Eigen::LLT<Matrix> llt(H);
    if (llt.info() == Eigen::Success) {
      Vector s = llt.solve(g);
      if (s.allFinite()) return s;
    }
    H.diagonal().array() += add;
    add *= 10.0;
  }
  throw Error("information matrix is not positive definite");
}

// Profile update of the NB dispersion on [kRMin, kRMax] given weights and mu.
// Maximizes sum_i w_i * nb_loglik(y_i; mu_i, r) over r (safeguarded Newton).
inline double profile_r(const std::vector<double>& w, const std::vector<double>& mu,
                        const std::vector<long>& y, double r_cur) {
  double wsum = 0.0;
  for (double wi : w) wsum += wi;
  if (wsum <= 1e-12) return r_cur;

  auto fp = [&](double r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (w[i] == 0.0) continue;
      double yy = static_cast<double>(y[i]);
      s += w[i] * (boost::math::digamma(r + yy) - boost::math::digamma(r) +
                   std::log(r) + 1.0 - std::log(r + mu[i]) - (r + yy) / (r + mu[i]));
    }
    return s;
  };
  auto fpp = [&](double r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (w[i] == 0.0) continue;
      double yy = static_cast<double>(y[i]);
      double rm = r + mu[i];
      s += w[i] * (boost::math::trigamma(r + yy) - boost::math::trigamma(r) +
                   1.0 / r - 1.0 / rm - (mu[i] - yy) / (rm * rm));
    }
    return s;
  };

  double a = kRMin, b = kRMax;
  double fa = fp(a);
  if (fa <= 0.0) return a;  // profile decreasing at the left edge
  double fb = fp(b);
  if (fb >= 0.0) return b;

  double x = std::clamp(r_cur, a, b);
  const double ftol = 1e-10 * std::max(1.0, wsum);
  for (int it = 0; it < 100; ++it) {
    double fx = fp(x);
    if (std::abs(fx) <= ftol) return x;
    if (fx > 0.0) a = x; else b = x;
    double fxx = fpp(x);
    double xn = (fxx < 0.0) ? x - fx / fxx : std::numeric_limits<double>::quiet_NaN();
    if (!(xn > a && xn < b)) xn = 0.5 * (a + b);
    x = xn;
    if (b - a <= 1e-12 * b) return x;
  }
  return x;
}

struct PenaltyView {
  const PriorSpec* prior = nullptr;  // null = no penalty

  double lambda() const { return prior ? prior->lambda : 0.0; }
  double value(const ModelParams& p) const {
    if (!prior || prior->lambda == 0.0) return 0.0;
    double v = prior->lambda * (p.beta - prior->center_beta).squaredNorm();
    if (p.gamma && prior->center_gamma)
      v += prior->lambda * (*p.gamma - *prior->center_gamma).squaredNorm();
    return v;
  }
  Vector grad_beta(const Vector& beta) const {
    if (!prior || prior->lambda == 0.0) return Vector::Zero(beta.size());
    return 2.0 * prior->lambda * (beta - prior->center_beta);
  }
  Vector grad_gamma(const Vector& gamma) const {
    if (!prior || prior->lambda == 0.0 || !prior->center_gamma)
      return Vector::Zero(gamma.size());
    return 2.0 * prior->lambda * (gamma - *prior->center_gamma);
  }
};

inline double penalized_loglik(ModelKind kind, const Dataset& data,
                               const ModelParams& par, const PenaltyView& pen) {
  double ll = loglik_impl(kind, data, par, nullptr);
  if (!std::isfinite(ll)) return ll;
  return ll - pen.value(par);
}

inline double penalized_score_norm(ModelKind kind, const Dataset& data,
                                   const ModelParams& par, const PenaltyView& pen) {
  Score s = score(kind, data, par);
  Vector gb = s.beta - pen.grad_beta(par.beta);
  double sq = gb.squaredNorm();
  if (s.gamma) sq += (*s.gamma - pen.grad_gamma(*par.gamma)).squaredNorm();
  return std::sqrt(sq);
}

// Damped Newton ascent of a generic concave-ish objective over one block.
// grad/hess/value are callables of the block vector. Returns iterations used.
// When no halved step is acceptable (including iterates pinned against the
// eta cap while the maximizer sits at infinity) the block simply stops.
template <typename ValueF, typename GradF, typename HessF>
int newton_block(Vector& x, ValueF value, GradF grad, HessF hess, int max_iter,
                 double grad_tol, double jitter, int halving_max) {
  int it = 0;
  double f0 = value(x);
  for (; it < max_iter; ++it) {
    Vector g = grad(x);
    if (g.norm() < grad_tol) break;
    Vector step = solve_spd(hess(x), g, jitter);
    // near-singular Hessians can propose astronomically long steps that no
    // budgeted halving brings back into the finite region; rescale first
    double cap = 100.0 * (1.0 + x.norm());
    if (step.norm() > cap) step *= cap / step.norm();
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= halving_max; ++h) {
      Vector xt = x + t * step;
      double ft = value(xt);
      if (std::isfinite(ft) && ft >= f0 - 1e-12 * (1.0 + std::abs(f0))) {
        x = xt;
        f0 = ft;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
  }
  return it;
}

inline std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

// Weighted count-model block update (Poisson or NB mean part) used by both the
// direct Newton fit (unit weights) and the EM M-step (weights 1-z).
inline void mstep_count(ModelKind count_kind, const Dataset& data,
                        const std::vector<double>& w, Vector& beta,
                        std::optional<double>& r, const PenaltyView& pen,
                        const FitOptions& opt, int max_iter) {
  const Eigen::Index d = beta.size();
  const bool nb = count_kind == ModelKind::NB;

  auto mus = [&](const Vector& b, std::vector<double>& eta,
                 std::vector<double>& mu) -> bool {
    eta.resize(data.obs.size());
    mu.resize(data.obs.size());
    for (std::size_t i = 0; i < data.obs.size(); ++i) {
      eta[i] = data.obs[i].phi.dot(b);
      if (eta[i] > kEtaMax) return false;
      mu[i] = std::exp(eta[i]);
    }
    return true;
  };

  std::vector<long> ys(data.obs.size());
  for (std::size_t i = 0; i < data.obs.size(); ++i) ys[i] = data.obs[i].y;

  std::vector<double> et, mu;
  if (nb) {
    if (!mus(beta, et, mu)) throw Error("fit diverged: linear predictor overflow");
    *r = profile_r(w, mu, ys, *r);
  }

  auto value = [&](const Vector& b) {
    std::vector<double> e, m;
    if (!mus(b, e, m)) return -std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (std::size_t i = 0; i < data.obs.size(); ++i) {
      if (w[i] == 0.0) continue;
      ModelParams tmp;  // only r is read by count_loglik_term
      tmp.r = r;
      s += w[i] * count_loglik_term(count_kind, e[i], m[i], data.obs[i].y, tmp);
    }
    return s - pen.lambda() * (pen.prior ? (b - pen.prior->center_beta).squaredNorm() : 0.0);
  };
  auto grad = [&](const Vector& b) {
    std::vector<double> e, m;
    if (!mus(b, e, m)) throw Error("fit diverged: linear predictor overflow");
    Vector g = Vector::Zero(d);
    for (std::size_t i = 0; i < data.obs.size(); ++i) {
      if (w[i] == 0.0) continue;
      double yy = static_cast<double>(data.obs[i].y);
      double c = nb ? *r * (yy - m[i]) / (m[i] + *r) : (yy - m[i]);
      g += w[i] * c * data.obs[i].phi;
    }
    return Vector(g - pen.grad_beta(b));
  };
  auto hess = [&](const Vector& b) {
    std::vector<double> e, m;
    if (!mus(b, e, m)) throw Error("fit diverged: linear predictor overflow");
    Matrix H = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < data.obs.size(); ++i) {
      if (w[i] == 0.0) continue;
      double yy = static_cast<double>(data.obs[i].y);
      double g = nb ? *r * m[i] * (*r + yy) / ((*r + m[i]) * (*r + m[i])) : m[i];
      H += (w[i] * g) * (data.obs[i].phi * data.obs[i].phi.transpose());
    }
    H.diagonal().array() += 2.0 * pen.lambda();
    return H;
  };

  // block tolerance sits below the outer score tolerance, otherwise the
  // M-steps freeze while the joint score is still above grad_tol
  newton_block(beta, value, grad, hess, max_iter, 0.1 * opt.grad_tol, opt.jitter,
               opt.step_halving_max);
  if (nb) {
    if (!mus(beta, et, mu)) throw Error("fit diverged: linear predictor overflow");
    *r = profile_r(w, mu, ys, *r);
  }
}

// Weighted logistic M-step: maximize sum_i [z_i zeta_i - softplus(zeta_i)] - penalty.
inline void mstep_logistic(const Dataset& data, const std::vector<double>& z,
                           Vector& gamma, const PenaltyView& pen, const FitOptions& opt,
                           int max_iter) {
  const Eigen::Index d = gamma.size();
  auto value = [&](const Vector& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < data.obs.size(); ++i) {
      double zeta = data.obs[i].phi.dot(g);
      s += z[i] * zeta - softplus(zeta);
    }
    if (pen.prior && pen.prior->center_gamma)
      s -= pen.lambda() * (g - *pen.prior->center_gamma).squaredNorm();
    return s;
  };
  auto grad = [&](const Vector& g) {
    Vector gr = Vector::Zero(d);
    for (std::size_t i = 0; i < data.obs.size(); ++i)
      gr += (z[i] - sigmoid(data.obs[i].phi.dot(g))) * data.obs[i].phi;
    return Vector(gr - pen.grad_gamma(g));
  };
  auto hess = [&](const Vector& g) {
    Matrix H = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < data.obs.size(); ++i) {
      double p = sigmoid(data.obs[i].phi.dot(g));
      H += (p * (1.0 - p)) * (data.obs[i].phi * data.obs[i].phi.transpose());
    }
    H.diagonal().array() += 2.0 * pen.lambda();
    return H;
  };
  newton_block(gamma, value, grad, hess, max_iter, 0.1 * opt.grad_tol, opt.jitter,
               opt.step_halving_max);
}

}  // namespace detail

// MLE (lambda = 0) or ridge-MAP fit. Poisson/NB use damped Newton with a
// profile update of r; ZIP/ZINB use generalized EM, finished by a block
// Newton polish on the observed likelihood when EM stalls short of grad_tol.
// converged == true means the penalized score norm fell below grad_tol; the
// relative-loglik threshold only stops iteration early (stall) and does not
// by itself declare success.
namespace detail {

struct PolishResult {
  int sweeps = 0;
  double gnorm = 0.0;
};

// Block Newton on the observed penalized likelihood: one ascent-guarded Newton
// step per block (gamma, beta) plus a profile update of r per sweep. Used both
// as the post-EM polish and as the fast path for warm-started refits.
inline PolishResult newton_polish(ModelKind kind, const Dataset& data, ModelParams& par,
                                  const PenaltyView& pen, const FitOptions& opt,
                                  int max_sweeps) {
  PolishResult out;
  out.gnorm = penalized_score_norm(kind, data, par, pen);
  int sweeps = 0;
  for (; sweeps < max_sweeps && out.gnorm >= opt.grad_tol; ++sweeps) {
    ModelParams before = par;
    if (has_gamma(kind)) {
      auto value = [&](const Vector& g) {
        ModelParams q = par;
        q.gamma = g;
        return penalized_loglik(kind, data, q, pen);
      };
      auto grad = [&](const Vector& g) {
        ModelParams q = par;
        q.gamma = g;
        return Vector(*score(kind, data, q).gamma - pen.grad_gamma(g));
      };
      auto hess = [&](const Vector& g) {
        ModelParams q = par;
        q.gamma = g;
        Matrix H = *information(kind, data, q).gamma;
        H.diagonal().array() += 2.0 * pen.lambda();
        return H;
      };
      newton_block(*par.gamma, value, grad, hess, 1, 0.1 * opt.grad_tol, opt.jitter,
                   opt.step_halving_max);
    }
    {
      auto value = [&](const Vector& b) {
        ModelParams q = par;
        q.beta = b;
        return penalized_loglik(kind, data, q, pen);
      };
      auto grad = [&](const Vector& b) {
        ModelParams q = par;
        q.beta = b;
        return Vector(score(kind, data, q).beta - pen.grad_beta(b));
      };
      auto hess = [&](const Vector& b) {
        ModelParams q = par;
        q.beta = b;
        Matrix H = information(kind, data, q).beta;
        H.diagonal().array() += 2.0 * pen.lambda();
        return H;
      };
      newton_block(par.beta, value, grad, hess, 1, 0.1 * opt.grad_tol, opt.jitter,
                   opt.step_halving_max);
    }
    if (has_dispersion(kind)) {
      std::vector<double> w =
          has_gamma(kind) ? std::vector<double>() : ones(data.obs.size());
      if (has_gamma(kind)) {
        std::vector<double> z = e_step(kind, data, par);
        w.resize(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) w[i] = 1.0 - z[i];
      }
      std::vector<double> mu(data.obs.size());
      std::vector<long> ys(data.obs.size());
      for (std::size_t i = 0; i < data.obs.size(); ++i) {
        mu[i] = std::exp(data.obs[i].phi.dot(par.beta));
        ys[i] = data.obs[i].y;
      }
      par.r = profile_r(w, mu, ys, *par.r);
    }
    out.gnorm = penalized_score_norm(kind, data, par, pen);
    bool moved = (par.beta - before.beta).norm() > 0.0 ||
                 (par.gamma && (*par.gamma - *before.gamma).norm() > 0.0) ||
                 (par.r && *par.r != *before.r);
    if (!moved) {
      ++sweeps;
      break;
    }
  }
  out.sweeps = sweeps;
  return out;
}

}  // namespace detail

inline FitResult fit(ModelKind kind, const Dataset& data,
                     const std::optional<PriorSpec>& prior = {},
                     const FitOptions& opt = {},
                     const std::optional<ModelParams>& init = {}) {
  const bool have_prior = prior && prior->lambda > 0.0;
  if (data.obs.empty() && !have_prior)
    throw Error("cannot fit an empty dataset without a positive ridge penalty");

  Eigen::Index d = 0;
  if (!data.obs.empty()) d = data.obs.front().phi.size();
  else d = prior->center_beta.size();
  detail::check_data(data, d);
  if (have_prior) {
    if (prior->center_beta.size() != d) throw Error("prior center_beta dimension mismatch");
    if (has_gamma(kind) && (!prior->center_gamma || prior->center_gamma->size() != d))
      throw Error(std::string(kind_name(kind)) + " prior requires center_gamma of matching dimension");
    if (!(prior->lambda >= 0.0)) throw Error("prior lambda must be nonnegative");
  }

  ModelParams par;
  if (init) {
    detail::check_params(kind, *init, d);
    par = *init;
    if (par.r) par.r = std::clamp(*par.r, kRMin, kRMax);
  } else {
    par.beta = have_prior ? prior->center_beta : Vector::Zero(d);
    if (has_gamma(kind))
      par.gamma = (have_prior && prior->center_gamma) ? *prior->center_gamma : Vector::Zero(d);
    if (has_dispersion(kind)) par.r = 1.0;
  }
  if (has_dispersion(kind) && !par.r) par.r = 1.0;

  detail::PenaltyView pen{have_prior ? &*prior : nullptr};

  FitResult res;

  if (!has_gamma(kind)) {
    // direct Newton on beta with interleaved profile updates of r
    std::vector<double> w = detail::ones(data.obs.size());
    double f0 = detail::penalized_loglik(kind, data, par, pen);
    if (!std::isfinite(f0)) throw Error("initial point overflows the linear predictor");
    double gnorm = detail::penalized_score_norm(kind, data, par, pen);
    int it = 0;
    for (; it < opt.max_iter_newton; ++it) {
      if (gnorm < opt.grad_tol) {
        res.converged = true;
        break;
      }
      Vector beta = par.beta;
      detail::mstep_count(kind, data, w, beta, par.r, pen, opt, 1);
      bool moved = (beta - par.beta).norm() > 0.0;
      par.beta = beta;
      double f1 = detail::penalized_loglik(kind, data, par, pen);
      double gnew = detail::penalized_score_norm(kind, data, par, pen);
      bool stalled = std::abs(f1 - f0) <= opt.loglik_rel_tol * (1.0 + std::abs(f0)) &&
                     gnew > 0.999 * gnorm;
      f0 = f1;
      gnorm = gnew;
      if (!moved || stalled) {
        ++it;
        res.converged = gnorm < opt.grad_tol;
        break;
      }
    }
    if (it == opt.max_iter_newton) res.converged = gnorm < opt.grad_tol;
    res.iterations = it;
  } else {
    // generalized EM
    double f0 = detail::penalized_loglik(kind, data, par, pen);
    if (!std::isfinite(f0)) throw Error("initial point overflows the linear predictor");
    double gnorm = detail::penalized_score_norm(kind, data, par, pen);
    // A warm start (streaming refit) sits near the previous optimum, exactly
    // where EM's missing-information contraction is slowest; a few quadratic
    // block-Newton sweeps close that gap directly. Falls through to EM when
    // the start is not actually close.
    if (init && !data.obs.empty() && gnorm >= opt.grad_tol) {
      detail::PolishResult nw = detail::newton_polish(kind, data, par, pen, opt, 10);
      res.iterations += nw.sweeps;
      gnorm = nw.gnorm;
      f0 = detail::penalized_loglik(kind, data, par, pen);
    }
    int it = 0;
    for (; it < opt.max_iter_em; ++it) {
      if (gnorm < opt.grad_tol) {
        res.converged = true;
        break;
      }
      std::vector<double> z = e_step(kind, data, par);
      detail::mstep_logistic(data, z, *par.gamma, pen, opt, opt.mstep_max_iter);
      std::vector<double> w(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) w[i] = 1.0 - z[i];
      ModelKind count_kind = (kind == ModelKind::ZIP) ? ModelKind::Poisson : ModelKind::NB;
      detail::mstep_count(count_kind, data, w, par.beta, par.r, pen, opt,
                          opt.mstep_max_iter);
      double f1 = detail::penalized_loglik(kind, data, par, pen);
      if (f1 < f0 - 1e-9 * (1.0 + std::abs(f0))) ++res.ascent_violations;
      double gnew = detail::penalized_score_norm(kind, data, par, pen);
      bool stalled = std::abs(f1 - f0) <= opt.loglik_rel_tol * (1.0 + std::abs(f0)) &&
                     gnew > 0.999 * gnorm;
      f0 = f1;
      gnorm = gnew;
      if (stalled) {
        ++it;
        res.converged = gnorm < opt.grad_tol;
        break;
      }
    }
    if (it == opt.max_iter_em) res.converged = gnorm < opt.grad_tol;
    res.iterations += it;
  }

  // EM contracts the observed score only at the missing-information rate,
  // which under heavy zero masking can exceed 0.999 per iteration; once it
  // stalls short of grad_tol, finish with block Newton on the observed
  // likelihood (score/information are the true per-block derivatives, so the
  // remaining gap closes at the much faster beta-gamma coupling rate).
  if (!res.converged && !data.obs.empty()) {
    detail::PolishResult nw =
        detail::newton_polish(kind, data, par, pen, opt, opt.max_iter_newton);
    res.iterations += nw.sweeps;
    res.converged = nw.gnorm < opt.grad_tol;
  }

  res.params = par;
  res.loglik = detail::loglik_impl(kind, data, par, nullptr);

  Information info = information(kind, data, par);
  auto finalize = [&](Matrix& m) {
    m.diagonal().array() += 2.0 * pen.lambda();
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.eigenvalues().minCoeff() < opt.jitter) m.diagonal().array() += opt.jitter;
  };
  finalize(info.beta);
  res.info_beta = std::move(info.beta);
  if (info.gamma) {
    finalize(*info.gamma);
    res.info_gamma = std::move(*info.gamma);
  }
  return res;
}

}  // namespace models
}  // namespace countbandit
