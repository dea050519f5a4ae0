#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "count_models.hpp"
#include "feature_map.hpp"
#include "rng.hpp"

namespace countbandit::env {

enum class EnvFamily { Poisson, OP, ZIP, ZIOP };

inline const char* family_name(EnvFamily f) {
  switch (f) {
    case EnvFamily::Poisson: return "poisson";
    case EnvFamily::OP: return "op";
    case EnvFamily::ZIP: return "zip";
    case EnvFamily::ZIOP: return "ziop";
  }
  return "?";
}

inline std::optional<EnvFamily> parse_family(const std::string& s) {
  if (s == "poisson") return EnvFamily::Poisson;
  if (s == "op") return EnvFamily::OP;
  if (s == "zip") return EnvFamily::ZIP;
  if (s == "ziop") return EnvFamily::ZIOP;
  return std::nullopt;
}

inline bool zero_inflated(EnvFamily f) {
  return f == EnvFamily::ZIP || f == EnvFamily::ZIOP;
}
inline bool overdispersed(EnvFamily f) {
  return f == EnvFamily::OP || f == EnvFamily::ZIOP;
}

struct EnvSpec {
  EnvFamily family = EnvFamily::Poisson;
  double omega = 1.0;  // gamma-frailty shape; mean 1, variance 1/omega
  models::ModelParams truth;
  int K = 2;
  int d = 2;
};

inline Vector project_ball(Vector v) {
  double n = v.norm();
  if (n > 1.0) v /= n;
  return v;
}

// K standard-normal context vectors, projected onto the unit ball.
inline std::vector<Vector> gen_features(RngStream& rng, int K, int d) {
  if (K < 1 || d < 1) throw Error("gen_features requires K >= 1 and d >= 1");
  std::vector<Vector> out;
  out.reserve(K);
  for (int k = 0; k < K; ++k) {
    Vector v(d);
    for (int j = 0; j < d; ++j) v[j] = rng.normal();
    out.push_back(project_ball(std::move(v)));
  }
  return out;
}

// Ground-truth coefficients, same recipe as contexts; gamma only when asked.
inline models::ModelParams gen_truth(RngStream& rng, int d, bool with_gamma) {
  if (d < 1) throw Error("gen_truth requires d >= 1");
  models::ModelParams truth;
  truth.beta.resize(d);
  for (int j = 0; j < d; ++j) truth.beta[j] = rng.normal();
  truth.beta = project_ball(truth.beta);
  if (with_gamma) {
    Vector g(d);
    for (int j = 0; j < d; ++j) g[j] = rng.normal();
    truth.gamma = project_ball(std::move(g));
  }
  return truth;
}

inline void check_spec(const EnvSpec& spec) {
  if (spec.truth.beta.size() == 0) throw Error("environment truth has no beta");
  if (zero_inflated(spec.family) && !spec.truth.gamma)
    throw Error("zero-inflated environment requires gamma truth");
  if (overdispersed(spec.family) && !(spec.omega > 0.0))
    throw Error("overdispersed environment requires omega > 0");
}

// Generative draw: C ~ Poisson(lambda * mu) with a gamma frailty lambda for
// the overdispersed families, masked by the structural-zero indicator for the
// zero-inflated families. Draw order (frailty, count, mask) is fixed.
inline long draw_outcome(const EnvSpec& spec, const Vector& phi, RngStream& rng) {
  check_spec(spec);
  if (phi.size() != spec.truth.beta.size())
    throw Error("draw_outcome: feature dimension mismatch");
  double eta = phi.dot(spec.truth.beta);
  if (eta > models::kEtaMax) throw Error("draw_outcome: linear predictor overflow");
  double mu = std::exp(eta);
  double lam = overdispersed(spec.family) ? rng.gamma(spec.omega, 1.0 / spec.omega) : 1.0;
  long c = rng.poisson(lam * mu);
  if (zero_inflated(spec.family)) {
    double p = sigmoid(phi.dot(*spec.truth.gamma));
    bool active = rng.bernoulli(1.0 - p);
    return active ? c : 0;
  }
  return c;
}

// E[Y | phi]; the frailty has mean one, so omega does not enter.
inline double expected_reward(const EnvSpec& spec, const Vector& phi) {
  check_spec(spec);
  if (phi.size() != spec.truth.beta.size())
    throw Error("expected_reward: feature dimension mismatch");
  double eta = phi.dot(spec.truth.beta);
  if (eta > models::kEtaMax) throw Error("expected_reward: linear predictor overflow");
  if (!zero_inflated(spec.family)) return std::exp(eta);
  return std::exp(eta - softplus(phi.dot(*spec.truth.gamma)));
}

struct OracleChoice {
  int action = 0;
  double value = 0.0;
};

inline OracleChoice oracle_action(const EnvSpec& spec, const std::vector<Vector>& features) {
  if (features.empty()) throw Error("oracle_action requires at least one action");
  OracleChoice best{0, expected_reward(spec, features[0])};
  for (std::size_t k = 1; k < features.size(); ++k) {
    double v = expected_reward(spec, features[k]);
    if (v > best.value) best = {static_cast<int>(k), v};
  }
  return best;
}

// Best achievable expected reward under a clipped binary policy: the optimal
// clipped probability sits at p_max when the active arm beats null, else p_min.
inline double clipped_oracle_value(const EnvSpec& spec, const Vector& phi_null,
                                   const std::vector<Vector>& phi_active,
                                   double p_min, double p_max) {
  if (phi_active.empty()) throw Error("clipped_oracle_value requires an active arm");
  if (!(p_min >= 0.0 && p_max <= 1.0 && p_min < p_max))
    throw Error("clip bounds must satisfy 0 <= p_min < p_max <= 1");
  double h0 = expected_reward(spec, phi_null);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& phi : phi_active) {
    double ha = expected_reward(spec, phi);
    double p = (ha >= h0) ? p_max : p_min;
    best = std::max(best, p * ha + (1.0 - p) * h0);
  }
  return best;
}

// ---- synthetic intervention-log generation (MRT-style) ----

struct MrtRow {
  std::string user_id;
  long day = 0;
  long age = 0;
  long gender = 0;
  long audit = 0;
  long days_since_download = 0;
  long action = 0;
  double propensity = 0.6;
  long outcome = 0;
};

struct MrtGenConfig {
  int n_users = 50;
  int t_days = 200;
  EnvFamily family = EnvFamily::ZIOP;  // OP or ZIOP
  double omega = 1.0;
  double heterogeneity = 0.1;  // user-level perturbation scale around the center
  double action_p = 0.6;       // logged static policy
};

struct MrtDataset {
  std::vector<MrtRow> rows;
  models::ModelParams center;               // population-level truth
  std::vector<models::ModelParams> truths;  // per-user truths
  MrtScaling scaling;
};

inline std::string mrt_user_id(int n, int n_users) {
  int width = 1;
  for (int v = n_users - 1; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(n);
  return "u" + std::string(width > static_cast<int>(digits.size())
                               ? width - digits.size()
                               : 0, '0') + digits;
}

inline models::ModelParams perturb_truth(const models::ModelParams& center,
                                         double heterogeneity, RngStream& rng) {
  models::ModelParams t;
  Vector db(center.beta.size());
  for (Eigen::Index j = 0; j < db.size(); ++j) db[j] = rng.normal();
  t.beta = project_ball(center.beta + heterogeneity * db);
  if (center.gamma) {
    Vector dg(center.gamma->size());
    for (Eigen::Index j = 0; j < dg.size(); ++j) dg[j] = rng.normal();
    t.gamma = project_ball(*center.gamma + heterogeneity * dg);
  }
  return t;
}

// Static-policy intervention log over simulated users. Covariates are drawn
// first so the min-max scaling (and hence the features behind the outcomes)
// matches what any later pass over the written corpus will reconstruct.
inline MrtDataset gen_mrt_dataset(const MrtGenConfig& cfg, RngStream& rng) {
  if (cfg.n_users < 1 || cfg.t_days < 1) throw Error("gen_mrt_dataset needs users and days");
  if (cfg.family != EnvFamily::OP && cfg.family != EnvFamily::ZIOP)
    throw Error("gen_mrt_dataset supports the op and ziop families");
  if (!(cfg.action_p > 0.0 && cfg.action_p < 1.0))
    throw Error("logged action probability must lie in (0,1)");

  MrtDataset out;
  RngStream pop = rng.substream("population");
  out.center = gen_truth(pop, kMrtDim, zero_inflated(cfg.family));

  struct UserCov {
    long age, gender, audit;
  };
  std::vector<UserCov> covs(cfg.n_users);
  for (int n = 0; n < cfg.n_users; ++n) {
    RngStream cov = rng.substream("cov", n);
    covs[n] = {cov.uniform_int(18, 65), cov.bernoulli(0.5) ? 1L : 0L,
               cov.uniform_int(8, 40)};
  }

  MrtScaling sc;
  sc.age_min = sc.age_max = static_cast<double>(covs[0].age);
  sc.audit_min = sc.audit_max = static_cast<double>(covs[0].audit);
  for (const auto& c : covs) {
    sc.age_min = std::min(sc.age_min, static_cast<double>(c.age));
    sc.age_max = std::max(sc.age_max, static_cast<double>(c.age));
    sc.audit_min = std::min(sc.audit_min, static_cast<double>(c.audit));
    sc.audit_max = std::max(sc.audit_max, static_cast<double>(c.audit));
  }
  sc.days_min = 0.0;
  sc.days_max = static_cast<double>(cfg.t_days - 1);
  out.scaling = sc;

  out.truths.reserve(cfg.n_users);
  for (int n = 0; n < cfg.n_users; ++n) {
    RngStream user = rng.substream("user", n);
    RngStream truth_rng = user.substream("truth");
    out.truths.push_back(perturb_truth(out.center, cfg.heterogeneity, truth_rng));

    EnvSpec spec;
    spec.family = cfg.family;
    spec.omega = cfg.omega;
    spec.truth = out.truths.back();
    spec.K = 2;
    spec.d = kMrtDim;

    RngStream act = user.substream("action");
    RngStream outcome = user.substream("outcome");
    for (int day = 0; day < cfg.t_days; ++day) {
      MrtRow row;
      row.user_id = mrt_user_id(n, cfg.n_users);
      row.day = day;
      row.age = covs[n].age;
      row.gender = covs[n].gender;
      row.audit = covs[n].audit;
      row.days_since_download = day;
      row.action = act.bernoulli(cfg.action_p) ? 1 : 0;
      row.propensity = row.action == 1 ? cfg.action_p : 1.0 - cfg.action_p;
      MrtBlocks b = mrt_blocks(static_cast<double>(row.age),
                               static_cast<double>(row.gender),
                               static_cast<double>(row.audit),
                               static_cast<double>(row.days_since_download), sc);
      Vector phi = feature_map(b.x, b.s, static_cast<int>(row.action));
      row.outcome = draw_outcome(spec, phi, outcome);
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace countbandit::env
