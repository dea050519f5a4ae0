#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "count_models.hpp"
#include "rng.hpp"

namespace countbandit::agents {

using models::Dataset;
using models::FitOptions;
using models::FitResult;
using models::ModelKind;
using models::ModelParams;
using models::PriorSpec;

enum class PolicyKind { Poisson, NB, ZIP, ZINB, LinearTS, Static };

inline const char* policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::Poisson: return "ts-poisson";
    case PolicyKind::NB: return "ts-nb";
    case PolicyKind::ZIP: return "ts-zip";
    case PolicyKind::ZINB: return "ts-zinb";
    case PolicyKind::LinearTS: return "linear-ts";
    case PolicyKind::Static: return "static";
  }
  return "?";
}

inline bool is_count_policy(PolicyKind k) {
  return k == PolicyKind::Poisson || k == PolicyKind::NB || k == PolicyKind::ZIP ||
         k == PolicyKind::ZINB;
}

inline ModelKind to_model_kind(PolicyKind k) {
  switch (k) {
    case PolicyKind::Poisson: return ModelKind::Poisson;
    case PolicyKind::NB: return ModelKind::NB;
    case PolicyKind::ZIP: return ModelKind::ZIP;
    case PolicyKind::ZINB: return ModelKind::ZINB;
    default: throw Error("policy has no count-model kind");
  }
}

struct ExplorationRule {
  enum class Mode { FixedTau, MinEigen };
  Mode mode = Mode::FixedTau;
  int tau = 20;            // explore while t <= tau
  double min_eigen = 1.0;  // explore until lambda_min(Gram) >= min_eigen
};

struct ClipBounds {
  double p_min = 0.01;
  double p_max = 0.99;
};

inline double clip(double p, double p_min, double p_max) {
  if (!(p_min >= 0.0 && p_max <= 1.0 && p_min < p_max))
    throw Error("clip bounds must satisfy 0 <= p_min < p_max <= 1");
  return std::min(p_max, std::max(p_min, p));
}

struct AgentConfig {
  PolicyKind kind = PolicyKind::Poisson;
  double alpha_beta = 1.0;   // posterior scale for the count (or linear) block
  double alpha_gamma = 1.0;  // posterior scale for the zero-inflation block
  ExplorationRule exploration;
  std::optional<ClipBounds> clip;       // binary-action randomized clipping
  std::optional<PriorSpec> prior;       // ridge-MAP prior for count models
  int refit_every = 1;
  int propensity_draws = 1000;          // M for Monte Carlo propensities
  double static_p = 0.6;                // P(action 1) for the static policy
  bool explore_round_robin = false;     // cycle arms during exploration
  bool report_mc_propensity = false;    // report MC propensity instead of 1.0
  FitOptions fit_options;
};

struct Decision {
  int action = 0;
  double propensity = 1.0;  // probability of the emitted action, in (0,1]
  std::optional<ModelParams> sampled;  // absent if it disagrees with the action
  bool explored = false;
};

// One posterior draw: params ~ N(mle, alpha^2 * info^{-1}) blockwise; r passes through.
inline ModelParams laplace_sample(const FitResult& fit, double alpha_beta,
                                  double alpha_gamma, RngStream& rng) {
  auto draw_block = [&](const Vector& center, const Matrix& info, double alpha) {
    Eigen::LLT<Matrix> llt(info);
    if (llt.info() != Eigen::Success)
      throw Error("laplace_sample: information matrix is not positive definite");
    Vector u(center.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = rng.normal();
    // info = L L^T  =>  L^{-T} u has covariance info^{-1}
    Vector v = llt.matrixU().solve(u);
    return Vector(center + alpha * v);
  };
  ModelParams out;
  out.beta = draw_block(fit.params.beta, fit.info_beta, alpha_beta);
  if (fit.params.gamma) {
    if (!fit.info_gamma) throw Error("laplace_sample: missing gamma information block");
    out.gamma = draw_block(*fit.params.gamma, *fit.info_gamma, alpha_gamma);
  }
  out.r = fit.params.r;
  return out;
}

// Argmax of the sampled mean reward; ties break toward the lowest index.
inline int select_action(ModelKind kind, const ModelParams& sampled,
                         const std::vector<Vector>& features) {
  if (features.empty()) throw Error("select_action requires at least one action");
  int best = 0;
  double best_lh = models::log_mean_reward(kind, sampled, features[0], features[0]);
  for (std::size_t k = 1; k < features.size(); ++k) {
    double lh = models::log_mean_reward(kind, sampled, features[k], features[k]);
    if (lh > best_lh) {
      best_lh = lh;
      best = static_cast<int>(k);
    }
  }
  return best;
}

class Agent {
 public:
  Agent(AgentConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        rng_policy_(derive_seed(seed, "policy")),
        rng_prop_(derive_seed(seed, "propensity")) {
    if (cfg_.clip) clip(0.5, cfg_.clip->p_min, cfg_.clip->p_max);  // validate bounds
    if (cfg_.refit_every < 1) throw Error("refit_every must be >= 1");
    if (cfg_.propensity_draws < 1) throw Error("propensity_draws must be >= 1");
    if (!(cfg_.static_p > 0.0 && cfg_.static_p < 1.0))
      throw Error("static_p must lie in (0,1)");
    if (cfg_.alpha_beta < 0.0 || cfg_.alpha_gamma < 0.0)
      throw Error("posterior scales must be nonnegative");
  }

  const AgentConfig& config() const { return cfg_; }
  // 1-based decision index: 1 + number of updates absorbed so far
  int t() const { return t_; }
  const Dataset& history() const { return data_; }
  const Matrix& gram() const { return gram_; }
  long fit_count() const { return n_fits_; }
  long ascent_violations() const { return ascent_violations_; }
  const std::optional<FitResult>& cached_fit() const { return fit_; }

  bool exploration_done() const {
    if (cfg_.exploration.mode == ExplorationRule::Mode::FixedTau)
      return t_ > cfg_.exploration.tau;
    if (gram_.size() == 0) return cfg_.exploration.min_eigen <= 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram_);
    return es.eigenvalues().minCoeff() >= cfg_.exploration.min_eigen;
  }

  Decision step(const std::vector<Vector>& features) {
    check_features(features);
    switch (cfg_.kind) {
      case PolicyKind::Static: return static_step(features);
      case PolicyKind::LinearTS: return linear_ts_step(features);
      default: return ts_step(features);
    }
  }

  Decision ts_step(const std::vector<Vector>& features) {
    check_features(features);
    if (!is_count_policy(cfg_.kind)) throw Error("ts_step requires a count-model policy");
    const int K = static_cast<int>(features.size());
    if (!exploration_done()) return explore_decision(K);
    ensure_fit(features.front().size());
    ModelKind mk = to_model_kind(cfg_.kind);
    ModelParams sampled = laplace_sample(*fit_, cfg_.alpha_beta, cfg_.alpha_gamma, rng_policy_);
    int a_star = select_action(mk, sampled, features);
    return finish_decision(features, a_star, std::move(sampled));
  }

  Decision linear_ts_step(const std::vector<Vector>& features) {
    check_features(features);
    if (cfg_.kind != PolicyKind::LinearTS) throw Error("linear_ts_step requires the linear policy");
    const int K = static_cast<int>(features.size());
    if (!exploration_done()) return explore_decision(K);
    ensure_linear(features.front().size());
    ModelParams sampled;
    sampled.beta = draw_linear(rng_policy_);
    int a_star = linear_argmax(sampled.beta, features);
    return finish_decision(features, a_star, std::move(sampled));
  }

  Decision static_step(const std::vector<Vector>& features) {
    check_features(features);
    if (cfg_.kind != PolicyKind::Static) throw Error("static_step requires the static policy");
    if (features.size() != 2) throw Error("static policy requires exactly two actions");
    bool one = rng_policy_.bernoulli(cfg_.static_p);
    Decision dec;
    dec.action = one ? 1 : 0;
    dec.propensity = one ? cfg_.static_p : 1.0 - cfg_.static_p;
    return dec;
  }

  // Monte Carlo action-selection frequencies over M posterior draws.
  // Exact for static (no draws) and for the degenerate single-action case.
  std::vector<double> action_propensity(const std::vector<Vector>& features, int M) {
    check_features(features);
    if (M < 1) throw Error("action_propensity requires M >= 1");
    const int K = static_cast<int>(features.size());
    if (K == 1) return {1.0};
    if (cfg_.kind == PolicyKind::Static) {
      if (K != 2) throw Error("static policy requires exactly two actions");
      return {1.0 - cfg_.static_p, cfg_.static_p};
    }
    std::vector<double> freq(K, 0.0);
    if (cfg_.kind == PolicyKind::LinearTS) {
      ensure_linear(features.front().size());
      for (int m = 0; m < M; ++m)
        freq[linear_argmax(draw_linear(rng_prop_), features)] += 1.0;
    } else {
      ensure_fit(features.front().size());
      ModelKind mk = to_model_kind(cfg_.kind);
      for (int m = 0; m < M; ++m) {
        ModelParams draw = laplace_sample(*fit_, cfg_.alpha_beta, cfg_.alpha_gamma, rng_prop_);
        freq[select_action(mk, draw, features)] += 1.0;
      }
    }
    for (double& f : freq) f /= static_cast<double>(M);
    return freq;
  }

  void update(const Vector& phi, long y) {
    if (y < 0) throw Error("outcome must be nonnegative");
    if (dim_ == 0) {
      dim_ = phi.size();
    } else if (phi.size() != dim_) {
      throw Error("update: feature dimension mismatch");
    }
    if (gram_.size() == 0) gram_ = Matrix::Zero(dim_, dim_);
    gram_ += phi * phi.transpose();
    if (cfg_.kind == PolicyKind::LinearTS) {
      ensure_linear(phi.size());
      lin_V_ += phi * phi.transpose();
      lin_b_ += std::log1p(static_cast<double>(y)) * phi;
    }
    data_.add(phi, y);
    ++t_;
  }

 private:
  void check_features(const std::vector<Vector>& features) const {
    if (features.empty()) throw Error("at least one action feature vector is required");
    for (const auto& f : features)
      if (f.size() != features.front().size())
        throw Error("action feature vectors must share one dimension");
    if (dim_ != 0 && features.front().size() != dim_)
      throw Error("feature dimension differs from history");
  }

  Decision explore_decision(int K) {
    Decision dec;
    dec.explored = true;
    dec.propensity = 1.0 / static_cast<double>(K);
    if (cfg_.explore_round_robin)
      dec.action = static_cast<int>((t_ - 1) % K);
    else
      dec.action = static_cast<int>(rng_policy_.uniform_int(0, K - 1));
    return dec;
  }

  // Clipping / propensity-reporting shared tail of the TS steps.
  Decision finish_decision(const std::vector<Vector>& features, int a_star,
                           ModelParams sampled) {
    const int K = static_cast<int>(features.size());
    Decision dec;
    if (cfg_.clip) {
      if (K != 2) throw Error("clipping requires exactly two actions");
      std::vector<double> freq = action_propensity(features, cfg_.propensity_draws);
      double p1 = clip(freq[1], cfg_.clip->p_min, cfg_.clip->p_max);
      bool one = rng_policy_.bernoulli(p1);
      dec.action = one ? 1 : 0;
      dec.propensity = one ? p1 : 1.0 - p1;
      if (dec.action == a_star) dec.sampled = std::move(sampled);
      return dec;
    }
    dec.action = a_star;
    dec.sampled = std::move(sampled);
    if (cfg_.report_mc_propensity) {
      std::vector<double> freq = action_propensity(features, cfg_.propensity_draws);
      // count the decision draw itself so the reported value stays positive
      double M = static_cast<double>(cfg_.propensity_draws);
      dec.propensity = (freq[a_star] * M + 1.0) / (M + 1.0);
    }
    return dec;
  }

  void ensure_fit(Eigen::Index d) {
    if (dim_ == 0) dim_ = d;
    if (fit_ && t_ - last_fit_t_ < cfg_.refit_every) return;
    std::optional<ModelParams> init;
    if (fit_) init = fit_->params;
    ModelKind mk = to_model_kind(cfg_.kind);
    if (init) {
      // a warm start taken from an earlier, thinner dataset can land outside
      // the region where the new likelihood is representable; fall back to a
      // cold fit instead of aborting the stream
      try {
        fit_ = models::fit(mk, data_, cfg_.prior, cfg_.fit_options, init);
      } catch (const Error&) {
        fit_ = models::fit(mk, data_, cfg_.prior, cfg_.fit_options, std::nullopt);
      }
    } else {
      fit_ = models::fit(mk, data_, cfg_.prior, cfg_.fit_options, init);
    }
    last_fit_t_ = t_;
    ++n_fits_;
    ascent_violations_ += fit_->ascent_violations;
  }

  void ensure_linear(Eigen::Index d) {
    if (lin_V_.size() != 0) return;
    lin_V_ = Matrix::Identity(d, d);  // unit ridge
    lin_b_ = Vector::Zero(d);
  }

  Vector draw_linear(RngStream& rng) {
    Eigen::LLT<Matrix> llt(lin_V_);
    if (llt.info() != Eigen::Success)
      throw Error("linear posterior matrix is not positive definite");
    Vector theta_hat = llt.solve(lin_b_);
    Vector u(lin_V_.rows());
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = rng.normal();
    return theta_hat + cfg_.alpha_beta * llt.matrixU().solve(u);
  }

  static int linear_argmax(const Vector& theta, const std::vector<Vector>& features) {
    int best = 0;
    double best_v = features[0].dot(theta);
    for (std::size_t k = 1; k < features.size(); ++k) {
      double v = features[k].dot(theta);
      if (v > best_v) {
        best_v = v;
        best = static_cast<int>(k);
      }
    }
    return best;
  }

  AgentConfig cfg_;
  RngStream rng_policy_;
  RngStream rng_prop_;
  Dataset data_;
  Matrix gram_;
  Matrix lin_V_;
  Vector lin_b_;
  Eigen::Index dim_ = 0;
  int t_ = 1;
  int last_fit_t_ = 0;
  long n_fits_ = 0;
  long ascent_violations_ = 0;
  std::optional<FitResult> fit_;
};

}  // namespace countbandit::agents
