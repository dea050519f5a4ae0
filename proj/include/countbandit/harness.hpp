#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "agents.hpp"
#include "environments.hpp"
#include "evaluation.hpp"

namespace countbandit::harness {

struct NamedAgent {
  std::string name;
  agents::AgentConfig config;
};

struct Scenario {
  env::EnvFamily family = env::EnvFamily::Poisson;
  double omega = 1.0;
  int T = 1000;
  int K = 20;
  int d = 4;
  int reps = 10;
  std::uint64_t base_seed = 0;
  std::vector<NamedAgent> agents;
  int jobs = 0;  // 0 = hardware concurrency
};

struct FitStats {
  long fits = 0;
  long ascent_violations = 0;
};

struct RepOutcome {
  std::vector<eval::RegretTrace> traces;  // one per agent
  std::vector<FitStats> stats;
};

// Minimal policy interface so the trajectory loop can also run reference
// policies (e.g. the oracle) through exactly the same code path as agents.
struct StepPolicy {
  virtual ~StepPolicy() = default;
  virtual agents::Decision act(const std::vector<Vector>& features) = 0;
  virtual void learn(const Vector&, long) {}
  virtual FitStats stats() const { return {}; }
};

class AgentPolicy : public StepPolicy {
 public:
  AgentPolicy(const agents::AgentConfig& cfg, std::uint64_t seed) : agent_(cfg, seed) {}
  agents::Decision act(const std::vector<Vector>& features) override {
    return agent_.step(features);
  }
  void learn(const Vector& phi, long y) override { agent_.update(phi, y); }
  FitStats stats() const override {
    return {agent_.fit_count(), agent_.ascent_violations()};
  }
  agents::Agent& agent() { return agent_; }

 private:
  agents::Agent agent_;
};

class OraclePolicy : public StepPolicy {
 public:
  explicit OraclePolicy(env::EnvSpec spec) : spec_(std::move(spec)) {}
  agents::Decision act(const std::vector<Vector>& features) override {
    agents::Decision dec;
    dec.action = env::oracle_action(spec_, features).action;
    return dec;
  }

 private:
  env::EnvSpec spec_;
};

using PolicyFactory =
    std::function<std::unique_ptr<StepPolicy>(const env::EnvSpec&, std::uint64_t)>;

inline PolicyFactory agent_factory(agents::AgentConfig cfg) {
  return [cfg](const env::EnvSpec&, std::uint64_t seed) {
    return std::make_unique<AgentPolicy>(cfg, seed);
  };
}

inline PolicyFactory oracle_factory() {
  return [](const env::EnvSpec& spec, std::uint64_t) {
    return std::make_unique<OraclePolicy>(spec);
  };
}

inline env::EnvSpec make_rep_spec(const Scenario& sc, std::uint64_t seed_rep) {
  RngStream truth_rng(derive_seed(seed_rep, "truth"));
  env::EnvSpec spec;
  spec.family = sc.family;
  spec.omega = sc.omega;
  spec.K = sc.K;
  spec.d = sc.d;
  spec.truth = env::gen_truth(truth_rng, sc.d, env::zero_inflated(sc.family));
  return spec;
}

// One replication: fresh truth and context sequence, every policy walks the
// same contexts with an independent outcome stream keyed by its name.
inline RepOutcome run_replication_policies(const Scenario& sc, int rep,
                                           const std::vector<PolicyFactory>& factories,
                                           const std::vector<std::string>& names) {
  if (factories.size() != names.size())
    throw Error("run_replication: one name per policy required");
  std::uint64_t seed_rep = derive_seed(sc.base_seed, "rep", static_cast<std::uint64_t>(rep));
  env::EnvSpec spec = make_rep_spec(sc, seed_rep);
  RngStream feat(derive_seed(seed_rep, "features"));
  std::vector<std::vector<Vector>> contexts(sc.T);
  for (int t = 0; t < sc.T; ++t) contexts[t] = env::gen_features(feat, sc.K, sc.d);

  RepOutcome out;
  for (std::size_t a = 0; a < factories.size(); ++a) {
    std::uint64_t aseed = hash_combine(hash_combine(seed_rep, "agent"), names[a]);
    std::unique_ptr<StepPolicy> pol = factories[a](spec, aseed);
    RngStream outcome_rng(derive_seed(aseed, "outcome"));
    eval::RegretTrace trace;
    for (int t = 0; t < sc.T; ++t) {
      agents::Decision dec = pol->act(contexts[t]);
      long y = env::draw_outcome(spec, contexts[t][dec.action], outcome_rng);
      pol->learn(contexts[t][dec.action], y);
      trace.add(eval::instant_regret(spec, contexts[t], dec.action));
    }
    out.traces.push_back(std::move(trace));
    out.stats.push_back(pol->stats());
  }
  return out;
}

inline RepOutcome run_replication(const Scenario& sc, int rep) {
  std::vector<PolicyFactory> factories;
  std::vector<std::string> names;
  for (const auto& na : sc.agents) {
    factories.push_back(agent_factory(na.config));
    names.push_back(na.name);
  }
  return run_replication_policies(sc, rep, factories, names);
}

inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  int J = jobs > 0 ? jobs : static_cast<int>(std::thread::hardware_concurrency());
  if (J < 1) J = 1;
  J = std::min(J, n);
  if (J <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mtx;
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mtx);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(J);
  for (int j = 0; j < J; ++j) threads.emplace_back(worker);
  for (auto& th : threads) th.join();
  if (err) std::rethrow_exception(err);
}

struct AgentCurve {
  std::string name;
  std::vector<double> mean_cum;  // primary metric, length T
  std::vector<double> se_cum;
  std::vector<double> mean_cum_alt;  // secondary metric (MRT: unclipped); may be empty
  std::vector<double> se_cum_alt;
  std::vector<double> final_regrets;  // primary metric, one per replication
  long fits = 0;
  long ascent_violations = 0;
};

struct UserQuantiles {
  std::string agent;
  double q025 = 0, q25 = 0, q50 = 0, q75 = 0, q975 = 0;
};

struct ExperimentResult {
  std::string family;
  double omega = 1.0;
  int T = 0, K = 0, d = 0, reps = 0;
  std::uint64_t base_seed = 0;
  std::string metric = "regret";
  std::vector<AgentCurve> agents;
  std::vector<UserQuantiles> user_quantiles;  // MRT only (first replication)
  double wall_seconds = 0.0;
};

namespace detail {

// mean and standard error across replications, pointwise over t
inline void mean_se(const std::vector<std::vector<double>>& reps,
                    std::vector<double>& mean, std::vector<double>& se) {
  const std::size_t R = reps.size();
  const std::size_t T = reps.empty() ? 0 : reps.front().size();
  mean.assign(T, 0.0);
  se.assign(T, 0.0);
  for (const auto& r : reps)
    for (std::size_t t = 0; t < T; ++t) mean[t] += r[t];
  for (double& m : mean) m /= static_cast<double>(R);
  if (R > 1) {
    for (const auto& r : reps)
      for (std::size_t t = 0; t < T; ++t) {
        double dlt = r[t] - mean[t];
        se[t] += dlt * dlt;
      }
    for (double& s : se)
      s = std::sqrt(s / static_cast<double>(R - 1) / static_cast<double>(R));
  }
}

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double pos = q * static_cast<double>(v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace detail

inline ExperimentResult run_experiment(const Scenario& sc) {
  if (sc.reps < 1 || sc.T < 1 || sc.agents.empty())
    throw Error("run_experiment requires reps >= 1, T >= 1 and at least one agent");
  for (const auto& na : sc.agents) {
    if (na.config.kind == agents::PolicyKind::Static && sc.K != 2)
      throw Error("static policy requires K = 2 (agent '" + na.name + "')");
    if (na.config.clip && sc.K != 2)
      throw Error("clipping requires K = 2 (agent '" + na.name + "')");
  }
  auto t0 = std::chrono::steady_clock::now();
  std::vector<RepOutcome> outs(sc.reps);
  parallel_for(sc.reps, sc.jobs, [&](int r) { outs[r] = run_replication(sc, r); });

  ExperimentResult res;
  res.family = env::family_name(sc.family);
  res.omega = sc.omega;
  res.T = sc.T;
  res.K = sc.K;
  res.d = sc.d;
  res.reps = sc.reps;
  res.base_seed = sc.base_seed;
  for (std::size_t a = 0; a < sc.agents.size(); ++a) {
    AgentCurve c;
    c.name = sc.agents[a].name;
    std::vector<std::vector<double>> cums;
    for (int r = 0; r < sc.reps; ++r) {
      cums.push_back(outs[r].traces[a].cumulative);
      c.final_regrets.push_back(outs[r].traces[a].cumulative.back());
      c.fits += outs[r].stats[a].fits;
      c.ascent_violations += outs[r].stats[a].ascent_violations;
    }
    detail::mean_se(cums, c.mean_cum, c.se_cum);
    res.agents.push_back(std::move(c));
  }
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---- MRT-style simulation: per-user agents under a population prior ----

struct MrtScenario {
  env::EnvFamily family = env::EnvFamily::ZIOP;
  double omega = 1.0;
  int n_users = 50;
  int t_days = 200;
  int reps = 10;
  double heterogeneity = 0.1;
  std::uint64_t base_seed = 0;
  std::vector<NamedAgent> agents;
  std::optional<agents::ClipBounds> clip;  // degenerate (0,1) disables clipping
  double prior_lambda = 1.0;
  int jobs = 0;
};

namespace detail {

inline bool clipping_active(const std::optional<agents::ClipBounds>& clip) {
  return clip && !(clip->p_min == 0.0 && clip->p_max == 1.0);
}

}  // namespace detail

inline ExperimentResult run_mrt(const MrtScenario& ms) {
  if (ms.n_users < 1 || ms.t_days < 1 || ms.reps < 1 || ms.agents.empty())
    throw Error("run_mrt requires users, days, reps and at least one agent");
  auto t0 = std::chrono::steady_clock::now();

  const bool clipped = detail::clipping_active(ms.clip);
  const double mpmin = ms.clip ? ms.clip->p_min : 0.0;
  const double mpmax = ms.clip ? ms.clip->p_max : 1.0;

  RngStream pop(derive_seed(ms.base_seed, "population"));
  models::ModelParams center = env::gen_truth(pop, kMrtDim, env::zero_inflated(ms.family));

  // per-agent deployed configs: MAP per user around the population center,
  // no exploration phase, clipping as configured
  std::vector<NamedAgent> deployed = ms.agents;
  for (auto& na : deployed) {
    auto& cfg = na.config;
    cfg.clip = clipped ? ms.clip : std::nullopt;
    if (agents::is_count_policy(cfg.kind)) {
      cfg.exploration = {agents::ExplorationRule::Mode::FixedTau, 0, 1.0};
      models::PriorSpec prior;
      prior.center_beta = center.beta;
      if (models::has_gamma(agents::to_model_kind(cfg.kind)))
        prior.center_gamma = center.gamma ? *center.gamma : Vector::Zero(kMrtDim);
      prior.lambda = ms.prior_lambda;
      cfg.prior = std::move(prior);
    } else if (cfg.kind == agents::PolicyKind::LinearTS) {
      cfg.exploration = {agents::ExplorationRule::Mode::FixedTau, 0, 1.0};
    }
  }

  const std::size_t A = deployed.size();
  struct RepAgg {
    // sum over users of cumulative curves, plus per-user finals (primary)
    std::vector<std::vector<double>> cum_primary, cum_alt;
    std::vector<std::vector<double>> user_finals;  // [agent][user]
    std::vector<FitStats> stats;
  };
  std::vector<RepAgg> reps(ms.reps);

  parallel_for(ms.reps, ms.jobs, [&](int rep) {
    std::uint64_t seed_rep = derive_seed(ms.base_seed, "rep", static_cast<std::uint64_t>(rep));

    struct UserCov {
      long age, gender, audit;
    };
    std::vector<UserCov> covs(ms.n_users);
    for (int u = 0; u < ms.n_users; ++u) {
      RngStream cov(derive_seed(derive_seed(seed_rep, "user", static_cast<std::uint64_t>(u)), "cov"));
      covs[u] = {cov.uniform_int(18, 65), cov.bernoulli(0.5) ? 1L : 0L,
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
    sc.days_max = static_cast<double>(ms.t_days - 1);

    RepAgg& agg = reps[rep];
    agg.cum_primary.assign(A, std::vector<double>(ms.t_days, 0.0));
    agg.cum_alt.assign(A, std::vector<double>(ms.t_days, 0.0));
    agg.user_finals.assign(A, {});
    agg.stats.assign(A, {});

    for (int u = 0; u < ms.n_users; ++u) {
      std::uint64_t seed_user = derive_seed(seed_rep, "user", static_cast<std::uint64_t>(u));
      RngStream truth_rng(derive_seed(seed_user, "truth"));
      env::EnvSpec spec;
      spec.family = ms.family;
      spec.omega = ms.omega;
      spec.truth = env::perturb_truth(center, ms.heterogeneity, truth_rng);
      spec.K = 2;
      spec.d = kMrtDim;

      for (std::size_t a = 0; a < A; ++a) {
        std::uint64_t aseed =
            hash_combine(hash_combine(seed_user, "agent"), deployed[a].name);
        agents::Agent agent(deployed[a].config, aseed);
        RngStream outcome_rng(derive_seed(aseed, "outcome"));
        double cum_p = 0.0, cum_a = 0.0;
        for (int day = 0; day < ms.t_days; ++day) {
          MrtBlocks b = mrt_blocks(static_cast<double>(covs[u].age),
                                   static_cast<double>(covs[u].gender),
                                   static_cast<double>(covs[u].audit),
                                   static_cast<double>(day), sc);
          std::vector<Vector> features{feature_map(b.x, b.s, 0), feature_map(b.x, b.s, 1)};
          agents::Decision dec = agent.step(features);
          long y = env::draw_outcome(spec, features[dec.action], outcome_rng);
          agent.update(features[dec.action], y);
          double p_active;
          if (clipped)
            p_active = dec.action == 1 ? dec.propensity : 1.0 - dec.propensity;
          else
            p_active = dec.action == 1 ? 1.0 : 0.0;
          cum_p += eval::clipped_instant_regret(spec, features[0], features[1], p_active,
                                                mpmin, mpmax);
          cum_a += eval::instant_regret(spec, features, dec.action);
          agg.cum_primary[a][day] += cum_p;
          agg.cum_alt[a][day] += cum_a;
        }
        agg.user_finals[a].push_back(cum_p);
        agg.stats[a].fits += agent.fit_count();
        agg.stats[a].ascent_violations += agent.ascent_violations();
      }
    }
    double inv_u = 1.0 / static_cast<double>(ms.n_users);
    for (std::size_t a = 0; a < A; ++a) {
      for (auto& v : agg.cum_primary[a]) v *= inv_u;
      for (auto& v : agg.cum_alt[a]) v *= inv_u;
    }
  });

  ExperimentResult res;
  res.family = env::family_name(ms.family);
  res.omega = ms.omega;
  res.T = ms.t_days;
  res.K = 2;
  res.d = kMrtDim;
  res.reps = ms.reps;
  res.base_seed = ms.base_seed;
  res.metric = "clipped_regret";
  for (std::size_t a = 0; a < A; ++a) {
    AgentCurve c;
    c.name = deployed[a].name;
    std::vector<std::vector<double>> prim, alt;
    for (int r = 0; r < ms.reps; ++r) {
      prim.push_back(reps[r].cum_primary[a]);
      alt.push_back(reps[r].cum_alt[a]);
      c.final_regrets.push_back(reps[r].cum_primary[a].back());
      c.fits += reps[r].stats[a].fits;
      c.ascent_violations += reps[r].stats[a].ascent_violations;
    }
    detail::mean_se(prim, c.mean_cum, c.se_cum);
    detail::mean_se(alt, c.mean_cum_alt, c.se_cum_alt);
    res.agents.push_back(std::move(c));

    UserQuantiles q;
    q.agent = deployed[a].name;
    const auto& finals = reps[0].user_finals[a];
    q.q025 = detail::quantile(finals, 0.025);
    q.q25 = detail::quantile(finals, 0.25);
    q.q50 = detail::quantile(finals, 0.50);
    q.q75 = detail::quantile(finals, 0.75);
    q.q975 = detail::quantile(finals, 0.975);
    res.user_quantiles.push_back(q);
  }
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace harness
