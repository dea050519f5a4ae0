#pragma once

#include <functional>
#include <vector>

#include "agents.hpp"
#include "environments.hpp"

namespace countbandit::eval {

struct RegretTrace {
  std::vector<double> instant;
  std::vector<double> cumulative;

  void add(double r) {
    instant.push_back(r);
    cumulative.push_back((cumulative.empty() ? 0.0 : cumulative.back()) + r);
  }
  std::size_t size() const { return instant.size(); }
};

// Frequentist instant regret against the expected-reward oracle; never uses
// realized outcomes.
inline double instant_regret(const env::EnvSpec& spec,
                             const std::vector<Vector>& features, int chosen) {
  if (chosen < 0 || chosen >= static_cast<int>(features.size()))
    throw Error("instant_regret: chosen action out of range");
  env::OracleChoice oc = env::oracle_action(spec, features);
  return oc.value - env::expected_reward(spec, features[chosen]);
}

// Clipped instant regret for the binary case: the policy plays the active arm
// with (clipped) probability p_active, and is judged against the best clipped
// policy rather than the unconstrained oracle.
inline double clipped_instant_regret(const env::EnvSpec& spec, const Vector& phi_null,
                                     const Vector& phi_active, double p_active,
                                     double p_min, double p_max) {
  if (!(p_active >= 0.0 && p_active <= 1.0))
    throw Error("clipped_instant_regret: p_active must lie in [0,1]");
  double oracle = env::clipped_oracle_value(spec, phi_null, {phi_active}, p_min, p_max);
  double value = p_active * env::expected_reward(spec, phi_active) +
                 (1.0 - p_active) * env::expected_reward(spec, phi_null);
  return oracle - value;
}

// Bayesian regret: average the frequentist trace over truths drawn from the
// prior. draw_truth and run see independent substreams per draw.
inline RegretTrace bayes_regret(
    int n_draws, RngStream& rng,
    const std::function<models::ModelParams(RngStream&)>& draw_truth,
    const std::function<RegretTrace(const models::ModelParams&, RngStream&)>& run) {
  if (n_draws < 1) throw Error("bayes_regret requires at least one draw");
  std::vector<double> sum;
  for (int j = 0; j < n_draws; ++j) {
    RngStream truth_rng = rng.substream("truth", j);
    RngStream run_rng = rng.substream("run", j);
    models::ModelParams truth = draw_truth(truth_rng);
    RegretTrace trace = run(truth, run_rng);
    if (sum.empty()) sum.assign(trace.size(), 0.0);
    if (trace.size() != sum.size())
      throw Error("bayes_regret: runs returned traces of different lengths");
    for (std::size_t t = 0; t < sum.size(); ++t) sum[t] += trace.instant[t];
  }
  RegretTrace out;
  for (double s : sum) out.add(s / static_cast<double>(n_draws));
  return out;
}

struct PropensityTuple {
  double target_prop = 0.0;  // policy being evaluated
  double logged_prop = 0.0;  // policy that produced the log
  double y = 0.0;
};

// Self-normalized inverse-propensity-weighted value estimate.
inline double snipw(const std::vector<PropensityTuple>& tuples) {
  if (tuples.empty()) throw Error("snipw requires at least one tuple");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    const auto& t = tuples[i];
    if (!(t.logged_prop > 0.0 && t.logged_prop <= 1.0))
      throw Error("snipw: logged propensity out of (0,1] at tuple " + std::to_string(i));
    if (!(t.target_prop >= 0.0 && t.target_prop <= 1.0))
      throw Error("snipw: target propensity out of [0,1] at tuple " + std::to_string(i));
    double w = t.target_prop / t.logged_prop;
    num += w * t.y;
    den += w;
  }
  if (!(den > 0.0)) throw Error("snipw: all importance weights are zero");
  return num / den;
}

struct ReplayStep {
  std::vector<Vector> features;  // per-action feature vectors
  int logged_action = 0;
  double logged_propensity = 1.0;
  long outcome = 0;
};

using ReplayLog = std::vector<ReplayStep>;

struct ReplayResult {
  ReplayLog retained;
  std::vector<PropensityTuple> snipw_input;
};

// Replay-style off-policy pass: keep a logged tuple only when the agent's
// decision matches the logged action, and feed the agent only retained tuples.
inline ReplayResult replay(const ReplayLog& log, agents::Agent& agent) {
  ReplayResult out;
  for (const auto& step : log) {
    if (step.logged_action < 0 ||
        step.logged_action >= static_cast<int>(step.features.size()))
      throw Error("replay: logged action out of range");
    agents::Decision dec = agent.step(step.features);
    if (dec.action != step.logged_action) continue;
    out.retained.push_back(step);
    out.snipw_input.push_back(
        {dec.propensity, step.logged_propensity, static_cast<double>(step.outcome)});
    agent.update(step.features[step.logged_action], step.outcome);
  }
  return out;
}

inline double log_mean_outcome(const ReplayLog& log) {
  if (log.empty()) throw Error("mean outcome of an empty log is undefined");
  double s = 0.0;
  for (const auto& step : log) s += static_cast<double>(step.outcome);
  return s / static_cast<double>(log.size());
}

inline double reward_improvement(double agent_estimate, double baseline) {
  return agent_estimate - baseline;
}

struct OPEResult {
  double snipw_estimate = 0.0;
  long retained_count = 0;
  double reward_improvement = 0.0;
};

}  // namespace countbandit::eval
