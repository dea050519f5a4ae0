#pragma once

#include <CLI11.hpp>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evaluation.hpp"
#include "harness.hpp"
#include "mrt_csv.hpp"
#include "result_io.hpp"

namespace countbandit::cli {

inline std::optional<agents::PolicyKind> parse_policy(const std::string& s) {
  if (s == "poisson") return agents::PolicyKind::Poisson;
  if (s == "nb") return agents::PolicyKind::NB;
  if (s == "zip") return agents::PolicyKind::ZIP;
  if (s == "zinb") return agents::PolicyKind::ZINB;
  if (s == "linear") return agents::PolicyKind::LinearTS;
  if (s == "static") return agents::PolicyKind::Static;
  return std::nullopt;
}

inline std::string display_name(agents::PolicyKind k) {
  switch (k) {
    case agents::PolicyKind::Poisson: return "TS-Poisson";
    case agents::PolicyKind::NB: return "TS-NB";
    case agents::PolicyKind::ZIP: return "TS-ZIP";
    case agents::PolicyKind::ZINB: return "TS-ZINB";
    case agents::PolicyKind::LinearTS: return "LinearTS";
    case agents::PolicyKind::Static: return "Static";
  }
  return "?";
}

struct AgentOptions {
  std::string agents = "poisson,nb,zip,zinb,linear";
  double alpha = 1.0;
  double linear_alpha = 0.0;  // 0: standard scale sqrt(48 d ln T) at run time
  int tau = 20;
  std::string explore = "fixed";  // fixed | mineigen
  double min_eigen = 1.0;
  bool round_robin = true;
  int refit_every = 1;
  int propensity_draws = 1000;
  double static_p = 0.6;
};

inline std::vector<std::string> split_tokens(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

inline std::vector<harness::NamedAgent> build_agents(
    const AgentOptions& o, const std::optional<agents::ClipBounds>& clip,
    bool report_mc_propensity) {
  std::vector<harness::NamedAgent> out;
  for (const std::string& tok : split_tokens(o.agents)) {
    auto kind = parse_policy(tok);
    if (!kind) throw CLI::ValidationError("--agents", "unknown agent token '" + tok + "'");
    agents::AgentConfig cfg;
    cfg.kind = *kind;
    cfg.alpha_beta = o.alpha;
    cfg.alpha_gamma = o.alpha;
    cfg.exploration.mode = (o.explore == "mineigen")
                               ? agents::ExplorationRule::Mode::MinEigen
                               : agents::ExplorationRule::Mode::FixedTau;
    cfg.exploration.tau = o.tau;
    cfg.exploration.min_eigen = o.min_eigen;
    cfg.explore_round_robin = o.round_robin;
    cfg.refit_every = o.refit_every;
    cfg.propensity_draws = o.propensity_draws;
    cfg.static_p = o.static_p;
    cfg.clip = clip;
    cfg.report_mc_propensity = report_mc_propensity;
    out.push_back({display_name(*kind), std::move(cfg)});
  }
  if (out.empty()) throw CLI::ValidationError("--agents", "no agents selected");
  return out;
}

// the linear baseline keeps its algorithm's standard posterior inflation
// v = sqrt((24/epsilon) d ln(1/delta)) with epsilon = 1/2, delta = 1/T
// unless the user pins a value explicitly
inline void resolve_linear_alpha(std::vector<harness::NamedAgent>& named,
                                 const AgentOptions& o, int d, int T) {
  double v = o.linear_alpha;
  if (v <= 0.0)
    v = std::sqrt(48.0 * static_cast<double>(d) *
                  std::log(static_cast<double>(std::max(T, 2))));
  for (auto& na : named)
    if (na.config.kind == agents::PolicyKind::LinearTS) na.config.alpha_beta = v;
}

struct PresetDef {
  env::EnvFamily family;
  double omega;
};

// the eight generator settings; every preset runs K=20, d=4, T=1000, tau=20, alpha=1
inline std::optional<PresetDef> lookup_preset(const std::string& name) {
  if (name == "setting1") return PresetDef{env::EnvFamily::Poisson, 1.0};
  if (name == "setting2") return PresetDef{env::EnvFamily::OP, 25.0};
  if (name == "setting3") return PresetDef{env::EnvFamily::OP, 1.0};
  if (name == "setting4") return PresetDef{env::EnvFamily::OP, 0.25};
  if (name == "setting5") return PresetDef{env::EnvFamily::ZIP, 1.0};
  if (name == "setting6") return PresetDef{env::EnvFamily::ZIOP, 25.0};
  if (name == "setting7") return PresetDef{env::EnvFamily::ZIOP, 1.0};
  if (name == "setting8") return PresetDef{env::EnvFamily::ZIOP, 0.25};
  return std::nullopt;
}

inline void print_summary(const harness::ExperimentResult& res, std::ostream& os) {
  for (const auto& a : res.agents) {
    double final_mean = a.mean_cum.empty() ? 0.0 : a.mean_cum.back();
    double final_se = a.se_cum.empty() ? 0.0 : a.se_cum.back();
    os << a.name << ": final mean cumulative " << res.metric << " "
       << final_mean << " +/- " << final_se << "\n";
  }
}

// ---- simulate ----

struct SimulateOpts {
  std::string preset;
  std::string family;
  double omega = 1.0;
  int T = 1000, K = 20, d = 4, reps = 10;
  std::uint64_t seed = 1;
  AgentOptions ao;
  std::string out, json_out;
  int jobs = 0;
};

inline int cmd_simulate(const SimulateOpts& o, bool family_given, bool omega_given) {
  env::EnvFamily family = env::EnvFamily::Poisson;
  double omega = o.omega;
  if (!o.preset.empty()) {
    auto p = lookup_preset(o.preset);
    if (!p) throw CLI::ValidationError("--preset", "unknown preset '" + o.preset + "'");
    family = p->family;
    if (!omega_given) omega = p->omega;
    if (family_given) {
      auto f = env::parse_family(o.family);
      if (!f) throw CLI::ValidationError("--family", "unknown family '" + o.family + "'");
      family = *f;
    }
  } else {
    if (o.family.empty())
      throw CLI::ValidationError("simulate", "either --preset or --family is required");
    auto f = env::parse_family(o.family);
    if (!f) throw CLI::ValidationError("--family", "unknown family '" + o.family + "'");
    family = *f;
  }

  harness::Scenario sc;
  sc.family = family;
  sc.omega = omega;
  sc.T = o.T;
  sc.K = o.K;
  sc.d = o.d;
  sc.reps = o.reps;
  sc.base_seed = o.seed;
  sc.jobs = o.jobs;
  sc.agents = build_agents(o.ao, std::nullopt, false);
  resolve_linear_alpha(sc.agents, o.ao, sc.d, sc.T);

  harness::ExperimentResult res = harness::run_experiment(sc);
  harness::write_result_csv(res, o.out);
  if (!o.json_out.empty()) harness::write_result_json(res, o.json_out);
  print_summary(res, std::cout);
  return 0;
}

// ---- mrt-sim ----

struct MrtSimOpts {
  std::string family = "ziop";
  double omega = 1.0;
  int users = 50, days = 200, reps = 10;
  double pmin = 0.01, pmax = 0.99;
  double heterogeneity = 0.1;
  double ridge = 1.0;
  std::uint64_t seed = 1;
  AgentOptions ao;
  std::string out, json_out;
  int jobs = 0;
};

inline int cmd_mrt_sim(const MrtSimOpts& o) {
  if (!(o.pmin < o.pmax))
    throw CLI::ValidationError("--pmin/--pmax", "bounds must satisfy pmin < pmax");
  auto f = env::parse_family(o.family);
  if (!f) throw CLI::ValidationError("--family", "unknown family '" + o.family + "'");

  harness::MrtScenario ms;
  ms.family = *f;
  ms.omega = o.omega;
  ms.n_users = o.users;
  ms.t_days = o.days;
  ms.reps = o.reps;
  ms.heterogeneity = o.heterogeneity;
  ms.base_seed = o.seed;
  ms.prior_lambda = o.ridge;
  ms.jobs = o.jobs;
  ms.clip = agents::ClipBounds{o.pmin, o.pmax};
  ms.agents = build_agents(o.ao, std::nullopt, false);  // run_mrt wires clipping itself
  resolve_linear_alpha(ms.agents, o.ao, kMrtDim, ms.t_days);

  harness::ExperimentResult res = harness::run_mrt(ms);
  harness::write_result_csv(res, o.out);
  if (!o.json_out.empty()) harness::write_result_json(res, o.json_out);
  print_summary(res, std::cout);
  return 0;
}

// ---- replay ----

struct ReplayOpts {
  std::string data;
  AgentOptions ao;
  int bootstrap = 200;
  double ridge = 1.0;
  std::string center_file;
  double pmin = 0.01, pmax = 0.99;
  std::uint64_t seed = 1;
  std::string out, json_out;
  int jobs = 0;
};

inline models::PriorSpec load_center_file(const std::string& path, int d) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open center file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("malformed center JSON: " + std::string(e.what()));
  }
  models::PriorSpec prior;
  auto beta = j.at("beta").get<std::vector<double>>();
  if (static_cast<int>(beta.size()) != d)
    throw Error("center beta has dimension " + std::to_string(beta.size()) +
                ", expected " + std::to_string(d));
  prior.center_beta = Eigen::Map<const Vector>(beta.data(), beta.size());
  if (j.contains("gamma")) {
    auto gamma = j.at("gamma").get<std::vector<double>>();
    if (static_cast<int>(gamma.size()) != d)
      throw Error("center gamma has dimension " + std::to_string(gamma.size()) +
                  ", expected " + std::to_string(d));
    prior.center_gamma = Eigen::Map<const Vector>(gamma.data(), gamma.size());
  }
  return prior;
}

struct ReplayAgentStats {
  std::string name;
  double improvement = 0.0;  // bootstrap mean (or single-pass value)
  double se = 0.0;
  double q025 = 0.0, q50 = 0.0, q975 = 0.0;
  double retained_frac = 0.0;
  bool has_quantiles = false;
};

inline agents::AgentConfig replay_agent_config(const harness::NamedAgent& na,
                                               const models::PriorSpec& base_prior,
                                               double ridge,
                                               const agents::ClipBounds& clip) {
  agents::AgentConfig cfg = na.config;
  cfg.exploration = {agents::ExplorationRule::Mode::FixedTau, 0, 1.0};
  cfg.clip = clip;
  cfg.report_mc_propensity = true;
  if (agents::is_count_policy(cfg.kind)) {
    models::PriorSpec prior = base_prior;
    if (models::has_gamma(agents::to_model_kind(cfg.kind))) {
      if (!prior.center_gamma) prior.center_gamma = Vector::Zero(prior.center_beta.size());
    } else {
      prior.center_gamma.reset();
    }
    prior.lambda = ridge;
    cfg.prior = std::move(prior);
  }
  return cfg;
}

// Evaluate one bootstrap sample: mean per-user (SNIPW - logged mean) across the
// sampled users, skipping users whose replay retained nothing.
struct BootstrapOutcome {
  double improvement = 0.0;
  double retained_frac = 0.0;
  long skipped_users = 0;
};

inline BootstrapOutcome replay_sample(
    const std::vector<std::pair<std::string, std::vector<MrtRow>>>& users,
    const std::vector<std::size_t>& chosen, const agents::AgentConfig& cfg,
    const MrtScaling& sc, std::uint64_t sample_seed) {
  double sum_improve = 0.0, sum_retained = 0.0;
  long used = 0, skipped = 0;
  for (std::size_t j = 0; j < chosen.size(); ++j) {
    const auto& [uid, rows] = users[chosen[j]];
    eval::ReplayLog log;
    double outcome_sum = 0.0;
    for (const auto& r : rows) {
      eval::ReplayStep step;
      step.features = mrt_features(r, sc);
      step.logged_action = static_cast<int>(r.action);
      step.logged_propensity = r.propensity;
      step.outcome = r.outcome;
      outcome_sum += static_cast<double>(r.outcome);
      log.push_back(std::move(step));
    }
    // j (slot index) keeps repeated picks of one user independent
    agents::Agent agent(cfg, derive_seed(sample_seed, "slot", static_cast<std::uint64_t>(j)));
    eval::ReplayResult rr = eval::replay(log, agent);
    sum_retained += static_cast<double>(rr.retained.size()) /
                    static_cast<double>(log.size());
    if (rr.snipw_input.empty()) {
      ++skipped;
      continue;
    }
    double estimate = eval::snipw(rr.snipw_input);
    double baseline = outcome_sum / static_cast<double>(log.size());
    sum_improve += eval::reward_improvement(estimate, baseline);
    ++used;
  }
  if (used == 0) throw Error("replay: no user retained any tuples in a bootstrap sample");
  BootstrapOutcome out;
  out.improvement = sum_improve / static_cast<double>(used);
  out.retained_frac = sum_retained / static_cast<double>(chosen.size());
  out.skipped_users = skipped;
  return out;
}

inline int cmd_replay(const ReplayOpts& o) {
  if (!(o.pmin < o.pmax))
    throw CLI::ValidationError("--pmin/--pmax", "bounds must satisfy pmin < pmax");
  if (o.bootstrap < 1)
    throw CLI::ValidationError("--bootstrap", "at least one sample required");

  std::vector<MrtRow> rows = load_mrt_csv(o.data, &std::cerr);
  if (rows.empty()) throw Error("no rows in " + o.data);
  MrtScaling sc = scaling_from_rows(rows);
  auto users = group_by_user(std::move(rows));
  const std::size_t U = users.size();

  models::PriorSpec base_prior;
  if (!o.center_file.empty()) {
    base_prior = load_center_file(o.center_file, kMrtDim);
  } else {
    base_prior.center_beta = Vector::Zero(kMrtDim);
  }

  agents::ClipBounds clip{o.pmin, o.pmax};
  std::vector<harness::NamedAgent> named = build_agents(o.ao, std::nullopt, true);
  std::size_t horizon = 0;
  for (const auto& [uid, urows] : users) horizon = std::max(horizon, urows.size());
  resolve_linear_alpha(named, o.ao, kMrtDim, static_cast<int>(horizon));

  std::vector<ReplayAgentStats> table;
  for (const auto& na : named) {
    agents::AgentConfig cfg = replay_agent_config(na, base_prior, o.ridge, clip);
    const int B = o.bootstrap;
    std::vector<BootstrapOutcome> outcomes(B);
    harness::parallel_for(B, o.jobs, [&](int b) {
      std::uint64_t bseed =
          derive_seed(derive_seed(o.seed, "boot", static_cast<std::uint64_t>(b)),
                      na.name);
      std::vector<std::size_t> chosen(U);
      if (B == 1) {
        for (std::size_t u = 0; u < U; ++u) chosen[u] = u;  // single pass, no resampling
      } else {
        RngStream pick(derive_seed(bseed, "users"));
        for (std::size_t u = 0; u < U; ++u)
          chosen[u] = static_cast<std::size_t>(pick.uniform_int(0, static_cast<long>(U) - 1));
      }
      outcomes[b] = replay_sample(users, chosen, cfg, sc, derive_seed(bseed, "replay"));
    });

    ReplayAgentStats st;
    st.name = na.name;
    std::vector<double> improves;
    for (const auto& oc : outcomes) {
      improves.push_back(oc.improvement);
      st.retained_frac += oc.retained_frac;
    }
    st.retained_frac /= static_cast<double>(B);
    double mean = 0.0;
    for (double v : improves) mean += v;
    mean /= static_cast<double>(B);
    st.improvement = mean;
    if (B > 1) {
      double ss = 0.0;
      for (double v : improves) ss += (v - mean) * (v - mean);
      st.se = std::sqrt(ss / static_cast<double>(B - 1));
      st.q025 = harness::detail::quantile(improves, 0.025);
      st.q50 = harness::detail::quantile(improves, 0.50);
      st.q975 = harness::detail::quantile(improves, 0.975);
      st.has_quantiles = true;
    }
    table.push_back(st);
    std::cout << na.name << ": reward improvement " << st.improvement;
    if (st.has_quantiles)
      std::cout << " [" << st.q025 << ", " << st.q975 << "]";
    std::cout << ", retained frac " << st.retained_frac << "\n";
  }

  if (!o.out.empty()) {
    std::ofstream f(o.out);
    if (!f) throw Error("cannot open for writing: " + o.out);
    f << "agent,reward_improvement,se,q025,q50,q975,retained_frac\n";
    for (const auto& st : table) {
      f << st.name << ',' << harness::fmt_double(st.improvement) << ',';
      if (st.has_quantiles)
        f << harness::fmt_double(st.se) << ',' << harness::fmt_double(st.q025) << ','
          << harness::fmt_double(st.q50) << ',' << harness::fmt_double(st.q975);
      else
        f << ",,,";
      f << ',' << harness::fmt_double(st.retained_frac) << "\n";
    }
    if (!f) throw Error("failed while writing: " + o.out);
  }
  if (!o.json_out.empty()) {
    nlohmann::json j;
    j["schema_version"] = harness::kResultSchemaVersion;
    j["data"] = o.data;
    j["bootstrap"] = o.bootstrap;
    j["seed"] = o.seed;
    j["scaling"] = {{"age_min", sc.age_min},     {"age_max", sc.age_max},
                    {"audit_min", sc.audit_min}, {"audit_max", sc.audit_max},
                    {"days_min", sc.days_min},   {"days_max", sc.days_max}};
    j["agents"] = nlohmann::json::array();
    for (const auto& st : table) {
      nlohmann::json ja = {{"name", st.name},
                           {"reward_improvement", st.improvement},
                           {"retained_frac", st.retained_frac}};
      if (st.has_quantiles) {
        ja["se"] = st.se;
        ja["q025"] = st.q025;
        ja["q50"] = st.q50;
        ja["q975"] = st.q975;
      }
      j["agents"].push_back(std::move(ja));
    }
    std::ofstream f(o.json_out);
    if (!f) throw Error("cannot open for writing: " + o.json_out);
    f << j.dump(2) << "\n";
  }
  return 0;
}

// ---- fit ----

struct FitOpts {
  std::string data;
  std::string model = "poisson";
  double ridge = -1.0;  // sentinel: 0 pooled, 1 per-user
  std::string center_file;
  bool per_user = false;
  std::string out;
};

inline models::ModelKind parse_model(const std::string& s) {
  if (s == "poisson") return models::ModelKind::Poisson;
  if (s == "nb") return models::ModelKind::NB;
  if (s == "zip") return models::ModelKind::ZIP;
  if (s == "zinb") return models::ModelKind::ZINB;
  throw CLI::ValidationError("--model", "unknown model '" + s + "'");
}

// generic numeric CSV: any header, feature columns followed by one outcome column
inline models::Dataset load_generic_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::size_t ncols = split_tokens(line).size();
  if (ncols < 2) throw Error("need at least one feature column and one outcome column");
  models::Dataset data;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> fields;
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != ncols)
      throw Error("line " + std::to_string(lineno) + ": expected " +
                  std::to_string(ncols) + " fields, got " + std::to_string(fields.size()));
    Vector phi(ncols - 1);
    for (std::size_t c = 0; c + 1 < ncols; ++c) {
      try {
        std::size_t pos = 0;
        phi[static_cast<Eigen::Index>(c)] = std::stod(fields[c], &pos);
        if (pos != fields[c].size()) throw std::invalid_argument(fields[c]);
      } catch (const std::exception&) {
        throw Error("line " + std::to_string(lineno) + ": bad number '" + fields[c] + "'");
      }
    }
    long y = 0;
    try {
      std::size_t pos = 0;
      y = std::stol(fields[ncols - 1], &pos);
      if (pos != fields[ncols - 1].size()) throw std::invalid_argument(fields[ncols - 1]);
    } catch (const std::exception&) {
      throw Error("line " + std::to_string(lineno) + ": bad outcome '" +
                  fields[ncols - 1] + "'");
    }
    if (y < 0) throw Error("line " + std::to_string(lineno) + ": negative outcome");
    data.add(std::move(phi), y);
  }
  if (data.obs.empty()) throw Error("no data rows in " + path);
  return data;
}

inline nlohmann::json fit_to_json(const models::FitResult& fr) {
  nlohmann::json j;
  j["converged"] = fr.converged;
  j["iterations"] = fr.iterations;
  j["loglik"] = fr.loglik;
  j["ascent_violations"] = fr.ascent_violations;
  j["beta"] = std::vector<double>(fr.params.beta.data(),
                                  fr.params.beta.data() + fr.params.beta.size());
  if (fr.params.gamma)
    j["gamma"] = std::vector<double>(fr.params.gamma->data(),
                                     fr.params.gamma->data() + fr.params.gamma->size());
  if (fr.params.r) j["r"] = *fr.params.r;
  return j;
}

inline int cmd_fit(const FitOpts& o) {
  models::ModelKind kind = parse_model(o.model);
  double ridge = o.ridge >= 0.0 ? o.ridge : (o.per_user ? 1.0 : 0.0);

  // peek at the header to decide between the intervention-log schema and a
  // generic feature matrix
  std::string header;
  {
    std::ifstream in(o.data);
    if (!in) throw Error("cannot open: " + o.data);
    std::getline(in, header);
    if (!header.empty() && header.back() == '\r') header.pop_back();
  }
  const bool is_mrt = header == kMrtCsvHeader;
  if (o.per_user && !is_mrt)
    throw CLI::ValidationError("--per-user", "requires the intervention-log CSV schema");

  nlohmann::json out;
  out["schema_version"] = harness::kResultSchemaVersion;
  out["model"] = o.model;
  out["ridge"] = ridge;

  auto make_prior = [&](int d) -> std::optional<models::PriorSpec> {
    if (ridge <= 0.0) return std::nullopt;
    models::PriorSpec prior;
    if (!o.center_file.empty()) {
      prior = load_center_file(o.center_file, d);
    } else {
      prior.center_beta = Vector::Zero(d);
    }
    if (models::has_gamma(kind)) {
      if (!prior.center_gamma) prior.center_gamma = Vector::Zero(d);
    } else {
      prior.center_gamma.reset();
    }
    prior.lambda = ridge;
    return prior;
  };

  if (is_mrt) {
    std::vector<MrtRow> rows = load_mrt_csv(o.data, &std::cerr);
    MrtScaling sc = scaling_from_rows(rows);
    out["scaling"] = {{"age_min", sc.age_min},     {"age_max", sc.age_max},
                      {"audit_min", sc.audit_min}, {"audit_max", sc.audit_max},
                      {"days_min", sc.days_min},   {"days_max", sc.days_max}};
    auto to_dataset = [&](const std::vector<MrtRow>& rs) {
      models::Dataset data;
      for (const auto& r : rs) {
        std::vector<Vector> f = mrt_features(r, sc);
        data.add(f[static_cast<std::size_t>(r.action)], r.outcome);
      }
      return data;
    };
    auto prior = make_prior(kMrtDim);
    if (o.per_user) {
      auto users = group_by_user(std::move(rows));
      out["fits"] = nlohmann::json::array();
      for (const auto& [uid, urows] : users) {
        nlohmann::json jf;
        jf["user_id"] = uid;
        try {
          models::FitResult fr = models::fit(kind, to_dataset(urows), prior);
          jf.update(fit_to_json(fr));
        } catch (const std::exception& e) {
          jf["error"] = e.what();  // report per unit, keep going
        }
        out["fits"].push_back(std::move(jf));
      }
    } else {
      models::FitResult fr = models::fit(kind, to_dataset(rows), prior);
      out["fits"] = nlohmann::json::array({fit_to_json(fr)});
    }
  } else {
    models::Dataset data = load_generic_csv(o.data);
    auto prior = make_prior(static_cast<int>(data.dim()));
    models::FitResult fr = models::fit(kind, data, prior);
    out["fits"] = nlohmann::json::array({fit_to_json(fr)});
  }

  if (o.out.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream f(o.out);
    if (!f) throw Error("cannot open for writing: " + o.out);
    f << out.dump(2) << "\n";
    if (!f) throw Error("failed while writing: " + o.out);
  }
  return 0;
}

// ---- gen-mrt ----

struct GenMrtOpts {
  int users = 50, days = 200;
  std::string family = "ziop";
  double omega = 1.0;
  double heterogeneity = 0.1;
  double action_p = 0.6;
  std::uint64_t seed = 1;
  std::string out;
  std::string truth_out;
};

inline int cmd_gen_mrt(const GenMrtOpts& o) {
  auto f = env::parse_family(o.family);
  if (!f || (*f != env::EnvFamily::OP && *f != env::EnvFamily::ZIOP))
    throw CLI::ValidationError("--family", "gen-mrt supports families 'op' and 'ziop'");
  env::MrtGenConfig cfg;
  cfg.n_users = o.users;
  cfg.t_days = o.days;
  cfg.family = *f;
  cfg.omega = o.omega;
  cfg.heterogeneity = o.heterogeneity;
  cfg.action_p = o.action_p;
  RngStream rng(o.seed);
  env::MrtDataset ds = env::gen_mrt_dataset(cfg, rng);
  write_mrt_csv(ds.rows, o.out);
  if (!o.truth_out.empty()) {
    nlohmann::json j;
    j["center"]["beta"] = std::vector<double>(ds.center.beta.data(),
                                              ds.center.beta.data() + ds.center.beta.size());
    if (ds.center.gamma)
      j["center"]["gamma"] = std::vector<double>(
          ds.center.gamma->data(), ds.center.gamma->data() + ds.center.gamma->size());
    std::ofstream tf(o.truth_out);
    if (!tf) throw Error("cannot open for writing: " + o.truth_out);
    tf << j.dump(2) << "\n";
  }
  std::cout << "wrote " << ds.rows.size() << " rows to " << o.out << "\n";
  return 0;
}

// ---- wiring ----

inline void add_agent_flags(CLI::App* sub, AgentOptions& o, bool with_exploration) {
  sub->add_option("--agents", o.agents,
                  "comma-separated agents: poisson,nb,zip,zinb,linear,static");
  sub->add_option("--alpha", o.alpha, "posterior scale (both blocks)");
  sub->add_option("--linear-alpha", o.linear_alpha,
                  "linear baseline posterior scale; 0 selects sqrt(48 d ln T)");
  if (with_exploration) {
    sub->add_option("--tau", o.tau, "forced-exploration horizon");
    sub->add_option("--explore", o.explore, "exploration rule")
        ->check(CLI::IsMember({"fixed", "mineigen"}));
    sub->add_option("--min-eigen", o.min_eigen, "Gram eigenvalue gate");
    sub->add_flag("--no-round-robin{false},!--round-robin", o.round_robin,
                  "uniform random instead of round-robin exploration");
  }
  sub->add_option("--refit-every", o.refit_every)->check(CLI::PositiveNumber);
  sub->add_option("--propensity-draws", o.propensity_draws)->check(CLI::PositiveNumber);
  sub->add_option("--static-p", o.static_p, "static policy P(action 1)");
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"count-outcome contextual bandits: simulation, MRT-style runs, "
               "off-policy replay, and model fitting"};
  app.require_subcommand(1);
  // config files are processed by the root parser only; keys live in a section
  // per subcommand, e.g. [simulate] horizon=500, and flags win per key
  app.set_config("--config", "",
                 "INI/TOML config with one section per subcommand")
      ->configurable(false);
  app.allow_config_extras(false);

  SimulateOpts so;
  auto* sim = app.add_subcommand("simulate", "regret simulation over a generator family");
  sim->add_option("--preset", so.preset, "setting1..setting8");
  auto* sim_family = sim->add_option("--family", so.family, "poisson|op|zip|ziop");
  auto* sim_omega = sim->add_option("--omega", so.omega, "frailty shape");
  sim->add_option("--horizon", so.T)->check(CLI::PositiveNumber);
  sim->add_option("--actions", so.K)->check(CLI::PositiveNumber);
  sim->add_option("--dim", so.d)->check(CLI::PositiveNumber);
  sim->add_option("--reps", so.reps)->check(CLI::PositiveNumber);
  sim->add_option("--seed", so.seed);
  sim->add_option("--jobs", so.jobs);
  add_agent_flags(sim, so.ao, true);
  sim->add_option("--out", so.out, "results CSV path")->required();
  sim->add_option("--json", so.json_out, "results JSON path");
  sim->callback([&]() {
    cmd_simulate(so, sim_family->count() > 0, sim_omega->count() > 0);
  });

  MrtSimOpts mo;
  auto* mrt = app.add_subcommand("mrt-sim", "per-user trial simulation with clipping");
  mrt->add_option("--users", mo.users)->check(CLI::PositiveNumber);
  mrt->add_option("--days", mo.days)->check(CLI::PositiveNumber);
  mrt->add_option("--family", mo.family, "op|ziop")
      ->check(CLI::IsMember({"op", "ziop"}));
  mrt->add_option("--omega", mo.omega);
  mrt->add_option("--reps", mo.reps)->check(CLI::PositiveNumber);
  mrt->add_option("--pmin", mo.pmin);
  mrt->add_option("--pmax", mo.pmax);
  mrt->add_option("--heterogeneity", mo.heterogeneity);
  mrt->add_option("--ridge", mo.ridge);
  mrt->add_option("--seed", mo.seed);
  mrt->add_option("--jobs", mo.jobs);
  add_agent_flags(mrt, mo.ao, false);
  mrt->add_option("--out", mo.out, "results CSV path")->required();
  mrt->add_option("--json", mo.json_out, "results JSON path");
  mrt->callback([&]() { cmd_mrt_sim(mo); });

  ReplayOpts ro;
  auto* rep = app.add_subcommand("replay", "off-policy replay with SNIPW over a log");
  rep->add_option("--data", ro.data, "intervention-log CSV")
      ->required()
      ->check(CLI::ExistingFile);
  rep->add_option("--bootstrap", ro.bootstrap)->check(CLI::PositiveNumber);
  rep->add_option("--ridge", ro.ridge);
  rep->add_option("--center", ro.center_file, "JSON prior center")->check(CLI::ExistingFile);
  rep->add_option("--pmin", ro.pmin);
  rep->add_option("--pmax", ro.pmax);
  rep->add_option("--seed", ro.seed);
  rep->add_option("--jobs", ro.jobs);
  add_agent_flags(rep, ro.ao, false);
  rep->add_option("--out", ro.out, "results table CSV");
  rep->add_option("--json", ro.json_out, "detailed results JSON");
  rep->callback([&]() { cmd_replay(ro); });

  FitOpts fo;
  auto* fit = app.add_subcommand("fit", "fit a count model to a CSV");
  fit->add_option("--data", fo.data)->required()->check(CLI::ExistingFile);
  fit->add_option("--model", fo.model)->check(CLI::IsMember({"poisson", "nb", "zip", "zinb"}));
  fit->add_option("--ridge", fo.ridge);
  fit->add_option("--center", fo.center_file)->check(CLI::ExistingFile);
  fit->add_flag("--per-user", fo.per_user, "one MAP fit per user (log schema only)");
  fit->add_option("--out", fo.out, "output JSON path (default: stdout)");
  fit->callback([&]() { cmd_fit(fo); });

  GenMrtOpts go;
  auto* gen = app.add_subcommand("gen-mrt", "generate a synthetic intervention log");
  gen->add_option("--users", go.users)->check(CLI::PositiveNumber);
  gen->add_option("--days", go.days)->check(CLI::PositiveNumber);
  gen->add_option("--family", go.family)->check(CLI::IsMember({"op", "ziop"}));
  gen->add_option("--omega", go.omega);
  gen->add_option("--heterogeneity", go.heterogeneity);
  gen->add_option("--action-p", go.action_p);
  gen->add_option("--seed", go.seed);
  gen->add_option("--out", go.out)->required();
  gen->add_option("--truth-json", go.truth_out);
  gen->callback([&]() { cmd_gen_mrt(go); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace countbandit::cli
