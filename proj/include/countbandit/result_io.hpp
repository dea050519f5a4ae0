#pragma once

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "harness.hpp"

namespace countbandit::harness {

inline constexpr const char* kResultCsvHeader = "agent,t,mean_cum_regret,se";
inline constexpr int kResultSchemaVersion = 1;

// shortest lossless decimal form of a double
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_result_csv(const ExperimentResult& res, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << kResultCsvHeader << "\n";
  for (const auto& a : res.agents)
    for (int t = 0; t < res.T; ++t)
      out << a.name << ',' << (t + 1) << ',' << fmt_double(a.mean_cum[t]) << ','
          << fmt_double(a.se_cum[t]) << "\n";
  if (!out) throw Error("failed while writing: " + path);
}

struct ResultCsvRow {
  std::string agent;
  long t = 0;
  double mean_cum_regret = 0.0;
  double se = 0.0;
};

inline std::vector<ResultCsvRow> read_result_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("empty results file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultCsvHeader)
    throw Error("unexpected results header: '" + line + "'");
  std::vector<ResultCsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    ResultCsvRow row;
    std::string field;
    try {
      if (!std::getline(ss, row.agent, ',')) throw Error("x");
      if (!std::getline(ss, field, ',')) throw Error("x");
      row.t = std::stol(field);
      if (!std::getline(ss, field, ',')) throw Error("x");
      row.mean_cum_regret = std::stod(field);
      if (!std::getline(ss, field, ',')) throw Error("x");
      row.se = std::stod(field);
    } catch (const std::exception&) {
      throw Error("malformed results row at line " + std::to_string(lineno));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json result_to_json(const ExperimentResult& res) {
  nlohmann::json j;
  j["schema_version"] = kResultSchemaVersion;
  j["scenario"] = {{"family", res.family}, {"omega", res.omega}, {"T", res.T},
                   {"K", res.K},           {"d", res.d},         {"reps", res.reps},
                   {"base_seed", res.base_seed}, {"metric", res.metric}};
  j["wall_seconds"] = res.wall_seconds;
  j["agents"] = nlohmann::json::array();
  for (const auto& a : res.agents) {
    nlohmann::json ja = {{"name", a.name},
                         {"mean_cum", a.mean_cum},
                         {"se_cum", a.se_cum},
                         {"final_regrets", a.final_regrets},
                         {"fits", a.fits},
                         {"ascent_violations", a.ascent_violations}};
    if (!a.mean_cum_alt.empty()) {
      ja["mean_cum_alt"] = a.mean_cum_alt;
      ja["se_cum_alt"] = a.se_cum_alt;
    }
    j["agents"].push_back(std::move(ja));
  }
  if (!res.user_quantiles.empty()) {
    j["user_quantiles"] = nlohmann::json::array();
    for (const auto& q : res.user_quantiles)
      j["user_quantiles"].push_back({{"agent", q.agent},
                                     {"q025", q.q025},
                                     {"q25", q.q25},
                                     {"q50", q.q50},
                                     {"q75", q.q75},
                                     {"q975", q.q975}});
  }
  return j;
}

inline void write_result_json(const ExperimentResult& res, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << result_to_json(res).dump(2) << "\n";
  if (!out) throw Error("failed while writing: " + path);
}

inline ExperimentResult read_result_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("malformed results JSON: " + std::string(e.what()));
  }
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != kResultSchemaVersion)
    throw Error("unsupported results schema version");
  ExperimentResult res;
  const auto& sc = j.at("scenario");
  res.family = sc.at("family").get<std::string>();
  res.omega = sc.at("omega").get<double>();
  res.T = sc.at("T").get<int>();
  res.K = sc.at("K").get<int>();
  res.d = sc.at("d").get<int>();
  res.reps = sc.at("reps").get<int>();
  res.base_seed = sc.at("base_seed").get<std::uint64_t>();
  res.metric = sc.at("metric").get<std::string>();
  res.wall_seconds = j.at("wall_seconds").get<double>();
  for (const auto& ja : j.at("agents")) {
    AgentCurve a;
    a.name = ja.at("name").get<std::string>();
    a.mean_cum = ja.at("mean_cum").get<std::vector<double>>();
    a.se_cum = ja.at("se_cum").get<std::vector<double>>();
    a.final_regrets = ja.at("final_regrets").get<std::vector<double>>();
    a.fits = ja.at("fits").get<long>();
    a.ascent_violations = ja.at("ascent_violations").get<long>();
    if (ja.contains("mean_cum_alt")) {
      a.mean_cum_alt = ja.at("mean_cum_alt").get<std::vector<double>>();
      a.se_cum_alt = ja.at("se_cum_alt").get<std::vector<double>>();
    }
    res.agents.push_back(std::move(a));
  }
  if (j.contains("user_quantiles"))
    for (const auto& jq : j.at("user_quantiles"))
      res.user_quantiles.push_back({jq.at("agent").get<std::string>(),
                                    jq.at("q025").get<double>(),
                                    jq.at("q25").get<double>(),
                                    jq.at("q50").get<double>(),
                                    jq.at("q75").get<double>(),
                                    jq.at("q975").get<double>()});
  return res;
}

}  // namespace countbandit::harness
