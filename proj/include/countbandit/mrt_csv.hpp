#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "environments.hpp"

namespace countbandit::cli {

using env::MrtRow;

inline constexpr const char* kMrtCsvHeader =
    "user_id,day,age,gender,audit,days_since_download,action,propensity,outcome";

inline void write_mrt_csv(const std::vector<MrtRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << kMrtCsvHeader << "\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.propensity);
    out << r.user_id << ',' << r.day << ',' << r.age << ',' << r.gender << ','
        << r.audit << ',' << r.days_since_download << ',' << r.action << ',' << buf
        << ',' << r.outcome << "\n";
  }
  if (!out) throw Error("failed while writing: " + path);
}

// Strict reader for the intervention-log schema. Structural problems (header,
// arity, parse failures, invalid action/propensity/outcome, duplicate
// user-days) are errors naming the line; out-of-range covariates only warn.
inline std::vector<MrtRow> load_mrt_csv(const std::string& path,
                                        std::ostream* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMrtCsvHeader)
    throw Error("unexpected header in " + path + ": expected '" +
                std::string(kMrtCsvHeader) + "', got '" + line + "'");

  auto warn = [&](const std::string& msg) {
    if (warnings) *warnings << "warning: " << msg << "\n";
  };

  std::vector<MrtRow> rows;
  std::map<std::pair<std::string, long>, std::size_t> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> fields;
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (fields.size() != 9)
      throw Error("line " + std::to_string(lineno) + ": expected 9 fields, got " +
                  std::to_string(fields.size()));
    MrtRow row;
    row.user_id = fields[0];
    if (row.user_id.empty())
      throw Error("line " + std::to_string(lineno) + ": empty user_id");
    auto to_long = [&](const std::string& s, const char* name) {
      try {
        std::size_t pos = 0;
        long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw Error("line " + std::to_string(lineno) + ": bad integer for " +
                    std::string(name) + ": '" + s + "'");
      }
    };
    auto to_double = [&](const std::string& s, const char* name) {
      try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw Error("line " + std::to_string(lineno) + ": bad number for " +
                    std::string(name) + ": '" + s + "'");
      }
    };
    row.day = to_long(fields[1], "day");
    row.age = to_long(fields[2], "age");
    row.gender = to_long(fields[3], "gender");
    row.audit = to_long(fields[4], "audit");
    row.days_since_download = to_long(fields[5], "days_since_download");
    row.action = to_long(fields[6], "action");
    row.propensity = to_double(fields[7], "propensity");
    row.outcome = to_long(fields[8], "outcome");

    if (row.day < 0) throw Error("line " + std::to_string(lineno) + ": negative day");
    if (row.gender != 0 && row.gender != 1)
      throw Error("line " + std::to_string(lineno) + ": gender must be 0 or 1");
    if (row.action != 0 && row.action != 1)
      throw Error("line " + std::to_string(lineno) + ": action must be 0 or 1");
    if (!(row.propensity > 0.0 && row.propensity < 1.0))
      throw Error("line " + std::to_string(lineno) + ": propensity must lie in (0,1)");
    if (row.outcome < 0)
      throw Error("line " + std::to_string(lineno) + ": negative outcome");
    if (row.days_since_download < 0)
      throw Error("line " + std::to_string(lineno) + ": negative days_since_download");
    if (row.age < 18 || row.age > 65)
      warn("line " + std::to_string(lineno) + ": age " + std::to_string(row.age) +
           " outside [18,65]");
    if (row.audit < 8 || row.audit > 40)
      warn("line " + std::to_string(lineno) + ": audit " + std::to_string(row.audit) +
           " outside [8,40]");

    auto key = std::make_pair(row.user_id, row.day);
    auto [it, inserted] = seen.emplace(key, lineno);
    if (!inserted)
      throw Error("line " + std::to_string(lineno) + ": duplicate (user_id, day) = (" +
                  row.user_id + ", " + std::to_string(row.day) + "), first seen at line " +
                  std::to_string(it->second));
    rows.push_back(std::move(row));
  }
  return rows;
}

// users sorted by id, each user's rows sorted by day
inline std::vector<std::pair<std::string, std::vector<MrtRow>>> group_by_user(
    std::vector<MrtRow> rows) {
  std::map<std::string, std::vector<MrtRow>> by_user;
  for (auto& r : rows) {
    std::string id = r.user_id;
    by_user[std::move(id)].push_back(std::move(r));
  }
  std::vector<std::pair<std::string, std::vector<MrtRow>>> out;
  out.reserve(by_user.size());
  for (auto& [id, urows] : by_user) {
    std::sort(urows.begin(), urows.end(),
              [](const MrtRow& a, const MrtRow& b) { return a.day < b.day; });
    out.push_back({id, std::move(urows)});
  }
  return out;
}

// min-max scaling ranges from the corpus itself
inline MrtScaling scaling_from_rows(const std::vector<MrtRow>& rows) {
  if (rows.empty()) throw Error("cannot derive scaling from an empty corpus");
  MrtScaling sc;
  sc.age_min = sc.age_max = static_cast<double>(rows[0].age);
  sc.audit_min = sc.audit_max = static_cast<double>(rows[0].audit);
  sc.days_min = sc.days_max = static_cast<double>(rows[0].days_since_download);
  for (const auto& r : rows) {
    sc.age_min = std::min(sc.age_min, static_cast<double>(r.age));
    sc.age_max = std::max(sc.age_max, static_cast<double>(r.age));
    sc.audit_min = std::min(sc.audit_min, static_cast<double>(r.audit));
    sc.audit_max = std::max(sc.audit_max, static_cast<double>(r.audit));
    sc.days_min = std::min(sc.days_min, static_cast<double>(r.days_since_download));
    sc.days_max = std::max(sc.days_max, static_cast<double>(r.days_since_download));
  }
  return sc;
}

inline std::vector<Vector> mrt_features(const MrtRow& row, const MrtScaling& sc) {
  MrtBlocks b = mrt_blocks(static_cast<double>(row.age), static_cast<double>(row.gender),
                           static_cast<double>(row.audit),
                           static_cast<double>(row.days_since_download), sc);
  return {feature_map(b.x, b.s, 0), feature_map(b.x, b.s, 1)};
}

}  // namespace countbandit::cli
