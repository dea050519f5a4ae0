#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "count_models.hpp"

namespace countbandit {

// phi = (x, a * s): the covariate block is shared across actions, the
// interaction block is zeroed for the null action. Pure concatenation so the
// linear-block structure survives whatever scaling produced x and s.
inline Vector feature_map(const Vector& x, const Vector& s, int action) {
  Vector phi(x.size() + s.size());
  phi.head(x.size()) = x;
  if (action != 0)
    phi.tail(s.size()) = s;
  else
    phi.tail(s.size()).setZero();
  return phi;
}

// Min-max ranges for the intervention-log covariates. Scaling always comes
// from the corpus being processed, so generation and ingestion agree exactly.
struct MrtScaling {
  double age_min = 18, age_max = 65;
  double audit_min = 8, audit_max = 40;
  double days_min = 0, days_max = 30;

  static double unit(double v, double lo, double hi) {
    if (hi <= lo) return 0.0;
    return (v - lo) / (hi - lo);
  }
  double age01(double v) const { return unit(v, age_min, age_max); }
  double audit01(double v) const { return unit(v, audit_min, audit_max); }
  double days01(double v) const { return unit(v, days_min, days_max); }
};

struct MrtBlocks {
  Vector x;  // [1, age, gender, audit, days] scaled
  Vector s;  // [1, days] scaled
};

inline constexpr int kMrtDim = 7;  // |x| + |s|

// Build the covariate blocks: unit-scale each covariate, divide by sqrt(7) so
// the 7 entries of (x, s) give norm <= 1, then apply the shared ball
// projection (a no-op for in-range covariates, a safeguard otherwise).
inline MrtBlocks mrt_blocks(double age, double gender, double audit, double days,
                            const MrtScaling& sc) {
  const double inv = 1.0 / std::sqrt(7.0);
  MrtBlocks b;
  b.x.resize(5);
  b.x << 1.0, sc.age01(age), gender, sc.audit01(audit), sc.days01(days);
  b.s.resize(2);
  b.s << 1.0, sc.days01(days);
  b.x *= inv;
  b.s *= inv;
  double norm = std::sqrt(b.x.squaredNorm() + b.s.squaredNorm());
  if (norm > 1.0) {
    b.x /= norm;
    b.s /= norm;
  }
  return b;
}

}  // namespace countbandit
