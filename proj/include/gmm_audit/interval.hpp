#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gmm_audit {

/// Closed interval [lo, hi].
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  [[nodiscard]] double width() const { return hi - lo; }
  [[nodiscard]] double center() const { return 0.5 * (lo + hi); }
  [[nodiscard]] bool contains(double x, double tol = 0.0) const {
    return x >= lo - tol && x <= hi + tol;
  }
};

/// Hausdorff distance between nonempty closed intervals: the larger endpoint gap.
inline double hausdorff(const Interval& a, const Interval& b) {
  return std::max(std::abs(a.lo - b.lo), std::abs(a.hi - b.hi));
}

}  // namespace gmm_audit
