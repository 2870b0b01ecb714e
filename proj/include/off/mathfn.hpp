#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace off {

// Portable exp/log used everywhere a transcendental feeds results or metrics.
// libm implementations differ by a few ulp across platforms/versions, which
// would break bit-for-bit reproducibility of training runs; these evaluate a
// fixed operation sequence in double precision (contraction is disabled
// project-wide), so outputs are identical everywhere. Accuracy ~1e-14 rel.

// exp(x) via r = x - n*ln2, exp(r) Taylor to degree 11, ldexp by n.
inline double pexp(double x) {
  if (std::isnan(x)) return x;
  if (x > 709.782712893384) return std::numeric_limits<double>::infinity();
  if (x < -745.1332191019412) return 0.0;
  static constexpr double kInvLn2 = 1.4426950408889634074;
  static constexpr double kLn2Hi = 6.93147180369123816490e-01;
  static constexpr double kLn2Lo = 1.90821492927058770002e-10;
  double nd = x * kInvLn2;
  // round to nearest, ties irrelevant at the scale of the reduction
  int n = int(nd >= 0.0 ? nd + 0.5 : nd - 0.5);
  double r = (x - double(n) * kLn2Hi) - double(n) * kLn2Lo;
  // Taylor: sum r^k / k!, k = 0..11, Horner with fixed order
  double p = 1.0 / 39916800.0;       // 1/11!
  p = p * r + 1.0 / 3628800.0;       // 1/10!
  p = p * r + 1.0 / 362880.0;        // 1/9!
  p = p * r + 1.0 / 40320.0;         // 1/8!
  p = p * r + 1.0 / 5040.0;          // 1/7!
  p = p * r + 1.0 / 720.0;           // 1/6!
  p = p * r + 1.0 / 120.0;           // 1/5!
  p = p * r + 1.0 / 24.0;            // 1/4!
  p = p * r + 1.0 / 6.0;             // 1/3!
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  return std::ldexp(p, n);
}

// log(x) via frexp to m in [sqrt(1/2), sqrt(2)), 2*atanh((m-1)/(m+1)) series.
inline double plog(double x) {
  if (std::isnan(x) || x < 0.0) return std::numeric_limits<double>::quiet_NaN();
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  if (std::isinf(x)) return x;
  static constexpr double kLn2Hi = 6.93147180369123816490e-01;
  static constexpr double kLn2Lo = 1.90821492927058770002e-10;
  static constexpr double kSqrtHalf = 0.70710678118654752440;
  int e = 0;
  double m = std::frexp(x, &e);  // m in [0.5, 1)
  if (m < kSqrtHalf) {
    m *= 2.0;
    e -= 1;
  }
  double s = (m - 1.0) / (m + 1.0);
  double z = s * s;
  // atanh series, odd powers through s^17
  double p = 1.0 / 17.0;
  p = p * z + 1.0 / 15.0;
  p = p * z + 1.0 / 13.0;
  p = p * z + 1.0 / 11.0;
  p = p * z + 1.0 / 9.0;
  p = p * z + 1.0 / 7.0;
  p = p * z + 1.0 / 5.0;
  p = p * z + 1.0 / 3.0;
  p = p * z + 1.0;
  double lm = 2.0 * s * p;
  return (double(e) * kLn2Hi + lm) + double(e) * kLn2Lo;
}

}  // namespace off
