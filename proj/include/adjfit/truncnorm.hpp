#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <boost/math/special_functions/erf.hpp>

#include "adjfit/errors.hpp"

namespace adjfit {

/// Normal distribution N(mean, std^2) restricted to [lo, hi].
struct TruncNormSpec {
  double mean = 0.0;
  double std = 1.0;
  double lo = -1.0;
  double hi = 1.0;

  void validate() const {
    if (!(lo < hi)) throw InputError("truncated normal needs lo < hi");
    if (!(std > 0.0)) throw InputError("truncated normal needs a positive std");
  }
};

namespace detail {

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double std_normal_quantile(double p) {
  p = std::clamp(p, std::numeric_limits<double>::min(), 1.0 - std::numeric_limits<double>::epsilon() / 2);
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// Probability mass of the standard normal between alpha and beta, computed in
// the tail where it does not cancel.
inline double normal_mass(double alpha, double beta) {
  if (alpha > 0.0) return std_normal_cdf(-alpha) - std_normal_cdf(-beta);
  return std_normal_cdf(beta) - std_normal_cdf(alpha);
}

}  // namespace detail

inline double truncnorm_pdf(const TruncNormSpec& spec, double x) {
  if (x < spec.lo || x > spec.hi) return 0.0;
  const double alpha = (spec.lo - spec.mean) / spec.std;
  const double beta = (spec.hi - spec.mean) / spec.std;
  const double z = (x - spec.mean) / spec.std;
  return detail::std_normal_pdf(z) / (spec.std * detail::normal_mass(alpha, beta));
}

inline double truncnorm_cdf(const TruncNormSpec& spec, double x) {
  if (x <= spec.lo) return 0.0;
  if (x >= spec.hi) return 1.0;
  const double alpha = (spec.lo - spec.mean) / spec.std;
  const double beta = (spec.hi - spec.mean) / spec.std;
  const double z = (x - spec.mean) / spec.std;
  return detail::normal_mass(alpha, z) / detail::normal_mass(alpha, beta);
}

/// Maps a uniform variate u in [0, 1) through the inverse truncated CDF.
inline double truncnorm_quantile(const TruncNormSpec& spec, double u) {
  const double alpha = (spec.lo - spec.mean) / spec.std;
  const double beta = (spec.hi - spec.mean) / spec.std;
  double z;
  if (alpha > 0.0) {
    // Right tail: work with upper-tail probabilities.
    const double qa = detail::std_normal_cdf(-alpha);
    const double qb = detail::std_normal_cdf(-beta);
    z = -detail::std_normal_quantile(qa - u * (qa - qb));
  } else {
    const double pa = detail::std_normal_cdf(alpha);
    const double pb = detail::std_normal_cdf(beta);
    z = detail::std_normal_quantile(pa + u * (pb - pa));
  }
  return std::clamp(spec.mean + spec.std * z, spec.lo, spec.hi);
}

template <typename Rng>
double truncnorm_sample(const TruncNormSpec& spec, Rng& rng) {
  spec.validate();
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  return truncnorm_quantile(spec, uniform(rng));
}

}  // namespace adjfit
