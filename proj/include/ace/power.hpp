#pragma once

// Per-group sample size and power for a two-arm comparison of slopes on time
// to event. The treatment slope is (1 - effect_frac) * placebo slope, so the
// detectable difference is d = effect_frac * |alpha_p|. One-sided level kappa.

#include <cmath>
#include <cstdint>

#include "ace/error.hpp"
#include "ace/numerics.hpp"

namespace ace {

struct PowerSpec {
  double alpha_p = 0.0;      // placebo slope
  double effect_frac = 0.1;  // fractional slowing under treatment
  double kappa = 0.05;       // type-I error
  double power = 0.8;        // 1 - type-II error
  double var_delta = 1.0;    // Var(delta)

  void validate() const {
    if (!(kappa > 0.0 && kappa < 1.0)) throw Error(ErrorKind::DomainError, "kappa must lie in (0, 1)");
    if (!(power > 0.0 && power < 1.0)) throw Error(ErrorKind::DomainError, "power must lie in (0, 1)");
    if (!(effect_frac > 0.0)) throw Error(ErrorKind::DomainError, "effect fraction must be positive");
    if (!(var_delta > 0.0)) throw Error(ErrorKind::DomainError, "Var(delta) must be positive");
  }

  double effect_size() const { return effect_frac * std::abs(alpha_p); }
};

/// ceil( [ sqrt(Var) (z_power - z_kappa) / d ]^2 ).
inline std::int64_t required_n(const PowerSpec& spec) {
  spec.validate();
  const double d = spec.effect_size();
  if (!(d > 0.0) || !std::isfinite(d)) throw Error(ErrorKind::DomainError, "effect size d is zero");
  const double ratio = std::sqrt(spec.var_delta) * (norm_quantile(spec.power) - norm_quantile(spec.kappa)) / d;
  const double n = ratio * ratio;
  // guard against 1.0000000000000002-style rounding pushing exact integers up
  const double r = std::round(n);
  if (std::abs(n - r) < 1e-9 * std::max(1.0, r)) return std::max<std::int64_t>(1, static_cast<std::int64_t>(r));
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(n)));
}

/// Phi( d sqrt(n / Var) + z_kappa ).
inline double power_at(const PowerSpec& spec, std::int64_t n_per_group) {
  if (n_per_group < 1) throw Error(ErrorKind::DomainError, "n_per_group must be >= 1");
  if (!(spec.kappa > 0.0 && spec.kappa < 1.0)) throw Error(ErrorKind::DomainError, "kappa must lie in (0, 1)");
  const double d = spec.effect_size();
  return norm_cdf(d * std::sqrt(static_cast<double>(n_per_group) / spec.var_delta) + norm_quantile(spec.kappa));
}

}  // namespace ace
