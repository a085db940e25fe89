#pragma once

// Observation log-likelihoods as functions of the linear predictor.

#include "stmort/types.hpp"

#include <cmath>
#include <numbers>

namespace stmort {

enum class Family { Poisson, Gaussian };

/// Poisson with log link (eta includes the offset), or a Gaussian with
/// identity link and known precision. The Gaussian case makes the Laplace
/// approximation exact and is used as a reference.
struct Likelihood {
  Family family = Family::Poisson;
  double gaussian_precision = 1.0;

  static Likelihood poisson() { return {}; }
  static Likelihood gaussian(double precision) {
    require(precision > 0.0, "Gaussian precision must be positive");
    return {Family::Gaussian, precision};
  }

  double log_density(double y, double eta) const {
    if (family == Family::Poisson) return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
    const double r = y - eta;
    return 0.5 * std::log(gaussian_precision / (2.0 * std::numbers::pi)) - 0.5 * gaussian_precision * r * r;
  }

  /// d log p / d eta
  double gradient(double y, double eta) const {
    if (family == Family::Poisson) return y - std::exp(eta);
    return gaussian_precision * (y - eta);
  }

  /// -d^2 log p / d eta^2
  double curvature(double /*y*/, double eta) const {
    if (family == Family::Poisson) return std::exp(eta);
    return gaussian_precision;
  }
};

/// Poisson deviance relative to the saturated model (mu = y), 0 log 0 = 0.
inline double saturated_deviance_term(double y, double mu) {
  const double ylog = y > 0.0 ? y * std::log(y / mu) : 0.0;
  return 2.0 * (ylog - (y - mu));
}

}  // namespace stmort
