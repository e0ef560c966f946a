#pragma once

#include <cstdint>

#include "steinfed/models.hpp"

namespace steinfed {

/// Diagonal Gaussian in natural coordinates: eta1 = m / v, eta2 = -1 / (2 v).
/// Local factors use the same struct without the validity requirement.
struct GaussianNatParams {
  Vector eta1;
  Vector eta2;

  static GaussianNatParams from_moments(const Vector& mean, const Vector& variance);
  static GaussianNatParams zero(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(eta1.size()); }
  bool valid() const;  // eta2 < 0 everywhere

  GaussianNatParams operator+(const GaussianNatParams& o) const;
  GaussianNatParams operator-(const GaussianNatParams& o) const;
};

struct GaussianMoments {
  Vector mean;
  Vector variance;
};

GaussianMoments nat_to_moment(const GaussianNatParams& eta);
GaussianNatParams moment_to_nat(const GaussianMoments& moments);

double gaussian_log_density(const GaussianNatParams& eta, const Vector& theta);
ParticleSet sample_gaussian(const GaussianNatParams& eta, std::size_t count, Rng& rng);

/// Gradient of E_q[L] with respect to the mean parameters (E[theta], E[theta^2]).
struct MomentGradient {
  Vector d_first;
  Vector d_second;
};

/// Reparameterized Monte Carlo estimate with antithetic pairs
/// theta = m +/- sqrt(v) z. Deterministic in `seed`.
MomentGradient expected_loss_grad_moment(const GaussianNatParams& eta, const LocalLoss& loss,
                                         double alpha, int samples, std::uint64_t seed);

struct PviConfig {
  double step = 0.1;
  int local_iters = 10;
  int samples = 200;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  int max_halvings = 30;
};

struct PviOutcome {
  GaussianNatParams global;
  GaussianNatParams local;
};

/// L natural-gradient steps eta <- eta - step * (eta_k + grad_mu E[L_k] / alpha)
/// with eta_k held at its value on entry, then eta_k += eta_new - eta_old.
/// `round` selects the Monte Carlo stream.
PviOutcome pvi_round(const GaussianNatParams& global, const GaussianNatParams& local,
                     const LocalLoss& loss, const PviConfig& cfg, int round);

/// As pvi_round with E[-L_k] in place of E[L_k].
PviOutcome ulpvi_round(const GaussianNatParams& global, const GaussianNatParams& local,
                       const LocalLoss& loss, const PviConfig& cfg, int round);

}  // namespace steinfed
