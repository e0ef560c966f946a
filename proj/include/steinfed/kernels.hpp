#pragma once

#include "steinfed/particles.hpp"

namespace steinfed {

// Floor applied to the median-heuristic bandwidth when all particles coincide.
inline constexpr double kBandwidthFloor = 1e-8;

/// Bandwidth policy for the SVGD kernel exp(-|x - y|^2 / h).
struct KernelConfig {
  enum class Mode { kMedianHeuristic, kFixed };
  Mode mode = Mode::kMedianHeuristic;
  double h = 1.0;  // used only when mode == kFixed

  static KernelConfig median() { return {}; }
  static KernelConfig fixed(double h);
};

/// Isotropic Gaussian KDE; lambda is the per-dimension standard deviation.
struct KdeConfig {
  double lambda = 0.55;
};

double rbf_kernel(const Vector& x, const Vector& y, double h);

// Gradient with respect to the first argument x.
Vector rbf_kernel_grad_first(const Vector& x, const Vector& y, double h);

/// med^2 / ln N where med is the median pairwise Euclidean distance
/// (mean of the two middle values for an even count). Requires N >= 2.
double median_bandwidth(const ParticleSet& particles);

// Resolves the bandwidth for the current particle set.
double resolve_bandwidth(const KernelConfig& cfg, const ParticleSet& particles);

/// log[(1/N) sum_n N(query; particle_n, lambda^2 I)] via log-sum-exp.
double kde_log_density(const ParticleSet& particles, const KdeConfig& cfg, const Vector& query);

/// Gradient of kde_log_density with respect to the query point.
Vector kde_log_density_grad(const ParticleSet& particles, const KdeConfig& cfg,
                            const Vector& query);

}  // namespace steinfed
