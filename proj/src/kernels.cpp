#include "steinfed/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "steinfed/errors.hpp"

namespace steinfed {
namespace {

void check_pair(const Vector& x, const Vector& y, double h) {
  if (x.size() != y.size()) throw NumericError("rbf kernel: dimension mismatch");
  if (!(h > 0.0)) throw NumericError("rbf kernel: bandwidth must be positive");
}

void check_kde(const ParticleSet& particles, const KdeConfig& cfg, const Vector& query) {
  if (particles.empty()) throw NumericError("kde: empty particle set");
  if (!(cfg.lambda > 0.0)) throw NumericError("kde: lambda must be positive");
  if (static_cast<std::size_t>(query.size()) != particles.dim()) {
    throw NumericError("kde: query dimension mismatch");
  }
}

// Log of the unnormalized component weights -|q - x_n|^2 / (2 lambda^2).
Vector component_logits(const ParticleSet& particles, double lambda, const Vector& query) {
  const Matrix diff = particles.matrix().colwise() - query;
  return -diff.colwise().squaredNorm().transpose() / (2.0 * lambda * lambda);
}

}  // namespace

KernelConfig KernelConfig::fixed(double h) {
  if (!(h > 0.0)) throw NumericError("fixed kernel bandwidth must be positive");
  return {Mode::kFixed, h};
}

double rbf_kernel(const Vector& x, const Vector& y, double h) {
  check_pair(x, y, h);
  return std::exp(-(x - y).squaredNorm() / h);
}

Vector rbf_kernel_grad_first(const Vector& x, const Vector& y, double h) {
  check_pair(x, y, h);
  const double k = std::exp(-(x - y).squaredNorm() / h);
  return (-2.0 / h) * k * (x - y);
}

double median_bandwidth(const ParticleSet& particles) {
  const std::size_t n = particles.size();
  if (n < 2) throw NumericError("median bandwidth needs at least two particles");
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dists.push_back((particles[i] - particles[j]).norm());
    }
  }
  const std::size_t m = dists.size();
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(m / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double med = *mid;
  if (m % 2 == 0) {
    const double lower = *std::max_element(dists.begin(), mid);
    med = 0.5 * (med + lower);
  }
  const double h = med * med / std::log(static_cast<double>(n));
  return std::max(h, kBandwidthFloor);
}

double resolve_bandwidth(const KernelConfig& cfg, const ParticleSet& particles) {
  if (cfg.mode == KernelConfig::Mode::kFixed) {
    if (!(cfg.h > 0.0)) throw NumericError("fixed kernel bandwidth must be positive");
    return cfg.h;
  }
  return median_bandwidth(particles);
}

double kde_log_density(const ParticleSet& particles, const KdeConfig& cfg, const Vector& query) {
  check_kde(particles, cfg, query);
  const Vector logits = component_logits(particles, cfg.lambda, query);
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  const double d = static_cast<double>(particles.dim());
  const double log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi * cfg.lambda * cfg.lambda);
  return lse - std::log(static_cast<double>(particles.size())) + log_norm;
}

Vector kde_log_density_grad(const ParticleSet& particles, const KdeConfig& cfg,
                            const Vector& query) {
  check_kde(particles, cfg, query);
  const Vector logits = component_logits(particles, cfg.lambda, query);
  Vector w = (logits.array() - logits.maxCoeff()).exp();
  w /= w.sum();
  // sum_n w_n (x_n - q) / lambda^2
  return (particles.matrix() * w - query) / (cfg.lambda * cfg.lambda);
}

}  // namespace steinfed
