#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "steinfed/particles.hpp"

namespace steinfed::testing {

inline Vector random_vector(Rng& rng, std::size_t dim, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return v;
}

inline ParticleSet random_particles(Rng& rng, std::size_t count, std::size_t dim,
                                    double scale = 1.0) {
  ParticleSet p(count, dim);
  for (std::size_t n = 0; n < count; ++n) p[n] = random_vector(rng, dim, scale);
  return p;
}

// Central differences with step h along every coordinate.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                               double h = 1e-4) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector plus = x, minus = x;
    plus[i] += h;
    minus[i] -= h;
    g[i] = (f(plus) - f(minus)) / (2 * h);
  }
  return g;
}

// |a - b| <= tol * max(1, |b|), coordinate-wise.
inline bool close_rel(const Vector& a, const Vector& b, double tol) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!(std::abs(a[i] - b[i]) <= tol * std::max(1.0, std::abs(b[i])))) return false;
  }
  return true;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace steinfed::testing
