#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

namespace steinfed {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Ordered set of N particles in R^d. Particle n is column n of a d x N
/// matrix, so index n identifies the same particle across iterations.
class ParticleSet {
 public:
  ParticleSet() = default;
  ParticleSet(std::size_t count, std::size_t dim);
  explicit ParticleSet(Matrix columns);
  static ParticleSet from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t size() const { return static_cast<std::size_t>(data_.cols()); }
  std::size_t dim() const { return static_cast<std::size_t>(data_.rows()); }
  bool empty() const { return data_.cols() == 0; }

  auto operator[](std::size_t n) { return data_.col(static_cast<Eigen::Index>(n)); }
  auto operator[](std::size_t n) const { return data_.col(static_cast<Eigen::Index>(n)); }

  const Matrix& matrix() const { return data_; }
  Matrix& matrix() { return data_; }

  bool all_finite() const { return data_.allFinite(); }

  Vector mean() const;
  // Per-coordinate population variance (divides by N).
  Vector variance() const;

  friend bool operator==(const ParticleSet& a, const ParticleSet& b) {
    return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() &&
           a.data_ == b.data_;
  }

 private:
  Matrix data_;
};

/// Gradient of an unnormalized log-density, x -> grad log p~(x).
using TargetGradient = std::function<Vector(const Vector&)>;

}  // namespace steinfed
