#include "steinfed/svgd.hpp"

#include <cmath>

#include "steinfed/errors.hpp"

namespace steinfed {

AdaGradState::AdaGradState(double epsilon, double fudge) : epsilon_(epsilon), fudge_(fudge) {
  if (!(epsilon >= 0.0)) throw NumericError("adagrad: master step must be nonnegative");
  if (!(fudge > 0.0)) throw NumericError("adagrad: fudge must be positive");
}

ParticleSet AdaGradState::step(const ParticleSet& particles, const Matrix& directions) {
  if (directions.rows() != particles.matrix().rows() ||
      directions.cols() != particles.matrix().cols()) {
    throw NumericError("adagrad: directions do not align with particles");
  }
  if (!directions.allFinite()) throw NumericError("adagrad: non-finite direction");
  if (accumulator_.size() == 0) {
    accumulator_ = Matrix::Zero(directions.rows(), directions.cols());
  } else if (accumulator_.rows() != directions.rows() ||
             accumulator_.cols() != directions.cols()) {
    throw NumericError("adagrad: accumulator shape changed between steps");
  }
  accumulator_.array() += directions.array().square();
  Matrix next = particles.matrix();
  next.array() += epsilon_ * directions.array() / (fudge_ + accumulator_.array().sqrt());
  return ParticleSet(std::move(next));
}

Matrix svgd_direction(const ParticleSet& particles, const TargetGradient& target,
                      const KernelConfig& kcfg) {
  const std::size_t n = particles.size();
  if (n == 0) throw NumericError("svgd: empty particle set");
  const Eigen::Index d = particles.matrix().rows();

  Matrix scores(d, static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    Vector g = target(particles[j]);
    if (g.size() != d) throw NumericError("svgd: target gradient has wrong dimension");
    if (!g.allFinite()) throw NumericError("svgd: non-finite target gradient");
    scores.col(static_cast<Eigen::Index>(j)) = g;
  }
  // The kernel only matters when N > 1; a single particle collapses to its score.
  if (n == 1) return scores;

  const double h = resolve_bandwidth(kcfg, particles);
  const Matrix& x = particles.matrix();
  const auto count = static_cast<Eigen::Index>(n);
  Matrix k(count, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < count; ++j) {
      k(i, j) = k(j, i) = std::exp(-(x.col(i) - x.col(j)).squaredNorm() / h);
    }
  }

  // phi(x_i) = 1/N sum_j [k_ij s_j + (2/h) k_ij (x_i - x_j)]
  const Vector ksum = k.colwise().sum().transpose();
  Matrix phi = scores * k;
  phi += (2.0 / h) * (x * ksum.asDiagonal() - x * k);
  return phi / static_cast<double>(n);
}

ParticleSet adagrad_step(AdaGradState& state, const ParticleSet& particles,
                         const Matrix& directions) {
  return state.step(particles, directions);
}

ParticleSet run_svgd(ParticleSet particles, const TargetGradient& target, int steps,
                     AdaGradState& opt, const KernelConfig& kcfg, const Projection& project) {
  if (steps < 0) throw NumericError("svgd: negative step count");
  for (int l = 0; l < steps; ++l) {
    const Matrix phi = svgd_direction(particles, target, kcfg);
    particles = opt.step(particles, phi);
    if (project) project(particles);
  }
  return particles;
}

}  // namespace steinfed
