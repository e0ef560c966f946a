#pragma once

#include <functional>
#include <vector>

#include "steinfed/kernels.hpp"
#include "steinfed/particles.hpp"

namespace steinfed {

/// Per-particle, per-coordinate AdaGrad with master step `epsilon`.
/// Update: acc += phi^2; theta += epsilon * phi / (fudge + sqrt(acc)).
class AdaGradState {
 public:
  explicit AdaGradState(double epsilon = 0.05, double fudge = 1e-6);

  double epsilon() const { return epsilon_; }
  double fudge() const { return fudge_; }
  // Empty until the first step, then d x N.
  const Matrix& accumulator() const { return accumulator_; }

  void reset() { accumulator_.resize(0, 0); }

  // Returns the updated particles and advances the accumulator.
  ParticleSet step(const ParticleSet& particles, const Matrix& directions);

 private:
  double epsilon_;
  double fudge_;
  Matrix accumulator_;
};

/// SVGD direction phi(theta_n) for every particle, one column per particle.
/// The bandwidth is resolved once from the current particle set and the target
/// gradient is evaluated once per particle.
Matrix svgd_direction(const ParticleSet& particles, const TargetGradient& target,
                      const KernelConfig& kcfg);

// Applied after every step, e.g. to clamp onto a bounded support.
using Projection = std::function<void(ParticleSet&)>;

ParticleSet adagrad_step(AdaGradState& state, const ParticleSet& particles,
                         const Matrix& directions);

/// `steps` iterations of svgd_direction followed by adagrad_step.
ParticleSet run_svgd(ParticleSet particles, const TargetGradient& target, int steps,
                     AdaGradState& opt, const KernelConfig& kcfg,
                     const Projection& project = {});

}  // namespace steinfed
