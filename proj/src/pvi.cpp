#include "steinfed/pvi.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "steinfed/errors.hpp"

namespace steinfed {
namespace {

void check_valid(const GaussianNatParams& eta) {
  if (eta.eta1.size() != eta.eta2.size()) throw NumericError("natural parameters: ragged");
  if (!eta.valid()) throw NumericError("natural parameters: eta2 must be negative");
}

PviOutcome natural_gradient_round(const GaussianNatParams& global, const GaussianNatParams& local,
                                  const LocalLoss& loss, const PviConfig& cfg, int round,
                                  double sign) {
  check_valid(global);
  if (local.dim() != global.dim()) throw NumericError("pvi: local factor dimension mismatch");
  if (!(cfg.step > 0.0)) throw NumericError("pvi: step must be positive");
  if (cfg.samples < 1) throw NumericError("pvi: need at least one Monte Carlo sample");
  if (cfg.local_iters < 0) throw NumericError("pvi: negative iteration count");

  double step = cfg.step;
  GaussianNatParams eta = global;
  for (int l = 0; l < cfg.local_iters; ++l) {
    const std::uint64_t stream = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(round) * 7919ULL +
                                 static_cast<std::uint64_t>(l);
    const MomentGradient g = expected_loss_grad_moment(eta, loss, cfg.alpha, cfg.samples, stream);
    const Vector drift1 = local.eta1 + sign * g.d_first / cfg.alpha;
    const Vector drift2 = local.eta2 + sign * g.d_second / cfg.alpha;
    int halvings = 0;
    while (true) {
      GaussianNatParams next{eta.eta1 - step * drift1, eta.eta2 - step * drift2};
      if (next.valid() && next.eta1.allFinite()) {
        eta = std::move(next);
        break;
      }
      if (++halvings > cfg.max_halvings) {
        throw NumericError("pvi: step halving exhausted; natural parameters left the valid set");
      }
      step *= 0.5;
    }
  }
  PviOutcome out{eta, local};
  out.local.eta1 += eta.eta1 - global.eta1;
  out.local.eta2 += eta.eta2 - global.eta2;
  return out;
}

}  // namespace

GaussianNatParams GaussianNatParams::from_moments(const Vector& mean, const Vector& variance) {
  return moment_to_nat({mean, variance});
}

GaussianNatParams GaussianNatParams::zero(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  return {Vector::Zero(d), Vector::Zero(d)};
}

bool GaussianNatParams::valid() const {
  return eta1.size() == eta2.size() && eta2.size() > 0 && (eta2.array() < 0.0).all();
}

GaussianNatParams GaussianNatParams::operator+(const GaussianNatParams& o) const {
  return {eta1 + o.eta1, eta2 + o.eta2};
}

GaussianNatParams GaussianNatParams::operator-(const GaussianNatParams& o) const {
  return {eta1 - o.eta1, eta2 - o.eta2};
}

GaussianMoments nat_to_moment(const GaussianNatParams& eta) {
  check_valid(eta);
  Vector variance = -0.5 * eta.eta2.cwiseInverse();
  Vector mean = eta.eta1.cwiseProduct(variance);
  return {std::move(mean), std::move(variance)};
}

GaussianNatParams moment_to_nat(const GaussianMoments& m) {
  if (m.mean.size() != m.variance.size()) throw NumericError("moments: ragged");
  if (!(m.variance.array() > 0.0).all()) throw NumericError("moments: variance must be positive");
  return {m.mean.cwiseQuotient(m.variance), -0.5 * m.variance.cwiseInverse()};
}

double gaussian_log_density(const GaussianNatParams& eta, const Vector& theta) {
  const GaussianMoments m = nat_to_moment(eta);
  const auto z = (theta - m.mean).array().square() / m.variance.array();
  return -0.5 * (z + (2.0 * std::numbers::pi * m.variance.array()).log()).sum();
}

ParticleSet sample_gaussian(const GaussianNatParams& eta, std::size_t count, Rng& rng) {
  const GaussianMoments m = nat_to_moment(eta);
  return Prior::gaussian(m.mean, m.variance).sample(count, rng);
}

MomentGradient expected_loss_grad_moment(const GaussianNatParams& eta, const LocalLoss& loss,
                                         double alpha, int samples, std::uint64_t seed) {
  if (samples < 1) throw NumericError("expected loss gradient: need at least one sample");
  const GaussianMoments m = nat_to_moment(eta);
  const auto d = m.mean.size();
  const Vector sd = m.variance.cwiseSqrt();

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector d_mean = Vector::Zero(d);
  Vector d_var = Vector::Zero(d);
  Vector z(d);
  auto accumulate = [&](const Vector& noise) {
    const Vector theta = m.mean + sd.cwiseProduct(noise);
    const Vector grad = -alpha * loss.neg_loss_grad(theta, alpha);  // grad L_k
    if (!grad.allFinite()) throw NumericError("expected loss gradient: non-finite loss gradient");
    d_mean += grad;
    // d theta / d v = z / (2 sqrt(v))
    d_var += grad.cwiseProduct(noise);
  };
  for (int s = 0; s < samples; s += 2) {
    for (Eigen::Index c = 0; c < d; ++c) z(c) = normal(rng);
    accumulate(z);
    if (s + 1 < samples) accumulate(-z);
  }
  d_mean /= static_cast<double>(samples);
  d_var = d_var.cwiseQuotient(2.0 * sd) / static_cast<double>(samples);

  // (m, v) = (mu1, mu2 - mu1^2)
  MomentGradient out;
  out.d_first = d_mean - 2.0 * m.mean.cwiseProduct(d_var);
  out.d_second = d_var;
  return out;
}

PviOutcome pvi_round(const GaussianNatParams& global, const GaussianNatParams& local,
                     const LocalLoss& loss, const PviConfig& cfg, int round) {
  return natural_gradient_round(global, local, loss, cfg, round, +1.0);
}

PviOutcome ulpvi_round(const GaussianNatParams& global, const GaussianNatParams& local,
                       const LocalLoss& loss, const PviConfig& cfg, int round) {
  return natural_gradient_round(global, local, loss, cfg, round, -1.0);
}

}  // namespace steinfed
