#include "steinfed/models.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "steinfed/errors.hpp"

namespace steinfed {
namespace {

constexpr double kClampMargin = 1e-6;

double log_sum_exp(const Vector& v) {
  const double top = v.maxCoeff();
  return top + std::log((v.array() - top).exp().sum());
}

// Row-wise softmax of a logits matrix.
Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  const Vector z = p.rowwise().sum();
  return z.cwiseInverse().asDiagonal() * p;
}

}  // namespace

Prior::Prior(Kind kind, Vector a, Vector b) : kind_(kind), a_(std::move(a)), b_(std::move(b)) {
  if (a_.size() != b_.size() || a_.size() == 0) throw NumericError("prior: bad dimensions");
  if (kind_ == Kind::kUniform && !(a_.array() < b_.array()).all()) {
    throw NumericError("uniform prior needs lo < hi");
  }
  if (kind_ == Kind::kGaussian && !(b_.array() > 0.0).all()) {
    throw NumericError("gaussian prior needs positive variance");
  }
}

Prior Prior::uniform(Vector lo, Vector hi) { return Prior(Kind::kUniform, std::move(lo), std::move(hi)); }

Prior Prior::uniform(std::size_t dim, double lo, double hi) {
  const auto d = static_cast<Eigen::Index>(dim);
  return uniform(Vector::Constant(d, lo), Vector::Constant(d, hi));
}

Prior Prior::gaussian(Vector mean, Vector variance) {
  return Prior(Kind::kGaussian, std::move(mean), std::move(variance));
}

Prior Prior::gaussian(std::size_t dim, double mean, double variance) {
  const auto d = static_cast<Eigen::Index>(dim);
  return gaussian(Vector::Constant(d, mean), Vector::Constant(d, variance));
}

bool Prior::contains(const Vector& theta) const {
  if (theta.size() != a_.size()) return false;
  if (kind_ == Kind::kGaussian) return theta.allFinite();
  return (theta.array() > a_.array()).all() && (theta.array() < b_.array()).all();
}

double Prior::log_density(const Vector& theta) const {
  if (theta.size() != a_.size()) throw NumericError("prior: dimension mismatch");
  if (kind_ == Kind::kUniform) {
    if (!contains(theta)) return -std::numeric_limits<double>::infinity();
    return -(b_ - a_).array().log().sum();
  }
  const auto z = (theta - a_).array().square() / b_.array();
  return -0.5 * (z + (2.0 * std::numbers::pi * b_.array()).log()).sum();
}

Vector Prior::sample(Rng& rng) const {
  Vector out(a_.size());
  for (Eigen::Index c = 0; c < a_.size(); ++c) {
    if (kind_ == Kind::kUniform) {
      std::uniform_real_distribution<double> u(a_(c), b_(c));
      out(c) = u(rng);
    } else {
      std::normal_distribution<double> g(a_(c), std::sqrt(b_(c)));
      out(c) = g(rng);
    }
  }
  return out;
}

ParticleSet Prior::sample(std::size_t count, Rng& rng) const {
  ParticleSet out(count, dim());
  for (std::size_t n = 0; n < count; ++n) out[n] = sample(rng);
  return out;
}

void Prior::clamp(ParticleSet& particles) const {
  if (kind_ != Kind::kUniform) return;
  Matrix& m = particles.matrix();
  const Vector lo = a_.array() + kClampMargin;
  const Vector hi = b_.array() - kClampMargin;
  for (Eigen::Index n = 0; n < m.cols(); ++n) {
    m.col(n) = m.col(n).cwiseMax(lo).cwiseMin(hi);
  }
}

Vector prior_log_grad(const Prior& prior, const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != prior.dim()) {
    throw NumericError("prior: dimension mismatch");
  }
  if (prior.kind() == Prior::Kind::kUniform) {
    if (!prior.contains(theta)) throw NumericError("prior: point outside uniform support");
    return Vector::Zero(theta.size());
  }
  return -((theta - prior.first()).array() / prior.second().array()).matrix();
}

// --- Gaussian mixture -------------------------------------------------------

GaussianMixtureLoss::GaussianMixtureLoss(std::vector<Component> components)
    : components_(std::move(components)) {
  if (components_.empty()) throw NumericError("mixture loss needs at least one component");
  const auto d = components_.front().mean.size();
  for (const auto& c : components_) {
    if (!(c.weight > 0.0)) throw NumericError("mixture weights must be positive");
    if (c.mean.size() != d || c.variance.size() != d) throw NumericError("mixture: ragged components");
    if (!(c.variance.array() > 0.0).all()) throw NumericError("mixture variances must be positive");
  }
}

std::size_t GaussianMixtureLoss::dim() const {
  return static_cast<std::size_t>(components_.front().mean.size());
}

double GaussianMixtureLoss::log_mixture(const Vector& theta) const {
  if (static_cast<std::size_t>(theta.size()) != dim()) throw NumericError("mixture: dimension mismatch");
  Vector terms(static_cast<Eigen::Index>(components_.size()));
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    const double quad = ((theta - c.mean).array().square() / c.variance.array()).sum();
    const double log_det = (2.0 * std::numbers::pi * c.variance.array()).log().sum();
    terms(static_cast<Eigen::Index>(i)) = std::log(c.weight) - 0.5 * (quad + log_det);
  }
  return log_sum_exp(terms);
}

double GaussianMixtureLoss::loss(const Vector& theta, double alpha) const {
  return -alpha * log_mixture(theta);
}

Vector GaussianMixtureLoss::neg_loss_grad(const Vector& theta, double alpha) const {
  if (!(alpha > 0.0)) throw NumericError("alpha must be positive");
  if (static_cast<std::size_t>(theta.size()) != dim()) throw NumericError("mixture: dimension mismatch");
  const auto m = static_cast<Eigen::Index>(components_.size());
  Vector terms(m);
  Matrix scores(theta.size(), m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& c = components_[static_cast<std::size_t>(i)];
    const Vector z = (theta - c.mean).array() / c.variance.array();
    const double quad = (z.array() * (theta - c.mean).array()).sum();
    const double log_det = (2.0 * std::numbers::pi * c.variance.array()).log().sum();
    terms(i) = std::log(c.weight) - 0.5 * (quad + log_det);
    scores.col(i) = -z;
  }
  Vector w = (terms.array() - terms.maxCoeff()).exp();
  w /= w.sum();
  return scores * w;
}

Vector mixture_neg_loss_grad(const GaussianMixtureLoss& loss, const Vector& theta, double alpha) {
  return loss.neg_loss_grad(theta, alpha);
}

// --- Softmax head -----------------------------------------------------------

Matrix HeadLayout::logits(const Vector& theta, const Matrix& features) const {
  if (static_cast<std::size_t>(theta.size()) != param_count()) {
    throw NumericError("softmax head: parameter layout mismatch");
  }
  if (features.cols() != feature_dim) throw NumericError("softmax head: feature dimension mismatch");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajor> w(theta.data(), feature_dim + 1, num_classes);
  Matrix out = features * w.topRows(feature_dim);
  out.rowwise() += w.row(feature_dim);
  return out;
}

SoftmaxHeadLoss::SoftmaxHeadLoss(Matrix features, std::vector<int> labels, int num_classes)
    : features_(std::move(features)), labels_(std::move(labels)) {
  if (num_classes < 1) throw NumericError("softmax head needs at least one class");
  if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
    throw NumericError("softmax head: feature/label count mismatch");
  }
  for (int y : labels_) {
    if (y < 0 || y >= num_classes) throw NumericError("softmax head: label out of range");
  }
  layout_ = {static_cast<int>(features_.cols()), num_classes};
}

void SoftmaxHeadLoss::check(const Vector& theta) const {
  if (static_cast<std::size_t>(theta.size()) != layout_.param_count()) {
    throw NumericError("softmax head: parameter layout mismatch");
  }
}

double SoftmaxHeadLoss::loss(const Vector& theta, double /*alpha*/) const {
  check(theta);
  if (labels_.empty()) return 0.0;
  const Matrix z = layout_.logits(theta, features_);
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    total += log_sum_exp(z.row(i).transpose()) - z(i, labels_[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(labels_.size());
}

Vector SoftmaxHeadLoss::neg_loss_grad(const Vector& theta, double alpha) const {
  if (!(alpha > 0.0)) throw NumericError("alpha must be positive");
  check(theta);
  const int f = layout_.feature_dim;
  const int k = layout_.num_classes;
  Vector out = Vector::Zero(static_cast<Eigen::Index>(layout_.param_count()));
  if (labels_.empty()) return out;

  // dL/dlogits = softmax - onehot, averaged over the shard.
  Matrix delta = softmax_rows(layout_.logits(theta, features_));
  for (std::size_t i = 0; i < labels_.size(); ++i) delta(static_cast<Eigen::Index>(i), labels_[i]) -= 1.0;
  delta /= static_cast<double>(labels_.size());

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMajor> g(out.data(), f + 1, k);
  g.topRows(f) = features_.transpose() * delta;
  g.row(f) = delta.colwise().sum();
  return -out / alpha;
}

Vector softmax_neg_loss_grad(const SoftmaxHeadLoss& loss, const Vector& theta, double alpha) {
  return loss.neg_loss_grad(theta, alpha);
}

// --- Sum --------------------------------------------------------------------

SumLoss::SumLoss(std::vector<std::shared_ptr<const LocalLoss>> parts, std::size_t dim)
    : parts_(std::move(parts)), dim_(dim) {
  for (const auto& p : parts_) {
    if (!p || p->dim() != dim_) throw NumericError("sum loss: dimension mismatch");
  }
}

double SumLoss::loss(const Vector& theta, double alpha) const {
  double total = 0.0;
  for (const auto& p : parts_) total += p->loss(theta, alpha);
  return total;
}

Vector SumLoss::neg_loss_grad(const Vector& theta, double alpha) const {
  Vector total = Vector::Zero(static_cast<Eigen::Index>(dim_));
  for (const auto& p : parts_) total += p->neg_loss_grad(theta, alpha);
  return total;
}

// --- Accuracy ---------------------------------------------------------------

double AccuracyReport::macro(const std::vector<int>& classes) const {
  if (classes.empty()) throw NumericError("macro accuracy over an empty class set");
  double total = 0.0;
  for (int c : classes) {
    auto it = per_class.find(c);
    if (it == per_class.end()) throw NumericError("macro accuracy: class " + std::to_string(c) + " not evaluated");
    total += it->second;
  }
  return total / static_cast<double>(classes.size());
}

AccuracyReport predict_accuracy(const ParticleSet& particles, const HeadLayout& layout,
                                const Matrix& features, const std::vector<int>& labels,
                                const std::vector<int>& classes) {
  if (particles.empty()) throw NumericError("accuracy: empty particle set");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw NumericError("accuracy: feature/label count mismatch");
  }
  std::map<int, int> seen;
  std::map<int, int> correct;
  for (int c : classes) seen[c] = 0, correct[c] = 0;

  Matrix prob = Matrix::Zero(features.rows(), layout.num_classes);
  for (std::size_t n = 0; n < particles.size(); ++n) {
    prob += softmax_rows(layout.logits(particles[n], features));
  }
  prob /= static_cast<double>(particles.size());

  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = seen.find(labels[i]);
    if (it == seen.end()) continue;
    const auto row = static_cast<Eigen::Index>(i);
    int best = 0;
    for (int c = 1; c < layout.num_classes; ++c) {
      if (prob(row, c) > prob(row, best)) best = c;
    }
    ++it->second;
    if (best == labels[i]) ++correct[labels[i]];
  }
  AccuracyReport report;
  for (int c : classes) {
    if (seen[c] == 0) throw NumericError("accuracy: no test examples for class " + std::to_string(c));
    report.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(seen[c]);
  }
  return report;
}

}  // namespace steinfed
