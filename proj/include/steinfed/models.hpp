#pragma once

#include <map>
#include <memory>
#include <random>
#include <vector>

#include "steinfed/dataset.hpp"
#include "steinfed/particles.hpp"

namespace steinfed {


/// Prior p0 over model parameters, factorized per coordinate.
class Prior {
 public:
  enum class Kind { kUniform, kGaussian };

  static Prior uniform(Vector lo, Vector hi);
  static Prior uniform(std::size_t dim, double lo, double hi);
  static Prior gaussian(Vector mean, Vector variance);
  static Prior gaussian(std::size_t dim, double mean, double variance);

  Kind kind() const { return kind_; }
  std::size_t dim() const { return static_cast<std::size_t>(a_.size()); }
  // (lo, hi) for uniform, (mean, variance) for gaussian.
  const Vector& first() const { return a_; }
  const Vector& second() const { return b_; }

  bool contains(const Vector& theta) const;
  double log_density(const Vector& theta) const;
  Vector sample(Rng& rng) const;
  ParticleSet sample(std::size_t count, Rng& rng) const;

  // Moves coordinates outside a uniform support to the boundary minus 1e-6.
  // No-op for gaussian priors.
  void clamp(ParticleSet& particles) const;

 private:
  Prior(Kind kind, Vector a, Vector b);
  Kind kind_;
  Vector a_;
  Vector b_;
};

/// grad log p0(theta). Throws NumericError outside a uniform support.
Vector prior_log_grad(const Prior& prior, const Vector& theta);

/// An agent's training loss L_k with temperature-scaled negative gradient.
class LocalLoss {
 public:
  virtual ~LocalLoss() = default;
  virtual std::size_t dim() const = 0;
  virtual double loss(const Vector& theta, double alpha) const = 0;
  // (1/alpha) * (-grad L_k(theta))
  virtual Vector neg_loss_grad(const Vector& theta, double alpha) const = 0;
};

/// L_k(theta) = -alpha * log sum_i w_i N(theta; mu_i, diag(var_i)), so the
/// local posterior is p0(theta) times the mixture.
class GaussianMixtureLoss final : public LocalLoss {
 public:
  struct Component {
    double weight;
    Vector mean;
    Vector variance;
  };

  explicit GaussianMixtureLoss(std::vector<Component> components);

  const std::vector<Component>& components() const { return components_; }
  double log_mixture(const Vector& theta) const;

  std::size_t dim() const override;
  double loss(const Vector& theta, double alpha) const override;
  Vector neg_loss_grad(const Vector& theta, double alpha) const override;

 private:
  std::vector<Component> components_;
};

Vector mixture_neg_loss_grad(const GaussianMixtureLoss& loss, const Vector& theta, double alpha);

/// Flattened softmax head: (feature_dim + 1) rows of num_classes entries,
/// row-major, the last row holding the biases.
struct HeadLayout {
  int feature_dim = 0;
  int num_classes = 0;

  std::size_t param_count() const {
    return static_cast<std::size_t>((feature_dim + 1) * num_classes);
  }
  // Logits for every row of `features`.
  Matrix logits(const Vector& theta, const Matrix& features) const;
};

/// Mean cross-entropy of the softmax head over a shard.
class SoftmaxHeadLoss final : public LocalLoss {
 public:
  SoftmaxHeadLoss(Matrix features, std::vector<int> labels, int num_classes);

  const HeadLayout& layout() const { return layout_; }
  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }

  std::size_t dim() const override { return layout_.param_count(); }
  double loss(const Vector& theta, double alpha) const override;
  Vector neg_loss_grad(const Vector& theta, double alpha) const override;

 private:
  void check(const Vector& theta) const;
  Matrix features_;
  std::vector<int> labels_;
  HeadLayout layout_;
};

Vector softmax_neg_loss_grad(const SoftmaxHeadLoss& loss, const Vector& theta, double alpha);

/// Sum of several losses, e.g. the pooled retained shards.
class SumLoss final : public LocalLoss {
 public:
  explicit SumLoss(std::vector<std::shared_ptr<const LocalLoss>> parts, std::size_t dim);
  std::size_t dim() const override { return dim_; }
  double loss(const Vector& theta, double alpha) const override;
  Vector neg_loss_grad(const Vector& theta, double alpha) const override;

 private:
  std::vector<std::shared_ptr<const LocalLoss>> parts_;
  std::size_t dim_;
};

struct AccuracyReport {
  std::map<int, double> per_class;
  // Unweighted mean of per-class accuracy over `classes`.
  double macro(const std::vector<int>& classes) const;
};

/// Bayesian model average over particles: softmax probabilities are averaged,
/// the argmax is taken (ties to the lowest class index) and accuracy is
/// reported per class for `classes`.
AccuracyReport predict_accuracy(const ParticleSet& particles, const HeadLayout& layout,
                                const Matrix& features, const std::vector<int>& labels,
                                const std::vector<int>& classes);

}  // namespace steinfed
