#include "steinfed/mlp.hpp"

#include <cmath>
#include <random>

#include "steinfed/errors.hpp"

namespace steinfed {
namespace {

Matrix activate(const Matrix& pre, Activation act) {
  if (act == Activation::kTanh) return pre.array().tanh().matrix();
  return pre.cwiseMax(0.0);
}

Matrix activate_grad(const Matrix& pre, const Matrix& post, Activation act) {
  if (act == Activation::kTanh) return (1.0 - post.array().square()).matrix();
  return (pre.array() > 0.0).cast<double>().matrix();
}

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  }
  return m;
}

}  // namespace

Matrix FeatureMap::transform(const Matrix& inputs) const {
  if (inputs.cols() != weights.cols()) throw NumericError("feature map: input dimension mismatch");
  Matrix pre = inputs * weights.transpose();
  pre.rowwise() += bias.transpose();
  return activate(pre, activation);
}

PretrainResult pretrain_map(const Dataset& data, const MlpPretrainConfig& cfg) {
  if (data.size() == 0) throw NumericError("pretrain: empty dataset");
  if (cfg.hidden_units < 1) throw NumericError("pretrain: hidden_units must be >= 1");
  if (cfg.epochs < 0) throw NumericError("pretrain: negative epoch count");
  if (data.num_classes < 1) throw NumericError("pretrain: no classes");

  const auto n = static_cast<Eigen::Index>(data.size());
  const auto p = data.inputs.cols();
  const Eigen::Index h = cfg.hidden_units;
  const Eigen::Index k = data.num_classes;

  std::mt19937_64 rng(cfg.seed);
  // Glorot-uniform weights, zero biases.
  FeatureMap fm;
  fm.activation = cfg.activation;
  fm.weights = uniform_init(h, p, std::sqrt(6.0 / static_cast<double>(p + h)), rng);
  fm.bias = Vector::Zero(h);
  Matrix w2 = uniform_init(k, h, std::sqrt(6.0 / static_cast<double>(h + k)), rng);
  Vector b2 = Vector::Zero(k);

  Matrix onehot = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, data.labels[static_cast<std::size_t>(i)]) = 1.0;

  double loss = 0.0;
  Matrix probs;
  auto forward = [&](Matrix& pre, Matrix& hidden) {
    pre = data.inputs * fm.weights.transpose();
    pre.rowwise() += fm.bias.transpose();
    hidden = activate(pre, fm.activation);
    Matrix logits = hidden * w2.transpose();
    logits.rowwise() += b2.transpose();
    const Vector top = logits.rowwise().maxCoeff();
    logits.colwise() -= top;
    probs = logits.array().exp().matrix();
    const Vector z = probs.rowwise().sum();
    probs = z.cwiseInverse().asDiagonal() * probs;
    loss = -(logits.array() * onehot.array()).sum() / static_cast<double>(n) +
           z.array().log().sum() / static_cast<double>(n);
  };

  Matrix pre, hidden;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    forward(pre, hidden);
    if (!std::isfinite(loss)) throw NumericError("pretrain: loss diverged; reduce step_size");
    const Matrix d_logits = (probs - onehot) / static_cast<double>(n);
    const Matrix g_w2 = d_logits.transpose() * hidden;
    const Vector g_b2 = d_logits.colwise().sum().transpose();
    const Matrix d_hidden = (d_logits * w2).cwiseProduct(activate_grad(pre, hidden, fm.activation));
    const Matrix g_w1 = d_hidden.transpose() * data.inputs;
    const Vector g_b1 = d_hidden.colwise().sum().transpose();
    w2 -= cfg.step_size * g_w2;
    b2 -= cfg.step_size * g_b2;
    fm.weights -= cfg.step_size * g_w1;
    fm.bias -= cfg.step_size * g_b1;
  }
  forward(pre, hidden);
  if (!std::isfinite(loss)) throw NumericError("pretrain: loss diverged; reduce step_size");

  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < k; ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    if (best == data.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return {std::move(fm), loss, static_cast<double>(hits) / static_cast<double>(n)};
}

}  // namespace steinfed
