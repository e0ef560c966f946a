#pragma once

#include <cstdint>

#include "steinfed/dataset.hpp"

namespace steinfed {

enum class Activation { kRelu, kTanh };

struct MlpPretrainConfig {
  int hidden_units = 100;
  int epochs = 500;
  double step_size = 0.1;
  std::uint64_t seed = 0;
  Activation activation = Activation::kRelu;
};

/// Frozen first layer of the pretrained network: x -> act(W x + b).
struct FeatureMap {
  Matrix weights;  // hidden x input
  Vector bias;
  Activation activation = Activation::kRelu;

  int output_dim() const { return static_cast<int>(weights.rows()); }
  Matrix transform(const Matrix& inputs) const;
};

struct PretrainResult {
  FeatureMap features;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
};

/// Full-batch gradient descent on the cross-entropy of a one-hidden-layer
/// network. The trained softmax head is discarded; only the hidden layer is
/// kept as a feature map.
PretrainResult pretrain_map(const Dataset& data, const MlpPretrainConfig& cfg);

}  // namespace steinfed
