#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steinfed/data.hpp"
#include "steinfed/federation.hpp"
#include "steinfed/kernels.hpp"
#include "steinfed/metrics.hpp"
#include "steinfed/mlp.hpp"
#include "steinfed/pvi.hpp"

namespace steinfed {

enum class ExperimentKind { kGaussianMixture, kMultilabel };
enum class Method { kDsvgd, kForgetSvgd, kRetrain, kPvi, kUlpvi };

const char* experiment_name(ExperimentKind kind);
const char* method_name(Method method);

// Particle methods run DSVGD for learning; parametric ones run PVI.
bool is_parametric(Method method);

struct MixtureComponentSpec {
  double weight = 1.0;
  double mean = 0.0;
  double variance = 1.0;
};

struct MixtureSettings {
  double prior_lo = -10.0;
  double prior_hi = 10.0;
  Grid1D grid;
  // One mixture per agent, agent k at index k - 1.
  std::vector<std::vector<MixtureComponentSpec>> agents = {
      {{1.0, 1.0, 4.0}},
      {{1.0, -3.0, 1.0}, {1.0, 3.0, 2.0}},
  };
};

enum class DataSource { kSynthetic, kIdx };

struct IdxPaths {
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
};

struct MultilabelSettings {
  DataSource source = DataSource::kSynthetic;
  SyntheticConfig synthetic;
  int test_count = 400;
  IdxPaths idx;
  int labels_per_agent = 2;
  int examples_per_agent = 100;
  double prior_variance = 1.0;
  MlpPretrainConfig pretrain;
};

struct PviSettings {
  PviConfig pvi;
  double prior_mean = 0.0;
  double prior_variance = 16.0;
};

struct RetrainSettings {
  RetrainMode mode = RetrainMode::kCentralized;
  int budget = 200;
};

struct OutputSettings {
  std::string dir = "out";
  // Off by default so that metrics files are byte-reproducible; wall_ms is then 0.
  bool record_wall_time = false;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kGaussianMixture;
  Method method = Method::kDsvgd;
  std::uint64_t seed = 0;
  int particles = 100;
  int agents = 2;
  std::vector<int> forget;  // 1-based agent ids
  int learn_rounds = 10;
  int unlearn_rounds = 1;
  RetrainSettings retrain;
  ProtocolConfig protocol;
  KernelConfig kernel;
  KdeConfig kde;
  PviSettings pvi;
  MixtureSettings mixture;
  MultilabelSettings multilabel;
  OutputSettings output;
};

/// Parses and validates a JSON config. Missing keys keep their defaults;
/// unknown keys and invalid values raise ConfigError naming the field path.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Checks cross-field constraints. Called by parse_config.
void validate(const ExperimentConfig& cfg);

// Canonical JSON form of a config, with every field present.
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace steinfed
