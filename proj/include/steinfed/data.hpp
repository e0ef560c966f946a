#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steinfed/dataset.hpp"

namespace steinfed {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  Matrix pixels;  // count x (rows * cols), scaled to [0, 1]
};

IdxImages load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

/// Images and labels as a 10-class dataset; counts must agree.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

struct SyntheticConfig {
  int classes = 4;
  int dim = 10;
  int count = 400;
  double separation = 3.0;  // std of the class centres
  double noise = 1.0;       // within-class std
  std::uint64_t seed = 0;
};

/// Gaussian blobs, one per class. Label i % classes for example i, so the
/// classes are balanced to within one example.
Dataset load_synthetic(const SyntheticConfig& cfg);

/// Same class centres as load_synthetic(cfg), fresh draws from `draw_seed`.
Dataset load_synthetic_split(const SyntheticConfig& cfg, std::uint64_t draw_seed, int count);

/// Covering non-iid split: agent k receives classes [k * labels_per_agent,
/// (k + 1) * labels_per_agent) with examples_per_agent examples spread evenly
/// over them, drawn without replacement in a seeded order.
std::vector<Dataset> partition_non_iid(const Dataset& data, int agents, int labels_per_agent,
                                       int examples_per_agent, std::uint64_t seed);

// Rows whose label is in `classes`.
Dataset filter_classes(const Dataset& data, const std::vector<int>& classes);

}  // namespace steinfed
