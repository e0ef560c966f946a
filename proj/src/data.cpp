#include "steinfed/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "steinfed/errors.hpp"

namespace steinfed {
namespace {

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > buf.size()) throw DataError(path + ": truncated IDX header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

Rng seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

Matrix class_centres(const SyntheticConfig& cfg) {
  Rng rng = seeded(cfg.seed, 0xce);
  std::normal_distribution<double> g(0.0, cfg.separation);
  Matrix centres(cfg.classes, cfg.dim);
  for (int c = 0; c < cfg.classes; ++c) {
    for (int j = 0; j < cfg.dim; ++j) centres(c, j) = g(rng);
  }
  return centres;
}

Dataset draw_blobs(const SyntheticConfig& cfg, const Matrix& centres, Rng& rng, int count) {
  std::normal_distribution<double> g(0.0, cfg.noise);
  Dataset out;
  out.num_classes = cfg.classes;
  out.inputs.resize(count, cfg.dim);
  out.labels.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int c = i % cfg.classes;
    out.labels[static_cast<std::size_t>(i)] = c;
    for (int j = 0; j < cfg.dim; ++j) out.inputs(i, j) = centres(c, j) + g(rng);
  }
  return out;
}

void check_synthetic(const SyntheticConfig& cfg, int count) {
  if (cfg.classes < 1 || cfg.dim < 1 || count < 1) {
    throw DataError("synthetic data needs positive classes, dim and count");
  }
  if (!(cfg.noise > 0.0) || !(cfg.separation >= 0.0)) throw DataError("synthetic data: bad scales");
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  const auto buf = read_all(path);
  if (buf.empty()) throw DataError(path + ": truncated IDX file (empty)");
  const std::uint32_t magic = read_be32(buf, 0, path);
  if (magic != kIdxImageMagic) throw DataError(path + ": bad IDX image magic");
  const std::uint32_t count = read_be32(buf, 4, path);
  const std::uint32_t rows = read_be32(buf, 8, path);
  const std::uint32_t cols = read_be32(buf, 12, path);
  const std::size_t pixels = std::size_t{rows} * cols;
  if (buf.size() < 16 + std::size_t{count} * pixels) throw DataError(path + ": truncated IDX image data");

  IdxImages out;
  out.count = static_cast<int>(count);
  out.rows = static_cast<int>(rows);
  out.cols = static_cast<int>(cols);
  out.pixels.resize(count, static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      out.pixels(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
          buf[16 + i * pixels + p] / 255.0;
    }
  }
  return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
  const auto buf = read_all(path);
  if (buf.empty()) throw DataError(path + ": truncated IDX file (empty)");
  const std::uint32_t magic = read_be32(buf, 0, path);
  if (magic != kIdxLabelMagic) throw DataError(path + ": bad IDX label magic");
  const std::uint32_t count = read_be32(buf, 4, path);
  if (buf.size() < 8 + std::size_t{count}) throw DataError(path + ": truncated IDX label data");
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = buf[8 + i];
    if (labels[i] > 9) throw DataError(path + ": label out of range 0..9");
  }
  return labels;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  IdxImages images = load_idx_images(images_path);
  std::vector<int> labels = load_idx_labels(labels_path);
  if (labels.size() != static_cast<std::size_t>(images.count)) {
    throw DataError("IDX image/label count mismatch: " + std::to_string(images.count) + " vs " +
                    std::to_string(labels.size()));
  }
  return {std::move(images.pixels), std::move(labels), 10};
}

Dataset load_synthetic(const SyntheticConfig& cfg) {
  check_synthetic(cfg, cfg.count);
  const Matrix centres = class_centres(cfg);
  Rng rng = seeded(cfg.seed, 0xda7a);
  return draw_blobs(cfg, centres, rng, cfg.count);
}

Dataset load_synthetic_split(const SyntheticConfig& cfg, std::uint64_t draw_seed, int count) {
  check_synthetic(cfg, count);
  const Matrix centres = class_centres(cfg);
  Rng rng = seeded(draw_seed, 0x7e57);
  return draw_blobs(cfg, centres, rng, count);
}

std::vector<Dataset> partition_non_iid(const Dataset& data, int agents, int labels_per_agent,
                                       int examples_per_agent, std::uint64_t seed) {
  if (agents < 1 || labels_per_agent < 1 || examples_per_agent < 1) {
    throw DataError("partition: agents, labels_per_agent and examples_per_agent must be positive");
  }
  if (agents * labels_per_agent != data.num_classes) {
    throw DataError("partition: agents * labels_per_agent must equal the number of classes (" +
                    std::to_string(data.num_classes) + ")");
  }
  if (examples_per_agent % labels_per_agent != 0) {
    throw DataError("partition: examples_per_agent must split evenly across labels");
  }
  const int per_label = examples_per_agent / labels_per_agent;

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_classes));
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  }
  Rng rng = seeded(seed, 0x5a4d);
  for (auto& rows : by_class) {
    if (rows.size() < static_cast<std::size_t>(per_label)) {
      throw DataError("partition: insufficient examples for a class (need " +
                      std::to_string(per_label) + ", have " + std::to_string(rows.size()) + ")");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
  }

  std::vector<Dataset> shards;
  for (int k = 0; k < agents; ++k) {
    Dataset shard;
    shard.num_classes = data.num_classes;
    shard.inputs.resize(examples_per_agent, data.inputs.cols());
    int row = 0;
    for (int j = 0; j < labels_per_agent; ++j) {
      const int label = k * labels_per_agent + j;
      const auto& rows = by_class[static_cast<std::size_t>(label)];
      for (int e = 0; e < per_label; ++e) {
        shard.inputs.row(row++) = data.inputs.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(e)]));
        shard.labels.push_back(label);
      }
    }
    shards.push_back(std::move(shard));
  }
  return shards;
}

Dataset filter_classes(const Dataset& data, const std::vector<int>& classes) {
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (std::find(classes.begin(), classes.end(), data.labels[i]) != classes.end()) {
      keep.push_back(static_cast<Eigen::Index>(i));
    }
  }
  Dataset out;
  out.num_classes = data.num_classes;
  out.inputs.resize(static_cast<Eigen::Index>(keep.size()), data.inputs.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.inputs.row(static_cast<Eigen::Index>(r)) = data.inputs.row(keep[r]);
    out.labels.push_back(data.labels[static_cast<std::size_t>(keep[r])]);
  }
  return out;
}

}  // namespace steinfed
