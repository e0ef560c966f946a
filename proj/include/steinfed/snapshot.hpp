#pragma once

#include <cstdint>
#include <string>

#include "steinfed/particles.hpp"

namespace steinfed {

/// Saved global state: a header line "N d round seed" followed by N rows of d
/// values. Particle methods store one particle per row; the parametric
/// baselines store eta1 and eta2 as two rows.
struct Snapshot {
  Matrix rows;  // N x d
  int round = 0;
  std::uint64_t seed = 0;
};

Snapshot snapshot_of(const ParticleSet& particles, int round, std::uint64_t seed);
ParticleSet particles_of(const Snapshot& snapshot);

std::string format_snapshot(const Snapshot& snapshot);
Snapshot parse_snapshot(const std::string& text);

void write_snapshot(const std::string& path, const Snapshot& snapshot);
// Throws DataError if the file is missing or malformed.
Snapshot read_snapshot(const std::string& path);

}  // namespace steinfed
