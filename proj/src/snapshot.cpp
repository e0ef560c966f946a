#include "steinfed/snapshot.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "steinfed/errors.hpp"

namespace steinfed {

Snapshot snapshot_of(const ParticleSet& particles, int round, std::uint64_t seed) {
  return Snapshot{particles.matrix().transpose(), round, seed};
}

ParticleSet particles_of(const Snapshot& snapshot) {
  return ParticleSet(Matrix(snapshot.rows.transpose()));
}

std::string format_snapshot(const Snapshot& snapshot) {
  std::string out = std::to_string(snapshot.rows.rows()) + " " +
                    std::to_string(snapshot.rows.cols()) + " " + std::to_string(snapshot.round) +
                    " " + std::to_string(snapshot.seed) + "\n";
  char buf[40];
  for (Eigen::Index i = 0; i < snapshot.rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < snapshot.rows.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", snapshot.rows(i, j));
      if (j > 0) out += ' ';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Snapshot parse_snapshot(const std::string& text) {
  std::istringstream in(text);
  long long n = 0, d = 0, round = 0;
  unsigned long long seed = 0;
  std::string header;
  if (!std::getline(in, header)) throw DataError("snapshot: empty file");
  std::istringstream h(header);
  if (!(h >> n >> d >> round >> seed) || n < 0 || d < 0) {
    throw DataError("snapshot: bad header '" + header + "' (expected 'N d round seed')");
  }
  Snapshot s;
  s.rows.resize(n, d);
  s.round = static_cast<int>(round);
  s.seed = seed;
  for (long long i = 0; i < n; ++i) {
    std::string line;
    if (!std::getline(in, line)) {
      throw DataError("snapshot: expected " + std::to_string(n) + " rows, found " +
                      std::to_string(i));
    }
    std::istringstream row(line);
    for (long long j = 0; j < d; ++j) {
      std::string token;
      if (!(row >> token)) {
        throw DataError("snapshot: row " + std::to_string(i + 1) + " has fewer than " +
                        std::to_string(d) + " values");
      }
      char* end = nullptr;
      const double v = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0') {
        throw DataError("snapshot: bad number '" + token + "' in row " + std::to_string(i + 1));
      }
      s.rows(i, j) = v;
    }
    std::string extra;
    if (row >> extra) {
      throw DataError("snapshot: row " + std::to_string(i + 1) + " has more than " +
                      std::to_string(d) + " values");
    }
  }
  return s;
}

void write_snapshot(const std::string& path, const Snapshot& snapshot) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("snapshot: cannot write '" + path + "'");
  out << format_snapshot(snapshot);
  if (!out) throw DataError("snapshot: write failed for '" + path + "'");
}

Snapshot read_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("snapshot: cannot open '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_snapshot(text.str());
}

}  // namespace steinfed
