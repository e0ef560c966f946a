#include "steinfed/particles.hpp"

#include "steinfed/errors.hpp"

namespace steinfed {

ParticleSet::ParticleSet(std::size_t count, std::size_t dim)
    : data_(Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count))) {}

ParticleSet::ParticleSet(Matrix columns) : data_(std::move(columns)) {}

ParticleSet ParticleSet::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const std::size_t d = rows.front().size();
  ParticleSet out(rows.size(), d);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    if (rows[n].size() != d) throw NumericError("ragged particle rows");
    for (std::size_t c = 0; c < d; ++c) out[n](static_cast<Eigen::Index>(c)) = rows[n][c];
  }
  return out;
}

Vector ParticleSet::mean() const {
  if (empty()) throw NumericError("mean of an empty particle set");
  return data_.rowwise().mean();
}

Vector ParticleSet::variance() const {
  const Vector mu = mean();
  const Matrix centered = data_.colwise() - mu;
  return centered.array().square().rowwise().mean();
}

}  // namespace steinfed
