#include "steinfed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "steinfed/errors.hpp"

namespace steinfed {
namespace {

constexpr double kDensityFloor = 1e-300;
constexpr double kEdgeMassLimit = 1e-3;

// Normalized density values on the grid, trapezoid weights in `w`.
std::vector<double> normalize(const LogDensity1D& log_f, const std::vector<double>& xs,
                              const std::vector<double>& w, const char* name) {
  std::vector<double> lv(xs.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    lv[i] = log_f(xs[i]);
    if (std::isnan(lv[i])) throw NumericError(std::string("grid_kl: NaN log-density in ") + name);
    top = std::max(top, lv[i]);
  }
  if (!std::isfinite(top)) throw NumericError(std::string("grid_kl: ") + name + " has no mass on the grid");
  double mass = 0.0;
  std::vector<double> f(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    f[i] = std::exp(lv[i] - top);
    mass += w[i] * f[i];
  }
  for (double& v : f) v /= mass;

  const std::size_t last = xs.size() - 1;
  const double left = 0.5 * (f[0] + f[1]) * (xs[1] - xs[0]);
  const double right = 0.5 * (f[last] + f[last - 1]) * (xs[last] - xs[last - 1]);
  if (left > kEdgeMassLimit || right > kEdgeMassLimit) {
    throw NumericError(std::string("grid_kl: grid too narrow for ") + name +
                       " (edge mass above 1e-3)");
  }
  return f;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double grid_kl(const LogDensity1D& log_q, const LogDensity1D& log_p, const Grid1D& grid) {
  if (grid.points < 3 || !(grid.hi > grid.lo)) throw NumericError("grid_kl: degenerate grid");
  const auto n = static_cast<std::size_t>(grid.points);
  const double dx = (grid.hi - grid.lo) / static_cast<double>(n - 1);
  std::vector<double> xs(n), w(n, dx);
  for (std::size_t i = 0; i < n; ++i) xs[i] = grid.lo + dx * static_cast<double>(i);
  w.front() = w.back() = 0.5 * dx;

  const auto q = normalize(log_q, xs, w, "q");
  const auto p = normalize(log_p, xs, w, "p");
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (q[i] <= 0.0) continue;
    kl += w[i] * q[i] * (std::log(q[i]) - std::log(std::max(p[i], kDensityFloor)));
  }
  return std::max(kl, 0.0);
}

std::string format_metric_row(const MetricRecord& r) {
  std::ostringstream os;
  os << r.round << ',' << r.phase << ',' << fmt(r.forgotten_acc) << ',' << fmt(r.retained_acc)
     << ',' << fmt(r.kl) << ',' << fmt(r.forgot_loss) << ',' << fmt(r.wall_ms);
  return os.str();
}

MetricRecord parse_metric_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (cells.size() != 7) throw DataError("metrics row has " + std::to_string(cells.size()) + " fields");
  auto num = [](const std::string& s) {
    return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
  };
  MetricRecord r;
  r.round = std::stoi(cells[0]);
  r.phase = cells[1];
  r.forgotten_acc = num(cells[2]);
  r.retained_acc = num(cells[3]);
  r.kl = num(cells[4]);
  r.forgot_loss = num(cells[5]);
  r.wall_ms = num(cells[6]);
  return r;
}

std::vector<MetricRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics file " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw DataError(path + ": bad metrics header");
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_metric_row(line));
  }
  return out;
}

int first_forgetting_round(const std::vector<MetricRecord>& records, double chance,
                           double reference_retained, double margin, double tolerance,
                           int streak) {
  int run = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const bool ok = r.forgotten_acc < chance + margin &&
                    r.retained_acc >= reference_retained - tolerance;
    run = ok ? run + 1 : 0;
    if (run >= streak) return records[i + 1 - static_cast<std::size_t>(streak)].round;
  }
  return -1;
}

}  // namespace steinfed
