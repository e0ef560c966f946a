#pragma once

#include <functional>
#include <string>
#include <vector>

namespace steinfed {

struct Grid1D {
  double lo = -10.0;
  double hi = 10.0;
  int points = 2001;
};

using LogDensity1D = std::function<double(double)>;

/// KL(q || p) between two unnormalized 1D log-densities, each normalized by
/// trapezoidal integration on the grid. p is clamped to >= 1e-300. Throws
/// NumericError if either density puts more than 1e-3 of its mass in the
/// outermost grid cell on either side.
double grid_kl(const LogDensity1D& log_q, const LogDensity1D& log_p, const Grid1D& grid);

/// One row of the metrics CSV. Fields that do not apply to an experiment are NaN.
struct MetricRecord {
  int round = 0;
  std::string phase;
  double forgotten_acc;
  double retained_acc;
  double kl;
  double forgot_loss;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "round,phase,forgotten_acc,retained_acc,kl,forgot_loss,wall_ms";

std::string format_metric_row(const MetricRecord& r);
MetricRecord parse_metric_row(const std::string& line);
std::vector<MetricRecord> read_metrics_csv(const std::string& path);

/// Forgetting is reached at the first record that starts a run of `streak`
/// consecutive records with forgotten_acc < chance + margin and
/// retained_acc >= reference_retained - tolerance. Returns that record's
/// round, or -1.
int first_forgetting_round(const std::vector<MetricRecord>& records, double chance,
                           double reference_retained, double margin = 0.05,
                           double tolerance = 0.10, int streak = 5);

}  // namespace steinfed
