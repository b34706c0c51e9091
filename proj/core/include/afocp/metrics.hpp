#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afocp/calibration.hpp"

namespace afocp {

struct TrajectoryPoint {
  long long t = 0;             // 1-based step index
  double running_coverage = 0.0;
  double running_length = 0.0;  // excludes infinite-length steps
};

/// Time-averaged coverage and interval-length accumulator. Coverage counts
/// 1 - err from the score-space test; infinite-width steps are excluded from
/// the length average and counted separately.
class MetricsAccumulator {
 public:
  void record(std::span<const double> y, const PredictionInterval& interval, int err);

  long long step_count() const { return steps_; }
  long long covered_count() const { return covered_; }
  long long infinite_length_steps() const { return infinite_steps_; }
  double coverage() const;
  double mean_length() const;
  const std::vector<TrajectoryPoint>& trajectory() const { return trajectory_; }

 private:
  long long steps_ = 0;
  long long covered_ = 0;
  long long infinite_steps_ = 0;
  double length_sum_ = 0.0;
  std::vector<TrajectoryPoint> trajectory_;
};

/// Mean per-dimension spread of the head's outputs over the feature ball of
/// diameter M centered at x_feature, certified from above by interval bound
/// propagation. Zero at M = 0 and non-decreasing in M.
double h_operator(const MlpParams& head, double diameter, std::span<const double> x_feature);

/// Empirical sides of the three time-averaged regularity statistics relating
/// feature-space quantiles to output-space lengths: length preservation,
/// expansion (unit Hoelder constant and exponent) and quantile stability
/// (left side only). Purely diagnostic; no verdict is attached because the
/// constants in the statements are unknown.
struct AssumptionReport {
  long long steps = 0;
  double length_preservation_lhs = 0.0;  // avg_t Q_{1-a_t}( H(window feature lengths) )
  double length_preservation_rhs = 0.0;  // avg_t Q_{1-a_t}( window output lengths )
  double expansion_lhs = 0.0;            // avg_t mean | Q(Mf) - Mf |
  double expansion_rhs = 0.0;            // avg_t mean [ Q(H(Mf)) - H(Mf) ]
  double quantile_stability_lhs = 0.0;   // avg_t | H(Q(Mf), x_t) - mean H(Q(Mf), window) |
};

AssumptionReport assumption_diagnostics(const RunDiagLog& log, const TwoStageModel& model);

std::string assumption_report_json(const AssumptionReport& report);

/// Final per-run summary written next to each event log.
struct RunSummary {
  std::string method;
  std::string dataset;
  double alpha = 0.0;
  int window = 0;        // L
  int feature_dim = 0;   // D
  std::uint64_t seed = 0;
  long long steps = 0;   // T
  double coverage = 0.0;
  double mean_length = 0.0;
  long long inf_length_steps = 0;
  double theorem1_bound_lhs = 0.0;
  double theorem1_bound_rhs = 0.0;
  std::string sweep_var;      // empty when not part of a sweep
  double sweep_value = 0.0;
};

void write_summary_json(const RunSummary& summary, const std::string& path);
RunSummary read_summary_json(const std::string& path);

}  // namespace afocp
