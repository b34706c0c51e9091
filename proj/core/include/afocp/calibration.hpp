#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "afocp/attention.hpp"
#include "afocp/neuralnet.hpp"
#include "afocp/scores.hpp"

namespace afocp {

// ---------------------------------------------------------------------------
// Weighted score distribution and quantile
// ---------------------------------------------------------------------------

/// Finite score atoms with nonnegative weights plus an explicit +infinity
/// atom. Valid distributions have total weight 1 within 1e-9.
struct WeightedScoreDistribution {
  std::vector<std::pair<double, double>> atoms;  // (score, weight)
  double infinity_weight = 0.0;

  double total_weight() const;
  void validate() const;
};

/// The level-quantile of the weighted empirical distribution: the smallest
/// atom value whose cumulative weight reaches >= level, with +infinity as the
/// largest atom. Ties in score merge their weights. level < 0 -> -infinity,
/// level > 1 -> +infinity; level 0 returns the smallest atom.
double weighted_quantile(const WeightedScoreDistribution& dist, double level);

// ---------------------------------------------------------------------------
// Miscoverage-level tracker
// ---------------------------------------------------------------------------

/// Tracks alpha_t under the update alpha_{t+1} = alpha_t + lambda * (alpha -
/// err_t). The current level is evaluated in closed form from the integer
/// step and error counts, alpha_t = alpha_1 + lambda * (t * alpha - E_t),
/// which the update rule telescopes to exactly; this keeps the long-run
/// coverage identity verifiable at machine precision.
class AlphaTracker {
 public:
  AlphaTracker(double target_alpha, double lambda, double alpha_init);
  AlphaTracker(double target_alpha, double lambda) : AlphaTracker(target_alpha, lambda, target_alpha) {}

  double alpha() const;
  void update(int err);

  double target_alpha() const { return target_alpha_; }
  double lambda() const { return lambda_; }
  double alpha_initial() const { return alpha_init_; }
  long long step_count() const { return steps_; }
  long long err_count() const { return err_count_; }

  /// (alpha used at that step, err observed), oldest first.
  const std::vector<std::pair<double, int>>& history() const { return history_; }

  /// Sides of the long-run coverage bound after step_count() steps:
  /// lhs = (1/T) sum err_t, rhs = alpha + (alpha_1 - alpha_{T+1}) / (T lambda).
  double bound_lhs() const;
  double bound_rhs() const;

 private:
  double target_alpha_;
  double lambda_;
  double alpha_init_;
  long long steps_ = 0;
  long long err_count_ = 0;
  std::vector<std::pair<double, int>> history_;
};

// ---------------------------------------------------------------------------
// Prediction intervals and interval bound propagation
// ---------------------------------------------------------------------------

/// Per-dimension interval, possibly infinite. An empty set (quantile -inf)
/// is stored as a zero-width interval with quantile_used = -infinity.
struct PredictionInterval {
  Vector lower;
  Vector upper;
  double quantile_used = 0.0;

  int dims() const { return static_cast<int>(lower.size()); }
  bool is_empty() const;
  /// Mean width across dimensions; +infinity if any dimension is unbounded,
  /// 0 for the empty set.
  double mean_width() const;
  bool contains(std::span<const double> y) const;
};

/// Certified outer bound of the head's image of the feature ball
/// { v : ||v - center|| <= radius }: the ball's bounding box is pushed
/// through both affine layers and the ReLU with exact interval arithmetic.
/// radius = +infinity yields the all-infinite interval.
PredictionInterval interval_ibp(const MlpParams& head, std::span<const double> center_feature,
                                double radius);

// ---------------------------------------------------------------------------
// Calibrators
// ---------------------------------------------------------------------------

enum class Method { kOcp, kFocp, kAocp, kAfocp };

bool method_uses_attention(Method method);
ScoreKind method_score_kind(Method method);
std::string method_name(Method method);
Method parse_method(const std::string& name);

struct WindowEntry {
  Vector x;
  Vector y;
  Vector feature;  // f(x)
  double score;    // computed with the calibrator's score kind
};

struct CalibratorConfig {
  Method method = Method::kOcp;
  double target_alpha = 0.1;
  double lambda = 0.005;
  int window_length = 100;
  double alpha_init = -1.0;                   // < 0 means "use target_alpha"
  std::optional<InversionConfig> inversion;   // feature methods; defaulted from the head
  AdamConfig attention_adam{};                // online fine-tuning configuration
  bool freeze_attention = false;              // skip online attention updates
  bool collect_diagnostics = false;

  void validate() const;
};

struct ObserveResult {
  int err = 0;
  double score = 0.0;
  double quantile = 0.0;
  double alpha_used = 0.0;
  PredictionInterval interval;
};

/// Per-timestep event record; the CSV columns of the run logs.
struct EventRecord {
  long long t = 0;
  Method method = Method::kOcp;
  double alpha_t = 0.0;
  double score = 0.0;
  double quantile = 0.0;
  int err = 0;
  double mean_interval_length = 0.0;
};

void write_event_csv(std::ostream& out, std::span<const EventRecord> events);
std::vector<EventRecord> read_event_csv(std::istream& in);

/// Optional per-run log for the appendix diagnostics. The window at measured
/// step t (0-based) is sequence[t .. t+L-1]; one entry is pushed per step, so
/// windows are contiguous in the entry sequence.
struct DiagStep {
  double alpha = 0.0;
  Vector weights;       // calibration weights, length L+1
  double quantile = 0.0;
  Vector query_feature;
};

struct RunDiagLog {
  int window_length = 0;
  std::vector<WindowEntry> sequence;
  std::vector<DiagStep> steps;
};

/// One online conformal calibrator. Owns the sliding window and the
/// miscoverage tracker; attention methods also own their embedding matrices
/// and optimizer state. Strictly sequential; distinct instances are
/// independent.
class Calibrator {
 public:
  /// Attention params are required for AOCP/AFOCP and rejected otherwise.
  Calibrator(CalibratorConfig config, TwoStageModel model,
             std::optional<AttentionParams> attention = std::nullopt);

  /// Fills the window from exactly window_length (x, y) pairs, oldest first.
  /// No coverage events are recorded and alpha is untouched.
  void warmup(std::span<const Vector> xs, std::span<const Vector> ys);

  bool warmed_up() const;

  /// Weighted score distribution over the current window for the given query
  /// feature. Uniform 1/(L+1) masses for OCP/FOCP; attention calibration
  /// weights otherwise. The +infinity atom always has mass 1/(L+1).
  WeightedScoreDistribution build_distribution(std::span<const double> query_feature) const;

  /// (err, score, quantile) for a candidate pair, without mutating state.
  /// Membership is decided by the score-quantile comparison only.
  struct CoverageTest {
    int err;
    double score;
    double quantile;
  };
  CoverageTest coverage_test(std::span<const double> x, std::span<const double> y) const;

  /// Interval at the current miscoverage level. Output-space methods return
  /// the per-dimension box [mu(x) - q, mu(x) + q]; feature-space methods
  /// propagate the feature ball of radius q through the head.
  PredictionInterval predict_interval(std::span<const double> x) const;

  /// One full online step: weights -> quantile -> interval -> coverage ->
  /// alpha update -> attention fine-tuning -> window slide.
  ObserveResult observe(std::span<const double> x, std::span<const double> y);

  double compute_score(std::span<const double> x, std::span<const double> y) const;

  const CalibratorConfig& config() const { return config_; }
  const TwoStageModel& model() const { return model_; }
  const AlphaTracker& alpha_tracker() const { return alpha_; }
  const std::vector<WindowEntry>& window() const { return window_; }
  const AttentionParams* attention() const { return attention_ ? &*attention_ : nullptr; }
  const InversionConfig& inversion() const { return inversion_; }
  const RunDiagLog& diagnostics() const { return diag_; }

 private:
  PredictionInterval make_interval(std::span<const double> x, std::span<const double> feature,
                                   double quantile) const;
  void push_entry(WindowEntry entry);

  CalibratorConfig config_;
  TwoStageModel model_;
  InversionConfig inversion_;
  AlphaTracker alpha_;
  std::optional<AttentionParams> attention_;
  std::optional<AdamState> attention_state_;
  std::vector<WindowEntry> window_;
  std::vector<Vector> window_features_;  // parallel to window_, for span access
  std::vector<double> window_scores_;    // parallel to window_
  RunDiagLog diag_;
};

}  // namespace afocp
