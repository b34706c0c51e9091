#pragma once

#include <span>
#include <stdexcept>
#include <string>

#include "afocp/neuralnet.hpp"

namespace afocp {

enum class ScoreKind { kOutputSpace, kFeatureSpace };

struct InversionConfig {
  double step_size = 0.1;  // eta
  int num_steps = 100;     // N

  void validate() const {
    if (!(step_size > 0.0)) throw std::invalid_argument("InversionConfig: step_size must be > 0");
    if (num_steps < 1) throw std::invalid_argument("InversionConfig: num_steps must be >= 1");
  }
};

/// Default used by the calibrators: N = 100 and a step size damped by the
/// product of the head's layer Frobenius norms, so the same config stays
/// stable as the feature dimension changes.
InversionConfig default_inversion_config(const MlpParams& head);

/// Raised when the feature-space iterate goes non-finite even after the
/// automatic step-size retry.
class InversionDivergedError : public std::runtime_error {
 public:
  InversionDivergedError(int step, double step_size);
  int step() const { return step_; }

 private:
  int step_;
};

struct InversionResult {
  Vector iterate;            // V-bar after exactly num_steps updates
  double terminal_residual;  // ||g(V-bar) - y||, diagnostic only
  bool retried = false;      // true when the eta/10 retry was taken
};

/// Gradient descent in feature space on ||g(V) - y||^2, starting from v_init,
/// with exact gradients from mlp_backward. Runs exactly cfg.num_steps steps.
/// On a non-finite iterate it restarts once from v_init with step_size/10 and
/// throws InversionDivergedError if that also diverges.
InversionResult invert_head(const MlpParams& head, std::span<const double> v_init,
                            std::span<const double> y, const InversionConfig& cfg);

/// ||y - model(x)||_2.
double output_score(const TwoStageModel& model, std::span<const double> x,
                    std::span<const double> y);

struct FeatureScoreResult {
  double score;              // ||V-bar - f(x)||_2
  double terminal_residual;  // ||g(V-bar) - y||
};

/// Feature-space nonconformity score: distance from the model feature f(x) to
/// the inversion iterate for label y. Equals the exact preimage distance only
/// when the terminal residual vanishes.
FeatureScoreResult feature_score_detail(const TwoStageModel& model, std::span<const double> x,
                                        std::span<const double> y, const InversionConfig& cfg);

double feature_score(const TwoStageModel& model, std::span<const double> x,
                     std::span<const double> y, const InversionConfig& cfg);

}  // namespace afocp
