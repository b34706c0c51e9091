#include "afocp/scores.hpp"

#include <cmath>

namespace afocp {

InversionConfig default_inversion_config(const MlpParams& head) {
  InversionConfig cfg;
  cfg.num_steps = 100;
  cfg.step_size =
      0.1 / (1.0 + frobenius_norm(head.layer1_weights) * frobenius_norm(head.layer2_weights));
  return cfg;
}

InversionDivergedError::InversionDivergedError(int step, double step_size)
    : std::runtime_error("head inversion diverged at step " + std::to_string(step) +
                         " (step_size=" + std::to_string(step_size) + ")"),
      step_(step) {}

namespace {

// One full descent run; returns false through *diverged_at if an iterate goes
// non-finite.
bool run_descent(const MlpParams& head, std::span<const double> v_init, std::span<const double> y,
                 double eta, int steps, Vector& v_out, int* diverged_at) {
  Vector v(v_init.begin(), v_init.end());
  const int out_dim = head.output_dim();
  Vector upstream(out_dim, 0.0);
  for (int step = 0; step < steps; ++step) {
    Vector g = mlp_forward(head, v);
    for (int i = 0; i < out_dim; ++i) upstream[i] = 2.0 * (g[i] - y[i]);
    MlpBackwardResult back = mlp_backward(head, v, upstream);
    for (int i = 0; i < static_cast<int>(v.size()); ++i) v[i] -= eta * back.input_grad[i];
    if (!all_finite(v)) {
      *diverged_at = step;
      return false;
    }
  }
  v_out = std::move(v);
  return true;
}

}  // namespace

InversionResult invert_head(const MlpParams& head, std::span<const double> v_init,
                            std::span<const double> y, const InversionConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(v_init.size()) != head.input_dim())
    throw std::invalid_argument("invert_head: feature dimension mismatch");
  if (static_cast<int>(y.size()) != head.output_dim())
    throw std::invalid_argument("invert_head: label dimension mismatch");
  if (!all_finite(v_init) || !all_finite(y))
    throw std::invalid_argument("invert_head: non-finite input");

  InversionResult result;
  int diverged_at = -1;
  if (!run_descent(head, v_init, y, cfg.step_size, cfg.num_steps, result.iterate, &diverged_at)) {
    // ReLU heads can have locally steep regions; retry once with eta/10.
    result.retried = true;
    const double eta = cfg.step_size / 10.0;
    if (!run_descent(head, v_init, y, eta, cfg.num_steps, result.iterate, &diverged_at)) {
      throw InversionDivergedError(diverged_at, eta);
    }
  }

  Vector g = mlp_forward(head, result.iterate);
  double r = 0.0;
  for (int i = 0; i < head.output_dim(); ++i) {
    const double d = g[i] - y[i];
    r += d * d;
  }
  result.terminal_residual = std::sqrt(r);
  return result;
}

double output_score(const TwoStageModel& model, std::span<const double> x,
                    std::span<const double> y) {
  Vector y_hat = model.predict(x);
  if (y.size() != y_hat.size()) throw std::invalid_argument("output_score: label dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - y_hat[i];
    s += d * d;
  }
  return std::sqrt(s);
}

FeatureScoreResult feature_score_detail(const TwoStageModel& model, std::span<const double> x,
                                        std::span<const double> y, const InversionConfig& cfg) {
  Vector v0 = model.features(x);
  InversionResult inv = invert_head(model.head, v0, y, cfg);
  double s = 0.0;
  for (std::size_t i = 0; i < v0.size(); ++i) {
    const double d = inv.iterate[i] - v0[i];
    s += d * d;
  }
  return {std::sqrt(s), inv.terminal_residual};
}

double feature_score(const TwoStageModel& model, std::span<const double> x,
                     std::span<const double> y, const InversionConfig& cfg) {
  return feature_score_detail(model, x, y, cfg).score;
}

}  // namespace afocp
