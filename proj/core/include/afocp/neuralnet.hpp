#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "afocp/linalg.hpp"
#include "afocp/rng.hpp"

namespace afocp {

enum class Activation { kReLU, kIdentity };

/// Two-layer dense network: layer2(act(layer1(x))). The activation applies
/// after layer 1 only; layer 2 is always linear.
struct MlpParams {
  Matrix layer1_weights;  // [hidden x in]
  Vector layer1_bias;     // [hidden]
  Matrix layer2_weights;  // [out x hidden]
  Vector layer2_bias;     // [out]
  Activation activation = Activation::kReLU;

  int input_dim() const { return layer1_weights.cols(); }
  int hidden_dim() const { return layer1_weights.rows(); }
  int output_dim() const { return layer2_weights.rows(); }

  /// Throws std::invalid_argument on inconsistent shapes or non-finite entries.
  void validate() const;
};

/// Glorot-uniform init: each layer uniform(-a, a), a = sqrt(6/(fan_in+fan_out)).
MlpParams make_mlp(int input_dim, int hidden_dim, int output_dim, Activation activation, Rng& rng);

/// Square pass-through network: identity weights, zero bias, identity activation.
MlpParams make_identity_mlp(int dim);

Vector mlp_forward(const MlpParams& params, std::span<const double> x);

struct MlpGrads {
  Matrix layer1_weights;
  Vector layer1_bias;
  Matrix layer2_weights;
  Vector layer2_bias;

  static MlpGrads zeros_like(const MlpParams& params);
  bool all_finite() const;
};

struct MlpBackwardResult {
  MlpGrads param_grads;
  Vector input_grad;
};

/// Exact gradients of <upstream_grad, mlp_forward(params, x)> with respect to
/// every parameter and to x. The ReLU subgradient at exactly 0 is 0.
MlpBackwardResult mlp_backward(const MlpParams& params, std::span<const double> x,
                               std::span<const double> upstream_grad);

struct AdamConfig {
  double learning_rate = 5e-4;
  double weight_decay = 1e-6;  // decoupled, applied outside the moment path
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers for a fixed list of parameter tensors.
struct AdamState {
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
  long long step_count = 0;
  AdamConfig config;

  static AdamState for_sizes(const std::vector<std::size_t>& sizes, const AdamConfig& config);
  static AdamState for_mlp(const MlpParams& params, const AdamConfig& config);
};

/// One bias-corrected Adam step with decoupled weight decay over a tensor
/// list. params[i] and grads[i] must match the state's i-th moment shape.
/// Throws on non-finite gradients; the state is untouched in that case.
void adam_step_tensors(const std::vector<std::span<double>>& params,
                       const std::vector<std::span<const double>>& grads, AdamState& state);

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state);

/// extractor: input -> feature (dimension D); head: feature -> output.
struct TwoStageModel {
  MlpParams extractor;
  MlpParams head;

  int feature_dim() const { return extractor.output_dim(); }
  void validate() const;

  Vector features(std::span<const double> x) const { return mlp_forward(extractor, x); }
  Vector predict(std::span<const double> x) const {
    Vector v = mlp_forward(extractor, x);
    return mlp_forward(head, v);
  }
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  std::uint64_t seed = 0;
  AdamConfig adam{};
};

/// Joint MSE training of head(extractor(x)) against y. Mini-batch order is a
/// deterministic shuffle keyed on (seed, epoch); results are bit-reproducible.
/// Mean per-epoch training loss is appended to *epoch_loss when provided.
TwoStageModel train_two_stage(TwoStageModel model, const std::vector<Vector>& inputs,
                              const std::vector<Vector>& targets, const TrainConfig& config,
                              std::vector<double>* epoch_loss = nullptr);

/// Checkpoints are JSON with explicit shapes and row-major arrays; load/save
/// round-trips are lossless.
void save_model_checkpoint(const TwoStageModel& model, const std::string& path);
TwoStageModel load_model_checkpoint(const std::string& path);

}  // namespace afocp
