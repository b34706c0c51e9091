#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "afocp/neuralnet.hpp"

namespace afocp {

/// Query/key embeddings for similarity weighting over a feature window.
/// Produces weights only; there is no value projection.
struct AttentionParams {
  Matrix w_query;  // [D x D']
  Matrix w_key;    // [D x D']
  double beta = 1.0;

  int feature_dim() const { return w_query.rows(); }
  int latent_dim() const { return w_query.cols(); }
  void validate() const;
};

/// Glorot-uniform embeddings with the scaled-dot-product default
/// beta = 1/sqrt(latent_dim).
AttentionParams make_attention(int feature_dim, int latent_dim, Rng& rng);

struct AttentionWeights {
  Vector coefficients;  // a, length L, softmax output
  Vector calibration;   // w, length L+1; w[tau] = L/(L+1) * a[tau], w[L] = 1/(L+1)
};

/// a[l] = softmax_l( beta * <query W_q, key_l W_k> ), then the calibration
/// weights re-normalize so the +infinity atom keeps mass 1/(L+1).
AttentionWeights attention_weights(const AttentionParams& params, std::span<const double> query,
                                   std::span<const Vector> keys);

/// Linear autoregressive score prediction: sum_tau a[tau] * past_scores[tau].
double predict_score(const AttentionWeights& weights, std::span<const double> past_scores);

struct AttentionGrads {
  Matrix w_query;
  Matrix w_key;
};

/// Exact gradient of (target - predict_score)^2 with respect to both
/// embedding matrices, through the softmax.
AttentionGrads attention_grad(const AttentionParams& params, std::span<const double> query,
                              std::span<const Vector> keys, std::span<const double> past_scores,
                              double target_score);

/// One training window. Views into caller-owned storage; the caller keeps the
/// backing feature/score arrays alive for the duration of the call.
struct AttentionExample {
  std::span<const double> query;
  std::span<const Vector> keys;
  std::span<const double> past_scores;
  double target = 0.0;
};

AdamState attention_adam_state(const AttentionParams& params, const AdamConfig& config);

void attention_adam_step(AttentionParams& params, const AttentionGrads& grads, AdamState& state);

/// Adam over the instantaneous losses, one step per example, examples
/// shuffled per epoch keyed on (seed, epoch). Deterministic.
AttentionParams pretrain_attention(AttentionParams params,
                                   std::span<const AttentionExample> examples, int epochs,
                                   std::uint64_t seed, const AdamConfig& config);

/// One pass of gradient steps over the given window examples, in order.
/// Errors if any example has a non-finite target (unobserved label).
void online_update_attention(AttentionParams& params, std::span<const AttentionExample> examples,
                             AdamState& state);

void save_attention_checkpoint(const AttentionParams& params, const std::string& path);
AttentionParams load_attention_checkpoint(const std::string& path);

}  // namespace afocp
