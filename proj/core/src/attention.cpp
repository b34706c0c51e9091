#include "afocp/attention.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace afocp {

void AttentionParams::validate() const {
  if (w_query.rows() < 1 || w_query.cols() < 1)
    throw std::invalid_argument("AttentionParams: empty query embedding");
  if (!w_query.same_shape(w_key))
    throw std::invalid_argument("AttentionParams: query/key embedding shape mismatch");
  if (!(beta > 0.0)) throw std::invalid_argument("AttentionParams: beta must be > 0");
  if (!all_finite(w_query) || !all_finite(w_key))
    throw std::invalid_argument("AttentionParams: non-finite entry");
}

AttentionParams make_attention(int feature_dim, int latent_dim, Rng& rng) {
  if (feature_dim < 1 || latent_dim < 1)
    throw std::invalid_argument("make_attention: dimensions must be >= 1");
  AttentionParams p;
  p.w_query = Matrix(feature_dim, latent_dim);
  p.w_key = Matrix(feature_dim, latent_dim);
  const double a = std::sqrt(6.0 / (feature_dim + latent_dim));
  for (double& w : p.w_query.flat()) w = rng.uniform(-a, a);
  for (double& w : p.w_key.flat()) w = rng.uniform(-a, a);
  p.beta = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  return p;
}

namespace {

// u = W_q^T query, v_l = W_k^T key_l, logits z_l = beta * <u, v_l>.
struct AttentionForward {
  Vector query_embed;                // u, [D']
  std::vector<Vector> key_embeds;    // v_l, [L x D']
  Vector coefficients;               // softmax(z)
};

AttentionForward forward_pass(const AttentionParams& params, std::span<const double> query,
                              std::span<const Vector> keys) {
  params.validate();
  const int feature_dim = params.feature_dim();
  if (keys.empty()) throw std::invalid_argument("attention: no history (L must be >= 1)");
  if (static_cast<int>(query.size()) != feature_dim)
    throw std::invalid_argument("attention: query dimension mismatch");

  AttentionForward fwd;
  fwd.query_embed = matvec_transposed(params.w_query, query);
  fwd.key_embeds.reserve(keys.size());
  Vector logits(keys.size(), 0.0);
  for (std::size_t l = 0; l < keys.size(); ++l) {
    if (static_cast<int>(keys[l].size()) != feature_dim)
      throw std::invalid_argument("attention: key dimension mismatch");
    fwd.key_embeds.push_back(matvec_transposed(params.w_key, keys[l]));
    logits[l] = params.beta * dot(fwd.query_embed, fwd.key_embeds[l]);
  }

  // Shift-invariant softmax.
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  fwd.coefficients.resize(keys.size());
  for (std::size_t l = 0; l < keys.size(); ++l) {
    fwd.coefficients[l] = std::exp(logits[l] - max_logit);
    denom += fwd.coefficients[l];
  }
  for (double& a : fwd.coefficients) a /= denom;
  return fwd;
}

}  // namespace

AttentionWeights attention_weights(const AttentionParams& params, std::span<const double> query,
                                   std::span<const Vector> keys) {
  AttentionForward fwd = forward_pass(params, query, keys);
  const std::size_t window = keys.size();
  AttentionWeights w;
  w.coefficients = std::move(fwd.coefficients);
  w.calibration.resize(window + 1);
  const double shrink = static_cast<double>(window) / (window + 1.0);
  for (std::size_t l = 0; l < window; ++l) w.calibration[l] = shrink * w.coefficients[l];
  w.calibration[window] = 1.0 / (window + 1.0);
  return w;
}

double predict_score(const AttentionWeights& weights, std::span<const double> past_scores) {
  if (weights.coefficients.size() != past_scores.size())
    throw std::invalid_argument("predict_score: length mismatch");
  double s = 0.0;
  for (std::size_t l = 0; l < past_scores.size(); ++l) s += weights.coefficients[l] * past_scores[l];
  return s;
}

AttentionGrads attention_grad(const AttentionParams& params, std::span<const double> query,
                              std::span<const Vector> keys, std::span<const double> past_scores,
                              double target_score) {
  if (keys.size() != past_scores.size())
    throw std::invalid_argument("attention_grad: keys/scores length mismatch");
  AttentionForward fwd = forward_pass(params, query, keys);
  const std::size_t window = keys.size();

  double predicted = 0.0;
  for (std::size_t l = 0; l < window; ++l) predicted += fwd.coefficients[l] * past_scores[l];

  // d loss / d logit_l = -2 (target - predicted) * a_l (s_l - predicted).
  const double residual_term = -2.0 * (target_score - predicted);
  Vector dlogit(window, 0.0);
  for (std::size_t l = 0; l < window; ++l)
    dlogit[l] = residual_term * fwd.coefficients[l] * (past_scores[l] - predicted);

  // z_l = beta * (q W_q) . (k_l W_k): both gradients are rank one.
  //   dW_q = beta * q (sum_l dlogit_l v_l)^T
  //   dW_k = beta * (sum_l dlogit_l k_l) u^T
  const int latent = params.latent_dim();
  const int feature_dim = params.feature_dim();
  Vector weighted_key_embed(latent, 0.0);
  Vector weighted_key(feature_dim, 0.0);
  for (std::size_t l = 0; l < window; ++l) {
    for (int j = 0; j < latent; ++j) weighted_key_embed[j] += dlogit[l] * fwd.key_embeds[l][j];
    for (int i = 0; i < feature_dim; ++i) weighted_key[i] += dlogit[l] * keys[l][i];
  }

  AttentionGrads grads;
  grads.w_query = Matrix(feature_dim, latent);
  grads.w_key = Matrix(feature_dim, latent);
  add_outer(grads.w_query, query, weighted_key_embed, params.beta);
  add_outer(grads.w_key, weighted_key, fwd.query_embed, params.beta);
  return grads;
}

AdamState attention_adam_state(const AttentionParams& params, const AdamConfig& config) {
  return AdamState::for_sizes({params.w_query.size(), params.w_key.size()}, config);
}

void attention_adam_step(AttentionParams& params, const AttentionGrads& grads, AdamState& state) {
  adam_step_tensors({params.w_query.flat(), params.w_key.flat()},
                    {grads.w_query.flat(), grads.w_key.flat()}, state);
}

AttentionParams pretrain_attention(AttentionParams params,
                                   std::span<const AttentionExample> examples, int epochs,
                                   std::uint64_t seed, const AdamConfig& config) {
  if (examples.empty()) throw std::invalid_argument("pretrain_attention: no training windows");
  params.validate();
  AdamState state = attention_adam_state(params, config);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, 2000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (std::size_t idx : order) {
      const AttentionExample& ex = examples[idx];
      AttentionGrads grads = attention_grad(params, ex.query, ex.keys, ex.past_scores, ex.target);
      attention_adam_step(params, grads, state);
    }
  }
  return params;
}

void online_update_attention(AttentionParams& params, std::span<const AttentionExample> examples,
                             AdamState& state) {
  for (const AttentionExample& ex : examples) {
    if (!std::isfinite(ex.target))
      throw std::invalid_argument("online_update_attention: window has an unobserved label");
  }
  for (const AttentionExample& ex : examples) {
    AttentionGrads grads = attention_grad(params, ex.query, ex.keys, ex.past_scores, ex.target);
    attention_adam_step(params, grads, state);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O (same structured format as model checkpoints)
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.flat().begin(), m.flat().end());
  return j;
}

Matrix matrix_from_json(const json& j) {
  Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.size()) throw std::invalid_argument("checkpoint: matrix size mismatch");
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

}  // namespace

void save_attention_checkpoint(const AttentionParams& params, const std::string& path) {
  params.validate();
  json j;
  j["kind"] = "attention";
  j["w_query"] = matrix_to_json(params.w_query);
  j["w_key"] = matrix_to_json(params.w_key);
  j["beta"] = params.beta;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << j.dump(2) << "\n";
}

AttentionParams load_attention_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json j = json::parse(in);
  if (j.at("kind").get<std::string>() != "attention")
    throw std::invalid_argument("checkpoint: not an attention file");
  AttentionParams p;
  p.w_query = matrix_from_json(j.at("w_query"));
  p.w_key = matrix_from_json(j.at("w_key"));
  p.beta = j.at("beta").get<double>();
  p.validate();
  return p;
}

}  // namespace afocp
