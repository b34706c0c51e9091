#include "afocp/attention.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"

using namespace afocp;

namespace {

Vector random_vector(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

std::vector<Vector> random_keys(int count, int dim, Rng& rng) {
  std::vector<Vector> keys;
  for (int i = 0; i < count; ++i) keys.push_back(random_vector(dim, rng));
  return keys;
}

}  // namespace

TEST_CASE("attention_weights: a singleton window gets weight [1] and w = [1/2, 1/2]") {
  Rng rng(3);
  AttentionParams params = make_attention(4, 3, rng);
  std::vector<Vector> keys = random_keys(1, 4, rng);
  AttentionWeights w = attention_weights(params, random_vector(4, rng), keys);
  REQUIRE(w.coefficients.size() == 1);
  CHECK(w.coefficients[0] == 1.0);
  REQUIRE(w.calibration.size() == 2);
  CHECK(w.calibration[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(w.calibration[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("attention_weights: identical keys share the mass uniformly") {
  Rng rng(5);
  AttentionParams params = make_attention(3, 4, rng);
  Vector key = random_vector(3, rng);
  std::vector<Vector> keys(6, key);
  AttentionWeights w = attention_weights(params, random_vector(3, rng), keys);
  for (double a : w.coefficients) CHECK(a == doctest::Approx(1.0 / 6).epsilon(1e-12));
}

TEST_CASE("attention_weights: zero query embedding gives uniform weights for any keys") {
  Rng rng(7);
  AttentionParams params = make_attention(3, 4, rng);
  for (double& v : params.w_query.flat()) v = 0.0;
  std::vector<Vector> keys = random_keys(5, 3, rng);
  AttentionWeights w = attention_weights(params, random_vector(3, rng), keys);
  for (double a : w.coefficients) CHECK(a == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("attention_weights: empty history raises") {
  Rng rng(9);
  AttentionParams params = make_attention(3, 4, rng);
  std::vector<Vector> keys;
  CHECK_THROWS_AS(attention_weights(params, random_vector(3, rng), keys), std::invalid_argument);
}

TEST_CASE("attention weights normalize and keep the infinity mass at 1/(L+1)") {
  Rng rng(11);
  AttentionParams params = make_attention(5, 8, rng);
  for (int window = 1; window <= 9; window += 2) {
    std::vector<Vector> keys = random_keys(window, 5, rng);
    AttentionWeights w = attention_weights(params, random_vector(5, rng), keys);
    double total = 0.0;
    for (double x : w.calibration) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
      total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.calibration[window] == 1.0 / (window + 1.0));
  }
}

TEST_CASE("softmax is shift invariant: scaling both embeddings leaves sums consistent") {
  // Adding a constant to all logits cannot be done through the parameters
  // directly, so check the algebraic identity on the coefficients instead:
  // translating every key by the same vector shifts all logits equally when
  // the query embedding is fixed -> coefficients unchanged.
  Rng rng(13);
  AttentionParams params = make_attention(4, 4, rng);
  Vector query = random_vector(4, rng);
  std::vector<Vector> keys = random_keys(6, 4, rng);

  Vector shift = random_vector(4, rng);
  std::vector<Vector> shifted = keys;
  for (Vector& k : shifted)
    for (int i = 0; i < 4; ++i) k[i] += shift[i];

  AttentionWeights base = attention_weights(params, query, keys);
  AttentionWeights moved = attention_weights(params, query, shifted);
  // Shifting keys by a constant vector adds the same constant
  // beta <u, W_k^T shift> to every logit.
  for (std::size_t l = 0; l < base.coefficients.size(); ++l)
    CHECK(moved.coefficients[l] == doctest::Approx(base.coefficients[l]).epsilon(1e-12));
}

TEST_CASE("attention weights are permutation equivariant") {
  Rng rng(17);
  AttentionParams params = make_attention(4, 5, rng);
  Vector query = random_vector(4, rng);
  std::vector<Vector> keys = random_keys(5, 4, rng);
  AttentionWeights base = attention_weights(params, query, keys);

  const std::vector<int> perm{3, 0, 4, 1, 2};
  std::vector<Vector> permuted(5);
  for (int i = 0; i < 5; ++i) permuted[i] = keys[perm[i]];
  AttentionWeights moved = attention_weights(params, query, permuted);
  for (int i = 0; i < 5; ++i)
    CHECK(moved.coefficients[i] == doctest::Approx(base.coefficients[perm[i]]).epsilon(1e-12));
}

TEST_CASE("predict_score: uniform weights give the mean") {
  AttentionWeights w;
  w.coefficients = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  w.calibration = {0.25, 0.25, 0.25, 0.25};
  CHECK(predict_score(w, Vector{1.0, 2.0, 3.0}) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("predict_score: one-hot weights select the entry") {
  AttentionWeights w;
  w.coefficients = {0.0, 1.0, 0.0};
  w.calibration = {0.0, 0.75, 0.0, 0.25};
  CHECK(predict_score(w, Vector{5.0, 7.0, 9.0}) == 7.0);
}

TEST_CASE("predict_score matches a dot-product oracle") {
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const int window = 1 + static_cast<int>(rng.below(8));
    AttentionWeights w;
    w.coefficients = random_vector(window, rng, 0.0, 1.0);
    Vector scores = random_vector(window, rng, 0.0, 5.0);
    double want = 0.0;
    for (int i = 0; i < window; ++i) want += w.coefficients[i] * scores[i];
    CHECK(predict_score(w, scores) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("predict_score: length mismatch raises") {
  AttentionWeights w;
  w.coefficients = {0.5, 0.5};
  CHECK_THROWS_AS(predict_score(w, Vector{1.0}), std::invalid_argument);
}

TEST_CASE("attention_grad: zero residual gives zero gradients") {
  Rng rng(23);
  AttentionParams params = make_attention(3, 4, rng);
  std::vector<Vector> keys = random_keys(4, 3, rng);
  Vector query = random_vector(3, rng);
  Vector scores = random_vector(4, rng, 0.0, 2.0);
  AttentionWeights w = attention_weights(params, query, keys);
  const double target = predict_score(w, scores);
  AttentionGrads grads = attention_grad(params, query, keys, scores, target);
  for (double g : grads.w_query.flat()) CHECK(g == doctest::Approx(0.0).epsilon(1e-15));
  for (double g : grads.w_key.flat()) CHECK(g == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("attention_grad: constant past scores make the prediction weight-free") {
  Rng rng(29);
  AttentionParams params = make_attention(3, 4, rng);
  std::vector<Vector> keys = random_keys(5, 3, rng);
  Vector query = random_vector(3, rng);
  Vector scores(5, 1.7);
  AttentionGrads grads = attention_grad(params, query, keys, scores, 9.0);
  for (double g : grads.w_query.flat()) CHECK(std::abs(g) < 1e-12);
  for (double g : grads.w_key.flat()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("attention_grad matches central finite differences") {
  Rng rng(31);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const int feature_dim = 2 + static_cast<int>(rng.below(4));
    const int latent = 1 + static_cast<int>(rng.below(4));
    const int window = 2 + static_cast<int>(rng.below(5));
    AttentionParams params = make_attention(feature_dim, latent, rng);
    std::vector<Vector> keys = random_keys(window, feature_dim, rng);
    Vector query = random_vector(feature_dim, rng);
    Vector scores = random_vector(window, rng, 0.0, 3.0);
    const double target = rng.uniform(0.0, 3.0);

    auto loss = [&]() {
      // Independent forward path: raw logits, softmax, squared error.
      Vector u(latent, 0.0);
      for (int i = 0; i < feature_dim; ++i)
        for (int j = 0; j < latent; ++j) u[j] += query[i] * params.w_query(i, j);
      Vector logits(window, 0.0);
      for (int l = 0; l < window; ++l) {
        Vector v(latent, 0.0);
        for (int i = 0; i < feature_dim; ++i)
          for (int j = 0; j < latent; ++j) v[j] += keys[l][i] * params.w_key(i, j);
        double z = 0.0;
        for (int j = 0; j < latent; ++j) z += u[j] * v[j];
        logits[l] = params.beta * z;
      }
      double denom = 0.0;
      for (int l = 0; l < window; ++l) denom += std::exp(logits[l]);
      double predicted = 0.0;
      for (int l = 0; l < window; ++l) predicted += std::exp(logits[l]) / denom * scores[l];
      return (target - predicted) * (target - predicted);
    };

    AttentionGrads grads = attention_grad(params, query, keys, scores, target);

    auto check_grad = [&](double* slot, double analytic) {
      const double keep = *slot;
      const double fd = oracle::central_difference(
          [&](double v) {
            *slot = v;
            return loss();
          },
          keep, h);
      *slot = keep;
      CHECK(oracle::gradient_mismatch(analytic, fd) < 1e-4);
    };

    for (int i = 0; i < feature_dim; ++i)
      for (int j = 0; j < latent; ++j) {
        check_grad(&params.w_query(i, j), grads.w_query(i, j));
        check_grad(&params.w_key(i, j), grads.w_key(i, j));
      }
  }
}

namespace {

// Two interleaved regimes whose same-regime mean predicts the target exactly;
// learning to attend within the regime drives the loss toward zero.
struct SeparableTask {
  std::vector<Vector> features;
  Vector scores;
  std::vector<AttentionExample> examples;

  explicit SeparableTask(int n, int window, Rng& rng) {
    for (int t = 0; t < n; ++t) {
      const bool regime_a = (t % 2) == 0;
      Vector f(4, 0.0);
      f[0] = regime_a ? 1.0 : -1.0;
      f[1] = regime_a ? 0.8 : -0.6;
      f[2] = rng.uniform(-0.05, 0.05);
      f[3] = rng.uniform(-0.05, 0.05);
      features.push_back(std::move(f));
      scores.push_back(regime_a ? 1.0 : 3.0);
    }
    for (int t = window; t < n; ++t) {
      AttentionExample ex;
      ex.query = features[t];
      ex.keys = std::span<const Vector>(features.data() + t - window, window);
      ex.past_scores = std::span<const double>(scores.data() + t - window, window);
      ex.target = scores[t];
      examples.push_back(ex);
    }
  }

  double loss(const AttentionParams& params) const {
    double total = 0.0;
    for (const AttentionExample& ex : examples) {
      AttentionWeights w = attention_weights(params, ex.query, ex.keys);
      const double r = ex.target - predict_score(w, ex.past_scores);
      total += r * r;
    }
    return total / examples.size();
  }
};

}  // namespace

TEST_CASE("pretrain: zero epochs leaves parameters unchanged") {
  Rng rng(37);
  AttentionParams params = make_attention(4, 4, rng);
  SeparableTask task(40, 6, rng);
  AttentionParams after = pretrain_attention(params, task.examples, 0, 1, {});
  CHECK(std::equal(params.w_query.flat().begin(), params.w_query.flat().end(),
                   after.w_query.flat().begin()));
}

TEST_CASE("pretrain: empty window set raises") {
  Rng rng(41);
  AttentionParams params = make_attention(4, 4, rng);
  CHECK_THROWS_AS(pretrain_attention(params, {}, 5, 1, {}), std::invalid_argument);
}

TEST_CASE("pretrain learns the separable two-regime task") {
  Rng rng(43);
  AttentionParams params = make_attention(4, 4, rng);
  SeparableTask task(120, 8, rng);
  const double initial = task.loss(params);
  AdamConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.weight_decay = 0.0;
  AttentionParams trained = pretrain_attention(params, task.examples, 60, 7, cfg);
  const double final_loss = task.loss(trained);
  CHECK(final_loss < 0.1 * initial);
}

TEST_CASE("pretrain is deterministic under a fixed seed") {
  Rng rng(47);
  AttentionParams params = make_attention(4, 3, rng);
  SeparableTask task(60, 6, rng);
  AttentionParams a = pretrain_attention(params, task.examples, 5, 11, {});
  AttentionParams b = pretrain_attention(params, task.examples, 5, 11, {});
  CHECK(std::equal(a.w_query.flat().begin(), a.w_query.flat().end(), b.w_query.flat().begin()));
  CHECK(std::equal(a.w_key.flat().begin(), a.w_key.flat().end(), b.w_key.flat().begin()));
}

TEST_CASE("online update: constant scores leave parameters unchanged up to weight decay") {
  Rng rng(53);
  AttentionParams params = make_attention(3, 3, rng);
  const AttentionParams before = params;
  AdamState state = attention_adam_state(params, {});
  std::vector<Vector> features = random_keys(6, 3, rng);
  Vector scores(5, 2.0);
  AttentionExample ex;
  ex.query = features[5];
  ex.keys = std::span<const Vector>(features.data(), 5);
  ex.past_scores = scores;
  ex.target = 4.0;
  online_update_attention(params, {&ex, 1}, state);
  for (std::size_t i = 0; i < params.w_query.size(); ++i) {
    // Zero gradient path: only the decoupled weight decay moves parameters.
    const double drift = std::abs(params.w_query.flat()[i] - before.w_query.flat()[i]);
    CHECK(drift <= std::abs(before.w_query.flat()[i]) * 1e-8 + 1e-15);
  }
}

TEST_CASE("online update: repeated application decreases the window loss") {
  Rng rng(59);
  AttentionParams params = make_attention(4, 4, rng);
  SeparableTask task(30, 8, rng);
  const AttentionExample& ex = task.examples.front();

  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.0;
  AdamState state = attention_adam_state(params, cfg);

  auto window_loss = [&]() {
    AttentionWeights w = attention_weights(params, ex.query, ex.keys);
    const double r = ex.target - predict_score(w, ex.past_scores);
    return r * r;
  };

  double previous = window_loss();
  for (int it = 0; it < 10; ++it) {
    online_update_attention(params, {&ex, 1}, state);
    const double now = window_loss();
    CHECK(now <= previous + 1e-12);
    previous = now;
  }
}

TEST_CASE("online update: non-finite target raises") {
  Rng rng(61);
  AttentionParams params = make_attention(3, 3, rng);
  AdamState state = attention_adam_state(params, {});
  std::vector<Vector> features = random_keys(4, 3, rng);
  Vector scores(3, 1.0);
  AttentionExample ex;
  ex.query = features[3];
  ex.keys = std::span<const Vector>(features.data(), 3);
  ex.past_scores = scores;
  ex.target = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(online_update_attention(params, {&ex, 1}, state), std::invalid_argument);
}

TEST_CASE("online updates stay finite on random windows") {
  Rng rng(67);
  AttentionParams params = make_attention(4, 4, rng);
  AdamState state = attention_adam_state(params, {});
  std::vector<Vector> features = random_keys(40, 4, rng);
  Vector scores = random_vector(40, rng, 0.0, 5.0);
  for (int t = 8; t < 40; ++t) {
    AttentionExample ex;
    ex.query = features[t];
    ex.keys = std::span<const Vector>(features.data() + t - 8, 8);
    ex.past_scores = std::span<const double>(scores.data() + t - 8, 8);
    ex.target = scores[t];
    online_update_attention(params, {&ex, 1}, state);
    CHECK(all_finite(params.w_query));
    CHECK(all_finite(params.w_key));
  }
}

TEST_CASE("attention checkpoint round-trips") {
  Rng rng(71);
  AttentionParams params = make_attention(5, 4, rng);
  const std::string path =
      (std::filesystem::temp_directory_path() / "afocp_attn_ckpt_test.json").string();
  save_attention_checkpoint(params, path);
  AttentionParams loaded = load_attention_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(loaded.beta == params.beta);
  CHECK(std::equal(params.w_query.flat().begin(), params.w_query.flat().end(),
                   loaded.w_query.flat().begin()));
  CHECK(std::equal(params.w_key.flat().begin(), params.w_key.flat().end(),
                   loaded.w_key.flat().begin()));
}
