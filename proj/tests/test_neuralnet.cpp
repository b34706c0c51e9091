#include "afocp/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"

using namespace afocp;

namespace {

MlpParams random_mlp(int in, int hidden, int out, Activation act, Rng& rng) {
  MlpParams p = make_mlp(in, hidden, out, act, rng);
  for (double& b : p.layer1_bias) b = rng.uniform(-0.5, 0.5);
  for (double& b : p.layer2_bias) b = rng.uniform(-0.5, 0.5);
  return p;
}

Vector random_vector(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("forward: all-zero parameters give the zero vector") {
  MlpParams p;
  p.layer1_weights = Matrix(3, 4);
  p.layer1_bias.assign(3, 0.0);
  p.layer2_weights = Matrix(2, 3);
  p.layer2_bias.assign(2, 0.0);
  p.activation = Activation::kReLU;
  Vector y = mlp_forward(p, Vector{1.0, -2.0, 3.0, 0.5});
  for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("forward: identity configuration passes the input through") {
  MlpParams p = make_identity_mlp(4);
  const Vector x{0.3, -1.2, 5.0, 0.0};
  Vector y = mlp_forward(p, x);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("forward matches the naive matrix-vector reference") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int in = 1 + static_cast<int>(rng.below(6));
    const int hidden = 1 + static_cast<int>(rng.below(6));
    const int out = 1 + static_cast<int>(rng.below(6));
    const Activation act = trial % 2 == 0 ? Activation::kReLU : Activation::kIdentity;
    MlpParams p = random_mlp(in, hidden, out, act, rng);
    Vector x = random_vector(in, rng);
    Vector got = mlp_forward(p, x);
    Vector want = oracle::mlp_reference(p, x);
    for (int i = 0; i < out; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward: dimension mismatch raises") {
  Rng rng(1);
  MlpParams p = random_mlp(3, 2, 2, Activation::kReLU, rng);
  CHECK_THROWS_AS(mlp_forward(p, Vector{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("forward is deterministic") {
  Rng rng(11);
  MlpParams p = random_mlp(5, 4, 3, Activation::kReLU, rng);
  Vector x = random_vector(5, rng);
  Vector a = mlp_forward(p, x);
  Vector b = mlp_forward(p, x);
  CHECK(a == b);
}

TEST_CASE("backward: zero upstream gives zero gradients") {
  Rng rng(3);
  MlpParams p = random_mlp(4, 3, 2, Activation::kReLU, rng);
  Vector x = random_vector(4, rng);
  auto [grads, input_grad] = mlp_backward(p, x, Vector{0.0, 0.0});
  for (double g : grads.layer1_weights.flat()) CHECK(g == 0.0);
  for (double g : grads.layer2_weights.flat()) CHECK(g == 0.0);
  for (double g : input_grad) CHECK(g == 0.0);
}

TEST_CASE("backward: identity activation input gradient is W^T upstream") {
  Rng rng(5);
  MlpParams p = random_mlp(4, 3, 3, Activation::kIdentity, rng);
  // Layer 2 as the identity so only layer 1 acts.
  p.layer2_weights = Matrix::identity(3);
  p.layer2_bias.assign(3, 0.0);
  Vector x = random_vector(4, rng);
  Vector upstream = random_vector(3, rng);
  auto result = mlp_backward(p, x, upstream);
  Vector want = matvec_transposed(p.layer1_weights, upstream);
  for (int j = 0; j < 4; ++j) CHECK(result.input_grad[j] == doctest::Approx(want[j]).epsilon(1e-12));
}

TEST_CASE("backward gradients match central finite differences") {
  Rng rng(2024);
  const double h = 1e-5;
  for (int trial = 0; trial < 25; ++trial) {
    const int in = 1 + static_cast<int>(rng.below(8));
    const int hidden = 1 + static_cast<int>(rng.below(8));
    const int out = 1 + static_cast<int>(rng.below(8));
    const Activation act = trial % 2 == 0 ? Activation::kReLU : Activation::kIdentity;
    MlpParams p = random_mlp(in, hidden, out, act, rng);
    Vector x = random_vector(in, rng);
    Vector upstream = random_vector(out, rng);

    auto objective = [&]() {
      Vector y = oracle::mlp_reference(p, x);
      double s = 0.0;
      for (int i = 0; i < out; ++i) s += upstream[i] * y[i];
      return s;
    };

    auto result = mlp_backward(p, x, upstream);

    auto check_grad = [&](double* slot, double analytic) {
      const double keep = *slot;
      const double fd = oracle::central_difference(
          [&](double v) {
            *slot = v;
            return objective();
          },
          keep, h);
      *slot = keep;
      CHECK(oracle::gradient_mismatch(analytic, fd) < 1e-4);
    };

    for (int i = 0; i < hidden; ++i)
      for (int j = 0; j < in; ++j)
        check_grad(&p.layer1_weights(i, j), result.param_grads.layer1_weights(i, j));
    for (int i = 0; i < hidden; ++i) check_grad(&p.layer1_bias[i], result.param_grads.layer1_bias[i]);
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < hidden; ++j)
        check_grad(&p.layer2_weights(i, j), result.param_grads.layer2_weights(i, j));
    for (int i = 0; i < out; ++i) check_grad(&p.layer2_bias[i], result.param_grads.layer2_bias[i]);
    for (int j = 0; j < in; ++j) check_grad(&x[j], result.input_grad[j]);
  }
}

TEST_CASE("adam: zero gradient and zero weight decay is a fixed point") {
  Rng rng(17);
  MlpParams p = random_mlp(3, 3, 2, Activation::kReLU, rng);
  const MlpParams before = p;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  AdamState state = AdamState::for_mlp(p, cfg);
  MlpGrads zero = MlpGrads::zeros_like(p);
  adam_step(p, zero, state);
  CHECK(state.step_count == 1);
  CHECK(std::equal(p.layer1_weights.flat().begin(), p.layer1_weights.flat().end(),
                   before.layer1_weights.flat().begin()));
  CHECK(std::equal(p.layer2_weights.flat().begin(), p.layer2_weights.flat().end(),
                   before.layer2_weights.flat().begin()));
  CHECK(p.layer1_bias == before.layer1_bias);
}

TEST_CASE("adam: bias-corrected first step moves by -lr * g / (|g| + eps)") {
  MlpParams p = make_identity_mlp(2);
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.0;
  AdamState state = AdamState::for_mlp(p, cfg);
  MlpGrads g = MlpGrads::zeros_like(p);
  g.layer1_weights(0, 0) = 0.5;
  g.layer1_weights(1, 1) = -2.0;
  MlpParams updated = p;
  adam_step(updated, g, state);
  const double expect00 = 1.0 - 0.01 * 0.5 / (0.5 + cfg.epsilon);
  const double expect11 = 1.0 - 0.01 * (-2.0) / (2.0 + cfg.epsilon);
  CHECK(updated.layer1_weights(0, 0) == doctest::Approx(expect00).epsilon(1e-14));
  CHECK(updated.layer1_weights(1, 1) == doctest::Approx(expect11).epsilon(1e-14));
  CHECK(updated.layer1_weights(0, 1) == 0.0);
}

TEST_CASE("adam: three steps on w^2 shrink |w|") {
  Vector w{1.0};
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  AdamState state = AdamState::for_sizes({1}, cfg);
  for (int step = 0; step < 3; ++step) {
    Vector g{2.0 * w[0]};
    adam_step_tensors({std::span<double>(w)}, {std::span<const double>(g)}, state);
  }
  CHECK(std::abs(w[0]) < 1.0);
  CHECK(state.step_count == 3);
}

TEST_CASE("adam: non-finite gradient raises and leaves state untouched") {
  MlpParams p = make_identity_mlp(2);
  AdamState state = AdamState::for_mlp(p, {});
  MlpGrads g = MlpGrads::zeros_like(p);
  g.layer2_weights(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(p, g, state), std::invalid_argument);
  CHECK(state.step_count == 0);
  for (double m : state.first_moment[2]) CHECK(m == 0.0);
}

TEST_CASE("train: zero epochs returns the model unchanged") {
  Rng rng(23);
  TwoStageModel model;
  model.extractor = random_mlp(3, 4, 4, Activation::kReLU, rng);
  model.head = random_mlp(4, 4, 2, Activation::kReLU, rng);
  const TwoStageModel before = model;
  TrainConfig cfg;
  cfg.epochs = 0;
  std::vector<Vector> xs{{1.0, 2.0, 3.0}};
  std::vector<Vector> ys{{1.0, 0.0}};
  TwoStageModel after = train_two_stage(model, xs, ys, cfg);
  CHECK(after.extractor.layer1_weights.flat()[0] == before.extractor.layer1_weights.flat()[0]);
  CHECK(after.head.layer2_bias == before.head.layer2_bias);
}

TEST_CASE("train: empty dataset raises") {
  Rng rng(29);
  TwoStageModel model;
  model.extractor = random_mlp(3, 4, 4, Activation::kIdentity, rng);
  model.head = random_mlp(4, 4, 2, Activation::kIdentity, rng);
  CHECK_THROWS_AS(train_two_stage(model, {}, {}, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("train: linear target is recovered to a small fraction of the initial loss") {
  Rng rng(31);
  const int in = 4, feat = 4, out = 3, n = 200;
  Matrix a(out, in);
  for (double& v : a.flat()) v = rng.uniform(-1.0, 1.0);

  std::vector<Vector> xs, ys;
  for (int k = 0; k < n; ++k) {
    Vector x = random_vector(in, rng);
    xs.push_back(x);
    ys.push_back(matvec(a, x));
  }

  Rng init(derive_seed(31, SeedStream::kModelInit));
  TwoStageModel model;
  model.extractor = make_mlp(in, feat, feat, Activation::kIdentity, init);
  model.head = make_mlp(feat, feat, out, Activation::kIdentity, init);

  TrainConfig cfg;
  cfg.epochs = 400;
  cfg.batch_size = 32;
  cfg.seed = 31;
  cfg.adam.learning_rate = 0.01;
  cfg.adam.weight_decay = 0.0;

  std::vector<double> losses;
  train_two_stage(model, xs, ys, cfg, &losses);
  REQUIRE(losses.size() == 400);
  CHECK(losses.back() < 1e-3 * losses.front());
}

TEST_CASE("train: fixed seed gives bitwise-identical parameters") {
  Rng rng(37);
  std::vector<Vector> xs, ys;
  for (int k = 0; k < 50; ++k) {
    xs.push_back(random_vector(3, rng));
    ys.push_back(random_vector(2, rng));
  }
  auto build = [&]() {
    Rng init(99);
    TwoStageModel model;
    model.extractor = make_mlp(3, 4, 4, Activation::kReLU, init);
    model.head = make_mlp(4, 4, 2, Activation::kReLU, init);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 5;
    return train_two_stage(model, xs, ys, cfg);
  };
  TwoStageModel m1 = build();
  TwoStageModel m2 = build();
  CHECK(std::equal(m1.extractor.layer1_weights.flat().begin(),
                   m1.extractor.layer1_weights.flat().end(),
                   m2.extractor.layer1_weights.flat().begin()));
  CHECK(std::equal(m1.head.layer2_weights.flat().begin(), m1.head.layer2_weights.flat().end(),
                   m2.head.layer2_weights.flat().begin()));
  CHECK(m1.head.layer2_bias == m2.head.layer2_bias);
}

TEST_CASE("checkpoint round-trip is lossless") {
  Rng rng(41);
  TwoStageModel model;
  model.extractor = random_mlp(5, 6, 6, Activation::kReLU, rng);
  model.head = random_mlp(6, 6, 2, Activation::kIdentity, rng);

  const std::string path =
      (std::filesystem::temp_directory_path() / "afocp_ckpt_test.json").string();
  save_model_checkpoint(model, path);
  TwoStageModel loaded = load_model_checkpoint(path);
  std::filesystem::remove(path);

  CHECK(loaded.extractor.activation == Activation::kReLU);
  CHECK(loaded.head.activation == Activation::kIdentity);
  CHECK(std::equal(model.extractor.layer1_weights.flat().begin(),
                   model.extractor.layer1_weights.flat().end(),
                   loaded.extractor.layer1_weights.flat().begin()));
  CHECK(std::equal(model.head.layer1_weights.flat().begin(),
                   model.head.layer1_weights.flat().end(),
                   loaded.head.layer1_weights.flat().begin()));
  CHECK(model.head.layer2_bias == loaded.head.layer2_bias);
}
