// Microbenchmarks for the hot paths of the online loop: score evaluation,
// weighted quantiles, attention weighting, head inversion and full observe
// steps at the default experiment scale (D = 50, L = 100).

#include <benchmark/benchmark.h>

#include <optional>
#include <vector>

#include "afocp/calibration.hpp"

namespace {

using namespace afocp;

TwoStageModel default_model() {
  Rng rng(1);
  TwoStageModel model{make_mlp(50, 50, 50, Activation::kReLU, rng),
                      make_mlp(50, 50, 50, Activation::kReLU, rng)};
  return model;
}

Vector random_vector(int n, Rng& rng) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void BM_MlpForward(benchmark::State& state) {
  TwoStageModel model = default_model();
  Rng rng(2);
  Vector x = random_vector(50, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mlp_forward(model.extractor, x));
}
BENCHMARK(BM_MlpForward);

void BM_MlpBackward(benchmark::State& state) {
  TwoStageModel model = default_model();
  Rng rng(3);
  Vector x = random_vector(50, rng);
  Vector upstream = random_vector(50, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mlp_backward(model.extractor, x, upstream));
}
BENCHMARK(BM_MlpBackward);

void BM_WeightedQuantile(benchmark::State& state) {
  const int atoms = static_cast<int>(state.range(0));
  Rng rng(4);
  WeightedScoreDistribution dist;
  const double w = 1.0 / (atoms + 1.0);
  for (int i = 0; i < atoms; ++i) dist.atoms.emplace_back(rng.uniform(0.0, 10.0), w);
  dist.infinity_weight = w;
  for (auto _ : state) benchmark::DoNotOptimize(weighted_quantile(dist, 0.9));
}
BENCHMARK(BM_WeightedQuantile)->Arg(100)->Arg(1000);

void BM_AttentionWeights(benchmark::State& state) {
  Rng rng(5);
  AttentionParams params = make_attention(50, 32, rng);
  Vector query = random_vector(50, rng);
  std::vector<Vector> keys;
  for (int l = 0; l < 100; ++l) keys.push_back(random_vector(50, rng));
  for (auto _ : state) benchmark::DoNotOptimize(attention_weights(params, query, keys));
}
BENCHMARK(BM_AttentionWeights);

void BM_InvertHead(benchmark::State& state) {
  TwoStageModel model = default_model();
  Rng rng(6);
  Vector v0 = model.features(random_vector(50, rng));
  Vector y = random_vector(50, rng);
  const InversionConfig cfg = default_inversion_config(model.head);
  for (auto _ : state) benchmark::DoNotOptimize(invert_head(model.head, v0, y, cfg));
}
BENCHMARK(BM_InvertHead);

void BM_IntervalIbp(benchmark::State& state) {
  TwoStageModel model = default_model();
  Rng rng(7);
  Vector center = random_vector(50, rng);
  for (auto _ : state) benchmark::DoNotOptimize(interval_ibp(model.head, center, 0.8));
}
BENCHMARK(BM_IntervalIbp);

void BM_ObserveStep(benchmark::State& state) {
  const Method method = state.range(0) == 0 ? Method::kOcp : Method::kAfocp;
  TwoStageModel model = default_model();
  Rng rng(8);

  CalibratorConfig cfg;
  cfg.method = method;
  cfg.window_length = 100;
  std::optional<AttentionParams> attention;
  if (method_uses_attention(method)) {
    Rng arng(9);
    attention = make_attention(50, 32, arng);
  }
  Calibrator calibrator(cfg, model, std::move(attention));

  std::vector<Vector> xs, ys;
  for (int t = 0; t < 100; ++t) {
    xs.push_back(random_vector(50, rng));
    Vector y = model.predict(xs.back());
    for (double& v : y) v += rng.normal(0.0, 0.2);
    ys.push_back(std::move(y));
  }
  calibrator.warmup(xs, ys);

  Vector x = random_vector(50, rng);
  Vector y = model.predict(x);
  for (double& v : y) v += rng.normal(0.0, 0.2);
  for (auto _ : state) benchmark::DoNotOptimize(calibrator.observe(x, y));
}
BENCHMARK(BM_ObserveStep)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
