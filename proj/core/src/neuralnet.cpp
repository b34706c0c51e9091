#include "afocp/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace afocp {

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void MlpParams::validate() const {
  check(layer1_weights.rows() > 0 && layer1_weights.cols() > 0, "MlpParams: empty layer 1");
  check(layer2_weights.rows() > 0 && layer2_weights.cols() > 0, "MlpParams: empty layer 2");
  check(static_cast<int>(layer1_bias.size()) == layer1_weights.rows(),
        "MlpParams: layer 1 bias/weight mismatch");
  check(static_cast<int>(layer2_bias.size()) == layer2_weights.rows(),
        "MlpParams: layer 2 bias/weight mismatch");
  check(layer2_weights.cols() == layer1_weights.rows(),
        "MlpParams: layer 2 input does not match layer 1 output");
  check(all_finite(layer1_weights) && all_finite(layer1_bias) && all_finite(layer2_weights) &&
            all_finite(layer2_bias),
        "MlpParams: non-finite entry");
}

MlpParams make_mlp(int input_dim, int hidden_dim, int output_dim, Activation activation, Rng& rng) {
  check(input_dim >= 1 && hidden_dim >= 1 && output_dim >= 1, "make_mlp: dimensions must be >= 1");
  MlpParams p;
  p.activation = activation;
  p.layer1_weights = Matrix(hidden_dim, input_dim);
  p.layer1_bias.assign(hidden_dim, 0.0);
  p.layer2_weights = Matrix(output_dim, hidden_dim);
  p.layer2_bias.assign(output_dim, 0.0);
  const double a1 = std::sqrt(6.0 / (input_dim + hidden_dim));
  for (double& w : p.layer1_weights.flat()) w = rng.uniform(-a1, a1);
  const double a2 = std::sqrt(6.0 / (hidden_dim + output_dim));
  for (double& w : p.layer2_weights.flat()) w = rng.uniform(-a2, a2);
  return p;
}

MlpParams make_identity_mlp(int dim) {
  MlpParams p;
  p.activation = Activation::kIdentity;
  p.layer1_weights = Matrix::identity(dim);
  p.layer1_bias.assign(dim, 0.0);
  p.layer2_weights = Matrix::identity(dim);
  p.layer2_bias.assign(dim, 0.0);
  return p;
}

Vector mlp_forward(const MlpParams& params, std::span<const double> x) {
  if (static_cast<int>(x.size()) != params.input_dim())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  Vector h(params.hidden_dim(), 0.0);
  for (int i = 0; i < params.hidden_dim(); ++i) {
    double s = params.layer1_bias[i];
    const double* row = params.layer1_weights.data() + static_cast<std::size_t>(i) * params.input_dim();
    for (int j = 0; j < params.input_dim(); ++j) s += row[j] * x[j];
    h[i] = s;
  }
  if (params.activation == Activation::kReLU) {
    for (double& v : h) v = v > 0.0 ? v : 0.0;
  }
  Vector y(params.output_dim(), 0.0);
  for (int i = 0; i < params.output_dim(); ++i) {
    double s = params.layer2_bias[i];
    const double* row = params.layer2_weights.data() + static_cast<std::size_t>(i) * params.hidden_dim();
    for (int j = 0; j < params.hidden_dim(); ++j) s += row[j] * h[j];
    y[i] = s;
  }
  return y;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
  MlpGrads g;
  g.layer1_weights = Matrix(params.hidden_dim(), params.input_dim());
  g.layer1_bias.assign(params.hidden_dim(), 0.0);
  g.layer2_weights = Matrix(params.output_dim(), params.hidden_dim());
  g.layer2_bias.assign(params.output_dim(), 0.0);
  return g;
}

bool MlpGrads::all_finite() const {
  return afocp::all_finite(layer1_weights) && afocp::all_finite(layer1_bias) &&
         afocp::all_finite(layer2_weights) && afocp::all_finite(layer2_bias);
}

MlpBackwardResult mlp_backward(const MlpParams& params, std::span<const double> x,
                               std::span<const double> upstream_grad) {
  if (static_cast<int>(x.size()) != params.input_dim())
    throw std::invalid_argument("mlp_backward: input dimension mismatch");
  if (static_cast<int>(upstream_grad.size()) != params.output_dim())
    throw std::invalid_argument("mlp_backward: upstream dimension mismatch");

  // Recompute the forward pass to obtain pre-activations.
  Vector z1(params.hidden_dim(), 0.0);
  for (int i = 0; i < params.hidden_dim(); ++i) {
    double s = params.layer1_bias[i];
    const double* row = params.layer1_weights.data() + static_cast<std::size_t>(i) * params.input_dim();
    for (int j = 0; j < params.input_dim(); ++j) s += row[j] * x[j];
    z1[i] = s;
  }
  Vector h = z1;
  if (params.activation == Activation::kReLU) {
    for (double& v : h) v = v > 0.0 ? v : 0.0;
  }

  MlpBackwardResult result;
  result.param_grads = MlpGrads::zeros_like(params);

  // d/d(layer2): dW2 = upstream h^T, db2 = upstream.
  add_outer(result.param_grads.layer2_weights, upstream_grad, h);
  result.param_grads.layer2_bias.assign(upstream_grad.begin(), upstream_grad.end());

  // Back through layer 2 and the activation. ReLU subgradient at 0 is 0.
  Vector dh = matvec_transposed(params.layer2_weights, upstream_grad);
  Vector dz1 = std::move(dh);
  if (params.activation == Activation::kReLU) {
    for (int i = 0; i < params.hidden_dim(); ++i) {
      if (!(z1[i] > 0.0)) dz1[i] = 0.0;
    }
  }

  add_outer(result.param_grads.layer1_weights, dz1, x);
  result.param_grads.layer1_bias = dz1;
  result.input_grad = matvec_transposed(params.layer1_weights, dz1);
  return result;
}

AdamState AdamState::for_sizes(const std::vector<std::size_t>& sizes, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (std::size_t n : sizes) {
    s.first_moment.emplace_back(n, 0.0);
    s.second_moment.emplace_back(n, 0.0);
  }
  return s;
}

AdamState AdamState::for_mlp(const MlpParams& params, const AdamConfig& config) {
  return for_sizes({params.layer1_weights.size(), params.layer1_bias.size(),
                    params.layer2_weights.size(), params.layer2_bias.size()},
                   config);
}

void adam_step_tensors(const std::vector<std::span<double>>& params,
                       const std::vector<std::span<const double>>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw std::invalid_argument("adam_step: tensor count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size() || params[k].size() != state.first_moment[k].size())
      throw std::invalid_argument("adam_step: tensor shape mismatch");
    if (!all_finite(grads[k])) throw std::invalid_argument("adam_step: non-finite gradient");
  }

  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));

  for (std::size_t k = 0; k < params.size(); ++k) {
    std::span<double> p = params[k];
    std::span<const double> g = grads[k];
    Vector& m = state.first_moment[k];
    Vector& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= c.learning_rate * (m_hat / (std::sqrt(v_hat) + c.epsilon) + c.weight_decay * p[i]);
    }
  }
}

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state) {
  adam_step_tensors(
      {params.layer1_weights.flat(), std::span<double>(params.layer1_bias),
       params.layer2_weights.flat(), std::span<double>(params.layer2_bias)},
      {grads.layer1_weights.flat(), std::span<const double>(grads.layer1_bias),
       grads.layer2_weights.flat(), std::span<const double>(grads.layer2_bias)},
      state);
}

void TwoStageModel::validate() const {
  extractor.validate();
  head.validate();
  if (extractor.output_dim() != head.input_dim())
    throw std::invalid_argument("TwoStageModel: extractor output does not match head input");
}

namespace {

void accumulate(MlpGrads& into, const MlpGrads& delta) {
  auto add = [](std::span<double> a, std::span<const double> b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };
  add(into.layer1_weights.flat(), delta.layer1_weights.flat());
  add(into.layer1_bias, delta.layer1_bias);
  add(into.layer2_weights.flat(), delta.layer2_weights.flat());
  add(into.layer2_bias, delta.layer2_bias);
}

}  // namespace

TwoStageModel train_two_stage(TwoStageModel model, const std::vector<Vector>& inputs,
                              const std::vector<Vector>& targets, const TrainConfig& config,
                              std::vector<double>* epoch_loss) {
  if (inputs.empty()) throw std::invalid_argument("train_two_stage: empty dataset");
  if (inputs.size() != targets.size())
    throw std::invalid_argument("train_two_stage: input/target count mismatch");
  if (config.batch_size < 1) throw std::invalid_argument("train_two_stage: batch_size must be >= 1");
  model.validate();

  const int n = static_cast<int>(inputs.size());
  const int out_dim = model.head.output_dim();

  AdamState extractor_state = AdamState::for_mlp(model.extractor, config.adam);
  AdamState head_state = AdamState::for_mlp(model.head, config.adam);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    long long loss_terms = 0;

    for (int start = 0; start < n; start += config.batch_size) {
      const int end = std::min(n, start + config.batch_size);
      const int batch = end - start;
      MlpGrads extractor_grads = MlpGrads::zeros_like(model.extractor);
      MlpGrads head_grads = MlpGrads::zeros_like(model.head);
      const double scale = 1.0 / (static_cast<double>(batch) * out_dim);

      for (int k = start; k < end; ++k) {
        const Vector& x = inputs[order[k]];
        const Vector& y = targets[order[k]];
        Vector v = mlp_forward(model.extractor, x);
        Vector y_hat = mlp_forward(model.head, v);

        Vector dy(out_dim, 0.0);
        for (int i = 0; i < out_dim; ++i) {
          const double r = y_hat[i] - y[i];
          loss_sum += r * r / out_dim;  // per-sample mean over output dims
          dy[i] = 2.0 * r * scale;
        }
        loss_terms += 1;

        MlpBackwardResult head_back = mlp_backward(model.head, v, dy);
        MlpBackwardResult extractor_back = mlp_backward(model.extractor, x, head_back.input_grad);

        accumulate(head_grads, head_back.param_grads);
        accumulate(extractor_grads, extractor_back.param_grads);
      }

      adam_step(model.extractor, extractor_grads, extractor_state);
      adam_step(model.head, head_grads, head_state);
    }

    if (epoch_loss != nullptr) epoch_loss->push_back(loss_sum / std::max<long long>(1, loss_terms));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
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

json mlp_to_json(const MlpParams& p) {
  json j;
  j["activation"] = p.activation == Activation::kReLU ? "relu" : "identity";
  j["layer1_weights"] = matrix_to_json(p.layer1_weights);
  j["layer1_bias"] = p.layer1_bias;
  j["layer2_weights"] = matrix_to_json(p.layer2_weights);
  j["layer2_bias"] = p.layer2_bias;
  return j;
}

MlpParams mlp_from_json(const json& j) {
  MlpParams p;
  const std::string act = j.at("activation").get<std::string>();
  if (act == "relu") {
    p.activation = Activation::kReLU;
  } else if (act == "identity") {
    p.activation = Activation::kIdentity;
  } else {
    throw std::invalid_argument("checkpoint: unknown activation '" + act + "'");
  }
  p.layer1_weights = matrix_from_json(j.at("layer1_weights"));
  p.layer1_bias = j.at("layer1_bias").get<Vector>();
  p.layer2_weights = matrix_from_json(j.at("layer2_weights"));
  p.layer2_bias = j.at("layer2_bias").get<Vector>();
  p.validate();
  return p;
}

}  // namespace

void save_model_checkpoint(const TwoStageModel& model, const std::string& path) {
  model.validate();
  json j;
  j["kind"] = "two_stage_model";
  j["extractor"] = mlp_to_json(model.extractor);
  j["head"] = mlp_to_json(model.head);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << j.dump(2) << "\n";
}

TwoStageModel load_model_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json j = json::parse(in);
  if (j.at("kind").get<std::string>() != "two_stage_model")
    throw std::invalid_argument("checkpoint: not a two_stage_model file");
  TwoStageModel model{mlp_from_json(j.at("extractor")), mlp_from_json(j.at("head"))};
  model.validate();
  return model;
}

}  // namespace afocp
