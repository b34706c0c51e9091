#include "afocp/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace afocp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

// ---------------------------------------------------------------------------
// WeightedScoreDistribution
// ---------------------------------------------------------------------------

double WeightedScoreDistribution::total_weight() const {
  double total = infinity_weight;
  for (const auto& [score, weight] : atoms) total += weight;
  return total;
}

void WeightedScoreDistribution::validate() const {
  if (infinity_weight < 0.0)
    throw std::invalid_argument("WeightedScoreDistribution: negative infinity weight");
  for (const auto& [score, weight] : atoms) {
    if (weight < 0.0) throw std::invalid_argument("WeightedScoreDistribution: negative weight");
    if (!std::isfinite(score))
      throw std::invalid_argument("WeightedScoreDistribution: non-finite atom score");
  }
  if (std::abs(total_weight() - 1.0) > 1e-9)
    throw std::invalid_argument("WeightedScoreDistribution: total weight must be 1");
}

double weighted_quantile(const WeightedScoreDistribution& dist, double level) {
  dist.validate();
  if (level < 0.0) return -kInf;
  if (level > 1.0) return kInf;

  // Ascending scan over atoms in a total (score, weight) order. Ties merge
  // their weights by construction: the threshold can only be crossed inside a
  // tied group when the group as a whole reaches it, and the returned value
  // is the shared score either way. The total order pins the floating-point
  // summation order, so levels sitting exactly on a cumulative boundary are
  // handled reproducibly.
  std::vector<std::pair<double, double>> sorted = dist.atoms;
  std::sort(sorted.begin(), sorted.end());

  double cumulative = 0.0;
  for (const auto& [value, weight] : sorted) {
    cumulative += weight;
    if (cumulative >= level) return value;
  }
  // Remaining mass sits on the +infinity atom.
  return kInf;
}

// ---------------------------------------------------------------------------
// AlphaTracker
// ---------------------------------------------------------------------------

AlphaTracker::AlphaTracker(double target_alpha, double lambda, double alpha_init)
    : target_alpha_(target_alpha), lambda_(lambda), alpha_init_(alpha_init) {
  if (!(target_alpha > 0.0 && target_alpha < 1.0))
    throw std::invalid_argument("AlphaTracker: target alpha must be in (0,1)");
  if (!(lambda > 0.0)) throw std::invalid_argument("AlphaTracker: lambda must be > 0");
  if (!(alpha_init >= 0.0 && alpha_init <= 1.0))
    throw std::invalid_argument("AlphaTracker: alpha_1 must be in [0,1]");
}

double AlphaTracker::alpha() const {
  return alpha_init_ + lambda_ * (static_cast<double>(steps_) * target_alpha_ -
                                  static_cast<double>(err_count_));
}

void AlphaTracker::update(int err) {
  if (err != 0 && err != 1) throw std::invalid_argument("AlphaTracker: err must be 0 or 1");
  history_.emplace_back(alpha(), err);
  steps_ += 1;
  err_count_ += err;
  // Feedback keeps alpha in [-lambda, 1+lambda]; a violation means the errs
  // fed in do not come from the score-quantile comparison at this level.
  const double a = alpha();
  if (a < -lambda_ - 1e-12 || a > 1.0 + lambda_ + 1e-12)
    throw std::logic_error("AlphaTracker: alpha left [-lambda, 1+lambda]");
}

double AlphaTracker::bound_lhs() const {
  if (steps_ == 0) return 0.0;
  return static_cast<double>(err_count_) / static_cast<double>(steps_);
}

double AlphaTracker::bound_rhs() const {
  if (steps_ == 0) return target_alpha_;
  return target_alpha_ +
         (alpha_init_ - alpha()) / (static_cast<double>(steps_) * lambda_);
}

// ---------------------------------------------------------------------------
// PredictionInterval and interval bound propagation
// ---------------------------------------------------------------------------

bool PredictionInterval::is_empty() const { return quantile_used == -kInf; }

double PredictionInterval::mean_width() const {
  if (is_empty()) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < dims(); ++i) {
    const double w = upper[i] - lower[i];
    if (std::isinf(w)) return kInf;
    sum += w;
  }
  return dims() > 0 ? sum / dims() : 0.0;
}

bool PredictionInterval::contains(std::span<const double> y) const {
  if (static_cast<int>(y.size()) != dims())
    throw std::invalid_argument("PredictionInterval: dimension mismatch");
  if (is_empty()) return false;
  for (int i = 0; i < dims(); ++i) {
    if (y[i] < lower[i] || y[i] > upper[i]) return false;
  }
  return true;
}

PredictionInterval interval_ibp(const MlpParams& head, std::span<const double> center_feature,
                                double radius) {
  head.validate();
  if (static_cast<int>(center_feature.size()) != head.input_dim())
    throw std::invalid_argument("interval_ibp: feature dimension mismatch");
  if (!all_finite(center_feature)) throw std::invalid_argument("interval_ibp: non-finite center");
  if (std::isnan(radius) || radius < 0.0)
    throw std::invalid_argument("interval_ibp: radius must be >= 0");

  PredictionInterval interval;
  interval.quantile_used = radius;
  const int out_dim = head.output_dim();
  if (std::isinf(radius)) {
    interval.lower.assign(out_dim, -kInf);
    interval.upper.assign(out_dim, kInf);
    return interval;
  }

  const int in_dim = head.input_dim();
  const int hidden = head.hidden_dim();

  // Bounding box of the feature ball.
  Vector lo(center_feature.begin(), center_feature.end());
  Vector hi(center_feature.begin(), center_feature.end());
  for (int j = 0; j < in_dim; ++j) {
    lo[j] -= radius;
    hi[j] += radius;
  }

  auto affine = [](const Matrix& w, const Vector& b, const Vector& in_lo, const Vector& in_hi) {
    std::pair<Vector, Vector> out{Vector(w.rows()), Vector(w.rows())};
    for (int i = 0; i < w.rows(); ++i) {
      double lo_acc = b[i];
      double hi_acc = b[i];
      const double* row = w.data() + static_cast<std::size_t>(i) * w.cols();
      for (int j = 0; j < w.cols(); ++j) {
        const double a = row[j] * in_lo[j];
        const double c = row[j] * in_hi[j];
        lo_acc += std::min(a, c);
        hi_acc += std::max(a, c);
      }
      out.first[i] = lo_acc;
      out.second[i] = hi_acc;
    }
    return out;
  };

  auto [h_lo, h_hi] = affine(head.layer1_weights, head.layer1_bias, lo, hi);
  if (head.activation == Activation::kReLU) {
    for (int i = 0; i < hidden; ++i) {
      h_lo[i] = std::max(0.0, h_lo[i]);
      h_hi[i] = std::max(0.0, h_hi[i]);
    }
  }
  auto [y_lo, y_hi] = affine(head.layer2_weights, head.layer2_bias, h_lo, h_hi);

  interval.lower = std::move(y_lo);
  interval.upper = std::move(y_hi);
  return interval;
}

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

bool method_uses_attention(Method method) {
  return method == Method::kAocp || method == Method::kAfocp;
}

ScoreKind method_score_kind(Method method) {
  return (method == Method::kFocp || method == Method::kAfocp) ? ScoreKind::kFeatureSpace
                                                               : ScoreKind::kOutputSpace;
}

std::string method_name(Method method) {
  switch (method) {
    case Method::kOcp: return "OCP";
    case Method::kFocp: return "FOCP";
    case Method::kAocp: return "AOCP";
    case Method::kAfocp: return "AFOCP";
  }
  throw std::logic_error("method_name: unknown method");
}

Method parse_method(const std::string& name) {
  std::string upper = name;
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "OCP") return Method::kOcp;
  if (upper == "FOCP") return Method::kFocp;
  if (upper == "AOCP") return Method::kAocp;
  if (upper == "AFOCP") return Method::kAfocp;
  throw std::invalid_argument("unknown method '" + name + "' (expected OCP, FOCP, AOCP, AFOCP)");
}

// ---------------------------------------------------------------------------
// Event CSV
// ---------------------------------------------------------------------------

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  out.append(buf, ptr);
}

}  // namespace

void write_event_csv(std::ostream& out, std::span<const EventRecord> events) {
  out << "t,method,alpha_t,score,quantile,err,mean_interval_length\n";
  std::string line;
  for (const EventRecord& e : events) {
    line.clear();
    line += std::to_string(e.t);
    line += ',';
    line += method_name(e.method);
    line += ',';
    append_double(line, e.alpha_t);
    line += ',';
    append_double(line, e.score);
    line += ',';
    append_double(line, e.quantile);
    line += ',';
    line += std::to_string(e.err);
    line += ',';
    append_double(line, e.mean_interval_length);
    line += '\n';
    out << line;
  }
}

std::vector<EventRecord> read_event_csv(std::istream& in) {
  std::vector<EventRecord> events;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("event csv: empty stream");
  if (line.rfind("t,method,", 0) != 0) throw std::runtime_error("event csv: bad header");
  auto parse_double = [](const std::string& field) {
    if (field == "inf") return kInf;
    if (field == "-inf") return -kInf;
    return std::stod(field);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    EventRecord e;
    std::getline(ss, field, ',');
    e.t = std::stoll(field);
    std::getline(ss, field, ',');
    e.method = parse_method(field);
    std::getline(ss, field, ',');
    e.alpha_t = parse_double(field);
    std::getline(ss, field, ',');
    e.score = parse_double(field);
    std::getline(ss, field, ',');
    e.quantile = parse_double(field);
    std::getline(ss, field, ',');
    e.err = std::stoi(field);
    std::getline(ss, field, ',');
    e.mean_interval_length = parse_double(field);
    events.push_back(std::move(e));
  }
  return events;
}

// ---------------------------------------------------------------------------
// Calibrator
// ---------------------------------------------------------------------------

void CalibratorConfig::validate() const {
  if (!(target_alpha > 0.0 && target_alpha < 1.0))
    throw std::invalid_argument("CalibratorConfig: alpha must be in (0,1)");
  if (!(lambda > 0.0)) throw std::invalid_argument("CalibratorConfig: lambda must be > 0");
  if (window_length < 1) throw std::invalid_argument("CalibratorConfig: window must be >= 1");
  if (inversion) inversion->validate();
}

Calibrator::Calibrator(CalibratorConfig config, TwoStageModel model,
                       std::optional<AttentionParams> attention)
    : config_(config),
      model_(std::move(model)),
      inversion_(config.inversion ? *config.inversion : default_inversion_config(model_.head)),
      alpha_(config.target_alpha, config.lambda,
             config.alpha_init >= 0.0 ? config.alpha_init : config.target_alpha),
      attention_(std::move(attention)) {
  config_.validate();
  model_.validate();
  if (method_uses_attention(config_.method)) {
    if (!attention_)
      throw std::invalid_argument("Calibrator: " + method_name(config_.method) +
                                  " requires attention parameters");
    attention_->validate();
    if (attention_->feature_dim() != model_.feature_dim())
      throw std::invalid_argument("Calibrator: attention feature dimension mismatch");
    attention_state_ = attention_adam_state(*attention_, config_.attention_adam);
  } else if (attention_) {
    throw std::invalid_argument("Calibrator: " + method_name(config_.method) +
                                " does not take attention parameters");
  }
  diag_.window_length = config_.window_length;
}

bool Calibrator::warmed_up() const {
  return static_cast<int>(window_.size()) == config_.window_length;
}

double Calibrator::compute_score(std::span<const double> x, std::span<const double> y) const {
  if (method_score_kind(config_.method) == ScoreKind::kOutputSpace)
    return output_score(model_, x, y);
  return feature_score(model_, x, y, inversion_);
}

void Calibrator::push_entry(WindowEntry entry) {
  window_features_.push_back(entry.feature);
  window_scores_.push_back(entry.score);
  if (config_.collect_diagnostics) diag_.sequence.push_back(entry);
  window_.push_back(std::move(entry));
  if (static_cast<int>(window_.size()) > config_.window_length) {
    window_.erase(window_.begin());
    window_features_.erase(window_features_.begin());
    window_scores_.erase(window_scores_.begin());
  }
}

void Calibrator::warmup(std::span<const Vector> xs, std::span<const Vector> ys) {
  if (static_cast<int>(xs.size()) != config_.window_length || xs.size() != ys.size())
    throw std::invalid_argument("warmup: need exactly window_length (x, y) pairs");
  if (!window_.empty()) throw std::logic_error("warmup: window already populated");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    WindowEntry entry;
    entry.x = xs[i];
    entry.y = ys[i];
    entry.feature = model_.features(xs[i]);
    entry.score = compute_score(xs[i], ys[i]);
    push_entry(std::move(entry));
  }
}

WeightedScoreDistribution Calibrator::build_distribution(
    std::span<const double> query_feature) const {
  if (!warmed_up()) throw std::logic_error("build_distribution: warm-up not finished");
  const int window = config_.window_length;
  WeightedScoreDistribution dist;
  dist.atoms.reserve(window);
  dist.infinity_weight = 1.0 / (window + 1.0);

  if (!method_uses_attention(config_.method)) {
    const double w = 1.0 / (window + 1.0);
    for (int i = 0; i < window; ++i) dist.atoms.emplace_back(window_scores_[i], w);
    return dist;
  }

  AttentionWeights weights = attention_weights(*attention_, query_feature,
                                               std::span<const Vector>(window_features_));
  for (int i = 0; i < window; ++i) dist.atoms.emplace_back(window_scores_[i], weights.calibration[i]);
  return dist;
}

Calibrator::CoverageTest Calibrator::coverage_test(std::span<const double> x,
                                                   std::span<const double> y) const {
  if (!warmed_up()) throw std::logic_error("coverage_test: warm-up not finished");
  Vector feature = model_.features(x);
  WeightedScoreDistribution dist = build_distribution(feature);
  const double quantile = weighted_quantile(dist, 1.0 - alpha_.alpha());
  const double score = compute_score(x, y);
  return {score > quantile ? 1 : 0, score, quantile};
}

PredictionInterval Calibrator::make_interval(std::span<const double> x,
                                             std::span<const double> feature,
                                             double quantile) const {
  const int out_dim = model_.head.output_dim();
  PredictionInterval interval;
  interval.quantile_used = quantile;

  if (quantile == -kInf) {
    // Empty prediction set; stored as a zero-width marker at the point
    // prediction so per-dimension bounds stay ordered.
    Vector mu = mlp_forward(model_.head, feature);
    interval.lower = mu;
    interval.upper = std::move(mu);
    return interval;
  }

  if (method_score_kind(config_.method) == ScoreKind::kOutputSpace) {
    if (std::isinf(quantile)) {
      interval.lower.assign(out_dim, -kInf);
      interval.upper.assign(out_dim, kInf);
      return interval;
    }
    Vector mu = mlp_forward(model_.head, feature);
    interval.lower.resize(out_dim);
    interval.upper.resize(out_dim);
    for (int i = 0; i < out_dim; ++i) {
      interval.lower[i] = mu[i] - quantile;
      interval.upper[i] = mu[i] + quantile;
    }
    return interval;
  }

  PredictionInterval ibp = interval_ibp(model_.head, feature, quantile);
  ibp.quantile_used = quantile;
  (void)x;
  return ibp;
}

PredictionInterval Calibrator::predict_interval(std::span<const double> x) const {
  if (!warmed_up()) throw std::logic_error("predict_interval: warm-up not finished");
  Vector feature = model_.features(x);
  WeightedScoreDistribution dist = build_distribution(feature);
  const double quantile = weighted_quantile(dist, 1.0 - alpha_.alpha());
  return make_interval(x, feature, quantile);
}

ObserveResult Calibrator::observe(std::span<const double> x, std::span<const double> y) {
  if (!warmed_up()) throw std::logic_error("observe: warm-up not finished");

  Vector feature = model_.features(x);

  // 1-2. Weights over the window and the weighted score distribution.
  WeightedScoreDistribution dist = build_distribution(feature);

  // 3. Quantile at the current level.
  const double alpha_used = alpha_.alpha();
  const double quantile = weighted_quantile(dist, 1.0 - alpha_used);

  // 4. Interval (outer approximation; reporting only).
  PredictionInterval interval = make_interval(x, feature, quantile);

  // 5. Coverage by score comparison.
  const double score = compute_score(x, y);
  const int err = score > quantile ? 1 : 0;

  if (config_.collect_diagnostics) {
    DiagStep step;
    step.alpha = alpha_used;
    step.quantile = quantile;
    step.query_feature = feature;
    if (method_uses_attention(config_.method)) {
      step.weights = attention_weights(*attention_, feature,
                                       std::span<const Vector>(window_features_))
                         .calibration;
    } else {
      step.weights.assign(config_.window_length + 1, 1.0 / (config_.window_length + 1.0));
    }
    diag_.steps.push_back(std::move(step));
  }

  // 6. Miscoverage level update.
  alpha_.update(err);

  // 7. Online attention fine-tuning on the newest fully observed window.
  if (method_uses_attention(config_.method) && !config_.freeze_attention) {
    AttentionExample example;
    example.query = feature;
    example.keys = std::span<const Vector>(window_features_);
    example.past_scores = std::span<const double>(window_scores_);
    example.target = score;
    online_update_attention(*attention_, {&example, 1}, *attention_state_);
  }

  // 8. Slide the window.
  WindowEntry entry;
  entry.x.assign(x.begin(), x.end());
  entry.y.assign(y.begin(), y.end());
  entry.feature = std::move(feature);
  entry.score = score;
  push_entry(std::move(entry));

  ObserveResult result;
  result.err = err;
  result.score = score;
  result.quantile = quantile;
  result.alpha_used = alpha_used;
  result.interval = std::move(interval);
  return result;
}

}  // namespace afocp
