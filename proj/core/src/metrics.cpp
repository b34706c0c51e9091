#include "afocp/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace afocp {

void MetricsAccumulator::record(std::span<const double> y, const PredictionInterval& interval,
                                int err) {
  if (static_cast<int>(y.size()) != interval.dims())
    throw std::invalid_argument("MetricsAccumulator: dimension mismatch");
  if (err != 0 && err != 1) throw std::invalid_argument("MetricsAccumulator: err must be 0 or 1");

  steps_ += 1;
  covered_ += 1 - err;
  const double width = interval.mean_width();
  if (std::isinf(width)) {
    infinite_steps_ += 1;
  } else {
    length_sum_ += width;
  }
  trajectory_.push_back({steps_, coverage(), mean_length()});
}

double MetricsAccumulator::coverage() const {
  return steps_ > 0 ? static_cast<double>(covered_) / static_cast<double>(steps_) : 0.0;
}

double MetricsAccumulator::mean_length() const {
  const long long finite = steps_ - infinite_steps_;
  return finite > 0 ? length_sum_ / static_cast<double>(finite) : 0.0;
}

double h_operator(const MlpParams& head, double diameter, std::span<const double> x_feature) {
  if (std::isnan(diameter) || diameter < 0.0)
    throw std::invalid_argument("h_operator: diameter must be >= 0");
  return interval_ibp(head, x_feature, diameter / 2.0).mean_width();
}

AssumptionReport assumption_diagnostics(const RunDiagLog& log, const TwoStageModel& model) {
  const int window = log.window_length;
  if (window < 1) throw std::invalid_argument("assumption_diagnostics: empty log");
  if (log.steps.empty()) throw std::invalid_argument("assumption_diagnostics: no logged steps");
  if (log.sequence.size() != log.steps.size() + static_cast<std::size_t>(window))
    throw std::invalid_argument("assumption_diagnostics: logs incomplete");

  AssumptionReport report;
  report.steps = static_cast<long long>(log.steps.size());

  for (std::size_t t = 0; t < log.steps.size(); ++t) {
    const DiagStep& step = log.steps[t];
    if (static_cast<int>(step.weights.size()) != window + 1)
      throw std::invalid_argument("assumption_diagnostics: bad weight vector");
    const double level = 1.0 - step.alpha;

    // Window of entries visible at step t.
    Vector feature_lengths(window), output_lengths(window), mapped_lengths(window);
    for (int i = 0; i < window; ++i) {
      const WindowEntry& entry = log.sequence[t + i];
      feature_lengths[i] = 2.0 * entry.score;
      output_lengths[i] = 2.0 * output_score(model, entry.x, entry.y);
      mapped_lengths[i] = h_operator(model.head, feature_lengths[i], entry.feature);
    }

    auto quantile_of = [&](const Vector& values) {
      WeightedScoreDistribution dist;
      dist.infinity_weight = step.weights[window];
      for (int i = 0; i < window; ++i) dist.atoms.emplace_back(values[i], step.weights[i]);
      return weighted_quantile(dist, level);
    };

    const double q_feature = quantile_of(feature_lengths);
    const double q_mapped = quantile_of(mapped_lengths);
    const double q_output = quantile_of(output_lengths);

    report.length_preservation_lhs += q_mapped;
    report.length_preservation_rhs += q_output;

    double mean_abs_dev = 0.0, mean_mapped_dev = 0.0, mean_mapped = 0.0;
    for (int i = 0; i < window; ++i) {
      mean_abs_dev += std::abs(q_feature - feature_lengths[i]);
      mean_mapped_dev += q_mapped - mapped_lengths[i];
      mean_mapped +=
          std::isinf(q_feature) ? 0.0 : h_operator(model.head, q_feature, log.sequence[t + i].feature);
    }
    mean_abs_dev /= window;
    mean_mapped_dev /= window;
    mean_mapped /= window;
    report.expansion_lhs += mean_abs_dev;
    report.expansion_rhs += mean_mapped_dev;

    const double h_current =
        std::isinf(q_feature) ? 0.0 : h_operator(model.head, q_feature, step.query_feature);
    report.quantile_stability_lhs += std::abs(h_current - mean_mapped);
  }

  const double n = static_cast<double>(report.steps);
  report.length_preservation_lhs /= n;
  report.length_preservation_rhs /= n;
  report.expansion_lhs /= n;
  report.expansion_rhs /= n;
  report.quantile_stability_lhs /= n;
  return report;
}

std::string assumption_report_json(const AssumptionReport& report) {
  nlohmann::ordered_json j;
  j["steps"] = report.steps;
  j["length_preservation_lhs"] = report.length_preservation_lhs;
  j["length_preservation_rhs"] = report.length_preservation_rhs;
  j["expansion_lhs"] = report.expansion_lhs;
  j["expansion_rhs"] = report.expansion_rhs;
  j["quantile_stability_lhs"] = report.quantile_stability_lhs;
  return j.dump(2);
}

void write_summary_json(const RunSummary& summary, const std::string& path) {
  nlohmann::ordered_json j;
  j["method"] = summary.method;
  j["dataset"] = summary.dataset;
  j["alpha"] = summary.alpha;
  j["L"] = summary.window;
  j["D"] = summary.feature_dim;
  j["seed"] = summary.seed;
  j["T"] = summary.steps;
  j["coverage"] = summary.coverage;
  j["mean_length"] = summary.mean_length;
  j["inf_length_steps"] = summary.inf_length_steps;
  j["theorem1_bound_lhs"] = summary.theorem1_bound_lhs;
  j["theorem1_bound_rhs"] = summary.theorem1_bound_rhs;
  j["sweep_var"] = summary.sweep_var;
  j["sweep_value"] = summary.sweep_value;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write summary: " + path);
  out << j.dump(2) << "\n";
}

RunSummary read_summary_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read summary: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  RunSummary s;
  s.method = j.at("method").get<std::string>();
  s.dataset = j.at("dataset").get<std::string>();
  s.alpha = j.at("alpha").get<double>();
  s.window = j.at("L").get<int>();
  s.feature_dim = j.at("D").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.steps = j.at("T").get<long long>();
  s.coverage = j.at("coverage").get<double>();
  s.mean_length = j.at("mean_length").get<double>();
  s.inf_length_steps = j.at("inf_length_steps").get<long long>();
  s.theorem1_bound_lhs = j.at("theorem1_bound_lhs").get<double>();
  s.theorem1_bound_rhs = j.at("theorem1_bound_rhs").get<double>();
  s.sweep_var = j.value("sweep_var", std::string{});
  s.sweep_value = j.value("sweep_value", 0.0);
  return s;
}

}  // namespace afocp
