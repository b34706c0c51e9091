#include "afocp/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace afocp {

namespace fs = std::filesystem;

void ExperimentConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("experiment: alpha must be in (0,1)");
  if (window < 1) throw std::invalid_argument("experiment: window must be >= 1");
  if (feature_dim < 1) throw std::invalid_argument("experiment: feature dim must be >= 1");
  if (!(lambda > 0.0)) throw std::invalid_argument("experiment: lambda must be > 0");
  if (seeds.empty()) throw std::invalid_argument("experiment: need at least one seed");
  if (methods.empty()) throw std::invalid_argument("experiment: need at least one method");
  if (out_dir.empty()) throw std::invalid_argument("experiment: output directory not set");
  if (inversion) inversion->validate();
  if (dataset.kind == DatasetSpec::Kind::kCsvPreset && dataset.preset_path.empty())
    throw std::invalid_argument("experiment: csv dataset needs a preset path");
}

namespace {

// Everything the method cells of one seed share. Prepared lazily by the
// first cell that needs it; the per-seed mutex makes later cells wait.
struct SeedState {
  std::mutex mu;
  bool base_ready = false;
  std::string base_error;
  TimeSeriesDataset train;
  TimeSeriesDataset test;
  TwoStageModel model;
  std::map<ScoreKind, AttentionParams> attention;
  std::map<ScoreKind, std::string> attention_error;
};

std::vector<Vector> matrix_rows(const Matrix& m) {
  std::vector<Vector> rows;
  rows.reserve(m.rows());
  for (int t = 0; t < m.rows(); ++t) rows.emplace_back(m.row(t).begin(), m.row(t).end());
  return rows;
}

TimeSeriesDataset build_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.dataset.kind == DatasetSpec::Kind::kSynthetic) {
    SyntheticConfig synthetic = cfg.dataset.synthetic;
    synthetic.seed = seed;
    return generate_synthetic(synthetic);
  }
  DatasetPreset preset = load_preset(cfg.dataset.preset_path);
  return load_preset_dataset(preset, cfg.dataset.csv_path, seed);
}

void prepare_base(const ExperimentConfig& cfg, std::uint64_t seed, SeedState& state) {
  TimeSeriesDataset full = build_dataset(cfg, seed);
  auto [train, test] = split_and_downsample(full, cfg.split);
  if (train.size() < cfg.window)
    throw std::runtime_error("train split has " + std::to_string(train.size()) +
                             " rows, fewer than the window length " + std::to_string(cfg.window) +
                             "; use a smaller --window");
  standardize_with_train_stats(train, test);

  Rng init_rng(derive_seed(seed, SeedStream::kModelInit));
  TwoStageModel model;
  model.extractor =
      make_mlp(train.input_dim(), cfg.feature_dim, cfg.feature_dim, Activation::kReLU, init_rng);
  model.head =
      make_mlp(cfg.feature_dim, cfg.feature_dim, train.target_dim(), Activation::kReLU, init_rng);

  TrainConfig train_cfg;
  train_cfg.epochs = cfg.train_epochs;
  train_cfg.batch_size = cfg.train_batch_size;
  train_cfg.seed = derive_seed(seed, SeedStream::kTrainShuffle);
  train_cfg.adam = cfg.train_adam;

  std::vector<double> epoch_loss;
  state.model = train_two_stage(std::move(model), matrix_rows(train.inputs),
                                matrix_rows(train.targets), train_cfg, &epoch_loss);
  if (cfg.verbose && !epoch_loss.empty()) {
    std::ostringstream msg;
    msg << "[seed " << seed << "] train mse " << epoch_loss.front() << " -> " << epoch_loss.back()
        << " over " << epoch_loss.size() << " epochs\n";
    std::cerr << msg.str();
  }
  state.train = std::move(train);
  state.test = std::move(test);
}

InversionConfig cell_inversion(const ExperimentConfig& cfg, const TwoStageModel& model) {
  return cfg.inversion ? *cfg.inversion : default_inversion_config(model.head);
}

const AttentionParams& prepare_attention(const ExperimentConfig& cfg, std::uint64_t seed,
                                         SeedState& state, ScoreKind kind) {
  auto found = state.attention.find(kind);
  if (found != state.attention.end()) return found->second;
  auto failed = state.attention_error.find(kind);
  if (failed != state.attention_error.end()) throw std::runtime_error(failed->second);

  try {
    const int n_train = state.train.size();
    if (n_train <= cfg.window)
      throw std::runtime_error("train split too short to build attention windows; use a smaller --window");

    std::vector<Vector> features(n_train);
    Vector scores(n_train);
    const InversionConfig inversion = cell_inversion(cfg, state.model);
    for (int t = 0; t < n_train; ++t) {
      const Vector x = state.train.input_row(t);
      const Vector y = state.train.target_row(t);
      features[t] = state.model.features(x);
      scores[t] = kind == ScoreKind::kOutputSpace
                      ? output_score(state.model, x, y)
                      : feature_score(state.model, x, y, inversion);
    }

    std::vector<AttentionExample> examples;
    examples.reserve(n_train - cfg.window);
    for (int t = cfg.window; t < n_train; ++t) {
      AttentionExample ex;
      ex.query = features[t];
      ex.keys = std::span<const Vector>(features.data() + t - cfg.window,
                                        static_cast<std::size_t>(cfg.window));
      ex.past_scores = std::span<const double>(scores.data() + t - cfg.window,
                                               static_cast<std::size_t>(cfg.window));
      ex.target = scores[t];
      examples.push_back(ex);
    }

    Rng init_rng(derive_seed(seed, SeedStream::kAttentionInit));
    AttentionParams params = make_attention(cfg.feature_dim, cfg.attention_latent_dim, init_rng);
    params = pretrain_attention(std::move(params), examples, cfg.attention_epochs,
                                derive_seed(seed, SeedStream::kAttentionShuffle),
                                cfg.attention_adam);
    auto [it, inserted] = state.attention.emplace(kind, std::move(params));
    (void)inserted;
    return it->second;
  } catch (const std::exception& e) {
    state.attention_error[kind] = e.what();
    throw;
  }
}

std::string double_to_string(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

void write_file_atomically(const std::string& path, const std::string& contents) {
  const fs::path target(path);
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
  }
  fs::rename(tmp, target);
}

CellResult run_cell(const ExperimentConfig& cfg, Method method, std::uint64_t seed,
                    SeedState& state) {
  CellResult result;
  result.method = method;
  result.seed = seed;

  std::unique_lock<std::mutex> lock(state.mu);
  try {
    if (!state.base_error.empty()) throw std::runtime_error(state.base_error);
    if (!state.base_ready) {
      try {
        prepare_base(cfg, seed, state);
        state.base_ready = true;
      } catch (const std::exception& e) {
        state.base_error = e.what();
        throw;
      }
    }

    std::optional<AttentionParams> attention;
    if (method_uses_attention(method))
      attention = prepare_attention(cfg, seed, state, method_score_kind(method));

    CalibratorConfig ccfg;
    ccfg.method = method;
    ccfg.target_alpha = cfg.alpha;
    ccfg.lambda = cfg.lambda;
    ccfg.window_length = cfg.window;
    ccfg.inversion = cell_inversion(cfg, state.model);
    ccfg.attention_adam = cfg.attention_adam;
    ccfg.collect_diagnostics = cfg.diagnostics;

    Calibrator calibrator(ccfg, state.model, std::move(attention));

    // Warm up on the last L train pairs, then stream the test split.
    const int n_train = state.train.size();
    std::vector<Vector> warm_x, warm_y;
    for (int t = n_train - cfg.window; t < n_train; ++t) {
      warm_x.push_back(state.train.input_row(t));
      warm_y.push_back(state.train.target_row(t));
    }

    const TimeSeriesDataset test = state.test;  // copy: stream without the lock
    const TwoStageModel model = state.model;
    const std::string dataset_name = state.train.name;
    lock.unlock();

    calibrator.warmup(warm_x, warm_y);

    MetricsAccumulator metrics;
    std::vector<EventRecord> events;
    events.reserve(test.size());
    for (int t = 0; t < test.size(); ++t) {
      const Vector x = test.input_row(t);
      const Vector y = test.target_row(t);
      ObserveResult obs = calibrator.observe(x, y);
      metrics.record(y, obs.interval, obs.err);
      events.push_back({t + 1, method, obs.alpha_used, obs.score, obs.quantile, obs.err,
                        obs.interval.mean_width()});
    }

    RunSummary summary;
    summary.method = method_name(method);
    summary.dataset = dataset_name;
    summary.alpha = cfg.alpha;
    summary.window = cfg.window;
    summary.feature_dim = cfg.feature_dim;
    summary.seed = seed;
    summary.steps = metrics.step_count();
    summary.coverage = metrics.coverage();
    summary.mean_length = metrics.mean_length();
    summary.inf_length_steps = metrics.infinite_length_steps();
    summary.theorem1_bound_lhs = calibrator.alpha_tracker().bound_lhs();
    summary.theorem1_bound_rhs = calibrator.alpha_tracker().bound_rhs();
    summary.sweep_var = cfg.sweep_var;
    summary.sweep_value = cfg.sweep_value;

    const std::string stem = method_name(method) + "_seed" + std::to_string(seed);
    result.events_path = (fs::path(cfg.out_dir) / (stem + ".events.csv")).string();
    result.summary_path = (fs::path(cfg.out_dir) / (stem + ".summary.json")).string();

    std::ostringstream events_text;
    write_event_csv(events_text, events);
    write_file_atomically(result.events_path, events_text.str());

    const std::string tmp_summary = result.summary_path + ".build";
    write_summary_json(summary, tmp_summary);
    fs::rename(tmp_summary, result.summary_path);

    if (cfg.diagnostics) {
      AssumptionReport report = assumption_diagnostics(calibrator.diagnostics(), model);
      write_file_atomically((fs::path(cfg.out_dir) / (stem + ".diagnostics.json")).string(),
                            assumption_report_json(report) + "\n");
    }

    result.summary = summary;
    result.ok = true;
  } catch (const std::exception& e) {
    if (lock.owns_lock()) lock.unlock();
    result.ok = false;
    result.error = e.what();
  }
  return result;
}

double sample_stddev(const std::vector<double>& values, double mean) {
  if (values.size() < 2) return 0.0;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (values.size() - 1));
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);

  struct Cell {
    Method method;
    std::uint64_t seed;
    std::size_t seed_index;
  };
  std::vector<Cell> cells;
  for (std::size_t si = 0; si < config.seeds.size(); ++si)
    for (Method method : config.methods) cells.push_back({method, config.seeds[si], si});

  std::vector<SeedState> seed_states(config.seeds.size());
  std::vector<CellResult> results(cells.size());

  int workers = config.jobs > 0 ? config.jobs
                                : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& cell = cells[i];
      results[i] = run_cell(config, cell.method, cell.seed, seed_states[cell.seed_index]);
      if (config.verbose || !results[i].ok) {
        std::ostringstream msg;
        msg << "[cell " << method_name(cell.method) << " seed " << cell.seed << "] "
            << (results[i].ok ? "done" : "FAILED: " + results[i].error) << "\n";
        std::cerr << msg.str();
      }
    }
  };

  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  ExperimentResult out;
  out.cells = std::move(results);
  out.all_ok = std::all_of(out.cells.begin(), out.cells.end(),
                           [](const CellResult& c) { return c.ok; });

  // Cross-seed aggregates per method.
  for (Method method : config.methods) {
    std::vector<double> coverages, lengths;
    long long inf_steps = 0;
    for (const CellResult& cell : out.cells) {
      if (!cell.ok || cell.method != method) continue;
      coverages.push_back(cell.summary.coverage);
      lengths.push_back(cell.summary.mean_length);
      inf_steps += cell.summary.inf_length_steps;
    }
    if (coverages.empty()) continue;
    MethodAggregate agg;
    agg.method = method_name(method);
    agg.cells = static_cast<int>(coverages.size());
    for (double c : coverages) agg.coverage_mean += c;
    agg.coverage_mean /= coverages.size();
    for (double l : lengths) agg.length_mean += l;
    agg.length_mean /= lengths.size();
    agg.coverage_stddev = sample_stddev(coverages, agg.coverage_mean);
    agg.length_stddev = sample_stddev(lengths, agg.length_mean);
    agg.inf_length_steps = inf_steps;
    out.aggregates.push_back(agg);

    std::ostringstream j;
    j << "{\n"
      << "  \"method\": \"" << agg.method << "\",\n"
      << "  \"cells\": " << agg.cells << ",\n"
      << "  \"coverage_mean\": " << double_to_string(agg.coverage_mean) << ",\n"
      << "  \"coverage_stddev\": " << double_to_string(agg.coverage_stddev) << ",\n"
      << "  \"length_mean\": " << double_to_string(agg.length_mean) << ",\n"
      << "  \"length_stddev\": " << double_to_string(agg.length_stddev) << ",\n"
      << "  \"inf_length_steps\": " << agg.inf_length_steps << "\n"
      << "}\n";
    write_file_atomically((fs::path(config.out_dir) / (agg.method + ".aggregate.json")).string(),
                          j.str());
  }
  return out;
}

void emit_plotdata(const std::string& summaries_dir, std::ostream& out) {
  if (!fs::exists(summaries_dir))
    throw std::runtime_error("plotdata: directory does not exist: " + summaries_dir);

  std::vector<RunSummary> summaries;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(summaries_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > 13 && name.ends_with(".summary.json")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& file : files) {
    try {
      summaries.push_back(read_summary_json(file.string()));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << file.string() << ": " << e.what() << "\n";
    }
  }
  if (summaries.empty()) throw std::runtime_error("plotdata: no summaries under " + summaries_dir);

  std::sort(summaries.begin(), summaries.end(), [](const RunSummary& a, const RunSummary& b) {
    return std::tie(a.dataset, a.sweep_var, a.sweep_value, a.method, a.seed) <
           std::tie(b.dataset, b.sweep_var, b.sweep_value, b.method, b.seed);
  });

  // 9 significant digits, '.' decimal.
  auto fmt = [](double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
    (void)ec;
    return std::string(buf, ptr);
  };

  out << "dataset,method,seed,sweep_var,sweep_value,coverage,mean_length\n";
  for (const RunSummary& s : summaries) {
    out << s.dataset << ',' << s.method << ',' << s.seed << ',' << s.sweep_var << ','
        << fmt(s.sweep_value) << ',' << fmt(s.coverage) << ',' << fmt(s.mean_length) << "\n";
  }
}

}  // namespace afocp
