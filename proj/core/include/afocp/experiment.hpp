#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "afocp/calibration.hpp"
#include "afocp/data.hpp"
#include "afocp/metrics.hpp"

namespace afocp {

struct DatasetSpec {
  enum class Kind { kSynthetic, kCsvPreset };
  Kind kind = Kind::kSynthetic;
  SyntheticConfig synthetic{};  // per-cell seed is derived from the run seed
  std::string preset_path;
  std::string csv_path;  // optional override of the preset's csv entry
};

/// Full protocol configuration: train the two-stage model on the train split,
/// pretrain attention when the method needs it, warm the calibrator up with
/// the last L train points and stream the test split.
struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<Method> methods{Method::kOcp, Method::kFocp, Method::kAocp, Method::kAfocp};
  double alpha = 0.1;
  int window = 100;       // L
  int feature_dim = 50;   // D
  double lambda = 0.005;
  std::optional<InversionConfig> inversion;  // default derived from the head
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string out_dir;

  SplitSpec split{};
  int train_epochs = 10;
  int train_batch_size = 64;
  AdamConfig train_adam{};  // lr 5e-4, weight decay 1e-6

  int attention_latent_dim = 32;
  int attention_epochs = 20;
  AdamConfig attention_adam{};

  int jobs = 0;  // 0: one worker per hardware thread, capped at the cell count
  bool diagnostics = false;
  bool verbose = true;  // per-cell progress lines on stderr

  std::string sweep_var;  // label carried into summaries ("" when not sweeping)
  double sweep_value = 0.0;

  void validate() const;
};

struct CellResult {
  Method method = Method::kOcp;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunSummary summary;
  std::string events_path;
  std::string summary_path;
};

struct MethodAggregate {
  std::string method;
  int cells = 0;
  double coverage_mean = 0.0;
  double coverage_stddev = 0.0;
  double length_mean = 0.0;
  double length_stddev = 0.0;
  long long inf_length_steps = 0;
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  std::vector<MethodAggregate> aggregates;
  bool all_ok = false;
};

/// Runs every (method, seed) cell on a bounded worker pool. A failing cell is
/// recorded and does not stop the others. Event CSVs, per-run summaries and
/// per-method aggregates are written atomically under out_dir; all outputs
/// are a pure function of the configuration.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Collects every *.summary.json under summaries_dir (recursively) into one
/// tidy CSV with columns dataset, method, seed, sweep_var, sweep_value,
/// coverage, mean_length. Unreadable files are skipped with a warning on
/// stderr. Throws if no summaries are found.
void emit_plotdata(const std::string& summaries_dir, std::ostream& out);

}  // namespace afocp
