#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "afocp/linalg.hpp"

namespace afocp {

/// Row-aligned (input, target) series. Row order is temporal and is never
/// permuted by any operation in this module.
struct TimeSeriesDataset {
  Matrix inputs;   // [T x D_in]
  Matrix targets;  // [T x D_out]
  std::vector<std::string> input_names;
  std::vector<std::string> target_names;
  std::string name;

  int size() const { return inputs.rows(); }
  int input_dim() const { return inputs.cols(); }
  int target_dim() const { return targets.cols(); }
  void validate() const;

  Vector input_row(int t) const { return Vector(inputs.row(t).begin(), inputs.row(t).end()); }
  Vector target_row(int t) const { return Vector(targets.row(t).begin(), targets.row(t).end()); }
};

/// Regime-switching generator: segments of length uniform on
/// [segment_min, segment_max] alternate between a low-level regime with
/// Gaussian noise of per-coordinate variance level/2 and a high-level regime
/// with uniform noise on (-level, level). Targets follow
/// y = intercept + W x + noise with W entries N(0, 1/dim).
struct SyntheticConfig {
  int length = 1500;
  int dim = 50;
  int segment_min = 40;
  int segment_max = 80;
  double regime_a_level = 3.0;
  double regime_b_level = 21.0;
  double intercept = 10.0;
  std::uint64_t seed = 0;
  bool zero_noise = false;  // test hook: y = intercept + W x exactly

  void validate() const;
};

TimeSeriesDataset generate_synthetic(const SyntheticConfig& cfg);

struct CsvLoadOptions {
  /// Columns min-max scaled to [-1,1] after loading (angular encodings).
  std::vector<std::string> minmax_to_unit;
};

struct CsvLoadReport {
  int rows_dropped = 0;  // rows removed because of missing values
};

/// Parses the named numeric columns from a comma-separated file with a
/// header row, '.' decimal separator and optional double-quoted fields.
/// Rows with empty cells in a selected column are dropped (counted in the
/// report); a non-numeric cell raises an error naming the data row.
TimeSeriesDataset load_csv(const std::string& path, const std::vector<std::string>& input_columns,
                           const std::vector<std::string>& target_columns,
                           const CsvLoadOptions& options = {}, CsvLoadReport* report = nullptr);

/// Replaces the targets with a single column alternating by contiguous
/// segments between two existing target columns, segment lengths uniform on
/// [segment_min, segment_max]. Deterministic given the seed.
TimeSeriesDataset alternate_targets(const TimeSeriesDataset& ds, const std::string& column_a,
                                    const std::string& column_b, int segment_min, int segment_max,
                                    std::uint64_t seed);

/// Appends per-column lags 1..lag_count as extra input columns and drops the
/// first lag_count rows. Lagged column k of "c" is named "c_lag<k>".
TimeSeriesDataset apply_lags(const TimeSeriesDataset& ds, const std::vector<std::string>& columns,
                             int lag_count);

struct SplitSpec {
  double train_fraction = 0.85;
  int max_points = 2000;  // evenly spaced, order-preserving downsample
};

/// Downsamples to max_points evenly spaced rows when longer (keeping index 0
/// and the last index), then cuts a train prefix / test suffix.
std::pair<TimeSeriesDataset, TimeSeriesDataset> split_and_downsample(const TimeSeriesDataset& ds,
                                                                     const SplitSpec& spec);

/// Per-column affine standardization fitted on one matrix (the train split)
/// and applied to any matrix with the same columns. Constant columns keep
/// scale 1.
struct Standardizer {
  Vector mean;
  Vector stddev;

  static Standardizer fit(const Matrix& values);
  Matrix apply(const Matrix& values) const;
};

/// Standardizes inputs and targets of both splits using train statistics.
void standardize_with_train_stats(TimeSeriesDataset& train, TimeSeriesDataset& test);

/// Benchmark preset: CSV column selection plus optional target alternation
/// and lag construction, loaded from a JSON file.
struct DatasetPreset {
  std::string name;
  std::string csv_path;  // may be overridden at load time
  std::vector<std::string> input_columns;
  std::vector<std::string> target_columns;
  CsvLoadOptions load_options;

  struct Alternation {
    std::string column_a;
    std::string column_b;
    int segment_min = 40;
    int segment_max = 80;
  };
  std::optional<Alternation> alternate;

  std::vector<std::string> lag_columns;
  int lag_count = 0;
};

DatasetPreset load_preset(const std::string& path);

/// Loads the preset's CSV (csv_override wins when nonempty) and applies
/// alternation/lags. The seed drives segment sampling only.
TimeSeriesDataset load_preset_dataset(const DatasetPreset& preset, const std::string& csv_override,
                                      std::uint64_t seed);

}  // namespace afocp
