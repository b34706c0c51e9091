#include "afocp/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "afocp/rng.hpp"
#include "json.hpp"

namespace afocp {

void TimeSeriesDataset::validate() const {
  if (inputs.rows() != targets.rows())
    throw std::invalid_argument("TimeSeriesDataset: input/target row mismatch");
  if (!all_finite(inputs) || !all_finite(targets))
    throw std::invalid_argument("TimeSeriesDataset: non-finite entry");
  if (!input_names.empty() && static_cast<int>(input_names.size()) != inputs.cols())
    throw std::invalid_argument("TimeSeriesDataset: input name count mismatch");
  if (!target_names.empty() && static_cast<int>(target_names.size()) != targets.cols())
    throw std::invalid_argument("TimeSeriesDataset: target name count mismatch");
}

void SyntheticConfig::validate() const {
  if (length < 1) throw std::invalid_argument("SyntheticConfig: length must be >= 1");
  if (dim < 1) throw std::invalid_argument("SyntheticConfig: dim must be >= 1");
  if (segment_min < 1 || segment_max < segment_min)
    throw std::invalid_argument("SyntheticConfig: bad segment range");
}

TimeSeriesDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const int dim = cfg.dim;

  const std::uint64_t base = derive_seed(cfg.seed, SeedStream::kSyntheticData);
  Rng mixing_rng(derive_seed(base, 1));
  Matrix mixing(dim, dim);
  const double w_stddev = std::sqrt(1.0 / dim);
  for (double& w : mixing.flat()) w = mixing_rng.normal(0.0, w_stddev);

  Rng segment_rng(derive_seed(base, 2));
  Rng noise_rng(derive_seed(base, 3));

  TimeSeriesDataset ds;
  ds.name = "synthetic";
  ds.inputs = Matrix(cfg.length, dim);
  ds.targets = Matrix(cfg.length, dim);

  const int span = cfg.segment_max - cfg.segment_min + 1;
  bool regime_a = true;
  int t = 0;
  while (t < cfg.length) {
    const int segment =
        cfg.segment_min + static_cast<int>(segment_rng.below(static_cast<std::uint64_t>(span)));
    const double level = regime_a ? cfg.regime_a_level : cfg.regime_b_level;
    const double gauss_stddev = std::sqrt(level / 2.0);
    for (int s = 0; s < segment && t < cfg.length; ++s, ++t) {
      for (int j = 0; j < dim; ++j) ds.inputs(t, j) = level;
      // y = intercept + W x; x is the all-level vector.
      for (int i = 0; i < dim; ++i) {
        double y = cfg.intercept;
        const double* row = mixing.data() + static_cast<std::size_t>(i) * dim;
        for (int j = 0; j < dim; ++j) y += row[j] * level;
        if (!cfg.zero_noise) {
          y += regime_a ? noise_rng.normal(0.0, gauss_stddev)
                        : noise_rng.uniform_open(-level, level);
        }
        ds.targets(t, i) = y;
      }
    }
    regime_a = !regime_a;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

int column_index(const std::vector<std::string>& header, const std::string& name,
                 const std::string& path) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end())
    throw std::invalid_argument("load_csv: column '" + name + "' not found in " + path);
  return static_cast<int>(it - header.begin());
}

}  // namespace

TimeSeriesDataset load_csv(const std::string& path, const std::vector<std::string>& input_columns,
                           const std::vector<std::string>& target_columns,
                           const CsvLoadOptions& options, CsvLoadReport* report) {
  if (input_columns.empty() || target_columns.empty())
    throw std::invalid_argument("load_csv: need at least one input and one target column");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: missing header row in " + path);
  const std::vector<std::string> header = split_csv_line(line);

  std::vector<int> input_idx, target_idx;
  for (const std::string& c : input_columns) input_idx.push_back(column_index(header, c, path));
  for (const std::string& c : target_columns) target_idx.push_back(column_index(header, c, path));

  std::vector<Vector> input_rows, target_rows;
  int dropped = 0;
  long long row_number = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++row_number;
    if (is_blank(line)) continue;
    const std::vector<std::string> fields = split_csv_line(line);

    bool missing = false;
    auto fetch = [&](int idx) -> double {
      if (idx >= static_cast<int>(fields.size()) || is_blank(fields[idx])) {
        missing = true;
        return 0.0;
      }
      const std::string& cell = fields[idx];
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &pos);
      } catch (const std::exception&) {
        throw std::invalid_argument("load_csv: non-numeric cell '" + cell + "' in column '" +
                                    header[idx] + "' at row " + std::to_string(row_number));
      }
      if (pos != cell.size() && !is_blank(cell.substr(pos)))
        throw std::invalid_argument("load_csv: non-numeric cell '" + cell + "' in column '" +
                                    header[idx] + "' at row " + std::to_string(row_number));
      return v;
    };

    Vector xs(input_idx.size()), ys(target_idx.size());
    for (std::size_t k = 0; k < input_idx.size() && !missing; ++k) xs[k] = fetch(input_idx[k]);
    for (std::size_t k = 0; k < target_idx.size() && !missing; ++k) ys[k] = fetch(target_idx[k]);
    if (missing) {
      ++dropped;
      continue;
    }
    input_rows.push_back(std::move(xs));
    target_rows.push_back(std::move(ys));
  }
  if (report != nullptr) report->rows_dropped = dropped;
  if (input_rows.empty()) throw std::runtime_error("load_csv: no usable rows in " + path);

  TimeSeriesDataset ds;
  ds.name = path;
  ds.input_names = input_columns;
  ds.target_names = target_columns;
  ds.inputs = Matrix(static_cast<int>(input_rows.size()), static_cast<int>(input_columns.size()));
  ds.targets = Matrix(static_cast<int>(target_rows.size()), static_cast<int>(target_columns.size()));
  for (int t = 0; t < ds.size(); ++t) {
    std::copy(input_rows[t].begin(), input_rows[t].end(), ds.inputs.row(t).begin());
    std::copy(target_rows[t].begin(), target_rows[t].end(), ds.targets.row(t).begin());
  }

  // Optional [-1,1] min-max scaling for angular encodings.
  for (const std::string& column : options.minmax_to_unit) {
    auto rescale = [&](Matrix& m, const std::vector<std::string>& names) {
      auto it = std::find(names.begin(), names.end(), column);
      if (it == names.end()) return false;
      const int j = static_cast<int>(it - names.begin());
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (int t = 0; t < m.rows(); ++t) {
        lo = std::min(lo, m(t, j));
        hi = std::max(hi, m(t, j));
      }
      const double spread = hi - lo;
      for (int t = 0; t < m.rows(); ++t)
        m(t, j) = spread > 0.0 ? -1.0 + 2.0 * (m(t, j) - lo) / spread : 0.0;
      return true;
    };
    const bool in_inputs = rescale(ds.inputs, ds.input_names);
    const bool in_targets = rescale(ds.targets, ds.target_names);
    if (!in_inputs && !in_targets)
      throw std::invalid_argument("load_csv: min-max column '" + column + "' not selected");
  }
  ds.validate();
  return ds;
}

TimeSeriesDataset alternate_targets(const TimeSeriesDataset& ds, const std::string& column_a,
                                    const std::string& column_b, int segment_min, int segment_max,
                                    std::uint64_t seed) {
  if (segment_min < 1 || segment_max < segment_min)
    throw std::invalid_argument("alternate_targets: bad segment range");
  auto find = [&](const std::string& c) {
    auto it = std::find(ds.target_names.begin(), ds.target_names.end(), c);
    if (it == ds.target_names.end())
      throw std::invalid_argument("alternate_targets: column '" + c + "' not among targets");
    return static_cast<int>(it - ds.target_names.begin());
  };
  const int idx_a = find(column_a);
  const int idx_b = find(column_b);

  TimeSeriesDataset out = ds;
  out.targets = Matrix(ds.size(), 1);
  out.target_names = {column_a + "|" + column_b};

  Rng rng(derive_seed(seed, SeedStream::kTargetSegments));
  const int span = segment_max - segment_min + 1;
  bool use_a = true;
  int t = 0;
  while (t < ds.size()) {
    const int segment =
        segment_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    for (int s = 0; s < segment && t < ds.size(); ++s, ++t)
      out.targets(t, 0) = ds.targets(t, use_a ? idx_a : idx_b);
    use_a = !use_a;
  }
  return out;
}

TimeSeriesDataset apply_lags(const TimeSeriesDataset& ds, const std::vector<std::string>& columns,
                             int lag_count) {
  if (lag_count < 1) throw std::invalid_argument("apply_lags: lag_count must be >= 1");
  if (ds.size() <= lag_count) throw std::invalid_argument("apply_lags: dataset shorter than lags");
  std::vector<int> lag_idx;
  for (const std::string& c : columns) {
    auto it = std::find(ds.input_names.begin(), ds.input_names.end(), c);
    if (it == ds.input_names.end())
      throw std::invalid_argument("apply_lags: column '" + c + "' not among inputs");
    lag_idx.push_back(static_cast<int>(it - ds.input_names.begin()));
  }

  const int rows = ds.size() - lag_count;
  const int base_cols = ds.inputs.cols();
  const int total_cols = base_cols + static_cast<int>(lag_idx.size()) * lag_count;

  TimeSeriesDataset out;
  out.name = ds.name;
  out.input_names = ds.input_names;
  for (int k = 1; k <= lag_count; ++k)
    for (int idx : lag_idx) out.input_names.push_back(ds.input_names[idx] + "_lag" + std::to_string(k));
  out.target_names = ds.target_names;
  out.inputs = Matrix(rows, total_cols);
  out.targets = Matrix(rows, ds.targets.cols());

  for (int t = 0; t < rows; ++t) {
    const int src = t + lag_count;
    for (int j = 0; j < base_cols; ++j) out.inputs(t, j) = ds.inputs(src, j);
    int col = base_cols;
    for (int k = 1; k <= lag_count; ++k)
      for (int idx : lag_idx) out.inputs(t, col++) = ds.inputs(src - k, idx);
    for (int j = 0; j < ds.targets.cols(); ++j) out.targets(t, j) = ds.targets(src, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split, downsample, standardize
// ---------------------------------------------------------------------------

namespace {

TimeSeriesDataset take_rows(const TimeSeriesDataset& ds, const std::vector<int>& rows) {
  TimeSeriesDataset out;
  out.name = ds.name;
  out.input_names = ds.input_names;
  out.target_names = ds.target_names;
  out.inputs = Matrix(static_cast<int>(rows.size()), ds.inputs.cols());
  out.targets = Matrix(static_cast<int>(rows.size()), ds.targets.cols());
  for (int t = 0; t < static_cast<int>(rows.size()); ++t) {
    for (int j = 0; j < ds.inputs.cols(); ++j) out.inputs(t, j) = ds.inputs(rows[t], j);
    for (int j = 0; j < ds.targets.cols(); ++j) out.targets(t, j) = ds.targets(rows[t], j);
  }
  return out;
}

}  // namespace

std::pair<TimeSeriesDataset, TimeSeriesDataset> split_and_downsample(const TimeSeriesDataset& ds,
                                                                     const SplitSpec& spec) {
  if (ds.size() == 0) throw std::invalid_argument("split_and_downsample: empty dataset");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw std::invalid_argument("split_and_downsample: train_fraction must be in (0,1)");
  if (spec.max_points < 2) throw std::invalid_argument("split_and_downsample: max_points must be >= 2");

  std::vector<int> keep;
  if (ds.size() > spec.max_points) {
    keep.reserve(spec.max_points);
    const double stride = static_cast<double>(ds.size() - 1) / (spec.max_points - 1);
    for (int i = 0; i < spec.max_points; ++i)
      keep.push_back(static_cast<int>(std::llround(i * stride)));
  } else {
    keep.resize(ds.size());
    for (int i = 0; i < ds.size(); ++i) keep[i] = i;
  }

  const int total = static_cast<int>(keep.size());
  const int n_train = static_cast<int>(std::floor(spec.train_fraction * total));
  if (n_train < 1 || n_train >= total)
    throw std::invalid_argument("split_and_downsample: split leaves an empty train or test part");

  std::vector<int> train_rows(keep.begin(), keep.begin() + n_train);
  std::vector<int> test_rows(keep.begin() + n_train, keep.end());
  return {take_rows(ds, train_rows), take_rows(ds, test_rows)};
}

Standardizer Standardizer::fit(const Matrix& values) {
  if (values.rows() < 1) throw std::invalid_argument("Standardizer: empty matrix");
  Standardizer s;
  s.mean.assign(values.cols(), 0.0);
  s.stddev.assign(values.cols(), 1.0);
  for (int j = 0; j < values.cols(); ++j) {
    double sum = 0.0;
    for (int t = 0; t < values.rows(); ++t) sum += values(t, j);
    s.mean[j] = sum / values.rows();
    double ss = 0.0;
    for (int t = 0; t < values.rows(); ++t) {
      const double d = values(t, j) - s.mean[j];
      ss += d * d;
    }
    const double var = values.rows() > 1 ? ss / (values.rows() - 1) : 0.0;
    s.stddev[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& values) const {
  if (values.cols() != static_cast<int>(mean.size()))
    throw std::invalid_argument("Standardizer: column mismatch");
  Matrix out(values.rows(), values.cols());
  for (int t = 0; t < values.rows(); ++t)
    for (int j = 0; j < values.cols(); ++j) out(t, j) = (values(t, j) - mean[j]) / stddev[j];
  return out;
}

void standardize_with_train_stats(TimeSeriesDataset& train, TimeSeriesDataset& test) {
  const Standardizer in_std = Standardizer::fit(train.inputs);
  const Standardizer out_std = Standardizer::fit(train.targets);
  train.inputs = in_std.apply(train.inputs);
  train.targets = out_std.apply(train.targets);
  test.inputs = in_std.apply(test.inputs);
  test.targets = out_std.apply(test.targets);
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

DatasetPreset load_preset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_preset: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);

  DatasetPreset preset;
  preset.name = j.at("name").get<std::string>();
  preset.csv_path = j.value("csv", std::string{});
  preset.input_columns = j.at("input_columns").get<std::vector<std::string>>();
  preset.target_columns = j.at("target_columns").get<std::vector<std::string>>();
  if (j.contains("minmax_to_unit"))
    preset.load_options.minmax_to_unit = j.at("minmax_to_unit").get<std::vector<std::string>>();
  if (j.contains("alternate_targets")) {
    const auto& a = j.at("alternate_targets");
    DatasetPreset::Alternation alt;
    alt.column_a = a.at("column_a").get<std::string>();
    alt.column_b = a.at("column_b").get<std::string>();
    alt.segment_min = a.value("segment_min", 40);
    alt.segment_max = a.value("segment_max", 80);
    preset.alternate = alt;
  }
  if (j.contains("lags")) {
    const auto& l = j.at("lags");
    preset.lag_columns = l.at("columns").get<std::vector<std::string>>();
    preset.lag_count = l.at("count").get<int>();
  }
  return preset;
}

TimeSeriesDataset load_preset_dataset(const DatasetPreset& preset, const std::string& csv_override,
                                      std::uint64_t seed) {
  const std::string path = csv_override.empty() ? preset.csv_path : csv_override;
  if (path.empty())
    throw std::invalid_argument("preset '" + preset.name + "' has no csv path; pass one explicitly");
  CsvLoadReport report;
  TimeSeriesDataset ds =
      load_csv(path, preset.input_columns, preset.target_columns, preset.load_options, &report);
  ds.name = preset.name;
  if (preset.lag_count > 0) ds = apply_lags(ds, preset.lag_columns, preset.lag_count);
  if (preset.alternate) {
    ds = alternate_targets(ds, preset.alternate->column_a, preset.alternate->column_b,
                           preset.alternate->segment_min, preset.alternate->segment_max, seed);
  }
  return ds;
}

}  // namespace afocp
