// Command line front end: `afocp run` executes the online calibration
// protocol over a (method x seed) grid and writes event CSVs plus summary
// JSON files; `afocp plotdata` flattens a directory of summaries into one
// tidy CSV. Precedence: built-in defaults, then flags, then --config file.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "afocp/experiment.hpp"

namespace {

using afocp::ExperimentConfig;

struct RunOptions {
  std::string dataset = "synthetic";
  std::string csv;
  std::vector<std::string> methods{"OCP", "FOCP", "AOCP", "AFOCP"};
  double alpha = 0.1;
  int window = 100;
  int feature_dim = 50;
  double lambda = 0.005;
  int inversion_steps = 0;     // 0: default config derived from the head
  double inversion_lr = 0.0;   // 0: default config derived from the head
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string out = "results";
  std::string sweep;
  std::string config_path;
  int jobs = 0;
  bool diagnostics = false;

  int train_epochs = 10;
  int train_batch_size = 64;
  double train_lr = 5e-4;
  double train_weight_decay = 1e-6;
  int attention_latent_dim = 32;
  int attention_epochs = 20;
  double attention_lr = 5e-4;
  double attention_weight_decay = 1e-6;
  double train_fraction = 0.85;
  int max_points = 2000;
};

void apply_config_file(RunOptions& opt) {
  std::ifstream in(opt.config_path);
  if (!in) throw std::runtime_error("cannot open config file: " + opt.config_path);
  nlohmann::json j = nlohmann::json::parse(in);

  auto get = [&](const char* key, auto& into) {
    if (j.contains(key)) into = j.at(key).get<std::decay_t<decltype(into)>>();
  };
  get("dataset", opt.dataset);
  get("csv", opt.csv);
  get("methods", opt.methods);
  get("alpha", opt.alpha);
  get("window", opt.window);
  get("feature_dim", opt.feature_dim);
  get("lambda", opt.lambda);
  get("inversion_steps", opt.inversion_steps);
  get("inversion_lr", opt.inversion_lr);
  get("seeds", opt.seeds);
  get("out", opt.out);
  get("sweep", opt.sweep);
  get("jobs", opt.jobs);
  get("diagnostics", opt.diagnostics);
  get("train_epochs", opt.train_epochs);
  get("train_batch_size", opt.train_batch_size);
  get("train_lr", opt.train_lr);
  get("train_weight_decay", opt.train_weight_decay);
  get("attention_latent_dim", opt.attention_latent_dim);
  get("attention_epochs", opt.attention_epochs);
  get("attention_lr", opt.attention_lr);
  get("attention_weight_decay", opt.attention_weight_decay);
  get("train_fraction", opt.train_fraction);
  get("max_points", opt.max_points);
}

ExperimentConfig to_experiment_config(const RunOptions& opt) {
  ExperimentConfig cfg;
  if (opt.dataset == "synthetic") {
    cfg.dataset.kind = afocp::DatasetSpec::Kind::kSynthetic;
  } else {
    cfg.dataset.kind = afocp::DatasetSpec::Kind::kCsvPreset;
    cfg.dataset.preset_path = opt.dataset;
    cfg.dataset.csv_path = opt.csv;
  }
  cfg.methods.clear();
  for (const std::string& m : opt.methods) cfg.methods.push_back(afocp::parse_method(m));
  cfg.alpha = opt.alpha;
  cfg.window = opt.window;
  cfg.feature_dim = opt.feature_dim;
  cfg.lambda = opt.lambda;
  if (opt.inversion_steps > 0 || opt.inversion_lr > 0.0) {
    afocp::InversionConfig inv;
    inv.num_steps = opt.inversion_steps > 0 ? opt.inversion_steps : 100;
    inv.step_size = opt.inversion_lr > 0.0 ? opt.inversion_lr : 0.01;
    cfg.inversion = inv;
  }
  cfg.seeds = opt.seeds;
  cfg.out_dir = opt.out;
  cfg.split.train_fraction = opt.train_fraction;
  cfg.split.max_points = opt.max_points;
  cfg.train_epochs = opt.train_epochs;
  cfg.train_batch_size = opt.train_batch_size;
  cfg.train_adam.learning_rate = opt.train_lr;
  cfg.train_adam.weight_decay = opt.train_weight_decay;
  cfg.attention_latent_dim = opt.attention_latent_dim;
  cfg.attention_epochs = opt.attention_epochs;
  cfg.attention_adam.learning_rate = opt.attention_lr;
  cfg.attention_adam.weight_decay = opt.attention_weight_decay;
  cfg.jobs = opt.jobs;
  cfg.diagnostics = opt.diagnostics;
  return cfg;
}

struct SweepSpec {
  std::string var;
  std::vector<double> values;
};

SweepSpec parse_sweep(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("--sweep expects <var>=<v1,v2,...>, got '" + spec + "'");
  SweepSpec out;
  out.var = spec.substr(0, eq);
  std::stringstream ss(spec.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.values.push_back(std::stod(item));
  }
  if (out.values.empty()) throw std::runtime_error("--sweep has no values: '" + spec + "'");
  return out;
}

void apply_sweep_value(ExperimentConfig& cfg, const std::string& var, double value) {
  if (var == "window" || var == "L") {
    cfg.window = static_cast<int>(value);
  } else if (var == "feature-dim" || var == "feature_dim" || var == "D") {
    cfg.feature_dim = static_cast<int>(value);
  } else if (var == "alpha") {
    cfg.alpha = value;
  } else if (var == "lambda") {
    cfg.lambda = value;
  } else {
    throw std::runtime_error("unknown sweep variable '" + var +
                             "' (expected window, feature-dim, alpha, lambda)");
  }
  cfg.sweep_var = var;
  cfg.sweep_value = value;
}

std::string format_value(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

int run_command(const RunOptions& opt) {
  ExperimentConfig base = to_experiment_config(opt);

  bool all_ok = true;
  if (opt.sweep.empty()) {
    all_ok = afocp::run_experiment(base).all_ok;
  } else {
    const SweepSpec sweep = parse_sweep(opt.sweep);
    for (double value : sweep.values) {
      ExperimentConfig cfg = base;
      apply_sweep_value(cfg, sweep.var, value);
      cfg.out_dir = (std::filesystem::path(base.out_dir) /
                     (sweep.var + "=" + format_value(value)))
                        .string();
      std::cerr << "[sweep] " << sweep.var << " = " << format_value(value) << "\n";
      all_ok = afocp::run_experiment(cfg).all_ok && all_ok;
    }
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online conformal calibration runner"};
  app.require_subcommand(1);

  RunOptions opt;
  CLI::App* run = app.add_subcommand("run", "Train, calibrate and stream the test split");
  run->add_option("--dataset", opt.dataset, "'synthetic' or a dataset preset JSON path");
  run->add_option("--csv", opt.csv, "CSV path overriding the preset's csv entry");
  run->add_option("--methods", opt.methods, "Calibrators to run (OCP, FOCP, AOCP, AFOCP)")
      ->delimiter(',');
  run->add_option("--alpha", opt.alpha, "Target miscoverage rate");
  run->add_option("--window", opt.window, "Calibration window length L");
  run->add_option("--feature-dim", opt.feature_dim, "Feature dimension D");
  run->add_option("--lambda", opt.lambda, "Miscoverage step size");
  run->add_option("--inversion-steps", opt.inversion_steps, "Feature inversion step count");
  run->add_option("--inversion-lr", opt.inversion_lr, "Feature inversion step size");
  run->add_option("--seeds", opt.seeds, "Run seeds")->delimiter(',');
  run->add_option("--out", opt.out, "Output directory");
  run->add_option("--sweep", opt.sweep, "Sweep one variable, e.g. window=20,40,60");
  run->add_option("--config", opt.config_path, "JSON config file; its entries override flags");
  run->add_option("--jobs", opt.jobs, "Worker pool size (0: hardware threads)");
  run->add_flag("--diagnostics", opt.diagnostics, "Write per-run assumption diagnostics");
  run->add_option("--train-epochs", opt.train_epochs, "Model training epochs");
  run->add_option("--attention-epochs", opt.attention_epochs, "Attention pretraining epochs");

  std::string summaries_dir;
  std::string plot_out;
  CLI::App* plot = app.add_subcommand("plotdata", "Flatten summaries into one tidy CSV");
  plot->add_option("--summaries", summaries_dir, "Directory holding *.summary.json files")
      ->required();
  plot->add_option("--out", plot_out, "Output CSV path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      if (!opt.config_path.empty()) apply_config_file(opt);
      return run_command(opt);
    }
    if (plot->parsed()) {
      if (plot_out.empty()) {
        afocp::emit_plotdata(summaries_dir, std::cout);
      } else {
        std::ofstream out(plot_out);
        if (!out) throw std::runtime_error("cannot open " + plot_out);
        afocp::emit_plotdata(summaries_dir, out);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
