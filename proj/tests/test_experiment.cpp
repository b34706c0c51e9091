#include "afocp/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

using namespace afocp;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("afocp_exp_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small synthetic setup that runs in well under a second per cell.
ExperimentConfig small_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetSpec::Kind::kSynthetic;
  cfg.dataset.synthetic.length = 260;
  cfg.dataset.synthetic.dim = 6;
  cfg.dataset.synthetic.segment_min = 20;
  cfg.dataset.synthetic.segment_max = 40;
  cfg.methods = {Method::kOcp, Method::kAfocp};
  cfg.alpha = 0.1;
  cfg.window = 12;
  cfg.feature_dim = 8;
  cfg.lambda = 0.01;
  cfg.seeds = {1, 2};
  cfg.out_dir = out_dir;
  cfg.train_epochs = 2;
  cfg.attention_epochs = 2;
  cfg.attention_latent_dim = 4;
  cfg.inversion = InversionConfig{0.01, 20};
  cfg.jobs = 2;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("run_experiment writes events, summaries and aggregates for every cell") {
  TempDir dir;
  ExperimentConfig cfg = small_config(dir.path.string());
  ExperimentResult result = run_experiment(cfg);

  CHECK(result.all_ok);
  REQUIRE(result.cells.size() == 4);  // 2 methods x 2 seeds
  for (const CellResult& cell : result.cells) {
    CHECK(cell.ok);
    CHECK(fs::exists(cell.events_path));
    CHECK(fs::exists(cell.summary_path));
    CHECK(cell.summary.steps == 39);  // 260 * 0.15
    CHECK(cell.summary.theorem1_bound_lhs <= cell.summary.theorem1_bound_rhs + 1e-12);
  }
  CHECK(fs::exists(dir.path / "OCP.aggregate.json"));
  CHECK(fs::exists(dir.path / "AFOCP.aggregate.json"));
  REQUIRE(result.aggregates.size() == 2);
  CHECK(result.aggregates[0].cells == 2);
}

TEST_CASE("run_experiment is byte-for-byte deterministic") {
  TempDir dir_a, dir_b;
  ExperimentConfig cfg_a = small_config(dir_a.path.string());
  cfg_a.methods = {Method::kAfocp};
  cfg_a.seeds = {7};
  ExperimentConfig cfg_b = cfg_a;
  cfg_b.out_dir = dir_b.path.string();

  REQUIRE(run_experiment(cfg_a).all_ok);
  REQUIRE(run_experiment(cfg_b).all_ok);

  for (const char* name : {"AFOCP_seed7.events.csv", "AFOCP_seed7.summary.json",
                           "AFOCP.aggregate.json"}) {
    const std::string a = slurp(dir_a.path / name);
    const std::string b = slurp(dir_b.path / name);
    CHECK(!a.empty());
    CHECK(a == b);
  }
}

TEST_CASE("run_experiment: a failing cell is recorded and the others continue") {
  TempDir dir;
  ExperimentConfig cfg = small_config(dir.path.string());
  cfg.methods = {Method::kOcp};
  cfg.window = 250;  // larger than the train split -> this cell must fail
  ExperimentResult result = run_experiment(cfg);
  CHECK(!result.all_ok);
  for (const CellResult& cell : result.cells) {
    CHECK(!cell.ok);
    CHECK(cell.error.find("window") != std::string::npos);
  }
}

TEST_CASE("run_experiment validates its configuration") {
  ExperimentConfig cfg = small_config("unused");
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(run_experiment(cfg), std::invalid_argument);
  cfg = small_config("unused");
  cfg.seeds.clear();
  CHECK_THROWS_AS(run_experiment(cfg), std::invalid_argument);
  cfg = small_config("");
  CHECK_THROWS_AS(run_experiment(cfg), std::invalid_argument);
}

TEST_CASE("emit_plotdata flattens summaries with one row per (method, seed)") {
  TempDir dir;
  ExperimentConfig cfg = small_config(dir.path.string());
  REQUIRE(run_experiment(cfg).all_ok);

  std::stringstream out;
  emit_plotdata(dir.path.string(), out);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(out, line))
    if (!line.empty()) lines.push_back(line);

  REQUIRE(lines.size() == 5);  // header + 4 cells
  CHECK(lines[0] == "dataset,method,seed,sweep_var,sweep_value,coverage,mean_length");
  int afocp_rows = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    CHECK(lines[i].rfind("synthetic,", 0) == 0);
    if (lines[i].find(",AFOCP,") != std::string::npos) ++afocp_rows;
  }
  CHECK(afocp_rows == 2);
}

TEST_CASE("emit_plotdata skips bad files with a warning and errors when empty") {
  TempDir dir;
  {
    std::ofstream bad(dir.path / "broken.summary.json");
    bad << "{not json";
  }
  std::stringstream out;
  CHECK_THROWS_AS(emit_plotdata(dir.path.string(), out), std::runtime_error);

  ExperimentConfig cfg = small_config(dir.path.string());
  cfg.methods = {Method::kOcp};
  cfg.seeds = {1};
  REQUIRE(run_experiment(cfg).all_ok);
  std::stringstream ok;
  emit_plotdata(dir.path.string(), ok);  // bad file skipped, good one kept
  std::string text = ok.str();
  CHECK(text.find("OCP") != std::string::npos);
}

TEST_CASE("sweep labels propagate into summaries and plotdata") {
  TempDir dir;
  ExperimentConfig cfg = small_config(dir.path.string());
  cfg.methods = {Method::kOcp};
  cfg.seeds = {3};
  cfg.sweep_var = "window";
  cfg.sweep_value = 12;
  REQUIRE(run_experiment(cfg).all_ok);

  RunSummary summary = read_summary_json((dir.path / "OCP_seed3.summary.json").string());
  CHECK(summary.sweep_var == "window");
  CHECK(summary.sweep_value == 12.0);

  std::stringstream out;
  emit_plotdata(dir.path.string(), out);
  CHECK(out.str().find(",window,12,") != std::string::npos);
}

TEST_CASE("diagnostics flag writes an assumption report for feature methods") {
  TempDir dir;
  ExperimentConfig cfg = small_config(dir.path.string());
  cfg.methods = {Method::kAfocp};
  cfg.seeds = {1};
  cfg.diagnostics = true;
  REQUIRE(run_experiment(cfg).all_ok);
  CHECK(fs::exists(dir.path / "AFOCP_seed1.diagnostics.json"));
  const std::string text = slurp(dir.path / "AFOCP_seed1.diagnostics.json");
  CHECK(text.find("length_preservation_lhs") != std::string::npos);
  CHECK(text.find("quantile_stability_lhs") != std::string::npos);
}
