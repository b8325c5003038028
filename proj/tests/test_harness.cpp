#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cogcalib/harness.hpp"
#include "temp_dir.hpp"

using namespace cogcalib;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig ec;
  ec.task.dim = 6;
  ec.task.k_classes = 4;
  ec.task.pretrain_size = 500;
  ec.task.pool_known = 130;
  ec.task.pool_unknown = 130;
  ec.task.finetune_size = 120;
  ec.task.val_size = 40;
  ec.task.test_size = 60;
  ec.task.cal_size = 24;
  ec.task.ood_size = 60;

  ec.pretrain.steps = 200;
  ec.pretrain.batch_size = 25;
  ec.pretrain.learning_rate = 3e-3;
  ec.pretrain.eval_interval = 200;

  ec.train.steps = 120;
  ec.train.batch_size = 12;
  ec.train.eval_interval = 30;
  ec.train.style_adapt_steps = 6;
  ec.train.threshold_grid_size = 50;
  ec.train.loss_spec = LossSpec::multi_choice(LossKind::CE);

  ec.methods = {Method::VanillaSFT};
  ec.seeds = {1};
  return ec;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("experiment outputs are byte-identical across reruns and thread counts") {
  ExperimentConfig ec = tiny_experiment();
  ec.methods = {Method::VanillaSFT, Method::CoLS, Method::TS};
  ec.seeds = {1, 2};

  testutil::TempDir a("exp_a"), b("exp_b");
  ec.out_dir = a.path.string();
  setenv("COGCALIB_THREADS", "1", 1);
  run_experiment(ec);
  ec.out_dir = b.path.string();
  setenv("COGCALIB_THREADS", "4", 1);
  run_experiment(ec);
  unsetenv("COGCALIB_THREADS");

  CHECK(slurp(a.file("report.csv")) == slurp(b.file("report.csv")));
  CHECK(slurp(a.file("summary.csv")) == slurp(b.file("summary.csv")));
  for (const char* run : {"VanillaSFT_seed1", "CoLS_seed2", "TS_seed1"})
    CHECK(slurp((a.path / "runs" / run / "dynamics.csv").string()) ==
          slurp((b.path / "runs" / run / "dynamics.csv").string()));
}

TEST_CASE("report schema, row counts, and TS sharing the SFT model") {
  ExperimentConfig ec = tiny_experiment();
  ec.methods = {Method::VanillaSFT, Method::TS};
  testutil::TempDir dir("exp_rows");
  ec.out_dir = dir.path.string();
  const RunReport report = run_experiment(ec);

  // one row per (method, seed, split); two splits: test and ood
  CHECK(report.rows.size() == 4);
  std::ifstream in(dir.file("report.csv"));
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "method,seed,split,accuracy,ece,auroc,threshold,gate_acc,gate_tpr,"
        "gate_tnr,seconds");

  // TS preserves the argmax of the identical underlying model
  double acc_sft = -1.0, acc_ts = -2.0;
  for (const ReportRow& row : report.rows) {
    if (row.split != "test") continue;
    if (row.method == "VanillaSFT") acc_sft = row.accuracy;
    if (row.method == "TS") acc_ts = row.accuracy;
    CHECK(row.seconds == 0.0);  // deterministic timing off by default
  }
  CHECK(acc_sft == acc_ts);
}

TEST_CASE("full default experiment finishes within budget on one core") {
  setenv("COGCALIB_THREADS", "1", 1);
  const auto start = std::chrono::steady_clock::now();

  ExperimentConfig ec;  // desk-scale defaults
  ec.methods = {Method::VanillaSFT, Method::CoLS,      Method::CoMbLS,
                Method::CoECP,      Method::UniformLS, Method::UniformMbLS,
                Method::UniformECP, Method::RandomLS,  Method::RandomMbLS,
                Method::RandomECP,  Method::TS,        Method::MCD,
                Method::Ensemble};
  ec.seeds = {1, 2, 3};
  testutil::TempDir dir("exp_full");
  ec.out_dir = dir.path.string();
  const RunReport report = run_experiment(ec);
  unsetenv("COGCALIB_THREADS");

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 600.0);

  CHECK(report.rows.size() == 13 * 3 * 2);
  for (const ReportRow& row : report.rows) {
    CHECK(row.split != "error");
    CHECK(std::isfinite(row.accuracy));
    CHECK(std::isfinite(row.ece));
    CHECK(std::isfinite(row.auroc));
    CHECK(std::isfinite(row.threshold));
    CHECK(std::isfinite(row.gate_acc));
  }
}

TEST_CASE("summary means equal hand-averaged report rows") {
  ExperimentConfig ec = tiny_experiment();
  ec.seeds = {1, 2, 3};
  testutil::TempDir dir("exp_summary");
  ec.out_dir = dir.path.string();
  const RunReport report = run_experiment(ec);

  double sum = 0.0;
  int n = 0;
  for (const ReportRow& row : report.rows)
    if (row.method == "VanillaSFT" && row.split == "test") {
      sum += row.ece;
      ++n;
    }
  REQUIRE(n == 3);

  std::ifstream in(dir.file("summary.csv"));
  std::string line;
  std::getline(in, line);  // header
  bool found = false;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string method, split, field;
    std::getline(ss, method, ',');
    std::getline(ss, split, ',');
    if (method != "VanillaSFT" || split != "test") continue;
    std::getline(ss, field, ',');  // n_seeds
    CHECK(field == "3");
    std::getline(ss, field, ',');  // accuracy_mean
    std::getline(ss, field, ',');  // accuracy_std
    std::getline(ss, field, ',');  // ece_mean
    CHECK(std::stod(field) == doctest::Approx(sum / n).epsilon(1e-9));
    found = true;
  }
  CHECK(found);
}

TEST_CASE("assemble_report matches the in-process report and fails on empty dirs") {
  ExperimentConfig ec = tiny_experiment();
  testutil::TempDir dir("exp_assemble");
  ec.out_dir = dir.path.string();
  run_experiment(ec);
  const std::string direct = slurp(dir.file("report.csv"));
  const RunReport again = assemble_report(dir.path.string());
  CHECK(slurp(dir.file("report.csv")) == direct);
  CHECK(again.rows.size() == 2);

  testutil::TempDir empty("exp_empty");
  CHECK_THROWS_WITH_AS(assemble_report(empty.path.string()),
                       doctest::Contains("no runs found"), InvalidInputError);
}

TEST_CASE("bias sweep emits one row per ratio, seed and split") {
  ExperimentConfig ec = tiny_experiment();
  testutil::TempDir dir("exp_bias");
  ec.out_dir = dir.path.string();
  const auto rows = run_bias_sweep(ec, 2);

  REQUIRE(rows.size() == 6);  // 3 ratios x 1 seed x 2 splits
  CHECK(rows[0].ratio == "0:2");
  CHECK(rows[2].ratio == "1:1");
  CHECK(rows[4].ratio == "2:0");

  // cross-file consistency: report values equal the final dynamics rows
  std::ifstream dyn((dir.path / "runs" / "bias_0_2_seed1" / "dynamics.csv").string());
  REQUIRE(dyn.good());
  std::string line, final_test_line;
  std::getline(dyn, line);  // header
  while (std::getline(dyn, line))
    if (line.find(",test,") != std::string::npos) final_test_line = line;
  REQUIRE(!final_test_line.empty());
  std::stringstream ss(final_test_line);
  std::string field;
  std::getline(ss, field, ',');  // step
  CHECK(field == "120");
  std::getline(ss, field, ',');  // split
  std::getline(ss, field, ',');  // accuracy
  CHECK(std::stod(field) == rows[0].accuracy);

  CHECK_THROWS_AS(run_bias_sweep(ec, 0), InvalidInputError);
}

TEST_CASE("deletion sweep reports exact differences against the 0% run") {
  ExperimentConfig ec = tiny_experiment();
  testutil::TempDir dir("exp_del");
  ec.out_dir = dir.path.string();
  const auto rows = run_deletion_sweep(ec, {0.0, 0.5});

  REQUIRE(rows.size() == 4);  // 2 fractions x 1 seed x 2 splits
  double base_acc_test = 0.0, base_ece_test = 0.0;
  for (const DeletionRow& row : rows) {
    if (row.fraction == 0.0) {
      CHECK(row.delta_accuracy == 0.0);
      CHECK(row.delta_ece == 0.0);
      if (row.split == "test") {
        base_acc_test = row.accuracy;
        base_ece_test = row.ece;
      }
    }
  }
  for (const DeletionRow& row : rows)
    if (row.fraction == 0.5 && row.split == "test") {
      CHECK(row.delta_accuracy == row.accuracy - base_acc_test);
      CHECK(row.delta_ece == row.ece - base_ece_test);
    }

  CHECK_THROWS_AS(run_deletion_sweep(ec, {0.25, 0.5}), InvalidInputError);
  CHECK_THROWS_AS(run_deletion_sweep(ec, {0.0, 1.5}), InvalidInputError);
}

TEST_CASE("failed cells are marked per row and never abort the matrix") {
  ExperimentConfig ec = tiny_experiment();
  ec.task.blend_unknown = 0.0;  // the unknown pool can never fill
  ec.task.draw_budget_factor = 2;
  ec.methods = {Method::VanillaSFT, Method::CoLS};
  testutil::TempDir dir("exp_fail");
  ec.out_dir = dir.path.string();

  const RunReport report = run_experiment(ec);
  REQUIRE(report.rows.size() == 2);
  for (const ReportRow& row : report.rows) CHECK(row.split == "error");
  CHECK(std::filesystem::exists(dir.path / "runs" / "VanillaSFT_seed1" / "error.txt"));
  CHECK(std::filesystem::exists(dir.path / "runs" / "CoLS_seed1" / "error.txt"));
  // summary skips error rows but the report still carries them
  const RunReport back = read_report_csv(dir.file("report.csv"));
  CHECK(back.rows.size() == 2);
}

TEST_CASE("config parsing round-trips values and rejects unknown keys") {
  const std::string text = R"(
[task]
dim = 5
classes = 3
pretrain_size = 300
pool_known = 90
pool_unknown = 90
finetune_size = 80
val_size = 20
test_size = 40
cal_size = 16
ood_size = 30

[model]
architecture = linear

[train]
steps = 50
lr = 0.01
loss_preset = open_ended

[experiment]
methods = VanillaSFT, CoECP
seeds = 7, 8
)";
  const ExperimentConfig ec =
      ExperimentConfig::from_config(ConfigFile::parse_string(text, "inline"));
  CHECK(ec.task.dim == 5);
  CHECK(ec.task.k_classes == 3);
  CHECK(ec.arch == Architecture::Linear);
  CHECK(ec.train.steps == 50);
  CHECK(ec.train.learning_rate == 0.01);
  CHECK(ec.train.loss_spec.margin == 10.0);  // open-ended preset
  REQUIRE(ec.methods.size() == 2);
  CHECK(ec.methods[1] == Method::CoECP);
  CHECK(ec.seeds == std::vector<std::uint64_t>{7, 8});

  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_config(
          ConfigFile::parse_string("[train]\nlearning = 3\n", "inline")),
      doctest::Contains("learning"), ConfigError);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_config(
          ConfigFile::parse_string("[nope]\nx = 1\n", "inline")),
      doctest::Contains("nope"), ConfigError);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_config(ConfigFile::parse_string(
          "[experiment]\nmethods = NotAMethod\n", "inline")),
      doctest::Contains("NotAMethod"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse_file("/nonexistent/missing.cfg"), ConfigError);
}

TEST_CASE("model json round-trips exactly") {
  Rng rng(55);
  ModelParams m = ModelParams::mlp(5, 3, 7, 0.25);
  m.randomize(rng, 0.8);

  testutil::TempDir dir("model_json");
  write_model_json(m, dir.file("m.json"));
  const ModelParams back = read_model_json(dir.file("m.json"));
  CHECK(back.arch == m.arch);
  CHECK(back.dim == m.dim);
  CHECK(back.k_classes == m.k_classes);
  CHECK(back.hidden == m.hidden);
  CHECK(back.dropout_rate == m.dropout_rate);
  REQUIRE(back.theta.size() == m.theta.size());
  for (std::size_t i = 0; i < m.theta.size(); ++i) CHECK(back.theta[i] == m.theta[i]);
}

TEST_CASE("seed derivation is method-local") {
  CHECK(method_train_seed(1, Method::CoLS) != method_train_seed(1, Method::CoMbLS));
  CHECK(method_train_seed(1, Method::CoLS) != method_train_seed(2, Method::CoLS));
  // TS trains the same model as vanilla SFT
  CHECK(method_train_seed(3, Method::TS) == method_train_seed(3, Method::VanillaSFT));
}

}  // TEST_SUITE
