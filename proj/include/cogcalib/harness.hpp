#pragma once

#include <functional>
#include <string>

#include "cogcalib/config.hpp"
#include "cogcalib/datagen.hpp"
#include "cogcalib/posthoc.hpp"
#include "cogcalib/trainer.hpp"

namespace cogcalib {

enum class Method {
  VanillaSFT,
  CoLS,
  CoMbLS,
  CoECP,
  UniformLS,
  UniformMbLS,
  UniformECP,
  RandomLS,
  RandomMbLS,
  RandomECP,
  TS,
  MCD,
  Ensemble,
};

std::string_view to_string(Method m);
std::optional<Method> method_from_string(std::string_view s);

struct ExperimentConfig {
  ExperimentConfig();

  SyntheticTaskSpec task;

  Architecture arch = Architecture::Mlp;
  int hidden = 48;
  double dropout = 0.0;
  double init_scale = 0.1;

  TrainConfig pretrain;  // plain-CE surrogate pretraining
  TrainConfig train;     // per-method fields (gating, loss, seed) filled per cell

  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
  std::string out_dir = "out";

  double mcd_dropout = 0.02;
  int mcd_passes = 4;
  int ensemble_members = 3;
  bool wall_timing = false;  // off by default so reports stay byte-reproducible

  // per-term gate scales; the published loss hyperparameters stay fixed while
  // these set how hard each calibration term leans on gated samples
  double alpha_ls = 1.5;
  double alpha_mbls = 0.15;
  double alpha_ecp = 4.0;

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_config(const ConfigFile& cfg);
  void validate() const;
};

// report.csv schema:
// method,seed,split,accuracy,ece,auroc,threshold,gate_acc,gate_tpr,gate_tnr,seconds
struct ReportRow {
  std::string method;
  std::uint64_t seed = 0;
  std::string split;
  double accuracy = 0.0;
  double ece = 0.0;
  double auroc = 0.5;
  double threshold = 0.0;
  double gate_acc = 0.0;
  double gate_tpr = 0.0;
  double gate_tnr = 0.0;
  double seconds = 0.0;
};

struct RunReport {
  std::vector<ReportRow> rows;
};

struct BiasRow {
  std::string ratio;  // "i:(r-i)", unknown:known
  std::uint64_t seed = 0;
  std::string split;
  double accuracy = 0.0;
  double ece = 0.0;
};

struct DeletionRow {
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::string split;
  double accuracy = 0.0;
  double ece = 0.0;
  double delta_accuracy = 0.0;
  double delta_ece = 0.0;
};

// Everything one seed shares across methods: generated data, the pretrained
// surrogate, and the evaluation splits. Deterministic given (config, seed).
struct SeedContext {
  std::uint64_t seed = 0;
  SyntheticTaskSpec task;
  ModelParams pretrained;
  Dataset known_train_pool;    // tagged samples eligible for training mixtures
  Dataset unknown_train_pool;
  Dataset train_set;  // default mixture
  Dataset val_set;
  Dataset test_set;
  Dataset ood_set;
  CalibrationSet cal;  // fixed-interval subset of train_set
  std::string error;  // nonempty when preparation failed
};

// Calibration subset selected from the training set at fixed intervals.
CalibrationSet fixed_interval_cal(const Dataset& train, int cal_size);

// Random init + plain-CE training on the pretraining pool.
ModelParams pretrain_surrogate(const ExperimentConfig& config, std::uint64_t seed);

SeedContext prepare_seed(const ExperimentConfig& config, std::uint64_t seed);
SeedContext prepare_seed_with_model(const ExperimentConfig& config,
                                    std::uint64_t seed,
                                    const ModelParams& pretrained);

// Per-method training seed; adding a method never perturbs other methods'
// streams. TS shares VanillaSFT's stream so it scales the same model.
std::uint64_t method_train_seed(std::uint64_t seed, Method m);

// Runs the full (method x seed) matrix: data generation, pretraining, pool
// tagging, per-method fine-tuning, ID/OOD evaluation, post-hoc temperature
// scaling where listed. Writes report.csv, summary.csv and per-run
// dynamics.csv/metrics.csv under out_dir. Failed cells are marked, never
// fatal.
RunReport run_experiment(const ExperimentConfig& config);

// Vanilla-SFT training over the r+1 knowledge-bias mixtures D_{i:(r-i)};
// writes bias_report.csv plus per-run dynamics.
std::vector<BiasRow> run_bias_sweep(const ExperimentConfig& config, int r);

// Vanilla-SFT training after deleting each fraction of known data; rows
// carry differences against the same-seed 0% run. fractions must include 0.
std::vector<DeletionRow> run_deletion_sweep(const ExperimentConfig& config,
                                            const std::vector<double>& fractions);

// Deterministic single-threaded merge of runs/*/metrics.csv under dir into
// report.csv + summary.csv, sorted by (method, seed, split). Throws
// InvalidInputError("no runs found") when nothing is there.
RunReport assemble_report(const std::string& dir);

void write_report_csv(const RunReport& report, const std::string& path);
void write_summary_csv(const RunReport& report, const std::string& path);
RunReport read_report_csv(const std::string& path);

// Job parallelism capped by COGCALIB_THREADS (default: hardware cores).
int thread_cap();
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Model parameter (de)serialization, exact round-trip.
void write_model_json(const ModelParams& params, const std::string& path);
ModelParams read_model_json(const std::string& path);

}  // namespace cogcalib
