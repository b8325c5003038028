#pragma once

#include <string>
#include <utility>

#include "cogcalib/datagen.hpp"
#include "cogcalib/knowledge.hpp"
#include "cogcalib/losses.hpp"
#include "cogcalib/metrics.hpp"

namespace cogcalib {

enum class OptimizerKind { SGD, Adam };
enum class GatingMode { None, Cognition, Random, Uniform };
enum class LrDecay { Constant, Linear };

std::string_view to_string(GatingMode mode);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LrDecay lr_decay = LrDecay::Constant;

  int steps = 0;
  int batch_size = 32;
  LossSpec loss_spec;
  GatingMode gating_mode = GatingMode::None;

  int style_adapt_steps = 0;
  int threshold_update_interval = 0;  // 0 = once per epoch
  int threshold_grid_size = 100;
  ThresholdCriterion threshold_criterion = ThresholdCriterion::BalancedRates;
  int eval_interval = 50;
  std::uint64_t seed = 1;

  void validate(std::size_t dataset_size) const;
};

struct DynamicsRow {
  int step = 0;
  std::string split;
  double accuracy = 0.0;
  double mean_conf = 0.0;
  double conf_correct = 0.0;    // 0 when no correct predictions
  double conf_incorrect = 0.0;  // 0 when no incorrect predictions
  double ece_value = 0.0;
  double auroc_value = 0.5;  // 0.5 when one side is empty
  double threshold = 0.0;
  double gated_fraction = 0.0;
};

using DynamicsLog = std::vector<DynamicsRow>;

void write_dynamics_csv(const DynamicsLog& log, const std::string& path);

// Cognition-gate decisions vs oracle tags, accumulated over a whole run.
struct GateStatsAccum {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  bool any() const { return tp + fp + tn + fn > 0; }
  GateQuality quality() const;
};

struct EvalSplit {
  std::string name;
  const Dataset* data = nullptr;
};

struct TrainResult {
  ModelParams params;
  DynamicsLog log;
  ThresholdState threshold;
  GateStatsAccum gate_stats;
  double mean_gated_fraction = 0.0;
  std::vector<double> step_losses;  // batch-mean loss per step
};

// Plain-CE warmup that aligns the model's output scale with the task before
// the initial threshold t0 is computed on the calibration set. steps = 0
// leaves the parameters untouched but still computes t0.
std::pair<ModelParams, double> style_adaptation(const ModelParams& params,
                                                const Dataset& data,
                                                CalibrationSet& cal, int steps,
                                                const TrainConfig& config);

// Epoch-shuffled mini-batch optimization with per-sample loss gating. Every
// sample in every batch contributes to the update; the gate only selects
// which loss it receives. The gate is evaluated with the pre-step parameters
// in Eval mode.
TrainResult train(const ModelParams& params, const Dataset& data,
                  const TrainConfig& config, CalibrationSet& cal,
                  std::span<const EvalSplit> evals = {});

// Independent Bernoulli(fraction) indicators, one per batch slot.
std::vector<int> random_gate(std::size_t batch_size, double target_known_fraction,
                             Rng& rng);

// Evaluation records for a dataset under the plain Eval-mode softmax.
std::vector<PredictionRecord> predict_records(const ModelParams& params,
                                              const Dataset& data);

}  // namespace cogcalib
