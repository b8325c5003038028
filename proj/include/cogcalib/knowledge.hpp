#pragma once

#include "cogcalib/model.hpp"

namespace cogcalib {

// Sampled-correctness categorization config. Input perturbation with additive
// Gaussian noise stands in for prompt resampling on the surrogate.
struct SlickConfig {
  int n_perturbations = 10;
  int n_samples = 16;
  double temperature = 0.5;
  double noise_sigma = 0.0;
};

// Tags a sample from greedy and temperature-sampled prediction accuracy:
//   P(T=0)=1            -> HighlyKnown
//   P(T=0) in (0,1)     -> MaybeKnown
//   P(T=0)=0, P(T>0)>0  -> WeaklyKnown
//   P(T>=0)=0           -> Unknown
KnowledgeTag slick_categorize(const ModelParams& params, const Sample& sample,
                              const SlickConfig& config, Rng& rng);

// -log p(label) under the Eval-mode forward pass.
double nll_of(const ModelParams& params, const Sample& sample);

// 1 ("known") iff nll <= t.
int gate(double nll, double t);

struct ThresholdState {
  double t = 0.0;
  double t0 = 0.0;
  int grid_size = 100;      // candidate grid size M
  int update_interval = 0;  // steps between updates; 0 = once per epoch
};

// Training-pool subset used for threshold updates. correct/nll are the
// cached (c_i, n_i) of the most recent inference pass, rebuilt atomically
// by update_threshold.
struct CalibrationSet {
  Dataset samples;
  std::vector<int> correct;
  std::vector<double> nll;

  void refresh(const ModelParams& params);
};

// What the threshold grid search maximizes. BalancedRates (TPR + TNR) is the
// default; Accuracy tends to trade TNR away for TPR on imbalanced sets,
// over-gating unknown samples.
enum class ThresholdCriterion { BalancedRates, Accuracy };

// Exhaustive grid search over linspace(min n_i, max n_i, M) for the t
// maximizing the criterion. Ties resolve to the smallest candidate. A side
// with no samples counts its rate as 1 so degenerate sets stay well-defined.
double threshold_grid_search(std::span<const int> correct,
                             std::span<const double> nll, int grid_size,
                             ThresholdCriterion criterion = ThresholdCriterion::BalancedRates);

// Inference over the calibration set, then threshold_grid_search on the
// refreshed (c_i, n_i).
double update_threshold(CalibrationSet& cal, const ModelParams& params,
                        int grid_size,
                        ThresholdCriterion criterion = ThresholdCriterion::BalancedRates);

struct GateQuality {
  double accuracy = 0.0;
  double tpr = 0.0;
  double tnr = 0.0;
};

// Gate-vs-oracle agreement with HighlyKnown as the positive class. Every
// sample must be tagged HighlyKnown or Unknown.
GateQuality gate_quality(const Dataset& data, const ModelParams& params, double t);

}  // namespace cogcalib
