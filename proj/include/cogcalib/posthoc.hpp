#pragma once

#include <utility>

#include "cogcalib/metrics.hpp"
#include "cogcalib/model.hpp"

namespace cogcalib {

enum class TempObjective { ECE, NLL };

struct TempSearch {
  double t_min = 0.05;
  double t_max = 10.0;
  int steps = 200;
};

struct TemperatureFit {
  double t_star = 1.0;
  double objective_at_t_star = 0.0;
  TempObjective objective = TempObjective::ECE;
  std::vector<std::pair<double, double>> curve;  // (T, objective value)
};

// Log-uniform grid search for the temperature minimizing the objective on a
// validation set; smallest T wins ties. The returned T is applied unchanged
// to in-domain and shifted evaluation sets.
TemperatureFit fit_temperature(std::span<const LogitVector> val_logits,
                               std::span<const int> val_labels,
                               TempObjective objective = TempObjective::ECE,
                               const TempSearch& search = {});

// softmax(logits / T); preserves the argmax class for every T > 0.
ProbVector apply_temperature(const LogitVector& logits, double temperature);

// Mean softmax over n_passes Train-mode forwards with independent dropout
// masks. With dropout 0 every pass is identical, so the Eval softmax is
// returned directly.
ProbVector mc_dropout_predict(const ModelParams& params, const FeatureVector& x,
                              int n_passes, Rng& rng);

// Arithmetic mean of per-model Eval softmax outputs.
ProbVector ensemble_predict(std::span<const ModelParams> models,
                            const FeatureVector& x);

}  // namespace cogcalib
