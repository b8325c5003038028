#include "cogcalib/posthoc.hpp"

#include <algorithm>
#include <cmath>

namespace cogcalib {

TemperatureFit fit_temperature(std::span<const LogitVector> val_logits,
                               std::span<const int> val_labels,
                               TempObjective objective, const TempSearch& search) {
  if (val_logits.empty()) throw InvalidInputError("fit_temperature: empty validation set");
  if (val_logits.size() != val_labels.size())
    throw ShapeError("fit_temperature: logits/labels size mismatch");
  if (!(search.t_min > 0.0) || search.t_max < search.t_min || search.steps < 1)
    throw InvalidInputError("fit_temperature: bad search range");

  // argmax is temperature-invariant; precompute correctness once
  std::vector<int> pred(val_logits.size());
  for (std::size_t i = 0; i < val_logits.size(); ++i)
    pred[i] = argmax_lowest(val_logits[i]);

  const double log_lo = std::log(search.t_min);
  const double log_hi = std::log(search.t_max);

  std::vector<double> grid;
  grid.reserve(search.steps + 1);
  for (int s = 0; s < search.steps; ++s)
    grid.push_back(
        search.steps == 1
            ? search.t_min
            : (s + 1 == search.steps
                   ? search.t_max
                   : std::exp(log_lo + static_cast<double>(s) * (log_hi - log_lo) /
                                           static_cast<double>(search.steps - 1))));
  // the identity temperature is always a candidate, so the fit can never be
  // worse than not scaling at all
  if (search.t_min <= 1.0 && 1.0 <= search.t_max) {
    grid.push_back(1.0);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  }

  TemperatureFit fit;
  fit.objective = objective;
  fit.curve.reserve(grid.size());
  double best = 0.0;
  bool first = true;

  for (const double t : grid) {
    double value = 0.0;
    if (objective == TempObjective::ECE) {
      std::vector<PredictionRecord> records(val_logits.size());
      for (std::size_t i = 0; i < val_logits.size(); ++i) {
        const ProbVector p = softmax(val_logits[i], t);
        records[i].confidence = p[pred[i]];
        records[i].correct = pred[i] == val_labels[i];
      }
      value = ece(records, 10);
    } else {
      for (std::size_t i = 0; i < val_logits.size(); ++i) {
        const ProbVector p = softmax(val_logits[i], t);
        double pl = p[val_labels[i]];
        if (pl < 1e-300) pl = 1e-300;
        value -= std::log(pl);
      }
      value /= static_cast<double>(val_logits.size());
    }
    fit.curve.emplace_back(t, value);
    if (first || value < best) {
      first = false;
      best = value;
      fit.t_star = t;
      fit.objective_at_t_star = value;
    }
  }
  return fit;
}

ProbVector apply_temperature(const LogitVector& logits, double temperature) {
  if (!(temperature > 0.0))
    throw InvalidInputError("apply_temperature: temperature must be > 0");
  return softmax(logits, temperature);
}

ProbVector mc_dropout_predict(const ModelParams& params, const FeatureVector& x,
                              int n_passes, Rng& rng) {
  if (n_passes < 1) throw InvalidInputError("mc_dropout_predict: n_passes must be >= 1");
  if (params.arch == Architecture::Linear || params.dropout_rate == 0.0)
    return softmax(forward(params, x, Mode::Eval));

  ProbVector mean(params.k_classes, 0.0);
  for (int i = 0; i < n_passes; ++i) {
    const ProbVector p = softmax(forward(params, x, Mode::Train, &rng));
    for (int k = 0; k < params.k_classes; ++k) mean[k] += p[k];
  }
  for (double& v : mean) v /= static_cast<double>(n_passes);
  return mean;
}

ProbVector ensemble_predict(std::span<const ModelParams> models,
                            const FeatureVector& x) {
  if (models.empty()) throw InvalidInputError("ensemble_predict: no models");
  const int k = models.front().k_classes;
  for (const ModelParams& m : models)
    if (m.k_classes != k || m.dim != static_cast<int>(x.size()))
      throw ShapeError("ensemble_predict: model dimensions disagree");

  ProbVector mean(k, 0.0);
  for (const ModelParams& m : models) {
    const ProbVector p = softmax(forward(m, x, Mode::Eval));
    for (int i = 0; i < k; ++i) mean[i] += p[i];
  }
  for (double& v : mean) v /= static_cast<double>(models.size());
  return mean;
}

}  // namespace cogcalib
