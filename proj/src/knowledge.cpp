#include "cogcalib/knowledge.hpp"

#include <algorithm>
#include <cmath>

namespace cogcalib {

KnowledgeTag slick_categorize(const ModelParams& params, const Sample& sample,
                              const SlickConfig& config, Rng& rng) {
  if (config.noise_sigma < 0.0)
    throw InvalidInputError("slick_categorize: noise_sigma must be >= 0");
  if (config.n_perturbations < 1 || config.n_samples < 1)
    throw InvalidInputError("slick_categorize: counts must be >= 1");

  int greedy_correct = 0;
  int sampled_correct = 0;
  FeatureVector x(sample.features.size());
  for (int i = 0; i < config.n_perturbations; ++i) {
    for (std::size_t j = 0; j < x.size(); ++j)
      x[j] = sample.features[j] + config.noise_sigma * rng.normal();
    if (sample_prediction(params, x, 0.0, rng) == sample.label) ++greedy_correct;
    for (int s = 0; s < config.n_samples; ++s)
      if (sample_prediction(params, x, config.temperature, rng) == sample.label)
        ++sampled_correct;
  }

  if (greedy_correct == config.n_perturbations) return KnowledgeTag::HighlyKnown;
  if (greedy_correct > 0) return KnowledgeTag::MaybeKnown;
  if (sampled_correct > 0) return KnowledgeTag::WeaklyKnown;
  return KnowledgeTag::Unknown;
}

double nll_of(const ModelParams& params, const Sample& sample) {
  const LogitVector l = forward(params, sample.features, Mode::Eval);
  if (sample.label < 0 || sample.label >= static_cast<int>(l.size()))
    throw InvalidInputError("nll_of: label out of range");
  // log p computed from logits directly; stable where p underflows
  const double m = *std::max_element(l.begin(), l.end());
  double z = 0.0;
  for (double v : l) z += std::exp(v - m);
  return m + std::log(z) - l[sample.label];
}

int gate(double nll, double t) { return nll <= t ? 1 : 0; }

void CalibrationSet::refresh(const ModelParams& params) {
  const std::size_t n = samples.size();
  correct.assign(n, 0);
  nll.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = samples.samples[i];
    const LogitVector l = forward(params, s.features, Mode::Eval);
    correct[i] = argmax_lowest(l) == s.label ? 1 : 0;
    nll[i] = nll_of(params, s);
  }
}

double threshold_grid_search(std::span<const int> correct,
                             std::span<const double> nll, int grid_size,
                             ThresholdCriterion criterion) {
  if (correct.empty() || correct.size() != nll.size())
    throw InvalidInputError("threshold_grid_search: bad (c, n) cache");
  if (grid_size < 2)
    throw InvalidInputError("threshold_grid_search: grid size must be >= 2");

  const auto [lo_it, hi_it] = std::minmax_element(nll.begin(), nll.end());
  const double lo = *lo_it;
  const double hi = *hi_it;

  std::size_t n_pos = 0;
  for (int c : correct) n_pos += static_cast<std::size_t>(c);
  const std::size_t n_neg = nll.size() - n_pos;

  double best_t = lo;
  double best_score = -1.0;
  for (int j = 0; j < grid_size; ++j) {
    const double t = j + 1 == grid_size
                         ? hi
                         : lo + static_cast<double>(j) * (hi - lo) /
                                    static_cast<double>(grid_size - 1);
    std::size_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < nll.size(); ++i) {
      if (correct[i] && nll[i] <= t) ++tp;
      if (!correct[i] && nll[i] > t) ++tn;
    }
    double score = 0.0;
    if (criterion == ThresholdCriterion::BalancedRates) {
      const double tpr =
          n_pos ? static_cast<double>(tp) / static_cast<double>(n_pos) : 1.0;
      const double tnr =
          n_neg ? static_cast<double>(tn) / static_cast<double>(n_neg) : 1.0;
      score = tpr + tnr;
    } else {
      score = static_cast<double>(tp + tn) / static_cast<double>(nll.size());
    }
    if (score > best_score) {
      best_score = score;
      best_t = t;
    }
  }
  return best_t;
}

double update_threshold(CalibrationSet& cal, const ModelParams& params,
                        int grid_size, ThresholdCriterion criterion) {
  if (cal.samples.empty())
    throw InvalidInputError("update_threshold: empty calibration set");
  cal.refresh(params);
  return threshold_grid_search(cal.correct, cal.nll, grid_size, criterion);
}

GateQuality gate_quality(const Dataset& data, const ModelParams& params, double t) {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (const Sample& s : data.samples) {
    if (!s.oracle_tag)
      throw InvalidInputError("gate_quality: sample " + std::to_string(s.id) +
                              " has no oracle tag");
    if (*s.oracle_tag != KnowledgeTag::HighlyKnown &&
        *s.oracle_tag != KnowledgeTag::Unknown)
      throw InvalidInputError("gate_quality: sample " + std::to_string(s.id) +
                              " tagged " + std::string(to_string(*s.oracle_tag)) +
                              "; only HighlyKnown/Unknown are scored");
    const bool is_pos = *s.oracle_tag == KnowledgeTag::HighlyKnown;
    const bool pred_pos = gate(nll_of(params, s), t) == 1;
    if (is_pos)
      (pred_pos ? tp : fn) += 1;
    else
      (pred_pos ? fp : tn) += 1;
  }
  const std::size_t p = tp + fn, n = tn + fp;
  if (p + n == 0) throw InvalidInputError("gate_quality: empty dataset");
  GateQuality q;
  q.accuracy = static_cast<double>(tp + tn) / static_cast<double>(p + n);
  q.tpr = p ? static_cast<double>(tp) / static_cast<double>(p) : 1.0;
  q.tnr = n ? static_cast<double>(tn) / static_cast<double>(n) : 1.0;
  return q;
}

}  // namespace cogcalib
