#include "cogcalib/metrics.hpp"

#include <cmath>

namespace cogcalib {

namespace {

int bin_index(double confidence, int n_bins) {
  if (confidence < 0.0 || confidence > 1.0)
    throw InvalidInputError("confidence outside [0,1]");
  if (confidence <= 0.0) return 0;
  int idx = static_cast<int>(std::ceil(confidence * n_bins)) - 1;
  if (idx < 0) idx = 0;
  if (idx >= n_bins) idx = n_bins - 1;
  return idx;
}

}  // namespace

std::vector<BinStats> reliability_bins(std::span<const PredictionRecord> records,
                                       int n_bins) {
  if (n_bins < 1) throw InvalidInputError("reliability_bins: n_bins must be >= 1");
  std::vector<BinStats> bins(n_bins);
  for (int m = 0; m < n_bins; ++m) bins[m].bin = m;
  for (const PredictionRecord& r : records) {
    BinStats& b = bins[bin_index(r.confidence, n_bins)];
    b.count += 1;
    b.mean_accuracy += r.correct ? 1.0 : 0.0;
    b.mean_confidence += r.confidence;
  }
  for (BinStats& b : bins) {
    if (b.count > 0) {
      b.mean_accuracy /= static_cast<double>(b.count);
      b.mean_confidence /= static_cast<double>(b.count);
    }
  }
  return bins;
}

double ece(std::span<const PredictionRecord> records, int n_bins) {
  if (records.empty()) throw InvalidInputError("ece: empty record list");
  const std::vector<BinStats> bins = reliability_bins(records, n_bins);
  const double n = static_cast<double>(records.size());
  double e = 0.0;
  for (const BinStats& b : bins)
    if (b.count > 0)
      e += (static_cast<double>(b.count) / n) *
           std::abs(b.mean_accuracy - b.mean_confidence);
  return e;
}

double auroc(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  if (pos_scores.empty() || neg_scores.empty())
    throw InvalidInputError("auroc: both score lists must be nonempty");
  double wins = 0.0;
  for (double p : pos_scores)
    for (double n : neg_scores) {
      if (p > n)
        wins += 1.0;
      else if (p == n)
        wins += 0.5;
    }
  return wins / (static_cast<double>(pos_scores.size()) *
                 static_cast<double>(neg_scores.size()));
}

double seq_confidence(std::span<const double> token_probs) {
  if (token_probs.empty()) throw InvalidInputError("seq_confidence: empty sequence");
  double log_sum = 0.0;
  for (double p : token_probs) {
    if (!(p > 0.0) || p > 1.0)
      throw InvalidInputError("seq_confidence: probabilities must be in (0,1]");
    log_sum += std::log(p);
  }
  return std::exp(log_sum / static_cast<double>(token_probs.size()));
}

double accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) throw InvalidInputError("accuracy: empty record list");
  double c = 0.0;
  for (const PredictionRecord& r : records) c += r.correct ? 1.0 : 0.0;
  return c / static_cast<double>(records.size());
}

MetricsReport evaluate_records(std::span<const PredictionRecord> records, int n_bins) {
  MetricsReport rep;
  rep.n_records = records.size();
  if (records.empty()) return rep;
  rep.accuracy = accuracy(records);
  rep.ece = ece(records, n_bins);
  rep.bins = reliability_bins(records, n_bins);
  std::vector<double> conf_correct, conf_incorrect;
  for (const PredictionRecord& r : records)
    (r.correct ? conf_correct : conf_incorrect).push_back(r.confidence);
  if (!conf_correct.empty() && !conf_incorrect.empty())
    rep.auroc = auroc(conf_correct, conf_incorrect);
  return rep;
}

}  // namespace cogcalib
