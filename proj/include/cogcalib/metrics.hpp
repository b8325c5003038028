#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cogcalib/model.hpp"

namespace cogcalib {

struct PredictionRecord {
  double confidence = 0.0;  // max output probability
  bool correct = false;
  LogitVector logits;  // optional, empty when not needed
};

struct BinStats {
  int bin = 0;
  std::size_t count = 0;
  double mean_accuracy = 0.0;
  double mean_confidence = 0.0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double ece = 0.0;
  std::optional<double> auroc;  // correct-vs-incorrect confidence separation
  std::size_t n_records = 0;
  std::vector<BinStats> bins;
};

// Equal-width confidence bins over [0,1]. Bin m covers (m/n, (m+1)/n],
// except bin 0 which is closed at 0; confidence 1.0 lands in the top bin.
std::vector<BinStats> reliability_bins(std::span<const PredictionRecord> records,
                                       int n_bins = 10);

// Bin-weighted mean absolute accuracy/confidence gap.
double ece(std::span<const PredictionRecord> records, int n_bins = 10);

// Probability a random positive score outranks a random negative one,
// ties counting 1/2. Exact pairwise counting.
double auroc(std::span<const double> pos_scores, std::span<const double> neg_scores);

// Geometric mean of per-token probabilities, computed in log space.
double seq_confidence(std::span<const double> token_probs);

double accuracy(std::span<const PredictionRecord> records);

// accuracy + ece + bins + AUROC of correct-vs-incorrect confidences
// (AUROC absent when either side is empty)
MetricsReport evaluate_records(std::span<const PredictionRecord> records,
                               int n_bins = 10);

}  // namespace cogcalib
