#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cogcalib/errors.hpp"
#include "cogcalib/rng.hpp"

namespace cogcalib {

// All values are 64-bit floats; vectors are dense.
using FeatureVector = std::vector<double>;
using LogitVector = std::vector<double>;
using ProbVector = std::vector<double>;

enum class KnowledgeTag { HighlyKnown, MaybeKnown, WeaklyKnown, Unknown };

std::string_view to_string(KnowledgeTag tag);
std::optional<KnowledgeTag> tag_from_string(std::string_view s);

struct Sample {
  std::int64_t id = 0;
  FeatureVector features;
  int label = 0;
  std::optional<KnowledgeTag> oracle_tag;
};

struct Dataset {
  std::vector<Sample> samples;
  int k_classes = 0;
  int dim = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  // labels in range, feature dims consistent, ids unique
  void validate() const;
};

enum class Architecture { Linear, Mlp };
enum class Mode { Train, Eval };

// Flat parameter storage.
//   Linear: [W (k*dim) | b (k)]
//   Mlp:    [W1 (hidden*dim) | b1 (hidden) | W2 (k*hidden) | b2 (k)]
// Row-major matrices; W1 row i holds the weights of hidden unit i.
struct ModelParams {
  Architecture arch = Architecture::Linear;
  int dim = 0;
  int k_classes = 0;
  int hidden = 0;           // Mlp only
  double dropout_rate = 0.0;  // in [0,1), hidden layer only
  std::vector<double> theta;

  static ModelParams linear(int dim, int k_classes);
  static ModelParams mlp(int dim, int k_classes, int hidden = 16,
                         double dropout_rate = 0.0);

  void randomize(Rng& rng, double scale = 0.1);

  std::size_t size() const { return theta.size(); }

  std::size_t off_w1() const { return 0; }
  std::size_t off_b1() const {
    return static_cast<std::size_t>(arch == Architecture::Mlp ? hidden : k_classes) * dim;
  }
  std::size_t off_w2() const { return off_b1() + hidden; }
  std::size_t off_b2() const { return off_w2() + static_cast<std::size_t>(k_classes) * hidden; }
};

// Gradient w.r.t. theta, same flat layout.
using Gradients = std::vector<double>;

// One recorded forward pass; holds everything backprop needs, including the
// exact dropout multipliers drawn in Train mode.
struct ForwardTrace {
  FeatureVector input;
  std::vector<double> hidden_pre;    // Mlp: W1 x + b1
  std::vector<double> hidden_act;    // Mlp: relu then dropout scaling
  std::vector<double> dropout_mask;  // Mlp train mode; empty otherwise
  LogitVector logits;
};

// Max-subtracted softmax with temperature. temperature must be > 0.
ProbVector softmax(const LogitVector& logits, double temperature = 1.0);

// Index of the maximum, ties broken toward the lowest index.
int argmax_lowest(std::span<const double> v);

ForwardTrace forward_trace(const ModelParams& params, const FeatureVector& x,
                           Mode mode = Mode::Eval, Rng* rng = nullptr);
LogitVector forward(const ModelParams& params, const FeatureVector& x,
                    Mode mode = Mode::Eval, Rng* rng = nullptr);

// Greedy argmax at temperature 0, categorical sampling otherwise.
int sample_prediction(const ModelParams& params, const FeatureVector& x,
                      double temperature, Rng& rng);

// Parameter gradients of the batch-mean loss given per-sample dL/dlogits.
Gradients backprop(const ModelParams& params, std::span<const ForwardTrace> traces,
                   std::span<const LogitVector> dlogits);

}  // namespace cogcalib
