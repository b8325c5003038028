#include "cogcalib/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace cogcalib {

std::string_view to_string(KnowledgeTag tag) {
  switch (tag) {
    case KnowledgeTag::HighlyKnown: return "HighlyKnown";
    case KnowledgeTag::MaybeKnown: return "MaybeKnown";
    case KnowledgeTag::WeaklyKnown: return "WeaklyKnown";
    case KnowledgeTag::Unknown: return "Unknown";
  }
  return "?";
}

std::optional<KnowledgeTag> tag_from_string(std::string_view s) {
  if (s == "HighlyKnown") return KnowledgeTag::HighlyKnown;
  if (s == "MaybeKnown") return KnowledgeTag::MaybeKnown;
  if (s == "WeaklyKnown") return KnowledgeTag::WeaklyKnown;
  if (s == "Unknown") return KnowledgeTag::Unknown;
  return std::nullopt;
}

void Dataset::validate() const {
  std::unordered_set<std::int64_t> ids;
  ids.reserve(samples.size());
  for (const Sample& s : samples) {
    if (static_cast<int>(s.features.size()) != dim)
      throw ShapeError("sample " + std::to_string(s.id) + ": feature dim " +
                       std::to_string(s.features.size()) + " != " + std::to_string(dim));
    if (s.label < 0 || s.label >= k_classes)
      throw InvalidInputError("sample " + std::to_string(s.id) + ": label " +
                              std::to_string(s.label) + " out of range for K=" +
                              std::to_string(k_classes));
    if (!ids.insert(s.id).second)
      throw InvalidInputError("duplicate sample id " + std::to_string(s.id));
  }
}

ModelParams ModelParams::linear(int dim, int k_classes) {
  ModelParams p;
  p.arch = Architecture::Linear;
  p.dim = dim;
  p.k_classes = k_classes;
  p.theta.assign(static_cast<std::size_t>(k_classes) * dim + k_classes, 0.0);
  return p;
}

ModelParams ModelParams::mlp(int dim, int k_classes, int hidden, double dropout_rate) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw InvalidInputError("dropout_rate must be in [0,1)");
  ModelParams p;
  p.arch = Architecture::Mlp;
  p.dim = dim;
  p.k_classes = k_classes;
  p.hidden = hidden;
  p.dropout_rate = dropout_rate;
  p.theta.assign(static_cast<std::size_t>(hidden) * dim + hidden +
                     static_cast<std::size_t>(k_classes) * hidden + k_classes,
                 0.0);
  return p;
}

void ModelParams::randomize(Rng& rng, double scale) {
  for (double& v : theta) v = scale * rng.normal();
}

ProbVector softmax(const LogitVector& logits, double temperature) {
  if (logits.empty()) throw InvalidInputError("softmax: empty logits");
  if (!(temperature > 0.0)) throw InvalidInputError("softmax: temperature must be > 0");
  for (double l : logits)
    if (!std::isfinite(l)) throw InvalidInputError("softmax: non-finite logit");

  const double m = *std::max_element(logits.begin(), logits.end());
  ProbVector p(logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp((logits[k] - m) / temperature);
    z += p[k];
  }
  for (double& v : p) v /= z;
  return p;
}

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

ForwardTrace forward_trace(const ModelParams& params, const FeatureVector& x,
                           Mode mode, Rng* rng) {
  if (static_cast<int>(x.size()) != params.dim)
    throw ShapeError("forward: feature dim " + std::to_string(x.size()) +
                     " != model dim " + std::to_string(params.dim));

  ForwardTrace t;
  t.input = x;
  const auto& w = params.theta;
  const int d = params.dim;
  const int k = params.k_classes;

  if (params.arch == Architecture::Linear) {
    t.logits.assign(k, 0.0);
    const std::size_t ob = params.off_b1();
    for (int i = 0; i < k; ++i) {
      double acc = w[ob + i];
      const std::size_t row = static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) acc += w[row + j] * x[j];
      t.logits[i] = acc;
    }
    return t;
  }

  const int h = params.hidden;
  const bool drop = mode == Mode::Train && params.dropout_rate > 0.0;
  if (drop && rng == nullptr)
    throw InvalidInputError("forward: train mode with dropout requires an rng");

  t.hidden_pre.assign(h, 0.0);
  t.hidden_act.assign(h, 0.0);
  if (drop) t.dropout_mask.assign(h, 0.0);

  const std::size_t ob1 = params.off_b1();
  for (int i = 0; i < h; ++i) {
    double acc = w[ob1 + i];
    const std::size_t row = static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) acc += w[row + j] * x[j];
    t.hidden_pre[i] = acc;
    double a = acc > 0.0 ? acc : 0.0;
    if (drop) {
      // inverted dropout: scale kept units by 1/(1-rate) so Eval needs no rescale
      const double keep = 1.0 - params.dropout_rate;
      const double mask = rng->uniform() < keep ? 1.0 / keep : 0.0;
      t.dropout_mask[i] = mask;
      a *= mask;
    }
    t.hidden_act[i] = a;
  }

  t.logits.assign(k, 0.0);
  const std::size_t ow2 = params.off_w2();
  const std::size_t ob2 = params.off_b2();
  for (int i = 0; i < k; ++i) {
    double acc = w[ob2 + i];
    const std::size_t row = ow2 + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) acc += w[row + j] * t.hidden_act[j];
    t.logits[i] = acc;
  }
  return t;
}

LogitVector forward(const ModelParams& params, const FeatureVector& x, Mode mode,
                    Rng* rng) {
  return forward_trace(params, x, mode, rng).logits;
}

int sample_prediction(const ModelParams& params, const FeatureVector& x,
                      double temperature, Rng& rng) {
  if (temperature < 0.0)
    throw InvalidInputError("sample_prediction: temperature must be >= 0");
  const LogitVector l = forward(params, x, Mode::Eval);
  if (temperature == 0.0) return argmax_lowest(l);
  const ProbVector p = softmax(l, temperature);
  double u = rng.uniform();
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    u -= p[k];
    if (u < 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(p.size()) - 1;
}

Gradients backprop(const ModelParams& params, std::span<const ForwardTrace> traces,
                   std::span<const LogitVector> dlogits) {
  if (traces.size() != dlogits.size())
    throw ShapeError("backprop: traces/dlogits size mismatch");
  if (traces.empty()) throw InvalidInputError("backprop: empty batch");

  const int d = params.dim;
  const int k = params.k_classes;
  Gradients g(params.theta.size(), 0.0);

  for (std::size_t n = 0; n < traces.size(); ++n) {
    const ForwardTrace& t = traces[n];
    const LogitVector& dl = dlogits[n];
    if (static_cast<int>(dl.size()) != k)
      throw ShapeError("backprop: dlogits length != K");

    if (params.arch == Architecture::Linear) {
      const std::size_t ob = params.off_b1();
      for (int i = 0; i < k; ++i) {
        const std::size_t row = static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) g[row + j] += dl[i] * t.input[j];
        g[ob + i] += dl[i];
      }
      continue;
    }

    const int h = params.hidden;
    const std::size_t ow2 = params.off_w2();
    const std::size_t ob2 = params.off_b2();
    std::vector<double> dhidden(h, 0.0);
    for (int i = 0; i < k; ++i) {
      const std::size_t row = ow2 + static_cast<std::size_t>(i) * h;
      for (int j = 0; j < h; ++j) {
        g[row + j] += dl[i] * t.hidden_act[j];
        dhidden[j] += dl[i] * params.theta[row + j];
      }
      g[ob2 + i] += dl[i];
    }
    const std::size_t ob1 = params.off_b1();
    for (int i = 0; i < h; ++i) {
      double dz = dhidden[i];
      if (!t.dropout_mask.empty()) dz *= t.dropout_mask[i];
      dz *= t.hidden_pre[i] > 0.0 ? 1.0 : 0.0;
      const std::size_t row = static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) g[row + j] += dz * t.input[j];
      g[ob1 + i] += dz;
    }
  }

  const double inv = 1.0 / static_cast<double>(traces.size());
  for (double& v : g) v *= inv;
  return g;
}

}  // namespace cogcalib
