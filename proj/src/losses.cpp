#include "cogcalib/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cogcalib {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::CE: return "CE";
    case LossKind::LS: return "LS";
    case LossKind::MbLS: return "MbLS";
    case LossKind::ECP: return "ECP";
  }
  return "?";
}

std::optional<LossKind> loss_kind_from_string(std::string_view s) {
  if (s == "CE") return LossKind::CE;
  if (s == "LS") return LossKind::LS;
  if (s == "MbLS") return LossKind::MbLS;
  if (s == "ECP") return LossKind::ECP;
  return std::nullopt;
}

LossSpec LossSpec::multi_choice(LossKind kind) {
  LossSpec s;
  s.kind = kind;
  s.epsilon = 0.1;
  s.gamma = 0.1;
  s.margin = 0.0;
  s.beta = 0.1;
  return s;
}

LossSpec LossSpec::open_ended(LossKind kind) {
  LossSpec s;
  s.kind = kind;
  s.epsilon = 0.15;
  s.gamma = 0.15;
  s.margin = 10.0;
  s.beta = 0.15;
  return s;
}

namespace {

struct SoftmaxInfo {
  ProbVector p;
  std::vector<double> logp;  // finite even where p underflows
};

SoftmaxInfo softmax_info(const LogitVector& logits) {
  for (double l : logits)
    if (!std::isfinite(l)) throw InvalidInputError("loss: non-finite logit");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  SoftmaxInfo s;
  s.p.resize(logits.size());
  s.logp.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    s.p[k] = std::exp(logits[k] - m);
    z += s.p[k];
  }
  const double logz = std::log(z);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    s.p[k] /= z;
    s.logp[k] = logits[k] - m - logz;
  }
  return s;
}

void check_target(const LogitVector& logits, int target) {
  if (target < 0 || target >= static_cast<int>(logits.size()))
    throw InvalidInputError("loss: target " + std::to_string(target) +
                            " out of range for K=" + std::to_string(logits.size()));
}

// value = -sum_k w_k log p_k, dlogits = p - w (valid for any w summing to 1)
LossResult weighted_ce(const SoftmaxInfo& s, std::span<const double> w) {
  LossResult r;
  r.dlogits.resize(s.p.size());
  for (std::size_t k = 0; k < s.p.size(); ++k) {
    r.value -= w[k] * s.logp[k];
    r.dlogits[k] = s.p[k] - w[k];
  }
  return r;
}

LossResult ce_of(const SoftmaxInfo& s, const LogitVector& logits, int target) {
  check_target(logits, target);
  std::vector<double> w(logits.size(), 0.0);
  w[target] = 1.0;
  return weighted_ce(s, w);
}

double entropy(const SoftmaxInfo& s) {
  double neg_h = 0.0;
  for (std::size_t k = 0; k < s.p.size(); ++k)
    if (s.p[k] > 0.0) neg_h += s.p[k] * s.logp[k];
  return -neg_h;
}

// adds alpha * gradient of the hinge penalty sum_k max(0, max_j l_j - l_k - m);
// subgradient 0 at exact kinks, max ties resolve to the lowest index
double add_margin_penalty(const LogitVector& logits, double margin, double alpha,
                          LogitVector& dl) {
  const int jmax = argmax_lowest(logits);
  double penalty = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double viol = logits[jmax] - logits[k] - margin;
    if (viol > 0.0) {
      penalty += viol;
      dl[jmax] += alpha;
      dl[k] -= alpha;
    }
  }
  return penalty;
}

// adds alpha * gradient of -H(p); d(-H)/dl_j = p_j (log p_j + H)
void add_neg_entropy_grad(const SoftmaxInfo& s, double h, double alpha,
                          LogitVector& dl) {
  for (std::size_t k = 0; k < s.p.size(); ++k)
    dl[k] += alpha * s.p[k] * (s.logp[k] + h);
}

}  // namespace

LossResult ce_loss(const LogitVector& logits, int target) {
  return ce_of(softmax_info(logits), logits, target);
}

LossResult ls_loss(const LogitVector& logits, int target, double epsilon) {
  if (epsilon < 0.0 || epsilon >= 1.0)
    throw InvalidInputError("ls_loss: epsilon must be in [0,1)");
  check_target(logits, target);
  const SoftmaxInfo s = softmax_info(logits);
  const double u = epsilon / static_cast<double>(logits.size());
  std::vector<double> w(logits.size(), 0.0);
  for (std::size_t k = 0; k < logits.size(); ++k)
    w[k] = (1.0 - epsilon) * (static_cast<int>(k) == target ? 1.0 : 0.0) + u;
  return weighted_ce(s, w);
}

LossResult mbls_loss(const LogitVector& logits, int target, double gamma,
                     double margin) {
  if (gamma < 0.0) throw InvalidInputError("mbls_loss: gamma must be >= 0");
  if (margin < 0.0) throw InvalidInputError("mbls_loss: margin must be >= 0");
  const SoftmaxInfo s = softmax_info(logits);
  LossResult r = ce_of(s, logits, target);
  r.value += gamma * add_margin_penalty(logits, margin, gamma, r.dlogits);
  return r;
}

LossResult ecp_loss(const LogitVector& logits, int target, double beta) {
  if (beta < 0.0) throw InvalidInputError("ecp_loss: beta must be >= 0");
  const SoftmaxInfo s = softmax_info(logits);
  LossResult r = ce_of(s, logits, target);
  const double h = entropy(s);
  r.value -= beta * h;
  add_neg_entropy_grad(s, h, beta, r.dlogits);
  return r;
}

LossResult loss_by_spec(const LogitVector& logits, int target, const LossSpec& spec) {
  switch (spec.kind) {
    case LossKind::CE: return ce_loss(logits, target);
    case LossKind::LS: return ls_loss(logits, target, spec.epsilon);
    case LossKind::MbLS: return mbls_loss(logits, target, spec.gamma, spec.margin);
    case LossKind::ECP: return ecp_loss(logits, target, spec.beta);
  }
  throw InvalidInputError("loss_by_spec: unknown kind");
}

LossResult gated_loss(const LogitVector& logits, int target, const LossSpec& spec,
                      int gate) {
  if (gate != 0 && gate != 1)
    throw InvalidInputError("gated_loss: gate must be 0 or 1");
  if (gate == 0 || spec.alpha == 0.0 || spec.kind == LossKind::CE)
    return ce_loss(logits, target);

  if (spec.cal_term == CalTermForm::FullLoss) {
    LossResult r = ce_loss(logits, target);
    const LossResult full = loss_by_spec(logits, target, spec);
    r.value += spec.alpha * full.value;
    for (std::size_t k = 0; k < r.dlogits.size(); ++k)
      r.dlogits[k] += spec.alpha * full.dlogits[k];
    return r;
  }

  const SoftmaxInfo s = softmax_info(logits);
  LossResult r = ce_of(s, logits, target);
  const auto kn = static_cast<double>(logits.size());

  switch (spec.kind) {
    case LossKind::LS: {
      if (spec.epsilon < 0.0 || spec.epsilon >= 1.0)
        throw InvalidInputError("gated_loss: epsilon must be in [0,1)");
      // (eps/(1-eps)) * KL(u || p)
      const double scale = spec.alpha * spec.epsilon / (1.0 - spec.epsilon);
      double mean_logp = 0.0;
      for (double lp : s.logp) mean_logp += lp;
      mean_logp /= kn;
      r.value += scale * (-std::log(kn) - mean_logp);
      for (std::size_t k = 0; k < r.dlogits.size(); ++k)
        r.dlogits[k] += scale * (s.p[k] - 1.0 / kn);
      break;
    }
    case LossKind::MbLS: {
      if (spec.gamma < 0.0 || spec.margin < 0.0)
        throw InvalidInputError("gated_loss: gamma and margin must be >= 0");
      const double scale = spec.alpha * spec.gamma;
      r.value += scale * add_margin_penalty(logits, spec.margin, scale, r.dlogits);
      break;
    }
    case LossKind::ECP: {
      if (spec.beta < 0.0) throw InvalidInputError("gated_loss: beta must be >= 0");
      const double scale = spec.alpha * spec.beta;
      const double h = entropy(s);
      r.value -= scale * h;
      add_neg_entropy_grad(s, h, scale, r.dlogits);
      break;
    }
    case LossKind::CE: break;  // handled above
  }
  return r;
}

}  // namespace cogcalib
