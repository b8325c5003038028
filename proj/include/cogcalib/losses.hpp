#pragma once

#include "cogcalib/model.hpp"

namespace cogcalib {

enum class LossKind { CE, LS, MbLS, ECP };

std::string_view to_string(LossKind kind);
std::optional<LossKind> loss_kind_from_string(std::string_view s);

// Whether the gated calibration term is the regularizer component of the
// chosen loss (so gate=1, alpha=1 recovers the published loss up to
// constants) or the full loss added on top of CE.
enum class CalTermForm { Regularizer, FullLoss };

struct LossSpec {
  LossKind kind = LossKind::CE;
  double epsilon = 0.1;  // LS smoothing factor
  double gamma = 0.1;    // MbLS strength
  double margin = 0.0;   // MbLS logit margin
  double beta = 0.1;     // ECP entropy factor
  double alpha = 1.0;    // gate-scale on the calibration term
  CalTermForm cal_term = CalTermForm::Regularizer;

  // hyperparameter presets: concentrated multi-choice-style outputs vs
  // higher-uncertainty open-ended-style outputs
  static LossSpec multi_choice(LossKind kind);
  static LossSpec open_ended(LossKind kind);
};

struct LossResult {
  double value = 0.0;
  LogitVector dlogits;
};

LossResult ce_loss(const LogitVector& logits, int target);
LossResult ls_loss(const LogitVector& logits, int target, double epsilon);
LossResult mbls_loss(const LogitVector& logits, int target, double gamma,
                     double margin);
LossResult ecp_loss(const LogitVector& logits, int target, double beta);

// Full loss of the spec's kind with its own hyperparameters, no gating.
LossResult loss_by_spec(const LogitVector& logits, int target, const LossSpec& spec);

// gate == 0 -> plain CE; gate == 1 -> CE + alpha * calibration term.
LossResult gated_loss(const LogitVector& logits, int target, const LossSpec& spec,
                      int gate);

}  // namespace cogcalib
