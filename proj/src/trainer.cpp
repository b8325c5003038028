#include "cogcalib/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace cogcalib {

std::string_view to_string(GatingMode mode) {
  switch (mode) {
    case GatingMode::None: return "None";
    case GatingMode::Cognition: return "Cognition";
    case GatingMode::Random: return "Random";
    case GatingMode::Uniform: return "Uniform";
  }
  return "?";
}

void TrainConfig::validate(std::size_t dataset_size) const {
  if (steps < 0) throw InvalidInputError("train: steps must be >= 0");
  if (style_adapt_steps < 0)
    throw InvalidInputError("train: style_adapt_steps must be >= 0");
  if (batch_size < 1) throw InvalidInputError("train: batch_size must be >= 1");
  if (dataset_size > 0 && static_cast<std::size_t>(batch_size) > dataset_size)
    throw InvalidInputError("train: batch_size exceeds dataset size");
  if (!(learning_rate > 0.0)) throw InvalidInputError("train: learning rate must be > 0");
  if (threshold_update_interval < 0)
    throw InvalidInputError("train: threshold_update_interval must be >= 0");
  if (threshold_grid_size < 2)
    throw InvalidInputError("train: threshold_grid_size must be >= 2");
  if (eval_interval < 1) throw InvalidInputError("train: eval_interval must be >= 1");
}

GateQuality GateStatsAccum::quality() const {
  const std::size_t p = tp + fn, n = tn + fp;
  GateQuality q;
  q.accuracy = p + n ? static_cast<double>(tp + tn) / static_cast<double>(p + n) : 1.0;
  q.tpr = p ? static_cast<double>(tp) / static_cast<double>(p) : 1.0;
  q.tnr = n ? static_cast<double>(tn) / static_cast<double>(n) : 1.0;
  return q;
}

std::vector<int> random_gate(std::size_t batch_size, double target_known_fraction,
                             Rng& rng) {
  if (target_known_fraction < 0.0 || target_known_fraction > 1.0)
    throw InvalidInputError("random_gate: fraction must be in [0,1]");
  std::vector<int> gates(batch_size, 0);
  for (std::size_t i = 0; i < batch_size; ++i)
    gates[i] = rng.uniform() < target_known_fraction ? 1 : 0;
  return gates;
}

std::vector<PredictionRecord> predict_records(const ModelParams& params,
                                              const Dataset& data) {
  std::vector<PredictionRecord> records(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data.samples[i];
    const ProbVector p = softmax(forward(params, s.features, Mode::Eval));
    const int pred = argmax_lowest(p);
    records[i].confidence = p[pred];
    records[i].correct = pred == s.label;
  }
  return records;
}

namespace {

struct Optimizer {
  OptimizerKind kind;
  double lr, beta1, beta2, eps;
  LrDecay decay;
  int total_steps;
  std::vector<double> m, v;
  long t = 0;

  Optimizer(const TrainConfig& cfg, std::size_t n_params, int phase_steps)
      : kind(cfg.optimizer),
        lr(cfg.learning_rate),
        beta1(cfg.adam_beta1),
        beta2(cfg.adam_beta2),
        eps(cfg.adam_eps),
        decay(cfg.lr_decay),
        total_steps(phase_steps) {
    if (kind == OptimizerKind::Adam) {
      m.assign(n_params, 0.0);
      v.assign(n_params, 0.0);
    }
  }

  void step(ModelParams& params, const Gradients& g) {
    ++t;
    double lr_t = lr;
    if (decay == LrDecay::Linear && total_steps > 0)
      lr_t = lr * (1.0 - static_cast<double>(t - 1) / static_cast<double>(total_steps));
    if (kind == OptimizerKind::SGD) {
      for (std::size_t i = 0; i < params.theta.size(); ++i)
        params.theta[i] -= lr_t * g[i];
      return;
    }
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      params.theta[i] -= lr_t * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
};

// Epoch-shuffled batch index source; reshuffles when a full batch no longer
// fits so batches never straddle an epoch boundary.
struct BatchCursor {
  std::vector<std::size_t> order;
  std::size_t pos = 0;
  Rng rng;

  BatchCursor(std::size_t n, std::uint64_t seed) : rng(seed) {
    order.resize(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
  }

  void next(std::size_t batch_size, std::vector<std::size_t>& out) {
    if (pos + batch_size > order.size()) {
      rng.shuffle(order);
      pos = 0;
    }
    out.assign(order.begin() + pos, order.begin() + pos + batch_size);
    pos += batch_size;
  }
};

// One optimization step over the given samples: forward traces in Train
// mode, per-sample gated losses, batch-mean backprop, optimizer update.
// Returns the batch-mean loss value.
double gated_step(ModelParams& params, const Dataset& data,
                  const std::vector<std::size_t>& batch, const std::vector<int>& gates,
                  const LossSpec& spec, Optimizer& opt, Rng& dropout_rng) {
  const std::size_t bs = batch.size();
  std::vector<ForwardTrace> traces(bs);
  std::vector<LogitVector> dlogits(bs);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < bs; ++i) {
    const Sample& s = data.samples[batch[i]];
    traces[i] = forward_trace(params, s.features, Mode::Train, &dropout_rng);
    LossResult lr = gated_loss(traces[i].logits, s.label, spec, gates[i]);
    loss_sum += lr.value;
    dlogits[i] = std::move(lr.dlogits);
  }
  const Gradients g = backprop(params, traces, dlogits);
  opt.step(params, g);
  return loss_sum / static_cast<double>(bs);
}

DynamicsRow eval_row(const ModelParams& params, const Dataset& data, int step,
                     const std::string& split, double threshold,
                     double gated_fraction) {
  const std::vector<PredictionRecord> records = predict_records(params, data);
  const MetricsReport rep = evaluate_records(records);

  DynamicsRow row;
  row.step = step;
  row.split = split;
  row.accuracy = rep.accuracy;
  row.ece_value = rep.ece;
  row.auroc_value = rep.auroc.value_or(0.5);
  row.threshold = threshold;
  row.gated_fraction = gated_fraction;

  double conf_sum = 0.0, cc_sum = 0.0, ci_sum = 0.0;
  std::size_t nc = 0;
  for (const PredictionRecord& r : records) {
    conf_sum += r.confidence;
    if (r.correct) {
      cc_sum += r.confidence;
      ++nc;
    } else {
      ci_sum += r.confidence;
    }
  }
  const std::size_t n = records.size();
  row.mean_conf = n ? conf_sum / static_cast<double>(n) : 0.0;
  row.conf_correct = nc ? cc_sum / static_cast<double>(nc) : 0.0;
  row.conf_incorrect = n > nc ? ci_sum / static_cast<double>(n - nc) : 0.0;
  return row;
}

}  // namespace

std::pair<ModelParams, double> style_adaptation(const ModelParams& params,
                                                const Dataset& data,
                                                CalibrationSet& cal, int steps,
                                                const TrainConfig& config) {
  if (steps < 0) throw InvalidInputError("style_adaptation: steps must be >= 0");
  data.validate();

  ModelParams cur = params;
  if (steps > 0) {
    config.validate(data.size());
    Optimizer opt(config, cur.theta.size(), steps);
    BatchCursor cursor(data.size(), mix_seed(config.seed, "style_shuffle"));
    Rng dropout_rng(mix_seed(config.seed, "style_dropout"));
    const LossSpec ce{};  // plain CE
    std::vector<std::size_t> batch;
    std::vector<int> gates(config.batch_size, 0);
    for (int s = 0; s < steps; ++s) {
      cursor.next(config.batch_size, batch);
      gated_step(cur, data, batch, gates, ce, opt, dropout_rng);
    }
  }

  double t0 = 0.0;
  if (!cal.samples.empty())
    t0 = update_threshold(cal, cur, config.threshold_grid_size,
                          config.threshold_criterion);
  return {std::move(cur), t0};
}

TrainResult train(const ModelParams& params, const Dataset& data,
                  const TrainConfig& config, CalibrationSet& cal,
                  std::span<const EvalSplit> evals) {
  if (data.empty()) throw InvalidInputError("train: empty dataset");
  config.validate(data.size());
  data.validate();

  const bool needs_gate =
      config.gating_mode == GatingMode::Cognition || config.gating_mode == GatingMode::Random;
  if (needs_gate && cal.samples.empty())
    throw InvalidInputError("train: gating mode " +
                            std::string(to_string(config.gating_mode)) +
                            " requires a nonempty calibration set");

  TrainResult result;
  result.threshold.grid_size = config.threshold_grid_size;

  // warmup phase; identical across gating modes so trajectories stay comparable
  auto [cur, t0] = style_adaptation(params, data, cal, config.style_adapt_steps, config);
  result.threshold.t0 = t0;
  result.threshold.t = t0;

  const std::size_t steps_per_epoch = std::max<std::size_t>(
      1, data.size() / static_cast<std::size_t>(config.batch_size));
  const int update_interval = config.threshold_update_interval > 0
                                  ? config.threshold_update_interval
                                  : static_cast<int>(steps_per_epoch);
  result.threshold.update_interval = update_interval;

  if (config.steps == 0) {
    result.params = std::move(cur);
    return result;
  }

  Optimizer opt(config, cur.theta.size(), config.steps);
  BatchCursor cursor(data.size(), mix_seed(config.seed, "shuffle"));
  Rng dropout_rng(mix_seed(config.seed, "dropout"));
  Rng gate_rng(mix_seed(config.seed, "random_gate"));

  std::vector<std::size_t> batch;
  std::vector<int> gates;
  std::vector<int> cog_gates;

  std::size_t gated_total = 0, seen_total = 0;          // whole run
  std::size_t gated_window = 0, seen_window = 0;        // since last eval row
  std::size_t cog_gated_run = 0, cog_seen_run = 0;      // cognition gate tracker

  for (int step = 1; step <= config.steps; ++step) {
    cursor.next(config.batch_size, batch);

    // gate with pre-step parameters in Eval mode
    if (config.gating_mode == GatingMode::Cognition ||
        config.gating_mode == GatingMode::Random) {
      cog_gates.resize(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        cog_gates[i] = gate(nll_of(cur, data.samples[batch[i]]), result.threshold.t);
    }

    switch (config.gating_mode) {
      case GatingMode::None:
        gates.assign(batch.size(), 0);
        break;
      case GatingMode::Uniform:
        gates.assign(batch.size(), 1);
        break;
      case GatingMode::Cognition:
        gates = cog_gates;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const Sample& s = data.samples[batch[i]];
          if (!s.oracle_tag) continue;
          if (*s.oracle_tag == KnowledgeTag::HighlyKnown)
            (cog_gates[i] ? result.gate_stats.tp : result.gate_stats.fn) += 1;
          else if (*s.oracle_tag == KnowledgeTag::Unknown)
            (cog_gates[i] ? result.gate_stats.fp : result.gate_stats.tn) += 1;
        }
        break;
      case GatingMode::Random: {
        // match the cognition gate's running gated fraction, assignment random
        for (int g : cog_gates) cog_gated_run += static_cast<std::size_t>(g);
        cog_seen_run += cog_gates.size();
        const double frac =
            static_cast<double>(cog_gated_run) / static_cast<double>(cog_seen_run);
        gates = random_gate(batch.size(), frac, gate_rng);
        break;
      }
    }

    result.step_losses.push_back(
        gated_step(cur, data, batch, gates, config.loss_spec, opt, dropout_rng));

    for (int g : gates) {
      gated_total += static_cast<std::size_t>(g);
      gated_window += static_cast<std::size_t>(g);
    }
    seen_total += batch.size();
    seen_window += batch.size();

    if (needs_gate && step % update_interval == 0)
      result.threshold.t = update_threshold(cal, cur, config.threshold_grid_size,
                                            config.threshold_criterion);

    if (step % config.eval_interval == 0 || step == config.steps) {
      const double frac =
          seen_window ? static_cast<double>(gated_window) / static_cast<double>(seen_window)
                      : 0.0;
      result.log.push_back(
          eval_row(cur, data, step, "train", result.threshold.t, frac));
      for (const EvalSplit& split : evals)
        result.log.push_back(
            eval_row(cur, *split.data, step, split.name, result.threshold.t, frac));
      gated_window = seen_window = 0;
    }
  }

  result.mean_gated_fraction =
      seen_total ? static_cast<double>(gated_total) / static_cast<double>(seen_total) : 0.0;
  result.params = std::move(cur);
  return result;
}

void write_dynamics_csv(const DynamicsLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInputError("cannot open for writing: " + path);
  out << "step,split,accuracy,mean_conf,conf_correct,conf_incorrect,ece,auroc,"
         "threshold,gated_fraction\n";
  char buf[32];
  const auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const DynamicsRow& r : log) {
    out << r.step << ',' << r.split << ',' << fmt(r.accuracy) << ','
        << fmt(r.mean_conf) << ',' << fmt(r.conf_correct) << ','
        << fmt(r.conf_incorrect) << ',' << fmt(r.ece_value) << ','
        << fmt(r.auroc_value) << ',' << fmt(r.threshold) << ','
        << fmt(r.gated_fraction) << "\n";
  }
}

}  // namespace cogcalib
