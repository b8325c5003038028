#include "cogcalib/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace fs = std::filesystem;

namespace cogcalib {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::VanillaSFT: return "VanillaSFT";
    case Method::CoLS: return "CoLS";
    case Method::CoMbLS: return "CoMbLS";
    case Method::CoECP: return "CoECP";
    case Method::UniformLS: return "UniformLS";
    case Method::UniformMbLS: return "UniformMbLS";
    case Method::UniformECP: return "UniformECP";
    case Method::RandomLS: return "RandomLS";
    case Method::RandomMbLS: return "RandomMbLS";
    case Method::RandomECP: return "RandomECP";
    case Method::TS: return "TS";
    case Method::MCD: return "MCD";
    case Method::Ensemble: return "Ensemble";
  }
  return "?";
}

std::optional<Method> method_from_string(std::string_view s) {
  static const Method all[] = {
      Method::VanillaSFT, Method::CoLS,      Method::CoMbLS,   Method::CoECP,
      Method::UniformLS,  Method::UniformMbLS, Method::UniformECP,
      Method::RandomLS,   Method::RandomMbLS,  Method::RandomECP,
      Method::TS,         Method::MCD,       Method::Ensemble};
  for (Method m : all)
    if (to_string(m) == s) return m;
  return std::nullopt;
}

namespace {

struct MethodTraits {
  GatingMode gating = GatingMode::None;
  LossKind loss = LossKind::CE;
};

MethodTraits traits_of(Method m) {
  switch (m) {
    case Method::CoLS: return {GatingMode::Cognition, LossKind::LS};
    case Method::CoMbLS: return {GatingMode::Cognition, LossKind::MbLS};
    case Method::CoECP: return {GatingMode::Cognition, LossKind::ECP};
    case Method::UniformLS: return {GatingMode::Uniform, LossKind::LS};
    case Method::UniformMbLS: return {GatingMode::Uniform, LossKind::MbLS};
    case Method::UniformECP: return {GatingMode::Uniform, LossKind::ECP};
    case Method::RandomLS: return {GatingMode::Random, LossKind::LS};
    case Method::RandomMbLS: return {GatingMode::Random, LossKind::MbLS};
    case Method::RandomECP: return {GatingMode::Random, LossKind::ECP};
    default: return {GatingMode::None, LossKind::CE};
  }
}

std::string fmt10(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  Dataset out = a;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

Dataset slice(const Dataset& d, std::size_t begin, std::size_t count) {
  Dataset out;
  out.k_classes = d.k_classes;
  out.dim = d.dim;
  out.samples.assign(d.samples.begin() + begin, d.samples.begin() + begin + count);
  return out;
}

}  // namespace

CalibrationSet fixed_interval_cal(const Dataset& train, int cal_size) {
  if (cal_size < 1) throw ConfigError("cal_size must be >= 1");
  if (static_cast<std::size_t>(cal_size) > train.size())
    throw ConfigError("cal_size exceeds training set size");
  CalibrationSet cal;
  cal.samples.k_classes = train.k_classes;
  cal.samples.dim = train.dim;
  for (int i = 0; i < cal_size; ++i) {
    const std::size_t idx = static_cast<std::size_t>(
        (static_cast<double>(i) * static_cast<double>(train.size())) / cal_size);
    cal.samples.samples.push_back(train.samples[idx]);
  }
  return cal;
}

std::uint64_t method_train_seed(std::uint64_t seed, Method m) {
  // TS scales the vanilla SFT model, so it shares that training stream
  const Method train_as = m == Method::TS ? Method::VanillaSFT : m;
  return mix_seed(seed, to_string(train_as));
}

ExperimentConfig::ExperimentConfig() {
  pretrain.steps = 2250;  // six epochs: the surrogate enters sharp on domain A
  pretrain.batch_size = 32;
  pretrain.learning_rate = 3e-3;
  pretrain.eval_interval = 2250;

  train.steps = 500;
  train.batch_size = 32;
  train.learning_rate = 5e-4;
  train.eval_interval = 50;
  train.style_adapt_steps = 25;
  train.threshold_grid_size = 100;
  train.loss_spec = LossSpec::multi_choice(LossKind::CE);
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  return from_config(ConfigFile::parse_file(path));
}

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& cfg) {
  static const std::map<std::string, std::vector<std::string>> allowed = {
      {"task",
       {"dim", "classes", "pretrain_size", "pool_known", "pool_unknown",
        "label_noise", "class_weights", "center_radius", "cluster_sigma",
        "shift_rotation", "permute_fraction", "blend_unknown",
        "draw_budget_factor", "slick_perturbations", "slick_samples",
        "slick_temperature", "noise_sigma", "noise_sigma_fraction",
        "finetune_size", "train_unknown_fraction", "val_size", "test_size",
        "cal_size", "ood_size", "ood_shift_level", "ood_translation",
        "ood_cov_scale"}},
      {"model", {"architecture", "hidden", "dropout", "init_scale"}},
      {"pretrain", {"optimizer", "lr", "steps", "batch_size", "eval_interval"}},
      {"train",
       {"optimizer", "lr", "beta1", "beta2", "adam_eps", "lr_decay", "steps",
        "batch_size", "eval_interval", "style_adapt_steps",
        "threshold_update_interval", "threshold_grid_size",
        "threshold_criterion", "loss_preset",
        "epsilon", "gamma", "margin", "beta", "alpha", "alpha_ls", "alpha_mbls",
        "alpha_ecp", "cal_term"}},
      {"experiment",
       {"methods", "seeds", "out", "mcd_dropout", "mcd_passes",
        "ensemble_members", "timing"}},
  };
  cfg.check_known(allowed);

  ExperimentConfig ec;
  SyntheticTaskSpec& t = ec.task;
  t.dim = static_cast<int>(cfg.get_long("task", "dim", t.dim));
  t.k_classes = static_cast<int>(cfg.get_long("task", "classes", t.k_classes));
  t.pretrain_size = static_cast<int>(cfg.get_long("task", "pretrain_size", t.pretrain_size));
  t.pool_known = static_cast<int>(cfg.get_long("task", "pool_known", t.pool_known));
  t.pool_unknown = static_cast<int>(cfg.get_long("task", "pool_unknown", t.pool_unknown));
  t.label_noise = cfg.get_double("task", "label_noise", t.label_noise);
  t.center_radius = cfg.get_double("task", "center_radius", t.center_radius);
  t.cluster_sigma = cfg.get_double("task", "cluster_sigma", t.cluster_sigma);
  t.shift_rotation = cfg.get_double("task", "shift_rotation", t.shift_rotation);
  t.permute_fraction = cfg.get_double("task", "permute_fraction", t.permute_fraction);
  t.blend_unknown = cfg.get_double("task", "blend_unknown", t.blend_unknown);
  t.draw_budget_factor =
      static_cast<int>(cfg.get_long("task", "draw_budget_factor", t.draw_budget_factor));
  t.slick_perturbations =
      static_cast<int>(cfg.get_long("task", "slick_perturbations", t.slick_perturbations));
  t.slick_samples = static_cast<int>(cfg.get_long("task", "slick_samples", t.slick_samples));
  t.slick_temperature = cfg.get_double("task", "slick_temperature", t.slick_temperature);
  t.noise_sigma = cfg.get_double("task", "noise_sigma", t.noise_sigma);
  t.noise_sigma_fraction =
      cfg.get_double("task", "noise_sigma_fraction", t.noise_sigma_fraction);
  t.finetune_size = static_cast<int>(cfg.get_long("task", "finetune_size", t.finetune_size));
  t.train_unknown_fraction =
      cfg.get_double("task", "train_unknown_fraction", t.train_unknown_fraction);
  t.val_size = static_cast<int>(cfg.get_long("task", "val_size", t.val_size));
  t.test_size = static_cast<int>(cfg.get_long("task", "test_size", t.test_size));
  t.cal_size = static_cast<int>(cfg.get_long("task", "cal_size", t.cal_size));
  t.ood_size = static_cast<int>(cfg.get_long("task", "ood_size", t.ood_size));
  t.ood_shift_level = cfg.get_double("task", "ood_shift_level", t.ood_shift_level);
  t.ood_translation = cfg.get_double("task", "ood_translation", t.ood_translation);
  t.ood_cov_scale = cfg.get_double("task", "ood_cov_scale", t.ood_cov_scale);
  for (const std::string& w : cfg.get_list("task", "class_weights"))
    t.class_weights.push_back(std::stod(w));

  const std::string arch = cfg.get_string("model", "architecture", "mlp");
  if (arch == "mlp")
    ec.arch = Architecture::Mlp;
  else if (arch == "linear")
    ec.arch = Architecture::Linear;
  else
    throw ConfigError("unknown architecture '" + arch + "' (use linear or mlp)");
  ec.hidden = static_cast<int>(cfg.get_long("model", "hidden", ec.hidden));
  ec.dropout = cfg.get_double("model", "dropout", ec.dropout);
  ec.init_scale = cfg.get_double("model", "init_scale", ec.init_scale);

  const auto parse_optimizer = [](const std::string& s) {
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "sgd") return OptimizerKind::SGD;
    throw ConfigError("unknown optimizer '" + s + "' (use adam or sgd)");
  };

  ec.pretrain.optimizer =
      parse_optimizer(cfg.get_string("pretrain", "optimizer", "adam"));
  ec.pretrain.learning_rate =
      cfg.get_double("pretrain", "lr", ec.pretrain.learning_rate);
  ec.pretrain.steps = static_cast<int>(cfg.get_long("pretrain", "steps", ec.pretrain.steps));
  ec.pretrain.batch_size =
      static_cast<int>(cfg.get_long("pretrain", "batch_size", ec.pretrain.batch_size));
  ec.pretrain.eval_interval = static_cast<int>(
      cfg.get_long("pretrain", "eval_interval", std::max(1, ec.pretrain.steps)));

  TrainConfig& tr = ec.train;
  tr.optimizer = parse_optimizer(cfg.get_string("train", "optimizer", "adam"));
  tr.learning_rate = cfg.get_double("train", "lr", tr.learning_rate);
  tr.adam_beta1 = cfg.get_double("train", "beta1", tr.adam_beta1);
  tr.adam_beta2 = cfg.get_double("train", "beta2", tr.adam_beta2);
  tr.adam_eps = cfg.get_double("train", "adam_eps", tr.adam_eps);
  const std::string decay = cfg.get_string("train", "lr_decay", "constant");
  if (decay == "constant")
    tr.lr_decay = LrDecay::Constant;
  else if (decay == "linear")
    tr.lr_decay = LrDecay::Linear;
  else
    throw ConfigError("unknown lr_decay '" + decay + "' (use constant or linear)");
  tr.steps = static_cast<int>(cfg.get_long("train", "steps", tr.steps));
  tr.batch_size = static_cast<int>(cfg.get_long("train", "batch_size", tr.batch_size));
  tr.eval_interval =
      static_cast<int>(cfg.get_long("train", "eval_interval", tr.eval_interval));
  // style adaptation defaults to 5% of the step budget
  tr.style_adapt_steps = static_cast<int>(cfg.get_long(
      "train", "style_adapt_steps", std::lround(0.05 * tr.steps)));
  tr.threshold_update_interval =
      static_cast<int>(cfg.get_long("train", "threshold_update_interval", 0));
  tr.threshold_grid_size = static_cast<int>(
      cfg.get_long("train", "threshold_grid_size", tr.threshold_grid_size));
  const std::string criterion =
      cfg.get_string("train", "threshold_criterion", "balanced");
  if (criterion == "balanced")
    tr.threshold_criterion = ThresholdCriterion::BalancedRates;
  else if (criterion == "accuracy")
    tr.threshold_criterion = ThresholdCriterion::Accuracy;
  else
    throw ConfigError("unknown threshold_criterion '" + criterion +
                      "' (use balanced or accuracy)");

  const std::string preset = cfg.get_string("train", "loss_preset", "multi_choice");
  if (preset == "multi_choice")
    tr.loss_spec = LossSpec::multi_choice(LossKind::CE);
  else if (preset == "open_ended")
    tr.loss_spec = LossSpec::open_ended(LossKind::CE);
  else
    throw ConfigError("unknown loss_preset '" + preset +
                      "' (use multi_choice or open_ended)");
  tr.loss_spec.epsilon = cfg.get_double("train", "epsilon", tr.loss_spec.epsilon);
  tr.loss_spec.gamma = cfg.get_double("train", "gamma", tr.loss_spec.gamma);
  tr.loss_spec.margin = cfg.get_double("train", "margin", tr.loss_spec.margin);
  tr.loss_spec.beta = cfg.get_double("train", "beta", tr.loss_spec.beta);
  if (cfg.has("train", "alpha")) {
    const double a = cfg.get_double("train", "alpha", 1.0);
    ec.alpha_ls = ec.alpha_mbls = ec.alpha_ecp = a;
    tr.loss_spec.alpha = a;
  }
  ec.alpha_ls = cfg.get_double("train", "alpha_ls", ec.alpha_ls);
  ec.alpha_mbls = cfg.get_double("train", "alpha_mbls", ec.alpha_mbls);
  ec.alpha_ecp = cfg.get_double("train", "alpha_ecp", ec.alpha_ecp);
  const std::string form = cfg.get_string("train", "cal_term", "regularizer");
  if (form == "regularizer")
    tr.loss_spec.cal_term = CalTermForm::Regularizer;
  else if (form == "full")
    tr.loss_spec.cal_term = CalTermForm::FullLoss;
  else
    throw ConfigError("unknown cal_term '" + form + "' (use regularizer or full)");

  const std::vector<std::string> methods = cfg.get_list("experiment", "methods");
  for (const std::string& name : methods) {
    const auto m = method_from_string(name);
    if (!m) throw ConfigError("unknown method '" + name + "' in [experiment] methods");
    ec.methods.push_back(*m);
  }
  if (ec.methods.empty())
    ec.methods = {Method::VanillaSFT, Method::CoLS, Method::CoMbLS, Method::CoECP};

  for (const std::string& s : cfg.get_list("experiment", "seeds")) {
    try {
      ec.seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + s + "' in [experiment] seeds");
    }
  }
  if (ec.seeds.empty()) ec.seeds = {1, 2, 3};

  ec.out_dir = cfg.get_string("experiment", "out", ec.out_dir);
  ec.mcd_dropout = cfg.get_double("experiment", "mcd_dropout", ec.mcd_dropout);
  ec.mcd_passes = static_cast<int>(cfg.get_long("experiment", "mcd_passes", ec.mcd_passes));
  ec.ensemble_members = static_cast<int>(
      cfg.get_long("experiment", "ensemble_members", ec.ensemble_members));
  const std::string timing = cfg.get_string("experiment", "timing", "off");
  if (timing == "wall")
    ec.wall_timing = true;
  else if (timing == "off")
    ec.wall_timing = false;
  else
    throw ConfigError("unknown timing '" + timing + "' (use off or wall)");

  ec.validate();
  return ec;
}

void ExperimentConfig::validate() const {
  task.validate();
  if (methods.empty()) throw ConfigError("experiment: empty method matrix");
  if (seeds.empty()) throw ConfigError("experiment: empty seed list");
  if (out_dir.empty()) throw ConfigError("experiment: empty output directory");
  if (hidden < 1) throw ConfigError("model: hidden must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
  if (mcd_passes < 1) throw ConfigError("experiment: mcd_passes must be >= 1");
  if (ensemble_members < 1)
    throw ConfigError("experiment: ensemble_members must be >= 1");

  const double f = task.train_unknown_fraction;
  const int train_u = static_cast<int>(std::lround(task.finetune_size * f));
  const int train_k = task.finetune_size - train_u;
  if (train_k > task.pool_known)
    throw ConfigError("task: pool_known too small for the training mixture (need " +
                      std::to_string(train_k) + ")");
  if (train_u > task.pool_unknown)
    throw ConfigError("task: pool_unknown too small for the training mixture (need " +
                      std::to_string(train_u) + ")");
  if (task.cal_size < 1 || task.cal_size > task.finetune_size)
    throw ConfigError("task: cal_size must be in [1, finetune_size]");
}

ModelParams pretrain_surrogate(const ExperimentConfig& config, std::uint64_t seed) {
  SyntheticTaskSpec task = config.task;
  task.seed = mix_seed(seed, "data");
  const Dataset pretrain_pool = make_pretrain_pool(task);

  ModelParams init = config.arch == Architecture::Mlp
                         ? ModelParams::mlp(task.dim, task.k_classes,
                                            config.hidden, config.dropout)
                         : ModelParams::linear(task.dim, task.k_classes);
  Rng init_rng(mix_seed(seed, "init"));
  init.randomize(init_rng, config.init_scale);

  TrainConfig pt = config.pretrain;
  pt.gating_mode = GatingMode::None;
  pt.loss_spec = LossSpec{};
  pt.seed = mix_seed(seed, "pretrain");
  CalibrationSet no_cal;
  return train(init, pretrain_pool, pt, no_cal).params;
}

SeedContext prepare_seed(const ExperimentConfig& config, std::uint64_t seed) {
  return prepare_seed_with_model(config, seed, pretrain_surrogate(config, seed));
}

SeedContext prepare_seed_with_model(const ExperimentConfig& config,
                                    std::uint64_t seed,
                                    const ModelParams& pretrained) {
  SeedContext ctx;
  ctx.seed = seed;
  ctx.task = config.task;
  ctx.task.seed = mix_seed(seed, "data");
  ctx.pretrained = pretrained;

  const PoolPair pools = make_finetune_pools(ctx.task, ctx.pretrained);

  const double f = ctx.task.train_unknown_fraction;
  const int train_u = static_cast<int>(std::lround(ctx.task.finetune_size * f));
  const int train_k = ctx.task.finetune_size - train_u;

  ctx.known_train_pool = pools.known_pool;
  ctx.unknown_train_pool = pools.unknown_pool;
  ctx.train_set = concat(slice(ctx.known_train_pool, 0, train_k),
                         slice(ctx.unknown_train_pool, 0, train_u));
  ctx.cal = fixed_interval_cal(ctx.train_set, ctx.task.cal_size);

  // evaluation sets are unfiltered draws from the task blend: unlike the
  // crisp tagged pools they span every knowledge level, which is where
  // miscalibration lives
  const GaussianMixture a = dist_a(ctx.task);
  const GaussianMixture b = dist_b(ctx.task);
  const auto blend_draw = [&](int n, std::string_view stream, std::int64_t id_base) {
    Rng rng(mix_seed(ctx.task.seed, stream));
    Dataset out;
    out.k_classes = ctx.task.k_classes;
    out.dim = ctx.task.dim;
    out.samples.reserve(n);
    for (int i = 0; i < n; ++i) {
      const bool from_b = rng.uniform() < ctx.task.blend_unknown;
      Dataset one = sample_mixture(from_b ? b : a, 1, ctx.task.k_classes,
                                   ctx.task.dim, 0.0, rng, id_base + i);
      out.samples.push_back(std::move(one.samples.front()));
    }
    return out;
  };
  ctx.val_set = blend_draw(ctx.task.val_size, "val", std::int64_t{3} << 20);
  ctx.test_set = blend_draw(ctx.task.test_size, "test", std::int64_t{4} << 20);
  ctx.ood_set = make_ood_set(ctx.task, ctx.task.ood_shift_level);
  return ctx;
}

namespace {

struct CellResult {
  std::string run_name;
  std::vector<ReportRow> rows;
  DynamicsLog log;
  bool failed = false;
  std::string error;
};

std::vector<PredictionRecord> records_with_temperature(const ModelParams& params,
                                                       const Dataset& data,
                                                       double temperature) {
  std::vector<PredictionRecord> records(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data.samples[i];
    const LogitVector l = forward(params, s.features, Mode::Eval);
    const ProbVector p = apply_temperature(l, temperature);
    const int pred = argmax_lowest(p);
    records[i].confidence = p[pred];
    records[i].correct = pred == s.label;
  }
  return records;
}

std::vector<PredictionRecord> records_from_probs(
    const Dataset& data, const std::function<ProbVector(const Sample&)>& predict) {
  std::vector<PredictionRecord> records(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ProbVector p = predict(data.samples[i]);
    const int pred = argmax_lowest(p);
    records[i].confidence = p[pred];
    records[i].correct = pred == data.samples[i].label;
  }
  return records;
}

CellResult run_cell(const ExperimentConfig& config, const SeedContext& ctx,
                    Method method) {
  const auto start = std::chrono::steady_clock::now();

  CellResult cell;
  cell.run_name = std::string(to_string(method)) + "_seed" + std::to_string(ctx.seed);

  const MethodTraits traits = traits_of(method);
  TrainConfig tc = config.train;
  tc.gating_mode = traits.gating;
  tc.loss_spec.kind = traits.loss;
  switch (traits.loss) {
    case LossKind::LS: tc.loss_spec.alpha = config.alpha_ls; break;
    case LossKind::MbLS: tc.loss_spec.alpha = config.alpha_mbls; break;
    case LossKind::ECP: tc.loss_spec.alpha = config.alpha_ecp; break;
    case LossKind::CE: break;
  }
  tc.seed = method_train_seed(ctx.seed, method);

  const std::vector<EvalSplit> evals = {{"test", &ctx.test_set},
                                        {"ood", &ctx.ood_set}};

  ModelParams base = ctx.pretrained;
  if (method == Method::MCD && base.arch == Architecture::Mlp)
    base.dropout_rate = config.mcd_dropout;

  std::vector<ModelParams> models;
  TrainResult main_result;
  if (method == Method::Ensemble) {
    for (int k = 0; k < config.ensemble_members; ++k) {
      TrainConfig mc = tc;
      mc.seed = mix_seed(tc.seed, static_cast<std::uint64_t>(k));
      CalibrationSet cal = ctx.cal;
      TrainResult r = train(base, ctx.train_set, mc, cal, evals);
      if (k == 0) main_result = std::move(r);
      models.push_back(k == 0 ? main_result.params : std::move(r.params));
    }
  } else {
    CalibrationSet cal = ctx.cal;
    main_result = train(base, ctx.train_set, tc, cal, evals);
    models.push_back(main_result.params);
  }
  cell.log = main_result.log;

  // post-hoc temperature where listed
  double temperature = 1.0;
  if (method == Method::TS) {
    std::vector<LogitVector> val_logits(ctx.val_set.size());
    std::vector<int> val_labels(ctx.val_set.size());
    for (std::size_t i = 0; i < ctx.val_set.size(); ++i) {
      val_logits[i] = forward(models[0], ctx.val_set.samples[i].features, Mode::Eval);
      val_labels[i] = ctx.val_set.samples[i].label;
    }
    temperature = fit_temperature(val_logits, val_labels).t_star;
  }

  Rng mcd_rng(mix_seed(tc.seed, "mcd_eval"));
  const auto records_for = [&](const Dataset& data) {
    switch (method) {
      case Method::TS:
        return records_with_temperature(models[0], data, temperature);
      case Method::MCD:
        return records_from_probs(data, [&](const Sample& s) {
          return mc_dropout_predict(models[0], s.features, config.mcd_passes, mcd_rng);
        });
      case Method::Ensemble:
        return records_from_probs(data, [&](const Sample& s) {
          return ensemble_predict(models, s.features);
        });
      default:
        return predict_records(models[0], data);
    }
  };

  // gate agreement: training-averaged for cognition runs, final-model
  // measurement otherwise
  GateQuality gq = main_result.gate_stats.any()
                       ? main_result.gate_stats.quality()
                       : gate_quality(ctx.train_set, models[0], main_result.threshold.t);

  const auto elapsed = [&] {
    if (!config.wall_timing) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  };

  for (const EvalSplit& split : evals) {
    const MetricsReport rep = evaluate_records(records_for(*split.data));
    ReportRow row;
    row.method = to_string(method);
    row.seed = ctx.seed;
    row.split = split.name;
    row.accuracy = rep.accuracy;
    row.ece = rep.ece;
    row.auroc = rep.auroc.value_or(0.5);
    row.threshold = main_result.threshold.t;
    row.gate_acc = gq.accuracy;
    row.gate_tpr = gq.tpr;
    row.gate_tnr = gq.tnr;
    cell.rows.push_back(row);
  }
  const double secs = elapsed();
  for (ReportRow& row : cell.rows) row.seconds = secs;
  return cell;
}

const std::string kReportHeader =
    "method,seed,split,accuracy,ece,auroc,threshold,gate_acc,gate_tpr,gate_tnr,"
    "seconds";

void write_rows_csv(const std::vector<ReportRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInputError("cannot open for writing: " + path);
  out << kReportHeader << "\n";
  for (const ReportRow& r : rows)
    out << r.method << ',' << r.seed << ',' << r.split << ',' << fmt10(r.accuracy)
        << ',' << fmt10(r.ece) << ',' << fmt10(r.auroc) << ','
        << fmt10(r.threshold) << ',' << fmt10(r.gate_acc) << ','
        << fmt10(r.gate_tpr) << ',' << fmt10(r.gate_tnr) << ','
        << fmt10(r.seconds) << "\n";
}

void sort_rows(std::vector<ReportRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.method != b.method) return a.method < b.method;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.split < b.split;
  });
}

}  // namespace

int thread_cap() {
  if (const char* env = std::getenv("COGCALIB_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n < 1) throw std::invalid_argument("");
      return n;
    } catch (const std::exception&) {
      throw ConfigError(std::string("COGCALIB_THREADS must be a positive integer, got '") +
                        env + "'");
    }
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int cap = thread_cap();
  if (cap <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  const std::size_t workers = std::min<std::size_t>(cap, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  for (std::thread& th : pool) th.join();
}

RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(fs::path(config.out_dir) / "runs");

  std::vector<SeedContext> contexts(config.seeds.size());
  parallel_for(contexts.size(), [&](std::size_t i) {
    try {
      contexts[i] = prepare_seed(config, config.seeds[i]);
    } catch (const std::exception& e) {
      contexts[i].seed = config.seeds[i];
      contexts[i].error = e.what();
    }
  });

  const std::size_t n_cells = config.methods.size() * config.seeds.size();
  std::vector<CellResult> cells(n_cells);
  parallel_for(n_cells, [&](std::size_t j) {
    const Method method = config.methods[j / config.seeds.size()];
    const SeedContext& ctx = contexts[j % config.seeds.size()];
    CellResult& cell = cells[j];
    if (!ctx.error.empty()) {
      cell.failed = true;
      cell.error = ctx.error;
    } else {
      try {
        cell = run_cell(config, ctx, method);
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
    }
    if (cell.failed) {
      cell.run_name = std::string(to_string(method)) + "_seed" +
                      std::to_string(config.seeds[j % config.seeds.size()]);
      ReportRow row;
      row.method = to_string(method);
      row.seed = config.seeds[j % config.seeds.size()];
      row.split = "error";
      cell.rows = {row};
    }

    const fs::path dir = fs::path(config.out_dir) / "runs" / cell.run_name;
    fs::create_directories(dir);
    if (cell.failed) {
      std::ofstream err(dir / "error.txt");
      err << cell.error << "\n";
    } else {
      write_dynamics_csv(cell.log, (dir / "dynamics.csv").string());
    }
    write_rows_csv(cell.rows, (dir / "metrics.csv").string());
  });

  RunReport report;
  for (const CellResult& cell : cells)
    report.rows.insert(report.rows.end(), cell.rows.begin(), cell.rows.end());
  sort_rows(report.rows);

  write_report_csv(report, (fs::path(config.out_dir) / "report.csv").string());
  write_summary_csv(report, (fs::path(config.out_dir) / "summary.csv").string());
  return report;
}

std::vector<BiasRow> run_bias_sweep(const ExperimentConfig& config, int r) {
  if (r < 1) throw InvalidInputError("run_bias_sweep: r must be >= 1");
  config.validate();
  fs::create_directories(fs::path(config.out_dir) / "runs");

  std::vector<SeedContext> contexts(config.seeds.size());
  parallel_for(contexts.size(), [&](std::size_t i) {
    contexts[i] = prepare_seed(config, config.seeds[i]);
  });

  struct Job {
    std::vector<BiasRow> rows;
  };
  const std::size_t n_jobs = contexts.size() * static_cast<std::size_t>(r + 1);
  std::vector<Job> jobs(n_jobs);

  // mixtures are built per seed up front so the series stays incremental
  std::vector<std::vector<Dataset>> series(contexts.size());
  parallel_for(contexts.size(), [&](std::size_t i) {
    Rng mix_rng(mix_seed(config.seeds[i], "bias_mix"));
    series[i] = mix_ratio_series(contexts[i].known_train_pool,
                                 contexts[i].unknown_train_pool, r, mix_rng);
  });

  parallel_for(n_jobs, [&](std::size_t j) {
    const std::size_t si = j / static_cast<std::size_t>(r + 1);
    const int i = static_cast<int>(j % static_cast<std::size_t>(r + 1));
    const SeedContext& ctx = contexts[si];
    const Dataset& data = series[si][i];

    TrainConfig tc = config.train;
    tc.gating_mode = GatingMode::None;
    tc.loss_spec = LossSpec{};
    tc.seed = mix_seed(mix_seed(ctx.seed, "bias_ratio"), static_cast<std::uint64_t>(i));

    CalibrationSet cal =
        fixed_interval_cal(data, std::min<int>(config.task.cal_size,
                                               static_cast<int>(data.size())));
    const std::vector<EvalSplit> evals = {{"test", &ctx.test_set},
                                          {"ood", &ctx.ood_set}};
    const TrainResult result = train(ctx.pretrained, data, tc, cal, evals);

    const std::string ratio =
        std::to_string(i) + ":" + std::to_string(r - i);
    const std::string run_name = "bias_" + std::to_string(i) + "_" +
                                 std::to_string(r - i) + "_seed" +
                                 std::to_string(ctx.seed);
    const fs::path dir = fs::path(config.out_dir) / "runs" / run_name;
    fs::create_directories(dir);
    write_dynamics_csv(result.log, (dir / "dynamics.csv").string());

    // report values come from the final dynamics rows so the files agree
    for (const DynamicsRow& row : result.log) {
      if (row.step != tc.steps || row.split == "train") continue;
      BiasRow br;
      br.ratio = ratio;
      br.seed = ctx.seed;
      br.split = row.split;
      br.accuracy = row.accuracy;
      br.ece = row.ece_value;
      jobs[j].rows.push_back(br);
    }
  });

  std::vector<BiasRow> rows;
  for (const Job& job : jobs)
    rows.insert(rows.end(), job.rows.begin(), job.rows.end());

  std::ofstream out(fs::path(config.out_dir) / "bias_report.csv");
  out << "ratio,seed,split,accuracy,ece\n";
  for (const BiasRow& row : rows)
    out << row.ratio << ',' << row.seed << ',' << row.split << ','
        << fmt10(row.accuracy) << ',' << fmt10(row.ece) << "\n";
  return rows;
}

std::vector<DeletionRow> run_deletion_sweep(const ExperimentConfig& config,
                                            const std::vector<double>& fractions) {
  if (fractions.empty() ||
      std::find(fractions.begin(), fractions.end(), 0.0) == fractions.end())
    throw InvalidInputError("run_deletion_sweep: fractions must include 0");
  for (double f : fractions)
    if (f < 0.0 || f > 1.0)
      throw InvalidInputError("run_deletion_sweep: fractions must lie in [0,1]");
  config.validate();
  fs::create_directories(fs::path(config.out_dir) / "runs");

  std::vector<SeedContext> contexts(config.seeds.size());
  parallel_for(contexts.size(), [&](std::size_t i) {
    contexts[i] = prepare_seed(config, config.seeds[i]);
  });

  struct Raw {
    double acc_test = 0, ece_test = 0, acc_ood = 0, ece_ood = 0;
  };
  const std::size_t n_jobs = contexts.size() * fractions.size();
  std::vector<Raw> raw(n_jobs);

  parallel_for(n_jobs, [&](std::size_t j) {
    const std::size_t si = j / fractions.size();
    const std::size_t fi = j % fractions.size();
    const SeedContext& ctx = contexts[si];

    Rng del_rng(mix_seed(mix_seed(ctx.seed, "deletion"), static_cast<std::uint64_t>(fi)));
    const Dataset data = delete_known_fraction(ctx.train_set, fractions[fi], del_rng);

    TrainConfig tc = config.train;
    tc.gating_mode = GatingMode::None;
    tc.loss_spec = LossSpec{};
    tc.seed = mix_seed(mix_seed(ctx.seed, "deletion_train"), static_cast<std::uint64_t>(fi));

    CalibrationSet cal = fixed_interval_cal(
        data, std::min<int>(config.task.cal_size, static_cast<int>(data.size())));
    const std::vector<EvalSplit> evals = {{"test", &ctx.test_set},
                                          {"ood", &ctx.ood_set}};
    const TrainResult result = train(ctx.pretrained, data, tc, cal, evals);

    const std::string run_name =
        "delete_" + fmt10(fractions[fi]) + "_seed" + std::to_string(ctx.seed);
    const fs::path dir = fs::path(config.out_dir) / "runs" / run_name;
    fs::create_directories(dir);
    write_dynamics_csv(result.log, (dir / "dynamics.csv").string());

    for (const DynamicsRow& row : result.log) {
      if (row.step != tc.steps) continue;
      if (row.split == "test") {
        raw[j].acc_test = row.accuracy;
        raw[j].ece_test = row.ece_value;
      } else if (row.split == "ood") {
        raw[j].acc_ood = row.accuracy;
        raw[j].ece_ood = row.ece_value;
      }
    }
  });

  const std::size_t base_fi =
      std::find(fractions.begin(), fractions.end(), 0.0) - fractions.begin();

  std::vector<DeletionRow> rows;
  for (std::size_t si = 0; si < contexts.size(); ++si) {
    const Raw& base = raw[si * fractions.size() + base_fi];
    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
      const Raw& cur = raw[si * fractions.size() + fi];
      for (const std::string split : {"test", "ood"}) {
        DeletionRow row;
        row.fraction = fractions[fi];
        row.seed = config.seeds[si];
        row.split = split;
        row.accuracy = split == "test" ? cur.acc_test : cur.acc_ood;
        row.ece = split == "test" ? cur.ece_test : cur.ece_ood;
        row.delta_accuracy =
            row.accuracy - (split == "test" ? base.acc_test : base.acc_ood);
        row.delta_ece = row.ece - (split == "test" ? base.ece_test : base.ece_ood);
        rows.push_back(row);
      }
    }
  }

  std::ofstream out(fs::path(config.out_dir) / "deletion_report.csv");
  out << "fraction,seed,split,accuracy,ece,delta_accuracy,delta_ece\n";
  for (const DeletionRow& row : rows)
    out << fmt10(row.fraction) << ',' << row.seed << ',' << row.split << ','
        << fmt10(row.accuracy) << ',' << fmt10(row.ece) << ','
        << fmt10(row.delta_accuracy) << ',' << fmt10(row.delta_ece) << "\n";
  return rows;
}

RunReport assemble_report(const std::string& dir) {
  const fs::path runs = fs::path(dir) / "runs";
  RunReport report;
  if (fs::exists(runs))
    for (const auto& entry : fs::directory_iterator(runs)) {
      const fs::path metrics = entry.path() / "metrics.csv";
      if (!fs::exists(metrics)) continue;
      const RunReport part = read_report_csv(metrics.string());
      report.rows.insert(report.rows.end(), part.rows.begin(), part.rows.end());
    }
  if (report.rows.empty()) throw InvalidInputError("no runs found in " + dir);
  sort_rows(report.rows);
  write_report_csv(report, (fs::path(dir) / "report.csv").string());
  write_summary_csv(report, (fs::path(dir) / "summary.csv").string());
  return report;
}

void write_report_csv(const RunReport& report, const std::string& path) {
  write_rows_csv(report.rows, path);
}

RunReport read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader)
    throw InvalidInputError("bad report header in " + path);
  RunReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    ReportRow row;
    std::getline(ss, row.method, ',');
    std::getline(ss, field, ',');
    row.seed = std::stoull(field);
    std::getline(ss, row.split, ',');
    const auto read_double = [&](double& v) {
      std::getline(ss, field, ',');
      v = std::stod(field);
    };
    read_double(row.accuracy);
    read_double(row.ece);
    read_double(row.auroc);
    read_double(row.threshold);
    read_double(row.gate_acc);
    read_double(row.gate_tpr);
    read_double(row.gate_tnr);
    read_double(row.seconds);
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_summary_csv(const RunReport& report, const std::string& path) {
  struct Key {
    std::string method, split;
    bool operator<(const Key& o) const {
      return method != o.method ? method < o.method : split < o.split;
    }
  };
  struct Acc {
    std::vector<double> accuracy, ece, auroc;
  };
  std::map<Key, Acc> groups;
  for (const ReportRow& row : report.rows) {
    if (row.split == "error") continue;
    Acc& a = groups[{row.method, row.split}];
    a.accuracy.push_back(row.accuracy);
    a.ece.push_back(row.ece);
    a.auroc.push_back(row.auroc);
  }

  const auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  const auto stdev = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };

  std::ofstream out(path);
  if (!out) throw InvalidInputError("cannot open for writing: " + path);
  out << "method,split,n_seeds,accuracy_mean,accuracy_std,ece_mean,ece_std,"
         "auroc_mean,auroc_std\n";
  for (const auto& [key, acc] : groups)
    out << key.method << ',' << key.split << ',' << acc.accuracy.size() << ','
        << fmt10(mean(acc.accuracy)) << ',' << fmt10(stdev(acc.accuracy)) << ','
        << fmt10(mean(acc.ece)) << ',' << fmt10(stdev(acc.ece)) << ','
        << fmt10(mean(acc.auroc)) << ',' << fmt10(stdev(acc.auroc)) << "\n";
}

void write_model_json(const ModelParams& params, const std::string& path) {
  nlohmann::json j;
  j["architecture"] = params.arch == Architecture::Mlp ? "mlp" : "linear";
  j["dim"] = params.dim;
  j["k_classes"] = params.k_classes;
  j["hidden"] = params.hidden;
  j["dropout_rate"] = params.dropout_rate;
  j["theta"] = params.theta;
  std::ofstream out(path);
  if (!out) throw InvalidInputError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

ModelParams read_model_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot open for reading: " + path);
  nlohmann::json j;
  in >> j;
  ModelParams p;
  const std::string arch = j.at("architecture").get<std::string>();
  p.arch = arch == "mlp" ? Architecture::Mlp : Architecture::Linear;
  p.dim = j.at("dim").get<int>();
  p.k_classes = j.at("k_classes").get<int>();
  p.hidden = j.at("hidden").get<int>();
  p.dropout_rate = j.at("dropout_rate").get<double>();
  p.theta = j.at("theta").get<std::vector<double>>();
  return p;
}

}  // namespace cogcalib
