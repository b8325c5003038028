#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "cogcalib/trainer.hpp"
#include "temp_dir.hpp"

using namespace cogcalib;

namespace {

// two well-separated gaussian blobs, linearly separable
Dataset blob_task(int n, std::uint64_t seed) {
  Dataset d;
  d.k_classes = 2;
  d.dim = 2;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    const double cx = label == 0 ? 2.5 : -2.5;
    Sample s;
    s.id = i;
    s.label = label;
    s.features = {cx + rng.normal(), rng.normal()};
    s.oracle_tag = label == 0 ? KnowledgeTag::HighlyKnown : KnowledgeTag::Unknown;
    d.samples.push_back(std::move(s));
  }
  return d;
}

TrainConfig quick_config(int steps, GatingMode mode = GatingMode::None) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 8;
  c.eval_interval = 10;
  c.gating_mode = mode;
  c.learning_rate = 0.05;
  c.seed = 9;
  c.threshold_grid_size = 20;
  return c;
}

CalibrationSet cal_from(const Dataset& d, int every) {
  CalibrationSet cal;
  cal.samples.k_classes = d.k_classes;
  cal.samples.dim = d.dim;
  for (std::size_t i = 0; i < d.size(); i += every)
    cal.samples.samples.push_back(d.samples[i]);
  return cal;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.theta.size() != b.theta.size()) return false;
  for (std::size_t i = 0; i < a.theta.size(); ++i)
    if (a.theta[i] != b.theta[i]) return false;
  return true;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("steps zero returns unchanged params and an empty log") {
  const Dataset data = blob_task(64, 1);
  ModelParams init = ModelParams::linear(2, 2);
  Rng rng(2);
  init.randomize(rng, 0.3);

  CalibrationSet cal = cal_from(data, 8);
  const TrainResult r = train(init, data, quick_config(0), cal);
  CHECK(same_params(r.params, init));
  CHECK(r.log.empty());
  CHECK(r.step_losses.empty());
}

TEST_CASE("config validation happens before any step") {
  const Dataset data = blob_task(16, 1);
  ModelParams init = ModelParams::linear(2, 2);
  CalibrationSet cal;

  TrainConfig bad = quick_config(10);
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(init, data, bad, cal), InvalidInputError);
  bad = quick_config(10);
  bad.batch_size = 64;  // larger than the dataset
  CHECK_THROWS_AS(train(init, data, bad, cal), InvalidInputError);
  bad = quick_config(10);
  bad.eval_interval = 0;
  CHECK_THROWS_AS(train(init, data, bad, cal), InvalidInputError);
  bad = quick_config(10, GatingMode::Cognition);  // needs a calibration set
  CHECK_THROWS_AS(train(init, data, bad, cal), InvalidInputError);
  CHECK_THROWS_AS(train(init, Dataset{}, quick_config(10), cal), InvalidInputError);
}

TEST_CASE("loss falls on a separable task") {
  const Dataset data = blob_task(128, 3);
  ModelParams init = ModelParams::linear(2, 2);
  CalibrationSet cal = cal_from(data, 16);
  const TrainResult r = train(init, data, quick_config(200), cal);

  const std::size_t tenth = r.step_losses.size() / 10;
  const double first = std::accumulate(r.step_losses.begin(),
                                       r.step_losses.begin() + tenth, 0.0) / tenth;
  const double last = std::accumulate(r.step_losses.end() - tenth,
                                      r.step_losses.end(), 0.0) / tenth;
  CHECK(last < first);

  // trained accuracy on the separable blobs should be essentially perfect
  CHECK(r.log.back().accuracy > 0.95);
}

TEST_CASE("sgd and linear decay also converge") {
  const Dataset data = blob_task(128, 21);
  ModelParams init = ModelParams::linear(2, 2);

  TrainConfig sgd = quick_config(200);
  sgd.optimizer = OptimizerKind::SGD;
  sgd.learning_rate = 0.2;
  CalibrationSet cal_a = cal_from(data, 16);
  const TrainResult a = train(init, data, sgd, cal_a);
  CHECK(a.log.back().accuracy > 0.95);

  TrainConfig decayed = quick_config(200);
  decayed.lr_decay = LrDecay::Linear;
  CalibrationSet cal_b = cal_from(data, 16);
  const TrainResult b = train(init, data, decayed, cal_b);
  CHECK(b.log.back().accuracy > 0.95);

  // decayed schedule takes a different trajectory than constant lr
  CalibrationSet cal_c = cal_from(data, 16);
  const TrainResult c = train(init, data, quick_config(200), cal_c);
  CHECK_FALSE(same_params(b.params, c.params));
}

TEST_CASE("vanilla trajectory equals cognition gating with zero alpha") {
  const Dataset data = blob_task(96, 4);
  ModelParams init = ModelParams::mlp(2, 2, 8);
  Rng rng(5);
  init.randomize(rng, 0.4);
  CalibrationSet cal = cal_from(data, 12);

  TrainConfig vanilla = quick_config(60, GatingMode::None);
  vanilla.style_adapt_steps = 10;
  TrainConfig gated = vanilla;
  gated.gating_mode = GatingMode::Cognition;
  gated.loss_spec = LossSpec::multi_choice(LossKind::LS);
  gated.loss_spec.alpha = 0.0;

  CalibrationSet cal_a = cal, cal_b = cal;
  const TrainResult a = train(init, data, vanilla, cal_a);
  const TrainResult b = train(init, data, gated, cal_b);
  CHECK(same_params(a.params, b.params));
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].accuracy == b.log[i].accuracy);
    CHECK(a.log[i].mean_conf == b.log[i].mean_conf);
    CHECK(a.log[i].ece_value == b.log[i].ece_value);
  }
}

TEST_CASE("the gate only selects the loss, never the samples") {
  // LS with epsilon 0 makes the gated loss literally CE, so a cognition run
  // must match the vanilla run bit for bit even though gates fire
  const Dataset data = blob_task(96, 6);
  ModelParams init = ModelParams::mlp(2, 2, 6);
  Rng rng(7);
  init.randomize(rng, 0.4);
  CalibrationSet cal = cal_from(data, 12);

  TrainConfig vanilla = quick_config(50, GatingMode::None);
  TrainConfig gated = vanilla;
  gated.gating_mode = GatingMode::Cognition;
  gated.loss_spec.kind = LossKind::LS;
  gated.loss_spec.epsilon = 0.0;

  CalibrationSet cal_a = cal, cal_b = cal;
  const TrainResult a = train(init, data, vanilla, cal_a);
  const TrainResult b = train(init, data, gated, cal_b);
  CHECK(same_params(a.params, b.params));
  CHECK(b.mean_gated_fraction > 0.0);  // gates actually fired
}

TEST_CASE("training is bitwise reproducible") {
  const Dataset data = blob_task(80, 8);
  ModelParams init = ModelParams::mlp(2, 2, 8, 0.2);
  Rng rng(9);
  init.randomize(rng, 0.4);
  CalibrationSet cal = cal_from(data, 10);

  TrainConfig cfg = quick_config(80, GatingMode::Cognition);
  cfg.loss_spec = LossSpec::multi_choice(LossKind::LS);
  cfg.style_adapt_steps = 8;

  CalibrationSet cal_a = cal, cal_b = cal;
  const TrainResult a = train(init, data, cfg, cal_a);
  const TrainResult b = train(init, data, cfg, cal_b);
  CHECK(same_params(a.params, b.params));
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].step == b.log[i].step);
    CHECK(a.log[i].mean_conf == b.log[i].mean_conf);
    CHECK(a.log[i].threshold == b.log[i].threshold);
    CHECK(a.log[i].gated_fraction == b.log[i].gated_fraction);
  }
}

TEST_CASE("dynamics log satisfies the confidence decomposition") {
  const Dataset data = blob_task(90, 10);
  const Dataset held = blob_task(40, 11);
  ModelParams init = ModelParams::linear(2, 2);
  CalibrationSet cal = cal_from(data, 10);

  const std::vector<EvalSplit> evals = {{"test", &held}};
  TrainConfig cfg = quick_config(60);
  const TrainResult r = train(init, data, cfg, cal, evals);

  CHECK(!r.log.empty());
  int last_step = 0;
  for (const DynamicsRow& row : r.log) {
    const double mixed = row.accuracy * row.conf_correct +
                         (1.0 - row.accuracy) * row.conf_incorrect;
    CHECK(std::abs(row.mean_conf - mixed) < 1e-9);
    CHECK(std::isfinite(row.auroc_value));
    CHECK(row.step >= last_step);
    last_step = row.step;
  }
  // one train row and one test row per eval step
  std::size_t train_rows = 0, test_rows = 0;
  for (const DynamicsRow& row : r.log)
    (row.split == "train" ? train_rows : test_rows) += 1;
  CHECK(train_rows == test_rows);
  CHECK(r.log.back().step == 60);
}

TEST_CASE("dynamics csv uses the exact header") {
  const Dataset data = blob_task(32, 12);
  ModelParams init = ModelParams::linear(2, 2);
  CalibrationSet cal = cal_from(data, 8);
  const TrainResult r = train(init, data, quick_config(20), cal);

  testutil::TempDir dir("dynamics");
  write_dynamics_csv(r.log, dir.file("dynamics.csv"));
  std::ifstream in(dir.file("dynamics.csv"));
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "step,split,accuracy,mean_conf,conf_correct,conf_incorrect,ece,auroc,"
        "threshold,gated_fraction");
}

TEST_CASE("random_gate marks the expected fraction") {
  Rng rng(13);
  const auto zeros = random_gate(200, 0.0, rng);
  for (int g : zeros) CHECK(g == 0);
  const auto ones = random_gate(200, 1.0, rng);
  for (int g : ones) CHECK(g == 1);

  std::size_t hits = 0;
  const auto gates = random_gate(10000, 0.3, rng);
  for (int g : gates) hits += static_cast<std::size_t>(g);
  const double sigma = std::sqrt(10000 * 0.3 * 0.7);
  CHECK(std::abs(static_cast<double>(hits) - 3000.0) <= 3.0 * sigma);

  CHECK_THROWS_AS(random_gate(10, -0.1, rng), InvalidInputError);
  CHECK_THROWS_AS(random_gate(10, 1.1, rng), InvalidInputError);
}

TEST_CASE("style adaptation with zero steps still computes t0") {
  const Dataset data = blob_task(60, 14);
  ModelParams init = ModelParams::linear(2, 2);
  Rng rng(15);
  init.randomize(rng, 0.3);
  CalibrationSet cal = cal_from(data, 6);

  const auto [params, t0] = style_adaptation(init, data, cal, 0, quick_config(10));
  CHECK(same_params(params, init));
  CalibrationSet check = cal;
  CHECK(t0 == update_threshold(check, init, quick_config(10).threshold_grid_size));
}

TEST_CASE("style adaptation improves nll separation under output mismatch") {
  // well-separated task, but the surrogate starts with corrupted class
  // biases: the offset swamps the margins, so nll ranks poorly until a few
  // adaptation steps re-fit the output layer
  const Dataset data = blob_task(160, 16);
  ModelParams skew = ModelParams::linear(2, 2);
  skew.theta = {0.8, 0.0, -0.8, 0.0, -3.0, 3.0};  // usable weights, bad biases

  const auto separation = [&](const ModelParams& m) {
    std::vector<double> known, unknown;
    for (const Sample& s : data.samples)
      (s.oracle_tag == KnowledgeTag::HighlyKnown ? known : unknown)
          .push_back(-nll_of(m, s));
    return auroc(known, unknown);  // known should score higher (lower nll)
  };

  CalibrationSet cal = cal_from(data, 10);
  TrainConfig cfg = quick_config(0);
  const double before = separation(skew);
  const auto [adapted, t0] = style_adaptation(skew, data, cal, 120, cfg);
  const double after = separation(adapted);
  CHECK(after > before);
  CHECK(t0 != 0.0);
}

TEST_CASE("cognition gate statistics accumulate against oracle tags") {
  const Dataset data = blob_task(120, 17);
  ModelParams init = ModelParams::linear(2, 2);
  CalibrationSet cal = cal_from(data, 10);

  TrainConfig cfg = quick_config(100, GatingMode::Cognition);
  cfg.loss_spec = LossSpec::multi_choice(LossKind::LS);
  cfg.style_adapt_steps = 20;
  const TrainResult r = train(init, data, cfg, cal);

  CHECK(r.gate_stats.any());
  const GateQuality q = r.gate_stats.quality();
  CHECK(q.accuracy >= 0.0);
  CHECK(q.accuracy <= 1.0);
  // every gated sample carries a tag here, so all decisions are counted
  CHECK(r.gate_stats.tp + r.gate_stats.fp + r.gate_stats.tn + r.gate_stats.fn ==
        static_cast<std::size_t>(100 * cfg.batch_size));
}

TEST_CASE("uniform and random gating behave as configured") {
  const Dataset data = blob_task(64, 18);
  ModelParams init = ModelParams::linear(2, 2);
  CalibrationSet cal = cal_from(data, 8);

  TrainConfig uniform = quick_config(30, GatingMode::Uniform);
  uniform.loss_spec = LossSpec::multi_choice(LossKind::LS);
  CalibrationSet cal_u = cal;
  const TrainResult u = train(init, data, uniform, cal_u);
  CHECK(u.mean_gated_fraction == 1.0);

  TrainConfig random = quick_config(30, GatingMode::Random);
  random.loss_spec = LossSpec::multi_choice(LossKind::LS);
  CalibrationSet cal_r = cal;
  const TrainResult rr = train(init, data, random, cal_r);
  CHECK(rr.mean_gated_fraction >= 0.0);
  CHECK(rr.mean_gated_fraction <= 1.0);
}

}  // TEST_SUITE
