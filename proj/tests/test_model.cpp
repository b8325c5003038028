#include <doctest.h>

#include <cmath>

#include "cogcalib/losses.hpp"
#include "cogcalib/model.hpp"
#include "oracles.hpp"

using namespace cogcalib;

namespace {

// logits on a dyadic grid so adding a dyadic constant is exact in binary
LogitVector dyadic_logits(Rng& rng, int k) {
  LogitVector l(k);
  for (double& v : l)
    v = static_cast<double>(static_cast<long>(rng.uniform_int(16384)) - 8192) / 1024.0;
  return l;
}

ModelParams random_model(Rng& rng, Architecture arch, int d, int k, int h,
                         double dropout = 0.0) {
  ModelParams p = arch == Architecture::Mlp ? ModelParams::mlp(d, k, h, dropout)
                                            : ModelParams::linear(d, k);
  p.randomize(rng, 0.6);
  return p;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("softmax basics") {
  const ProbVector even = softmax({0.0, 0.0});
  CHECK(even[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(even[1] == doctest::Approx(0.5).epsilon(1e-12));

  const ProbVector p = softmax({2.0, 0.0});
  CHECK(p[0] == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.1192).epsilon(1e-4));

  const ProbVector hot = softmax({3.0, 1.0}, 1e6);
  CHECK(std::abs(hot[0] - 0.5) < 1e-3);
  CHECK(std::abs(hot[1] - 0.5) < 1e-3);
}

TEST_CASE("softmax rejects bad input") {
  CHECK_THROWS_AS(softmax({1.0, 2.0}, 0.0), InvalidInputError);
  CHECK_THROWS_AS(softmax({1.0, 2.0}, -1.0), InvalidInputError);
  CHECK_THROWS_AS(softmax({1.0, std::numeric_limits<double>::infinity()}),
                  InvalidInputError);
  CHECK_THROWS_AS(softmax({std::nan(""), 0.0}), InvalidInputError);
}

TEST_CASE("softmax sums to one and shifts exactly") {
  Rng rng(11);
  for (int it = 0; it < 200; ++it) {
    const int k = 2 + static_cast<int>(rng.uniform_int(7));
    const LogitVector l = dyadic_logits(rng, k);
    const ProbVector p = softmax(l);
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);

    // dyadic shift keeps every subtraction exact, so outputs are bitwise equal
    const double c =
        static_cast<double>(static_cast<long>(rng.uniform_int(64)) - 32) / 4.0;
    LogitVector shifted = l;
    for (double& v : shifted) v += c;
    const ProbVector q = softmax(shifted);
    for (int i = 0; i < k; ++i) CHECK(p[i] == q[i]);

    CHECK(argmax_lowest(p) == argmax_lowest(l));
    const ProbVector warm = softmax(l, 0.25 + rng.uniform() * 4.0);
    CHECK(argmax_lowest(warm) == argmax_lowest(l));
  }
}

TEST_CASE("forward computes linear and mlp logits") {
  ModelParams zero = ModelParams::mlp(3, 4, 8);
  const LogitVector zl = forward(zero, {0.3, -1.0, 2.0});
  for (double v : zl) CHECK(v == 0.0);

  ModelParams ident = ModelParams::linear(2, 2);
  ident.theta = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0};  // W = I, b = 0
  const LogitVector il = forward(ident, {1.5, -0.5});
  CHECK(il[0] == 1.5);
  CHECK(il[1] == -0.5);

  CHECK_THROWS_AS(forward(ident, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("eval mode ignores dropout and is pure") {
  Rng rng(5);
  ModelParams p = random_model(rng, Architecture::Mlp, 4, 3, 8, 0.5);
  const FeatureVector x = {0.2, -1.0, 0.7, 0.1};
  const LogitVector a = forward(p, x, Mode::Eval);
  const LogitVector b = forward(p, x, Mode::Eval);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // train mode without rng must refuse when dropout is active
  CHECK_THROWS_AS(forward(p, x, Mode::Train, nullptr), InvalidInputError);
}

TEST_CASE("sample_prediction greedy and sampled") {
  ModelParams m = ModelParams::linear(3, 3);
  // b = (1, 3, 2) makes the logits input-independent
  m.theta[9] = 1.0;
  m.theta[10] = 3.0;
  m.theta[11] = 2.0;
  Rng rng(1);
  CHECK(sample_prediction(m, {0, 0, 0}, 0.0, rng) == 1);

  ModelParams tie = ModelParams::linear(2, 3);
  CHECK(sample_prediction(tie, {1.0, -1.0}, 0.0, rng) == 0);

  // temperature 0.5 sampling frequency against the softmax probability
  ModelParams two = ModelParams::linear(2, 2);
  two.theta = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0};
  const FeatureVector x = {2.0, 0.0};
  const ProbVector target = softmax({2.0, 0.0}, 0.5);
  Rng draw_rng(42);
  const int n = 10000;
  int hits = 0;
  for (int i = 0; i < n; ++i)
    if (sample_prediction(two, x, 0.5, draw_rng) == 0) ++hits;
  const double sigma = std::sqrt(target[0] * (1.0 - target[0]) * n);
  CHECK(std::abs(hits - target[0] * n) <= 3.0 * sigma);

  CHECK_THROWS_AS(sample_prediction(two, x, -0.1, rng), InvalidInputError);
}

TEST_CASE("backprop identities") {
  Rng rng(7);
  ModelParams lin = random_model(rng, Architecture::Linear, 3, 2, 0);
  const FeatureVector x = {0.5, -1.5, 2.0};
  const ForwardTrace t = forward_trace(lin, x, Mode::Eval);

  const Gradients zero = backprop(lin, std::vector<ForwardTrace>{t},
                                  std::vector<LogitVector>{{0.0, 0.0}});
  for (double v : zero) CHECK(v == 0.0);

  const LogitVector dl = {0.3, -0.7};
  const Gradients g =
      backprop(lin, std::vector<ForwardTrace>{t}, std::vector<LogitVector>{dl});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(g[i * 3 + j] == doctest::Approx(dl[i] * x[j]));
  CHECK(g[6] == doctest::Approx(dl[0]));
  CHECK(g[7] == doctest::Approx(dl[1]));

  CHECK_THROWS_AS(backprop(lin, std::vector<ForwardTrace>{t},
                           std::vector<LogitVector>{{1.0, 2.0, 3.0}}),
                  ShapeError);
}

TEST_CASE("end-to-end gradients match finite differences") {
  Rng rng(19);
  for (int it = 0; it < 30; ++it) {
    const int d = 1 + static_cast<int>(rng.uniform_int(8));
    const int k = 2 + static_cast<int>(rng.uniform_int(7));
    const int h = 1 + static_cast<int>(rng.uniform_int(8));
    const Architecture arch = it % 2 ? Architecture::Mlp : Architecture::Linear;
    ModelParams p = random_model(rng, arch, d, k, h);

    FeatureVector x(d);
    for (double& v : x) v = rng.normal();
    const int label = static_cast<int>(rng.uniform_int(k));

    const ForwardTrace trace = forward_trace(p, x, Mode::Eval);
    const LossResult lr = ce_loss(trace.logits, label);
    const Gradients analytic = backprop(p, std::vector<ForwardTrace>{trace},
                                        std::vector<LogitVector>{lr.dlogits});

    const auto numeric = oracles::fd_gradient(p, [&](const ModelParams& q) {
      return ce_loss(forward(q, x, Mode::Eval), label).value;
    });
    CHECK(oracles::gradient_rel_err(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("dropout masks are replayed exactly in backprop") {
  Rng rng(23);
  ModelParams p = random_model(rng, Architecture::Mlp, 4, 3, 6, 0.4);
  FeatureVector x = {0.4, -0.2, 1.1, 0.3};
  const int label = 2;

  // same dropout stream for the trace and for both finite-difference passes
  const std::uint64_t mask_seed = 99;
  Rng trace_rng(mask_seed);
  const ForwardTrace trace = forward_trace(p, x, Mode::Train, &trace_rng);
  const LossResult lr = ce_loss(trace.logits, label);
  const Gradients analytic = backprop(p, std::vector<ForwardTrace>{trace},
                                      std::vector<LogitVector>{lr.dlogits});

  const auto numeric = oracles::fd_gradient(p, [&](const ModelParams& q) {
    Rng r(mask_seed);
    return ce_loss(forward(q, x, Mode::Train, &r), label).value;
  });
  CHECK(oracles::gradient_rel_err(analytic, numeric) < 1e-5);
}

TEST_CASE("dataset validation") {
  Dataset d;
  d.k_classes = 2;
  d.dim = 2;
  d.samples = {{0, {1.0, 2.0}, 0, std::nullopt}, {1, {0.0, 1.0}, 1, std::nullopt}};
  CHECK_NOTHROW(d.validate());

  d.samples[1].label = 5;
  CHECK_THROWS_AS(d.validate(), InvalidInputError);
  d.samples[1].label = 1;
  d.samples[1].id = 0;
  CHECK_THROWS_AS(d.validate(), InvalidInputError);
  d.samples[1].id = 1;
  d.samples[1].features = {1.0};
  CHECK_THROWS_AS(d.validate(), ShapeError);
}

}  // TEST_SUITE
