#include <cmath>

#include "doctest.h"
#include "tulab/train.hpp"

using namespace tulab;

namespace {

ModelConfig tiny_config(int vocab = 16, uint64_t seed = 1) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.context_len = 16;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.seed = seed;
  return c;
}

std::vector<Example> tiny_dataset() {
  return {
      {{4, 5}, {6, 7}},
      {{4, 8}, {9}},
      {{10, 11, 5}, {12, 6}},
      {{7}, {13, 13}},
  };
}

TrainHyper sgd_hyper(double lr, int steps = 1, uint64_t seed = 0) {
  TrainHyper h;
  h.steps = steps;
  h.batch_size = 1;
  h.learning_rate = lr;
  h.optimizer = OptimizerKind::sgd;
  h.grad_clip.reset();
  h.seed = seed;
  return h;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("lm gradient matches central finite differences") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  DiffFn fn = make_lm_loss_fn(c, tiny_dataset());
  const double max_rel = finite_difference_grad_check(ckpt, fn, 80, 1e-4, 3);
  CHECK(max_rel < 1e-4);
}

TEST_CASE("dpo gradient matches central finite differences with frozen reference") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  std::vector<PrefPair> pairs = {
      {{4, 5}, {6, 7}, {8}},
      {{9}, {10}, {11, 12}},
  };
  // policy == reference: the analytic gradient must exclude reference terms,
  // which is exactly what the finite differences over the policy test.
  DiffFn fn = make_dpo_loss_fn(c, ckpt.params, pairs, 0.2);
  CHECK(fn.value(ckpt.params) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double max_rel = finite_difference_grad_check(ckpt, fn, 60, 1e-4, 4);
  CHECK(max_rel < 1e-4);
}

TEST_CASE("constant loss yields zero gradient and zero error") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  DiffFn constant;
  constant.value = [](std::span<const double>) { return 3.5; };
  constant.value_and_grad = [](std::span<const double>, std::span<double>) { return 3.5; };
  CHECK(finite_difference_grad_check(ckpt, constant, 20, 1e-4, 5) == 0.0);
}

TEST_CASE("grad_step at vanishing learning rate is the identity") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  DiffFn fn = make_lm_loss_fn(c, tiny_dataset());
  Checkpoint out = grad_step(ckpt, fn, GradDirection::descent, sgd_hyper(1e-16));
  for (size_t i = 0; i < ckpt.params.size(); ++i) {
    CHECK(std::fabs(out.params[i] - ckpt.params[i]) < 1e-12);
  }
}

TEST_CASE("descent decreases a convex quadratic") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  DiffFn quad;
  quad.value = [](std::span<const double> p) {
    double s = 0.0;
    for (double v : p) s += (v - 0.25) * (v - 0.25);
    return s;
  };
  quad.value_and_grad = [&](std::span<const double> p, std::span<double> g) {
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
      s += (p[i] - 0.25) * (p[i] - 0.25);
      g[i] += 2.0 * (p[i] - 0.25);
    }
    return s;
  };
  Checkpoint down = grad_step(ckpt, quad, GradDirection::descent, sgd_hyper(0.01));
  CHECK(quad.value(down.params) < quad.value(ckpt.params));
  Checkpoint up = grad_step(ckpt, quad, GradDirection::ascent, sgd_hyper(0.01));
  CHECK(quad.value(up.params) > quad.value(ckpt.params));
}

TEST_CASE("one SGD step equals params minus lr times the FD gradient") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  std::vector<Example> data = {tiny_dataset()[0]};
  DiffFn fn = make_lm_loss_fn(c, data);
  const double lr = 0.1;
  Checkpoint stepped = grad_step(ckpt, fn, GradDirection::descent, sgd_hyper(lr));

  Rng rng(42);
  std::uniform_int_distribution<size_t> coord(0, ckpt.params.size() - 1);
  std::vector<double> theta = ckpt.params;
  const double eps = 1e-5;
  for (int k = 0; k < 40; ++k) {
    const size_t i = coord(rng);
    const double orig = theta[i];
    theta[i] = orig + eps;
    const double hi = fn.value(theta);
    theta[i] = orig - eps;
    const double lo = fn.value(theta);
    theta[i] = orig;
    const double fd = (hi - lo) / (2.0 * eps);
    const double from_step = (ckpt.params[i] - stepped.params[i]) / lr;
    const double denom = std::max({std::fabs(fd), std::fabs(from_step), 1e-2});
    CHECK(std::fabs(fd - from_step) / denom < 1e-4);
  }
}

TEST_CASE("train_lm with zero steps returns bit-equal params") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  TrainHyper h = sgd_hyper(0.1, 0);
  Checkpoint out = train_lm(ckpt, tiny_dataset(), h);
  CHECK(out.params == ckpt.params);
  CHECK(out.lineage.size() == ckpt.lineage.size() + 1);
}

TEST_CASE("train_lm provenance chain and determinism") {
  ModelConfig c = tiny_config();
  Checkpoint f_r = init_random(c);
  TrainHyper h;
  h.steps = 12;
  h.batch_size = 2;
  h.learning_rate = 1e-3;
  h.seed = 9;
  Checkpoint f_0 = train_lm(f_r, tiny_dataset(), h);
  CHECK(f_0.provenance == Provenance::f_0);
  Checkpoint f_0b = train_lm(f_r, tiny_dataset(), h);
  CHECK(f_0.params == f_0b.params);
  Checkpoint f = train_lm(f_0, tiny_dataset(), h);
  CHECK(f.provenance == Provenance::f);
}

TEST_CASE("train_lm rejects bad input") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  TrainHyper h = sgd_hyper(0.1, 1);
  CHECK_THROWS_AS(train_lm(ckpt, {}, h), InvalidArgument);
  std::vector<Example> bad = {{{4, 99}, {5}}};
  CHECK_THROWS_AS(train_lm(ckpt, bad, h), InvalidArgument);
  TrainHyper neg = h;
  neg.learning_rate = 0.0;
  CHECK_THROWS_AS(train_lm(ckpt, tiny_dataset(), neg), InvalidArgument);
}

TEST_CASE("single-example params trace: one step is start minus lr grad") {
  ModelConfig c = tiny_config();
  Checkpoint f_r = init_random(c);
  std::vector<Example> data = {tiny_dataset()[0]};
  const double lr = 0.05;
  Checkpoint one = train_lm(f_r, data, sgd_hyper(lr, 1, 7));

  std::vector<double> grad(f_r.params.size(), 0.0);
  lm_loss_and_grad(c, f_r.params, data, grad);
  for (size_t i = 0; i < grad.size(); ++i) {
    CHECK(one.params[i] == f_r.params[i] - lr * grad[i]);
  }
}

TEST_CASE("overfitting a single example drives the loss toward zero") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  std::vector<Example> data = {{{4, 5, 6}, {7, 8}}};
  TrainHyper h;
  h.steps = 300;
  h.batch_size = 1;
  h.learning_rate = 3e-3;
  h.seed = 1;
  TrainStats stats;
  Checkpoint fit = train_lm(ckpt, data, h, &stats);
  CHECK(sequence_loss(fit, data[0].prompt, data[0].target) < 0.02);
  CHECK(stats.probe_loss_end < stats.probe_loss_start);
}

TEST_CASE("probe loss is monitored and non-increasing on a small run") {
  ModelConfig c = tiny_config();
  Checkpoint ckpt = init_random(c);
  TrainHyper h;
  h.steps = 60;
  h.batch_size = 4;
  h.learning_rate = 1e-3;
  h.seed = 2;
  TrainStats stats;
  train_lm(ckpt, tiny_dataset(), h, &stats);
  CHECK(stats.probe_loss_end <= stats.probe_loss_start + 0.05);
  CHECK(stats.loss_trace.size() == 60);
}

TEST_CASE("train_dpo zero steps is identity and initial pair loss is ln 2") {
  ModelConfig c = tiny_config();
  Checkpoint f = init_random(c);
  f.provenance = Provenance::f;
  std::vector<PrefPair> pairs = {{{4}, {5}, {6}}};
  TrainHyper h = sgd_hyper(1e-3, 0);
  Checkpoint out = train_dpo(f, f, pairs, 0.1, h);
  CHECK(out.params == f.params);

  h.steps = 3;
  TrainStats stats;
  train_dpo(f, f, pairs, 0.1, h, &stats);
  REQUIRE(!stats.loss_trace.empty());
  CHECK(stats.loss_trace[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_SUITE_END();
