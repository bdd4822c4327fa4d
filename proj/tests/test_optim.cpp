// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimizer and schedule tests. The AdamW update is checked coordinate by
// coordinate against a scalar recurrence written out longhand in the test.

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "desklm/optim.hpp"

using namespace desklm;

namespace {

ParamStore<double> one_param(const std::string& name, const Tensor<double>& t) {
  ParamStore<double> p;
  p.add(name, t);
  return p;
}

BatchSchedule full_scale_batches() {
  BatchSchedule s;
  s.base_size = 2048;
  s.doublings = {{470.0, 4096}, {1500.0, 8192}, {2500.0, 16384}, {3500.0, 32768}};
  return s;
}

}  // namespace

TEST_CASE("zero gradients and zero weight decay leave parameters untouched") {
  Rng rng(1);
  ParamStore<double> p = one_param("w", randn<double>({3, 3}, rng));
  const std::uint64_t before = p.checksum();
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt(cfg, p);
  opt.step(p, {Tensor<double>({3, 3})}, 1e-3);
  CHECK(p.checksum() == before);
}

TEST_CASE("zero-gradient step contracts decayed weights by exactly 1 - eta*wd") {
  Rng rng(2);
  Tensor<double> w = randn<double>({4}, rng);
  ParamStore<double> p = one_param("w", w);
  OptimizerConfig cfg;  // wd = 0.1
  AdamW<double> opt(cfg, p);
  const double eta = 2e-3;
  opt.step(p, {Tensor<double>({4})}, eta);
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(p.at("w")[i] == w[i] * (1.0 - eta * 0.1));
  }
}

TEST_CASE("norm and embedding parameters are excluded from decay by default") {
  Tensor<double> g({2}, {1.5, -0.5});
  Tensor<double> e({2, 2}, 0.7);
  Tensor<double> wq({2, 2}, 0.7);
  ParamStore<double> p;
  p.add("blocks.0.ln_gain", g);
  p.add("tok_emb", e);
  p.add("blocks.0.wq", wq);
  AdamW<double> opt(OptimizerConfig{}, p);
  opt.step(p, {Tensor<double>({2}), Tensor<double>({2, 2}), Tensor<double>({2, 2})}, 1e-2);
  CHECK(p.at("blocks.0.ln_gain")[0] == 1.5);
  CHECK(p.at("tok_emb")[0] == 0.7);
  CHECK(p.at("blocks.0.wq")[0] == 0.7 * (1.0 - 1e-2 * 0.1));
}

TEST_CASE("one step on f(w) = w^2/2 from w=1 moves downhill") {
  ParamStore<double> p = one_param("w", Tensor<double>({1}, 1.0));
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt(cfg, p);
  opt.step(p, {Tensor<double>({1}, 1.0)}, 0.1);  // grad = w = 1
  CHECK(p.at("w")[0] < 1.0);
  CHECK(p.at("w")[0] > 0.0);
}

TEST_CASE("AdamW trajectory matches the longhand scalar recurrence") {
  ParamStore<double> p = one_param("w", Tensor<double>({1}, 1.0));
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.eps = 1e-7;
  AdamW<double> opt(cfg, p);

  double w_ref = 1.0, m = 0.0, v = 0.0;
  const double eta = 0.05;
  for (int t = 1; t <= 25; ++t) {
    const double grad = w_ref - 3.0;  // f(w) = (w-3)^2 / 2 evaluated at the reference
    opt.step(p, {Tensor<double>({1}, grad)}, eta);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    w_ref -= eta * mhat / (std::sqrt(vhat) + 1e-7);
    CHECK(p.at("w")[0] == doctest::Approx(w_ref).epsilon(1e-15));
  }
}

TEST_CASE("100 AdamW steps land within 1e-3 of a quadratic minimum") {
  ParamStore<double> p = one_param("w", Tensor<double>({1}, 2.0));
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt(cfg, p);
  for (int t = 0; t < 100; ++t) {
    const double grad = p.at("w")[0] - 3.0;  // f(w) = (w-3)^2 / 2
    opt.step(p, {Tensor<double>({1}, grad)}, 0.15);
  }
  CHECK(std::abs(p.at("w")[0] - 3.0) < 1e-3);
}

TEST_CASE("non-finite gradients are rejected with the spike-routing error") {
  ParamStore<double> p = one_param("w", Tensor<double>({2}, 1.0));
  AdamW<double> opt(OptimizerConfig{}, p);
  Tensor<double> bad({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(opt.step(p, {bad}, 1e-3), NonFiniteError);
  Tensor<double> inf({2}, {std::numeric_limits<double>::infinity(), 0.0});
  CHECK_THROWS_AS(opt.step(p, {inf}, 1e-3), NonFiniteError);
}

TEST_CASE("optimizer config invariants") {
  OptimizerConfig cfg;
  cfg.beta1 = 0.999;
  cfg.beta2 = 0.9;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = OptimizerConfig{};
  cfg.eps = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("learning rate: ramp endpoints, cosine midpoint, constant tail") {
  LrSchedule s;
  s.validate();
  CHECK(lr_at(0.0, s) == 0.0);
  CHECK(lr_at(2.0, s) == doctest::Approx(0.5 * 3.7e-4).epsilon(1e-15));
  CHECK(lr_at(4.0, s) == doctest::Approx(3.7e-4).epsilon(1e-15));
  const double mid = 0.5 * (4.0 + 4500.0);
  CHECK(lr_at(mid, s) == doctest::Approx(0.5 * (3.7e-4 + 1.89e-5)).epsilon(1e-12));
  CHECK(lr_at(4500.0, s) == doctest::Approx(1.89e-5).epsilon(1e-12));
  for (double gt : {4501.0, 4750.0, 5000.0, 5500.0}) {
    CHECK(lr_at(gt, s) == 1.89e-5);
  }
}

TEST_CASE("learning rate is continuous at the warmup boundary and decreasing after") {
  LrSchedule s;
  const double left = lr_at(4.0 - 1e-9, s);
  const double right = lr_at(4.0 + 1e-9, s);
  CHECK(left == doctest::Approx(3.7e-4).epsilon(1e-6));
  CHECK(right == doctest::Approx(3.7e-4).epsilon(1e-6));
  double prev = lr_at(4.0, s);
  for (double gt = 50.0; gt <= 4500.0; gt += 50.0) {
    const double cur = lr_at(gt, s);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("batch schedule: 2048 start, doubling at thresholds, 32768 ceiling") {
  BatchSchedule s = full_scale_batches();
  s.validate();
  CHECK(batch_size_at(0.0, s) == 2048);
  CHECK(batch_size_at(469.999, s) == 2048);
  CHECK(batch_size_at(470.0, s) == 4096);  // right-continuous at the threshold
  CHECK(batch_size_at(1499.0, s) == 4096);
  CHECK(batch_size_at(2500.0, s) == 16384);
  CHECK(batch_size_at(3500.0, s) == 32768);
  CHECK(batch_size_at(5000.0, s) == 32768);
}

TEST_CASE("batch schedule is non-decreasing and takes only scheduled values") {
  BatchSchedule s = full_scale_batches();
  std::int64_t prev = 0;
  for (double gt = 0.0; gt <= 5500.0; gt += 13.7) {
    const std::int64_t b = batch_size_at(gt, s);
    CHECK(b >= prev);
    const bool known =
        b == 2048 || b == 4096 || b == 8192 || b == 16384 || b == 32768;
    CHECK(known);
    prev = b;
  }
}

TEST_CASE("batch schedule validation rejects non-doubling and unordered entries") {
  BatchSchedule s;
  s.base_size = 2048;
  s.doublings = {{470.0, 4096}, {400.0, 8192}};
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s.doublings = {{470.0, 3000}};
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("noise temperature: value, scaling under doubling, zero eta") {
  CHECK(noise_temperature(3.7e-4, 2048) == doctest::Approx(8.176e-6).epsilon(1e-4));
  const double t1 = noise_temperature(2.5e-4, 4096);
  const double t2 = noise_temperature(2.5e-4, 8192);
  CHECK(t2 == doctest::Approx(t1 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(noise_temperature(0.0, 32768) == 0.0);
  CHECK_THROWS_AS(noise_temperature(1e-4, 0), ValidationError);
}

TEST_CASE("epsilon switch takes effect exactly at the configured token count") {
  EpsSchedule e;
  e.switch_gt = 2000.0;
  CHECK(e.at(0.0) == 1e-8);
  CHECK(e.at(1999.999) == 1e-8);
  CHECK(e.at(2000.0) == 1e-7);
  CHECK(e.at(4500.0) == 1e-7);
}

TEST_CASE("spike detection: flat history stays quiet") {
  SpikePolicy policy;
  std::vector<double> hist(60, 2.31);
  CHECK(!spike_detect(hist, policy).has_value());
}

TEST_CASE("spike detection fires on a 3x jump with a 1.5x threshold") {
  SpikePolicy policy;
  policy.ratio = 1.5;
  std::vector<double> hist(30, 2.0);
  hist.push_back(6.0);
  auto ev = spike_detect(hist, policy);
  REQUIRE(ev.has_value());
  CHECK(ev->loss == 6.0);
  CHECK(ev->median == doctest::Approx(2.0));
  CHECK(ev->index == hist.size() - 1);
  CHECK(!ev->non_finite);
}

TEST_CASE("spike detection fires on NaN regardless of threshold") {
  SpikePolicy policy;
  policy.ratio = 1e9;
  std::vector<double> hist = {2.0, 2.1, std::numeric_limits<double>::quiet_NaN()};
  auto ev = spike_detect(hist, policy);
  REQUIRE(ev.has_value());
  CHECK(ev->non_finite);
}

TEST_CASE("spike detection window forgets old history") {
  SpikePolicy policy;
  policy.window = 10;
  policy.ratio = 2.0;
  // Ancient large losses must not mask a fresh spike over the recent window.
  std::vector<double> hist(40, 9.0);
  for (int i = 0; i < 20; ++i) hist.push_back(1.0);
  hist.push_back(3.0);  // 3x the recent median of 1.0
  auto ev = spike_detect(hist, policy);
  REQUIRE(ev.has_value());
  CHECK(ev->median == doctest::Approx(1.0));
}

TEST_CASE("spike detection needs history and validates its policy") {
  SpikePolicy policy;
  CHECK_THROWS_AS(spike_detect({}, policy), ValidationError);
  // single entry: nothing to compare against, no spike unless non-finite
  CHECK(!spike_detect({5.0}, policy).has_value());
  policy.ratio = 0.0;
  CHECK_THROWS_AS(spike_detect({1.0, 2.0}, policy), ValidationError);
}
