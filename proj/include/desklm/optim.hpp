// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay, the warmup/cosine/constant learning-rate
// schedule, the batch-doubling schedule, gradient-noise temperature, the
// scheduled Adam-epsilon change, and loss-spike detection.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "desklm/common.hpp"
#include "desklm/model.hpp"
#include "desklm/tensor.hpp"

namespace desklm {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
  double weight_decay = 0.1;

  void validate() const {
    if (!(0.0 < beta1 && beta1 < beta2 && beta2 < 1.0)) {
      throw ValidationError("optimizer: need 0 < beta1 < beta2 < 1");
    }
    if (eps <= 0.0) throw ValidationError("optimizer: eps must be positive");
    if (weight_decay < 0.0) throw ValidationError("optimizer: weight_decay must be >= 0");
  }
};

// Decay is decoupled and skipped for norm gains/biases and embedding tables.
inline bool default_decay_filter(const std::string& name) {
  if (name.find("ln_gain") != std::string::npos) return false;
  if (name.find("ln_bias") != std::string::npos) return false;
  if (name.find("ln2_gain") != std::string::npos) return false;
  if (name.find("ln2_bias") != std::string::npos) return false;
  if (name == "tok_emb" || name == "lm_head") return false;
  return true;
}

template <typename S>
class AdamW {
 public:
  AdamW() = default;
  AdamW(OptimizerConfig cfg, const ParamStore<S>& params,
        std::function<bool(const std::string&)> decay_filter = default_decay_filter)
      : cfg_(cfg), decay_filter_(std::move(decay_filter)) {
    cfg_.validate();
    m_.reserve(params.values.size());
    v_.reserve(params.values.size());
    for (const auto& p : params.values) {
      m_.push_back(Tensor<S>(p.shape));
      v_.push_back(Tensor<S>(p.shape));
    }
  }

  // One update over all parameters. `grads` is aligned with the store order.
  // Order of operations per tensor: decoupled decay first, then the
  // bias-corrected moment step, so a zero-gradient step contracts decayed
  // weights by exactly (1 - eta * weight_decay).
  void step(ParamStore<S>& params, const std::vector<Tensor<S>>& grads, double eta) {
    if (eta < 0.0) throw ValidationError("adamw: eta must be >= 0");
    if (grads.size() != params.values.size()) {
      throw ShapeError("adamw: " + std::to_string(grads.size()) + " gradients for " +
                       std::to_string(params.values.size()) + " parameters");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].shape != params.values[i].shape) {
        throw ShapeError("adamw: gradient shape " + shape_str(grads[i].shape) +
                         " vs parameter '" + params.names[i] + "' " +
                         shape_str(params.values[i].shape));
      }
      if (!grads[i].all_finite()) {
        throw NonFiniteError("adamw: non-finite gradient for '" + params.names[i] + "'");
      }
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      Tensor<S>& p = params.values[i];
      const Tensor<S>& g = grads[i];
      Tensor<S>& m = m_[i];
      Tensor<S>& v = v_[i];
      const bool decay = cfg_.weight_decay > 0.0 && decay_filter_(params.names[i]);
      for (std::int64_t k = 0; k < p.numel(); ++k) {
        if (decay) p[k] = static_cast<S>(static_cast<double>(p[k]) * (1.0 - eta * cfg_.weight_decay));
        const double gk = static_cast<double>(g[k]);
        const double mk = cfg_.beta1 * static_cast<double>(m[k]) + (1.0 - cfg_.beta1) * gk;
        const double vk = cfg_.beta2 * static_cast<double>(v[k]) + (1.0 - cfg_.beta2) * gk * gk;
        m[k] = static_cast<S>(mk);
        v[k] = static_cast<S>(vk);
        const double mhat = mk / bc1;
        const double vhat = vk / bc2;
        p[k] = static_cast<S>(static_cast<double>(p[k]) -
                              eta * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }
  OptimizerConfig& config() { return cfg_; }
  const OptimizerConfig& config() const { return cfg_; }
  std::vector<Tensor<S>>& moments_m() { return m_; }
  std::vector<Tensor<S>>& moments_v() { return v_; }

 private:
  OptimizerConfig cfg_;
  std::function<bool(const std::string&)> decay_filter_ = default_decay_filter;
  std::int64_t step_count_ = 0;
  std::vector<Tensor<S>> m_;
  std::vector<Tensor<S>> v_;
};

// ---------------------------------------------------------------------------
// Schedules (pure functions of tokens seen, measured in GT = 1e9 tokens)
// ---------------------------------------------------------------------------

struct LrSchedule {
  double warmup_gt = 4.0;
  double eta_max = 3.7e-4;
  double eta_min = 1.89e-5;
  double cosine_end_gt = 4500.0;
  double constant_eta = 1.89e-5;

  void validate() const {
    if (warmup_gt < 0.0 || cosine_end_gt <= warmup_gt) {
      throw ValidationError("lr schedule: need 0 <= warmup < cosine_end");
    }
    if (eta_min > eta_max) throw ValidationError("lr schedule: eta_min must be <= eta_max");
  }
};

// Linear ramp 0 -> eta_max on [0, warmup], cosine eta_max -> eta_min on
// (warmup, cosine_end], then the constant floor.
inline double lr_at(double tokens_gt, const LrSchedule& s) {
  if (tokens_gt < 0.0) tokens_gt = 0.0;
  if (tokens_gt <= s.warmup_gt) {
    if (s.warmup_gt == 0.0) return s.eta_max;
    return s.eta_max * (tokens_gt / s.warmup_gt);
  }
  if (tokens_gt <= s.cosine_end_gt) {
    const double frac = (tokens_gt - s.warmup_gt) / (s.cosine_end_gt - s.warmup_gt);
    return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(M_PI * frac));
  }
  return s.constant_eta;
}

struct BatchSchedule {
  std::int64_t base_size = 2048;
  // (tokens_gt threshold, batch size); right-continuous: at the threshold the
  // new size is already in effect.
  std::vector<std::pair<double, std::int64_t>> doublings;

  void validate() const {
    if (base_size < 1) throw ValidationError("batch schedule: base size must be positive");
    std::int64_t prev_size = base_size;
    double prev_gt = -1.0;
    for (const auto& [gt, size] : doublings) {
      if (gt <= prev_gt) {
        throw ValidationError("batch schedule: thresholds must be strictly increasing");
      }
      if (size != 2 * prev_size) {
        throw ValidationError("batch schedule: size " + std::to_string(size) +
                              " is not double the previous " + std::to_string(prev_size));
      }
      prev_gt = gt;
      prev_size = size;
    }
  }
};

inline std::int64_t batch_size_at(double tokens_gt, const BatchSchedule& s) {
  std::int64_t size = s.base_size;
  for (const auto& [gt, b] : s.doublings) {
    if (tokens_gt >= gt) size = b;
  }
  return size;
}

// Gradient-noise temperature T = eta / sqrt(B).
inline double noise_temperature(double eta, std::int64_t batch_size) {
  if (batch_size <= 0) throw ValidationError("noise_temperature: batch size must be positive");
  return eta / std::sqrt(static_cast<double>(batch_size));
}

// Scheduled change of the Adam epsilon at a fixed token count.
struct EpsSchedule {
  double before = 1e-8;
  double after = 1e-7;
  double switch_gt = 2000.0;

  double at(double tokens_gt) const { return tokens_gt >= switch_gt ? after : before; }
};

// ---------------------------------------------------------------------------
// Loss-spike detection
// ---------------------------------------------------------------------------

struct SpikePolicy {
  std::int64_t window = 50;        // history entries considered for the median
  double ratio = 2.0;              // fire when loss > ratio * median
  std::int64_t skip_tokens = 0;    // stream tokens to drop after rollback

  void validate() const {
    if (window < 1) throw ValidationError("spike policy: window must be positive");
    if (ratio <= 0.0) throw ValidationError("spike policy: ratio must be positive");
    if (skip_tokens < 0) throw ValidationError("spike policy: skip span must be >= 0");
  }
};

struct SpikeEvent {
  std::size_t index = 0;  // position in the history that fired
  double loss = 0.0;
  double median = 0.0;
  bool non_finite = false;
};

// Fires on a non-finite loss, or when the newest loss exceeds ratio x the
// median of the preceding window. With no preceding history only the
// non-finite rule applies.
inline std::optional<SpikeEvent> spike_detect(const std::vector<double>& loss_history,
                                              const SpikePolicy& policy) {
  policy.validate();
  if (loss_history.empty()) throw ValidationError("spike_detect: empty loss history");
  const double current = loss_history.back();
  SpikeEvent ev;
  ev.index = loss_history.size() - 1;
  ev.loss = current;
  if (!std::isfinite(current)) {
    ev.non_finite = true;
    return ev;
  }
  const std::size_t prev = loss_history.size() - 1;
  if (prev == 0) return std::nullopt;
  const std::size_t n = std::min<std::size_t>(prev, static_cast<std::size_t>(policy.window));
  std::vector<double> window(loss_history.end() - 1 - static_cast<std::ptrdiff_t>(n),
                             loss_history.end() - 1);
  std::sort(window.begin(), window.end());
  const double median = (n % 2 == 1) ? window[n / 2] : 0.5 * (window[n / 2 - 1] + window[n / 2]);
  ev.median = median;
  if (current > policy.ratio * median) return ev;
  return std::nullopt;
}

}  // namespace desklm
