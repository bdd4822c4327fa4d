// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff on a tape. Nodes are created in evaluation order, so
// the reverse sweep runs in a stable topological order and gradient
// accumulation is bit-reproducible per build. Ops are free functions over
// Var handles; dense arithmetic is delegated to Eigen maps over the tensors.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "desklm/tensor.hpp"

namespace desklm {

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<S>& value() const;
};

template <typename S>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var<S> leaf(Tensor<S> value, std::string name = "") {
    const bool rg = grad_enabled_ && value.requires_grad;
    return add_node(std::move(value), rg, std::move(name));
  }

  Var<S> constant(Tensor<S> value) {
    value.requires_grad = false;
    return add_node(std::move(value), false);
  }

  Var<S> add_node(Tensor<S> value, bool requires_grad, std::string name = "") {
    nodes_.push_back(Node{std::move(value), Tensor<S>{}, nullptr, requires_grad, false,
                          std::move(name)});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backprop(int id, std::function<void()> fn) {
    if (grad_enabled_ && nodes_[static_cast<std::size_t>(id)].requires_grad) {
      nodes_[static_cast<std::size_t>(id)].backprop = std::move(fn);
    }
  }

  const Tensor<S>& value(Var<S> v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  Tensor<S>& value_ref(Var<S> v) { return nodes_[static_cast<std::size_t>(v.id)].value; }

  bool requires_grad(Var<S> v) const {
    return nodes_[static_cast<std::size_t>(v.id)].requires_grad;
  }

  // Gradient buffer, allocated as zeros on first touch.
  Tensor<S>& grad_ref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_alloc) {
      n.grad = Tensor<S>(n.value.shape);
      n.grad_alloc = true;
    }
    return n.grad;
  }
  Tensor<S>& grad_ref(Var<S> v) { return grad_ref(v.id); }

  bool grad_touched(int id) const { return nodes_[static_cast<std::size_t>(id)].grad_alloc; }

  // Gradient of `v` after backward(); zeros if the seed never reached it.
  Tensor<S> grad(Var<S> v) {
    if (!backward_run_) throw GraphError("grad: backward has not been run on this tape");
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.grad_alloc) return Tensor<S>(n.value.shape);
    return n.grad;
  }

  void backward(Var<S> root, const Tensor<S>& seed) {
    backward_multi({{root, seed}});
  }

  void backward(Var<S> root) { backward(root, Tensor<S>::scalar(S(1))); }

  void backward_multi(const std::vector<std::pair<Var<S>, Tensor<S>>>& seeds) {
    if (!grad_enabled_) throw GraphError("backward: tape was built with gradients disabled");
    if (seeds.empty()) throw GraphError("backward: no seed gradients given");
    int max_id = -1;
    for (const auto& [root, seed] : seeds) {
      const Tensor<S>& v = value(root);
      if (seed.shape != v.shape) {
        throw ShapeError("backward: seed shape " + shape_str(seed.shape) +
                         " does not match output shape " + shape_str(v.shape));
      }
      if (requires_grad(root)) {
        Tensor<S>& g = grad_ref(root.id);
        g.vec() += seed.vec();
      }
      max_id = std::max(max_id, root.id);
    }
    for (int id = max_id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.requires_grad && n.grad_alloc && n.backprop) n.backprop();
    }
    backward_run_ = true;
  }

  bool backward_run() const { return backward_run_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::function<void()> backprop;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::string name;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_run_ = false;
};

template <typename S>
const Tensor<S>& Var<S>::value() const {
  return tape->value(*this);
}

namespace detail {

template <typename S>
Tape<S>* same_tape(Var<S> a, Var<S> b, const char* op) {
  if (a.tape != b.tape) throw GraphError(std::string(op) + ": operands live on different tapes");
  return a.tape;
}

template <typename S>
void check_2d(const Tensor<S>& t, const char* op, const char* arg) {
  if (t.ndim() > 2) {
    throw ShapeError(std::string(op) + ": " + arg + " must be 1-D or 2-D, got " +
                     shape_str(t.shape));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>* t = detail::same_tape(a, b, "add");
  const Tensor<S>&va = t->value(a), &vb = t->value(b);
  if (va.shape != vb.shape) {
    throw ShapeError("add: shapes " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
  }
  Tensor<S> out = va;
  out.vec() += vb.vec();
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a) || t->requires_grad(b));
  t->set_backprop(y.id, [t, a, b, y]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    if (t->requires_grad(a)) t->grad_ref(a.id).vec() += gy.vec();
    if (t->requires_grad(b)) t->grad_ref(b.id).vec() += gy.vec();
  });
  return y;
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>* t = detail::same_tape(a, b, "sub");
  const Tensor<S>&va = t->value(a), &vb = t->value(b);
  if (va.shape != vb.shape) {
    throw ShapeError("sub: shapes " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
  }
  Tensor<S> out = va;
  out.vec() -= vb.vec();
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a) || t->requires_grad(b));
  t->set_backprop(y.id, [t, a, b, y]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    if (t->requires_grad(a)) t->grad_ref(a.id).vec() += gy.vec();
    if (t->requires_grad(b)) t->grad_ref(b.id).vec() -= gy.vec();
  });
  return y;
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>* t = detail::same_tape(a, b, "mul");
  const Tensor<S>&va = t->value(a), &vb = t->value(b);
  if (va.shape != vb.shape) {
    throw ShapeError("mul: shapes " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
  }
  Tensor<S> out = va;
  out.vec().array() *= vb.vec().array();
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a) || t->requires_grad(b));
  t->set_backprop(y.id, [t, a, b, y]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    if (t->requires_grad(a))
      t->grad_ref(a.id).vec().array() += gy.vec().array() * t->value(b).vec().array();
    if (t->requires_grad(b))
      t->grad_ref(b.id).vec().array() += gy.vec().array() * t->value(a).vec().array();
  });
  return y;
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
  Tape<S>* t = a.tape;
  Tensor<S> out = t->value(a);
  out.vec() *= c;
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a));
  t->set_backprop(y.id, [t, a, y, c]() { t->grad_ref(a.id).vec() += c * t->grad_ref(y.id).vec(); });
  return y;
}

template <typename S>
Var<S> square(Var<S> a) {
  Tape<S>* t = a.tape;
  Tensor<S> out = t->value(a);
  out.vec().array() = out.vec().array().square();
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a));
  t->set_backprop(y.id, [t, a, y]() {
    t->grad_ref(a.id).vec().array() +=
        S(2) * t->value(a).vec().array() * t->grad_ref(y.id).vec().array();
  });
  return y;
}

// Exact GELU, x * Phi(x) with the Gaussian CDF.
template <typename S>
Var<S> gelu(Var<S> a) {
  Tape<S>* t = a.tape;
  const Tensor<S>& va = t->value(a);
  Tensor<S> out(va.shape);
  for (std::int64_t i = 0; i < va.numel(); ++i) {
    const double x = static_cast<double>(va[i]);
    out[i] = static_cast<S>(x * 0.5 * (1.0 + std::erf(x * M_SQRT1_2)));
  }
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a));
  t->set_backprop(y.id, [t, a, y]() {
    const Tensor<S>&va2 = t->value(a), &gy = t->grad_ref(y.id);
    Tensor<S>& ga = t->grad_ref(a.id);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::int64_t i = 0; i < va2.numel(); ++i) {
      const double x = static_cast<double>(va2[i]);
      const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      ga[i] += static_cast<S>((cdf + x * pdf)) * gy[i];
    }
  });
  return y;
}

// y[m,n] = a[m,k] * b[k,n]
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>* t = detail::same_tape(a, b, "matmul");
  const Tensor<S>&va = t->value(a), &vb = t->value(b);
  detail::check_2d(va, "matmul", "lhs");
  detail::check_2d(vb, "matmul", "rhs");
  if (va.cols() != vb.rows()) {
    throw ShapeError("matmul: lhs " + shape_str(va.shape) + " rhs " + shape_str(vb.shape) +
                     " (inner dims " + std::to_string(va.cols()) + " vs " +
                     std::to_string(vb.rows()) + ")");
  }
  Tensor<S> out({va.rows(), vb.cols()});
  out.mat().noalias() = va.mat() * vb.mat();
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a) || t->requires_grad(b));
  t->set_backprop(y.id, [t, a, b, y]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    if (t->requires_grad(a)) t->grad_ref(a.id).mat().noalias() += gy.mat() * t->value(b).mat().transpose();
    if (t->requires_grad(b)) t->grad_ref(b.id).mat().noalias() += t->value(a).mat().transpose() * gy.mat();
  });
  return y;
}

// y[m,n] = a[m,k] * b[n,k]^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Tape<S>* t = detail::same_tape(a, b, "matmul_nt");
  const Tensor<S>&va = t->value(a), &vb = t->value(b);
  detail::check_2d(va, "matmul_nt", "lhs");
  detail::check_2d(vb, "matmul_nt", "rhs");
  if (va.cols() != vb.cols()) {
    throw ShapeError("matmul_nt: lhs " + shape_str(va.shape) + " rhs " + shape_str(vb.shape) +
                     " (inner dims " + std::to_string(va.cols()) + " vs " +
                     std::to_string(vb.cols()) + ")");
  }
  Tensor<S> out({va.rows(), vb.rows()});
  out.mat().noalias() = va.mat() * vb.mat().transpose();
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a) || t->requires_grad(b));
  t->set_backprop(y.id, [t, a, b, y]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    if (t->requires_grad(a)) t->grad_ref(a.id).mat().noalias() += gy.mat() * t->value(b).mat();
    if (t->requires_grad(b)) t->grad_ref(b.id).mat().noalias() += gy.mat().transpose() * t->value(a).mat();
  });
  return y;
}

// Broadcast-add a row vector b[n] to every row of a[m,n].
template <typename S>
Var<S> add_rowvec(Var<S> a, Var<S> b) {
  Tape<S>* t = detail::same_tape(a, b, "add_rowvec");
  const Tensor<S>&va = t->value(a), &vb = t->value(b);
  if (vb.numel() != va.cols()) {
    throw ShapeError("add_rowvec: matrix " + shape_str(va.shape) + " vs vector " +
                     shape_str(vb.shape));
  }
  Tensor<S> out = va;
  out.mat().rowwise() += vb.vec().transpose();
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a) || t->requires_grad(b));
  t->set_backprop(y.id, [t, a, b, y]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    if (t->requires_grad(a)) t->grad_ref(a.id).vec() += gy.vec();
    if (t->requires_grad(b)) t->grad_ref(b.id).vec() += gy.mat().colwise().sum().transpose();
  });
  return y;
}

template <typename S>
Var<S> slice_cols(Var<S> a, std::int64_t c0, std::int64_t width) {
  Tape<S>* t = a.tape;
  const Tensor<S>& va = t->value(a);
  if (c0 < 0 || width < 0 || c0 + width > va.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c0 + width) +
                     ") out of " + shape_str(va.shape));
  }
  Tensor<S> out({va.rows(), width});
  out.mat() = va.mat().middleCols(c0, width);
  Var<S> y = t->add_node(std::move(out), t->requires_grad(a));
  t->set_backprop(y.id, [t, a, y, c0, width]() {
    t->grad_ref(a.id).mat().middleCols(c0, width) += t->grad_ref(y.id).mat();
  });
  return y;
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw GraphError("concat_cols: no parts");
  Tape<S>* t = parts[0].tape;
  std::int64_t rows = t->value(parts[0]).rows();
  std::int64_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const Tensor<S>& v = t->value(p);
    if (v.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + std::to_string(rows) + " vs " +
                       std::to_string(v.rows()));
    }
    total += v.cols();
    rg = rg || t->requires_grad(p);
  }
  Tensor<S> out({rows, total});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const Tensor<S>& v = t->value(p);
    out.mat().middleCols(off, v.cols()) = v.mat();
    off += v.cols();
  }
  Var<S> y = t->add_node(std::move(out), rg);
  std::vector<Var<S>> ps = parts;
  t->set_backprop(y.id, [t, ps, y]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    std::int64_t o = 0;
    for (const auto& p : ps) {
      const std::int64_t w = t->value(p).cols();
      if (t->requires_grad(p)) t->grad_ref(p.id).mat() += gy.mat().middleCols(o, w);
      o += w;
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Normalization, softmax, losses
// ---------------------------------------------------------------------------

// Per-row layer norm over the feature (last) dimension, epsilon inside the
// variance. gain/bias are [n]; bias may be an invalid Var to disable it.
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, double eps) {
  Tape<S>* t = detail::same_tape(x, gain, "layer_norm");
  const Tensor<S>& vx = t->value(x);
  const Tensor<S>& vg = t->value(gain);
  const std::int64_t n = vx.cols();
  if (n < 1) throw ShapeError("layer_norm: empty feature dimension in " + shape_str(vx.shape));
  if (vg.numel() != n) {
    throw ShapeError("layer_norm: gain " + shape_str(vg.shape) + " vs features " +
                     std::to_string(n));
  }
  const bool has_bias = bias.valid();
  if (has_bias && t->value(bias).numel() != n) {
    throw ShapeError("layer_norm: bias " + shape_str(t->value(bias).shape) + " vs features " +
                     std::to_string(n));
  }

  const std::int64_t m = vx.rows();
  Tensor<S> xhat({m, n});
  Tensor<S> inv_sigma({m});
  for (std::int64_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::int64_t c = 0; c < n; ++c) mu += static_cast<double>(vx.at(r, c));
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t c = 0; c < n; ++c) {
      const double d = static_cast<double>(vx.at(r, c)) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = static_cast<S>(is);
    for (std::int64_t c = 0; c < n; ++c) {
      xhat.at(r, c) = static_cast<S>((static_cast<double>(vx.at(r, c)) - mu) * is);
    }
  }
  Tensor<S> out({m, n});
  for (std::int64_t r = 0; r < m; ++r) {
    for (std::int64_t c = 0; c < n; ++c) {
      S v = xhat.at(r, c) * vg[c];
      if (has_bias) v += t->value(bias)[c];
      out.at(r, c) = v;
    }
  }
  bool rg = t->requires_grad(x) || t->requires_grad(gain) || (has_bias && t->requires_grad(bias));
  Var<S> y = t->add_node(std::move(out), rg);
  auto xhat_p = std::make_shared<Tensor<S>>(std::move(xhat));
  auto is_p = std::make_shared<Tensor<S>>(std::move(inv_sigma));
  t->set_backprop(y.id, [t, x, gain, bias, y, xhat_p, is_p, has_bias, m, n]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    const Tensor<S>& vg = t->value(gain);
    if (t->requires_grad(gain)) {
      Tensor<S>& gg = t->grad_ref(gain.id);
      for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t c = 0; c < n; ++c) gg[c] += gy.at(r, c) * xhat_p->at(r, c);
    }
    if (has_bias && t->requires_grad(bias)) {
      Tensor<S>& gb = t->grad_ref(bias.id);
      for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t c = 0; c < n; ++c) gb[c] += gy.at(r, c);
    }
    if (t->requires_grad(x)) {
      Tensor<S>& gx = t->grad_ref(x.id);
      for (std::int64_t r = 0; r < m; ++r) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::int64_t c = 0; c < n; ++c) {
          const double d = static_cast<double>(gy.at(r, c)) * static_cast<double>(vg[c]);
          mean_d += d;
          mean_dx += d * static_cast<double>(xhat_p->at(r, c));
        }
        mean_d /= static_cast<double>(n);
        mean_dx /= static_cast<double>(n);
        const double is = static_cast<double>((*is_p)[r]);
        for (std::int64_t c = 0; c < n; ++c) {
          const double d = static_cast<double>(gy.at(r, c)) * static_cast<double>(vg[c]);
          gx.at(r, c) += static_cast<S>(
              is * (d - mean_d - static_cast<double>(xhat_p->at(r, c)) * mean_dx));
        }
      }
    }
  });
  return y;
}

template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, double eps) {
  return layer_norm(x, gain, Var<S>{}, eps);
}

// Row softmax with a {0,1} mask; masked entries get probability exactly 0.
// The mask is graph-constant structure, not a differentiable input.
template <typename S>
Var<S> masked_softmax_rows(Var<S> x, const Tensor<S>& mask) {
  Tape<S>* t = x.tape;
  const Tensor<S>& vx = t->value(x);
  if (mask.shape != vx.shape) {
    throw ShapeError("masked_softmax_rows: mask " + shape_str(mask.shape) + " vs scores " +
                     shape_str(vx.shape));
  }
  const std::int64_t m = vx.rows(), n = vx.cols();
  Tensor<S> out({m, n});
  for (std::int64_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < n; ++c)
      if (mask.at(r, c) != S(0)) mx = std::max(mx, static_cast<double>(vx.at(r, c)));
    if (!std::isfinite(mx)) continue;  // fully masked row stays all-zero
    double sum = 0.0;
    for (std::int64_t c = 0; c < n; ++c) {
      if (mask.at(r, c) != S(0)) {
        const double e = std::exp(static_cast<double>(vx.at(r, c)) - mx);
        out.at(r, c) = static_cast<S>(e);
        sum += e;
      }
    }
    const double inv = 1.0 / sum;
    for (std::int64_t c = 0; c < n; ++c) out.at(r, c) = static_cast<S>(out.at(r, c) * inv);
  }
  Var<S> y = t->add_node(std::move(out), t->requires_grad(x));
  t->set_backprop(y.id, [t, x, y, m, n]() {
    const Tensor<S>&gy = t->grad_ref(y.id), &p = t->value(y);
    Tensor<S>& gx = t->grad_ref(x.id);
    for (std::int64_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::int64_t c = 0; c < n; ++c)
        dot += static_cast<double>(p.at(r, c)) * static_cast<double>(gy.at(r, c));
      for (std::int64_t c = 0; c < n; ++c) {
        gx.at(r, c) += static_cast<S>(static_cast<double>(p.at(r, c)) *
                                      (static_cast<double>(gy.at(r, c)) - dot));
      }
    }
  });
  return y;
}

template <typename S>
Var<S> softmax_rows(Var<S> x) {
  const Tensor<S>& vx = x.tape->value(x);
  Tensor<S> ones(vx.shape, S(1));
  return masked_softmax_rows(x, ones);
}

// Row-wise log(sum(exp(x))) -> [rows]
template <typename S>
Var<S> logsumexp_rows(Var<S> x) {
  Tape<S>* t = x.tape;
  const Tensor<S>& vx = t->value(x);
  const std::int64_t m = vx.rows(), n = vx.cols();
  Tensor<S> out({m});
  for (std::int64_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < n; ++c) mx = std::max(mx, static_cast<double>(vx.at(r, c)));
    double sum = 0.0;
    for (std::int64_t c = 0; c < n; ++c) sum += std::exp(static_cast<double>(vx.at(r, c)) - mx);
    out[r] = static_cast<S>(mx + std::log(sum));
  }
  Var<S> y = t->add_node(std::move(out), t->requires_grad(x));
  t->set_backprop(y.id, [t, x, y, m, n]() {
    const Tensor<S>&gy = t->grad_ref(y.id), &lse = t->value(y), &vx2 = t->value(x);
    Tensor<S>& gx = t->grad_ref(x.id);
    for (std::int64_t r = 0; r < m; ++r) {
      const double g = static_cast<double>(gy[r]);
      const double l = static_cast<double>(lse[r]);
      for (std::int64_t c = 0; c < n; ++c) {
        gx.at(r, c) += static_cast<S>(g * std::exp(static_cast<double>(vx2.at(r, c)) - l));
      }
    }
  });
  return y;
}

// Embedding lookup: rows of table[v,d] selected by ids -> [len(ids), d].
template <typename S>
Var<S> gather_rows(Var<S> table, const std::vector<std::int64_t>& ids) {
  Tape<S>* t = table.tape;
  const Tensor<S>& vt = t->value(table);
  const std::int64_t rows = vt.rows();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows) {
      throw ValidationError("gather_rows: id " + std::to_string(ids[i]) + " at position " +
                            std::to_string(i) + " out of vocab " + std::to_string(rows));
    }
  }
  Tensor<S> out({static_cast<std::int64_t>(ids.size()), vt.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.mat().row(static_cast<std::int64_t>(i)) = vt.mat().row(ids[i]);
  Var<S> y = t->add_node(std::move(out), t->requires_grad(table));
  t->set_backprop(y.id, [t, table, y, ids]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    Tensor<S>& gt = t->grad_ref(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i)
      gt.mat().row(ids[i]) += gy.mat().row(static_cast<std::int64_t>(i));
  });
  return y;
}

// y[r] = x[r, cols[r]]
template <typename S>
Var<S> pick_per_row(Var<S> x, const std::vector<std::int64_t>& cols) {
  Tape<S>* t = x.tape;
  const Tensor<S>& vx = t->value(x);
  if (static_cast<std::int64_t>(cols.size()) != vx.rows()) {
    throw ShapeError("pick_per_row: " + std::to_string(cols.size()) + " indices for " +
                     std::to_string(vx.rows()) + " rows");
  }
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] < 0 || cols[r] >= vx.cols()) {
      throw ValidationError("pick_per_row: column " + std::to_string(cols[r]) + " at row " +
                            std::to_string(r) + " out of " + std::to_string(vx.cols()));
    }
  }
  Tensor<S> out({vx.rows()});
  for (std::size_t r = 0; r < cols.size(); ++r)
    out[static_cast<std::int64_t>(r)] = vx.at(static_cast<std::int64_t>(r), cols[r]);
  Var<S> y = t->add_node(std::move(out), t->requires_grad(x));
  t->set_backprop(y.id, [t, x, y, cols]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    Tensor<S>& gx = t->grad_ref(x.id);
    for (std::size_t r = 0; r < cols.size(); ++r)
      gx.at(static_cast<std::int64_t>(r), cols[r]) += gy[static_cast<std::int64_t>(r)];
  });
  return y;
}

// Mean of x over positions where mask==1. Mask is constant {0,1}.
template <typename S>
Var<S> masked_mean(Var<S> x, const Tensor<S>& mask) {
  Tape<S>* t = x.tape;
  const Tensor<S>& vx = t->value(x);
  if (mask.shape != vx.shape) {
    throw ShapeError("masked_mean: mask " + shape_str(mask.shape) + " vs " + shape_str(vx.shape));
  }
  double count = 0.0, sum = 0.0;
  for (std::int64_t i = 0; i < vx.numel(); ++i) {
    if (mask[i] != S(0)) {
      count += 1.0;
      sum += static_cast<double>(vx[i]);
    }
  }
  if (count == 0.0) throw ValidationError("masked_mean: mask selects no positions");
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(sum / count));
  Var<S> y = t->add_node(std::move(out), t->requires_grad(x));
  auto mask_p = std::make_shared<Tensor<S>>(mask);
  t->set_backprop(y.id, [t, x, y, mask_p, count]() {
    const S g = t->grad_ref(y.id)[0] / static_cast<S>(count);
    Tensor<S>& gx = t->grad_ref(x.id);
    for (std::int64_t i = 0; i < gx.numel(); ++i)
      if ((*mask_p)[i] != S(0)) gx[i] += g;
  });
  return y;
}

template <typename S>
Var<S> sum_all(Var<S> x) {
  Tape<S>* t = x.tape;
  const Tensor<S>& vx = t->value(x);
  double s = 0.0;
  for (std::int64_t i = 0; i < vx.numel(); ++i) s += static_cast<double>(vx[i]);
  Var<S> y = t->add_node(Tensor<S>::scalar(static_cast<S>(s)), t->requires_grad(x));
  t->set_backprop(y.id, [t, x, y]() {
    const S g = t->grad_ref(y.id)[0];
    t->grad_ref(x.id).vec().array() += g;
  });
  return y;
}

// ---------------------------------------------------------------------------
// Rotary position embedding
// ---------------------------------------------------------------------------

// Rotates x[seq, heads*head_dim] per head with the split-half pairing
// (x[i], x[i+head_dim/2]) and frequency base^(-2i/head_dim) at the given
// integer positions. Position 0 is the identity rotation.
template <typename S>
Var<S> rope(Var<S> x, const std::vector<std::int64_t>& positions, double base,
            std::int64_t head_dim) {
  Tape<S>* t = x.tape;
  const Tensor<S>& vx = t->value(x);
  if (head_dim <= 0 || head_dim % 2 != 0) {
    throw ShapeError("rope: head_dim must be positive and even, got " + std::to_string(head_dim));
  }
  if (vx.cols() % head_dim != 0) {
    throw ShapeError("rope: width " + std::to_string(vx.cols()) + " not a multiple of head_dim " +
                     std::to_string(head_dim));
  }
  if (static_cast<std::int64_t>(positions.size()) != vx.rows()) {
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(vx.rows()) + " rows");
  }
  if (base <= 0.0) throw ValidationError("rope: base must be positive");

  const std::int64_t half = head_dim / 2;
  const std::int64_t n_heads = vx.cols() / head_dim;
  // cos/sin tables per (row, i); shared by forward and backward
  auto cs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(vx.rows() * half * 2));
  for (std::int64_t r = 0; r < vx.rows(); ++r) {
    for (std::int64_t i = 0; i < half; ++i) {
      const double freq =
          std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double theta = static_cast<double>(positions[static_cast<std::size_t>(r)]) * freq;
      (*cs)[static_cast<std::size_t>((r * half + i) * 2)] = std::cos(theta);
      (*cs)[static_cast<std::size_t>((r * half + i) * 2 + 1)] = std::sin(theta);
    }
  }
  Tensor<S> out({vx.rows(), vx.cols()});
  for (std::int64_t r = 0; r < vx.rows(); ++r) {
    for (std::int64_t h = 0; h < n_heads; ++h) {
      const std::int64_t off = h * head_dim;
      for (std::int64_t i = 0; i < half; ++i) {
        const double c = (*cs)[static_cast<std::size_t>((r * half + i) * 2)];
        const double s = (*cs)[static_cast<std::size_t>((r * half + i) * 2 + 1)];
        const double a = static_cast<double>(vx.at(r, off + i));
        const double b = static_cast<double>(vx.at(r, off + i + half));
        out.at(r, off + i) = static_cast<S>(a * c - b * s);
        out.at(r, off + i + half) = static_cast<S>(a * s + b * c);
      }
    }
  }
  Var<S> y = t->add_node(std::move(out), t->requires_grad(x));
  t->set_backprop(y.id, [t, x, y, cs, half, n_heads, head_dim]() {
    const Tensor<S>& gy = t->grad_ref(y.id);
    Tensor<S>& gx = t->grad_ref(x.id);
    for (std::int64_t r = 0; r < gy.rows(); ++r) {
      for (std::int64_t h = 0; h < n_heads; ++h) {
        const std::int64_t off = h * head_dim;
        for (std::int64_t i = 0; i < half; ++i) {
          const double c = (*cs)[static_cast<std::size_t>((r * half + i) * 2)];
          const double s = (*cs)[static_cast<std::size_t>((r * half + i) * 2 + 1)];
          const double ga = static_cast<double>(gy.at(r, off + i));
          const double gb = static_cast<double>(gy.at(r, off + i + half));
          gx.at(r, off + i) += static_cast<S>(ga * c + gb * s);
          gx.at(r, off + i + half) += static_cast<S>(-ga * s + gb * c);
        }
      }
    }
  });
  return y;
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) {
  return add(a, b);
}
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) {
  return sub(a, b);
}
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) {
  return mul(a, b);
}

// ---------------------------------------------------------------------------
// Named-graph surface: forward(inputs) / backward(seed_grads)
// ---------------------------------------------------------------------------

template <typename S>
class Program {
 public:
  using NamedTensors = std::map<std::string, Tensor<S>>;
  using NamedVars = std::map<std::string, Var<S>>;
  using BuildFn = std::function<NamedVars(Tape<S>&, const NamedVars&)>;

  explicit Program(BuildFn build) : build_(std::move(build)) {}

  NamedTensors forward(const NamedTensors& inputs) {
    tape_ = std::make_unique<Tape<S>>();
    inputs_.clear();
    for (const auto& [name, tensor] : inputs) inputs_[name] = tape_->leaf(tensor, name);
    outputs_ = build_(*tape_, inputs_);
    NamedTensors out;
    for (const auto& [name, var] : outputs_) out[name] = tape_->value(var);
    return out;
  }

  // Gradients for every requires_grad input, keyed by input name.
  NamedTensors backward(const NamedTensors& seed_grads) {
    if (!tape_) throw GraphError("backward: forward has not been evaluated");
    std::vector<std::pair<Var<S>, Tensor<S>>> seeds;
    for (const auto& [name, seed] : seed_grads) {
      auto it = outputs_.find(name);
      if (it == outputs_.end()) throw GraphError("backward: unknown output '" + name + "'");
      seeds.push_back({it->second, seed});
    }
    tape_->backward_multi(seeds);
    NamedTensors grads;
    for (const auto& [name, var] : inputs_) {
      if (tape_->requires_grad(var)) grads[name] = tape_->grad(var);
    }
    return grads;
  }

  Tape<S>* tape() { return tape_.get(); }

 private:
  BuildFn build_;
  std::unique_ptr<Tape<S>> tape_;
  NamedVars inputs_;
  NamedVars outputs_;
};

// ---------------------------------------------------------------------------
// Finite-difference checking
// ---------------------------------------------------------------------------

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |cd| + 1e-12) for a scalar-valued f at x.
template <typename S>
double grad_check(const std::function<Var<S>(Tape<S>&, Var<S>)>& f, const Tensor<S>& x,
                  double eps) {
  if (eps <= 0.0) throw ValidationError("grad_check: eps must be positive");
  Tensor<S> xg = x;
  xg.requires_grad = true;
  Tape<S> tape;
  Var<S> vx = tape.leaf(xg);
  Var<S> y = f(tape, vx);
  if (tape.value(y).numel() != 1) {
    throw GraphError("grad_check: f must be scalar-valued, got shape " +
                     shape_str(tape.value(y).shape));
  }
  tape.backward(y);
  Tensor<S> analytic = tape.grad(vx);

  auto eval = [&](const Tensor<S>& xt) {
    Tape<S> t(false);
    Var<S> v = t.leaf(xt);
    Var<S> out = f(t, v);
    return static_cast<double>(t.value(out)[0]);
  };

  double max_rel = 0.0;
  Tensor<S> xp = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const S orig = xp[i];
    xp[i] = orig + static_cast<S>(eps);
    const double up = eval(xp);
    xp[i] = orig - static_cast<S>(eps);
    const double dn = eval(xp);
    xp[i] = orig;
    const double fd = (up - dn) / (2.0 * eps);
    const double ga = static_cast<double>(analytic[i]);
    const double rel = std::abs(ga - fd) / (std::abs(ga) + std::abs(fd) + 1e-12);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

// Multi-tensor variant: f sees all leaves, the check sweeps coordinates of
// each tensor (optionally capped per tensor; 0 = all, sampled deterministically).
template <typename S>
double grad_check_many(
    const std::function<Var<S>(Tape<S>&, std::vector<Var<S>>&)>& f,
    const std::vector<Tensor<S>>& xs, double eps, std::int64_t max_coords_per_tensor = 0) {
  Tape<S> tape;
  std::vector<Var<S>> vars;
  vars.reserve(xs.size());
  for (const auto& x : xs) {
    Tensor<S> xg = x;
    xg.requires_grad = true;
    vars.push_back(tape.leaf(xg));
  }
  std::vector<Var<S>> vs = vars;
  Var<S> y = f(tape, vs);
  if (tape.value(y).numel() != 1) {
    throw GraphError("grad_check_many: f must be scalar-valued");
  }
  tape.backward(y);
  std::vector<Tensor<S>> analytic;
  for (auto v : vars) analytic.push_back(tape.grad(v));

  std::vector<Tensor<S>> work = xs;
  auto eval = [&]() {
    Tape<S> t(false);
    std::vector<Var<S>> v2;
    v2.reserve(work.size());
    for (const auto& w : work) v2.push_back(t.leaf(w));
    Var<S> out = f(t, v2);
    return static_cast<double>(t.value(out)[0]);
  };

  double max_rel = 0.0;
  Rng pick(0x5eedc0de);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const std::int64_t n = xs[k].numel();
    std::vector<std::int64_t> coords;
    if (max_coords_per_tensor <= 0 || n <= max_coords_per_tensor) {
      coords.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      for (std::int64_t i = 0; i < max_coords_per_tensor; ++i)
        coords.push_back(static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(n))));
    }
    for (std::int64_t i : coords) {
      const S orig = work[k][i];
      work[k][i] = orig + static_cast<S>(eps);
      const double up = eval();
      work[k][i] = orig - static_cast<S>(eps);
      const double dn = eval();
      work[k][i] = orig;
      const double fd = (up - dn) / (2.0 * eps);
      const double ga = static_cast<double>(analytic[k][i]);
      const double rel = std::abs(ga - fd) / (std::abs(ga) + std::abs(fd) + 1e-12);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace desklm
