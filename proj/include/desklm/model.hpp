// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer with grouped-query attention, rotary positions,
// and a single-layer-norm parallel residual block:
//
//   x_norm = LayerNorm(x)
//   y      = x + MLP(x_norm) + Attention(x_norm)
//
// The classic two-norm sequential block is also provided so the two forms can
// be compared head to head:
//
//   x_attn = LayerNorm_attn(x + Attention(x))
//   y      = LayerNorm_mlp(x_attn + MLP(x_attn))
//
// Activations are [seq, features] matrices; batching is done by accumulating
// over sequences. Packed inputs carry per-position segment ids, which drive
// both the block-diagonal causal mask and per-document position restarts.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "desklm/autodiff.hpp"
#include "desklm/common.hpp"
#include "desklm/tensor.hpp"

namespace desklm {

enum class BlockKind { kParallel, kSequential };

struct ModelConfig {
  std::int64_t n_layers = 2;
  std::int64_t d_model = 64;
  std::int64_t n_heads = 4;
  std::int64_t head_dim = 16;
  std::int64_t n_kv = 2;
  std::int64_t context_length = 128;
  double rope_base = 5000042.0;
  bool tied_embeddings = true;
  std::int64_t vocab_size = 257;

  // Conventions not pinned by the architecture table; kept configurable.
  std::int64_t mlp_hidden = 0;  // 0 means 4 * d_model
  double ln_eps = 1e-5;
  bool attn_bias = false;
  bool ln_bias = true;
  BlockKind block_kind = BlockKind::kParallel;

  std::int64_t mlp_width() const { return mlp_hidden > 0 ? mlp_hidden : 4 * d_model; }
  std::int64_t attn_width() const { return n_heads * head_dim; }
  std::int64_t kv_width() const { return n_kv * head_dim; }
  std::int64_t group_size() const { return n_heads / n_kv; }

  void validate() const {
    if (n_layers < 1) throw ValidationError("config: n_layers must be positive");
    if (d_model < 1) throw ValidationError("config: d_model must be positive");
    if (n_heads < 1 || head_dim < 1) throw ValidationError("config: heads must be positive");
    if (n_kv < 1 || n_heads % n_kv != 0) {
      throw ValidationError("config: n_heads (" + std::to_string(n_heads) +
                            ") must be a multiple of n_kv (" + std::to_string(n_kv) + ")");
    }
    if (head_dim % 2 != 0) throw ValidationError("config: head_dim must be even for rotation");
    if (context_length < 1) throw ValidationError("config: context_length must be positive");
    if (rope_base <= 0.0) throw ValidationError("config: rope_base must be positive");
    if (vocab_size < 1) throw ValidationError("config: vocab_size must be positive");
  }
};

// Named parameters in stable insertion order, so optimizer sweeps, checkpoint
// layout, and checksums are reproducible.
template <typename S>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor<S>> values;
  std::map<std::string, std::size_t> index;

  void add(const std::string& name, Tensor<S> t) {
    if (index.count(name)) throw ValidationError("params: duplicate name '" + name + "'");
    index[name] = values.size();
    names.push_back(name);
    values.push_back(std::move(t));
  }
  bool has(const std::string& name) const { return index.count(name) != 0; }
  Tensor<S>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("params: unknown name '" + name + "'");
    return values[it->second];
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("params: unknown name '" + name + "'");
    return values[it->second];
  }
  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& v : values) n += v.numel();
    return n;
  }
  std::uint64_t checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::size_t i = 0; i < values.size(); ++i) {
      h = fnv1a(names[i].data(), names[i].size(), h);
      h = fnv1a(values[i].data.data(), values[i].data.size() * sizeof(S), h);
    }
    return h;
  }
};

// Position ids that restart at 0 on every segment change, and the matching
// block-diagonal causal mask: position i may attend to j iff j <= i and both
// belong to the same segment.
inline std::vector<std::int64_t> positions_from_segments(
    const std::vector<std::int64_t>& segments) {
  std::vector<std::int64_t> pos(segments.size());
  std::int64_t p = 0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i > 0 && segments[i] != segments[i - 1]) p = 0;
    pos[i] = p++;
  }
  return pos;
}

template <typename S>
Tensor<S> causal_mask_from_segments(const std::vector<std::int64_t>& segments) {
  const std::int64_t n = static_cast<std::int64_t>(segments.size());
  Tensor<S> mask({n, n});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j <= i; ++j) {
      if (segments[static_cast<std::size_t>(i)] == segments[static_cast<std::size_t>(j)]) {
        mask.at(i, j) = S(1);
      }
    }
  }
  return mask;
}

template <typename S>
struct Model {
  ModelConfig cfg;
  ParamStore<S> params;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(seed);
    const S std_w = S(0.02);
    m.params.add("tok_emb", randn<S>({cfg.vocab_size, cfg.d_model}, rng, std_w));
    for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      m.params.add(p + "ln_gain", Tensor<S>({cfg.d_model}, S(1)));
      if (cfg.ln_bias) m.params.add(p + "ln_bias", Tensor<S>({cfg.d_model}));
      m.params.add(p + "ln2_gain", Tensor<S>({cfg.d_model}, S(1)));
      if (cfg.ln_bias) m.params.add(p + "ln2_bias", Tensor<S>({cfg.d_model}));
      m.params.add(p + "wq", randn<S>({cfg.d_model, cfg.attn_width()}, rng, std_w));
      m.params.add(p + "wk", randn<S>({cfg.d_model, cfg.kv_width()}, rng, std_w));
      m.params.add(p + "wv", randn<S>({cfg.d_model, cfg.kv_width()}, rng, std_w));
      m.params.add(p + "wo", randn<S>({cfg.attn_width(), cfg.d_model}, rng, std_w));
      if (cfg.attn_bias) {
        m.params.add(p + "bq", Tensor<S>({cfg.attn_width()}));
        m.params.add(p + "bk", Tensor<S>({cfg.kv_width()}));
        m.params.add(p + "bv", Tensor<S>({cfg.kv_width()}));
        m.params.add(p + "bo", Tensor<S>({cfg.d_model}));
      }
      m.params.add(p + "w_up", randn<S>({cfg.d_model, cfg.mlp_width()}, rng, std_w));
      m.params.add(p + "b_up", Tensor<S>({cfg.mlp_width()}));
      m.params.add(p + "w_down", randn<S>({cfg.mlp_width(), cfg.d_model}, rng, std_w));
      m.params.add(p + "b_down", Tensor<S>({cfg.d_model}));
    }
    m.params.add("final_ln_gain", Tensor<S>({cfg.d_model}, S(1)));
    if (cfg.ln_bias) m.params.add("final_ln_bias", Tensor<S>({cfg.d_model}));
    if (!cfg.tied_embeddings) {
      m.params.add("lm_head", randn<S>({cfg.vocab_size, cfg.d_model}, rng, std_w));
    }
    return m;
  }

  std::int64_t param_count() const { return params.count(); }

  // Split the head weights into a separate matrix initialized from the
  // embedding, so logits are unchanged at the moment of the switch.
  void untie() {
    if (!cfg.tied_embeddings) throw ValidationError("untie: embeddings are already untied");
    params.add("lm_head", params.at("tok_emb"));
    cfg.tied_embeddings = false;
  }
};

// Per-layer weight handles inside a tape graph.
template <typename S>
using NamedVars = std::map<std::string, Var<S>>;

namespace detail {

template <typename S>
Var<S> maybe_bias(Tape<S>&, const NamedVars<S>& pv, const std::string& name, Var<S> x) {
  auto it = pv.find(name);
  if (it == pv.end()) return x;
  return add_rowvec(x, it->second);
}

template <typename S>
Var<S> ln_of(Tape<S>&, const NamedVars<S>& pv, const std::string& gain, const std::string& bias,
             Var<S> x, double eps) {
  auto itb = pv.find(bias);
  if (itb == pv.end()) return layer_norm(x, pv.at(gain), eps);
  return layer_norm(x, pv.at(gain), itb->second, eps);
}

}  // namespace detail

// Grouped-query attention over one packed sequence. Query head h shares the
// k/v head h / group_size. `mask` is the block-diagonal causal mask and
// `positions` the per-document rotary positions.
template <typename S>
Var<S> attention_gqa(Tape<S>& t, Var<S> x_norm, const NamedVars<S>& pv, const std::string& prefix,
                     const Tensor<S>& mask, const std::vector<std::int64_t>& positions,
                     const ModelConfig& cfg) {
  const std::int64_t seq = t.value(x_norm).rows();
  if (seq > cfg.context_length) {
    throw ValidationError("attention: sequence length " + std::to_string(seq) +
                          " exceeds context_length " + std::to_string(cfg.context_length));
  }
  if (mask.rows() != seq || mask.cols() != seq) {
    throw ShapeError("attention: mask " + shape_str(mask.shape) + " vs sequence length " +
                     std::to_string(seq));
  }
  Var<S> q = matmul(x_norm, pv.at(prefix + "wq"));
  Var<S> k = matmul(x_norm, pv.at(prefix + "wk"));
  Var<S> v = matmul(x_norm, pv.at(prefix + "wv"));
  q = detail::maybe_bias(t, pv, prefix + "bq", q);
  k = detail::maybe_bias(t, pv, prefix + "bk", k);
  v = detail::maybe_bias(t, pv, prefix + "bv", v);
  q = rope(q, positions, cfg.rope_base, cfg.head_dim);
  k = rope(k, positions, cfg.rope_base, cfg.head_dim);

  const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim)));
  std::vector<Var<S>> ctx;
  ctx.reserve(static_cast<std::size_t>(cfg.n_heads));
  for (std::int64_t h = 0; h < cfg.n_heads; ++h) {
    const std::int64_t kvh = h / cfg.group_size();
    Var<S> qh = slice_cols(q, h * cfg.head_dim, cfg.head_dim);
    Var<S> kh = slice_cols(k, kvh * cfg.head_dim, cfg.head_dim);
    Var<S> vh = slice_cols(v, kvh * cfg.head_dim, cfg.head_dim);
    Var<S> scores = scale(matmul_nt(qh, kh), inv_sqrt_d);
    Var<S> p = masked_softmax_rows(scores, mask);
    ctx.push_back(matmul(p, vh));
  }
  Var<S> merged = concat_cols(ctx);
  Var<S> out = matmul(merged, pv.at(prefix + "wo"));
  return detail::maybe_bias(t, pv, prefix + "bo", out);
}

template <typename S>
Var<S> mlp_forward(Tape<S>&, Var<S> x, const NamedVars<S>& pv, const std::string& prefix) {
  Var<S> h = add_rowvec(matmul(x, pv.at(prefix + "w_up")), pv.at(prefix + "b_up"));
  h = gelu(h);
  return add_rowvec(matmul(h, pv.at(prefix + "w_down")), pv.at(prefix + "b_down"));
}

// One shared norm; attention and the MLP read the same normalized input, and
// the raw x carries the residual. Summation order is fixed:
// (x + mlp) + attention.
template <typename S>
Var<S> parallel_block(Tape<S>& t, Var<S> x, const NamedVars<S>& pv, const std::string& prefix,
                      const Tensor<S>& mask, const std::vector<std::int64_t>& positions,
                      const ModelConfig& cfg) {
  Var<S> xn = detail::ln_of(t, pv, prefix + "ln_gain", prefix + "ln_bias", x, cfg.ln_eps);
  Var<S> attn = attention_gqa(t, xn, pv, prefix, mask, positions, cfg);
  Var<S> mlp = mlp_forward(t, xn, pv, prefix);
  return add(add(x, mlp), attn);
}

// Two norms, applied after each residual join. Kept for head-to-head
// comparison against the parallel form; shares the same weight set (the
// second norm uses the ln2_* tensors).
template <typename S>
Var<S> sequential_block(Tape<S>& t, Var<S> x, const NamedVars<S>& pv, const std::string& prefix,
                        const Tensor<S>& mask, const std::vector<std::int64_t>& positions,
                        const ModelConfig& cfg) {
  Var<S> attn = attention_gqa(t, x, pv, prefix, mask, positions, cfg);
  Var<S> x_attn =
      detail::ln_of(t, pv, prefix + "ln_gain", prefix + "ln_bias", add(x, attn), cfg.ln_eps);
  Var<S> mlp = mlp_forward(t, x_attn, pv, prefix);
  return detail::ln_of(t, pv, prefix + "ln2_gain", prefix + "ln2_bias", add(x_attn, mlp),
                       cfg.ln_eps);
}

// Leaf vars for every parameter (requires_grad unless gradients are frozen
// for that name via `frozen`).
template <typename S>
NamedVars<S> param_leaves(Tape<S>& t, const Model<S>& m,
                          const std::vector<std::string>& frozen = {}) {
  NamedVars<S> pv;
  for (std::size_t i = 0; i < m.params.values.size(); ++i) {
    Tensor<S> v = m.params.values[i];
    v.requires_grad = true;
    for (const auto& f : frozen) {
      if (m.params.names[i].rfind(f, 0) == 0) v.requires_grad = false;
    }
    pv[m.params.names[i]] = t.leaf(v, m.params.names[i]);
  }
  return pv;
}

// Embedding -> blocks -> final norm. Returns the final hidden states.
template <typename S>
Var<S> hidden_forward(Tape<S>& t, const Model<S>& m, const NamedVars<S>& pv,
                      const std::vector<std::int64_t>& tokens,
                      const std::vector<std::int64_t>& segments) {
  if (tokens.size() != segments.size()) {
    throw ShapeError("forward: " + std::to_string(tokens.size()) + " tokens vs " +
                     std::to_string(segments.size()) + " segment ids");
  }
  if (tokens.empty()) throw ValidationError("forward: empty token sequence");
  if (static_cast<std::int64_t>(tokens.size()) > m.cfg.context_length) {
    throw ValidationError("forward: sequence length " + std::to_string(tokens.size()) +
                          " exceeds context_length " + std::to_string(m.cfg.context_length));
  }
  const Tensor<S> mask = causal_mask_from_segments<S>(segments);
  const std::vector<std::int64_t> positions = positions_from_segments(segments);
  Var<S> h = gather_rows(pv.at("tok_emb"), tokens);
  for (std::int64_t l = 0; l < m.cfg.n_layers; ++l) {
    const std::string prefix = "blocks." + std::to_string(l) + ".";
    h = (m.cfg.block_kind == BlockKind::kParallel)
            ? parallel_block(t, h, pv, prefix, mask, positions, m.cfg)
            : sequential_block(t, h, pv, prefix, mask, positions, m.cfg);
  }
  return detail::ln_of(t, pv, "final_ln_gain", "final_ln_bias", h, m.cfg.ln_eps);
}

// Hidden states -> logits. Tied mode projects through the embedding matrix
// itself; untied mode uses the separate head.
template <typename S>
Var<S> logits_forward(Tape<S>& t, const Model<S>& m, const NamedVars<S>& pv, Var<S> hidden) {
  (void)t;
  Var<S> head = m.cfg.tied_embeddings ? pv.at("tok_emb") : pv.at("lm_head");
  return matmul_nt(hidden, head);
}

// Value-level forward for evaluation and fixtures.
template <typename S>
Tensor<S> lm_forward(const Model<S>& m, const std::vector<std::int64_t>& tokens,
                     const std::vector<std::int64_t>& segments) {
  Tape<S> t(false);
  NamedVars<S> pv;
  for (std::size_t i = 0; i < m.params.values.size(); ++i) {
    pv[m.params.names[i]] = t.leaf(m.params.values[i], m.params.names[i]);
  }
  Var<S> h = hidden_forward(t, m, pv, tokens, segments);
  Var<S> lg = logits_forward(t, m, pv, h);
  Tensor<S> out = t.value(lg);
  if (!out.all_finite()) throw NonFiniteError("forward: non-finite logits");
  return out;
}

template <typename S>
Tensor<S> lm_forward(const Model<S>& m, const std::vector<std::int64_t>& tokens) {
  return lm_forward(m, tokens, std::vector<std::int64_t>(tokens.size(), 0));
}

// Composite objective: masked mean cross-entropy plus the partition penalty
// c_z * mean(log^2 Z) over the same positions.
template <typename S>
struct LossVars {
  Var<S> total;
  Var<S> ce;
  Var<S> z;
};

inline constexpr double kZLossCoeff = 1e-4;

template <typename S>
LossVars<S> lm_loss(Tape<S>& t, Var<S> logits, const std::vector<std::int64_t>& targets,
                    const std::vector<double>& loss_mask) {
  const Tensor<S>& v = t.value(logits);
  if (static_cast<std::int64_t>(targets.size()) != v.rows() ||
      loss_mask.size() != targets.size()) {
    throw ShapeError("loss: logits rows " + std::to_string(v.rows()) + " vs targets " +
                     std::to_string(targets.size()) + " vs mask " +
                     std::to_string(loss_mask.size()));
  }
  Tensor<S> mask({static_cast<std::int64_t>(loss_mask.size())});
  bool any = false;
  for (std::size_t i = 0; i < loss_mask.size(); ++i) {
    if (loss_mask[i] != 0.0 && loss_mask[i] != 1.0) {
      throw ValidationError("loss: mask entries must be 0 or 1");
    }
    mask[static_cast<std::int64_t>(i)] = static_cast<S>(loss_mask[i]);
    any = any || loss_mask[i] == 1.0;
  }
  if (!any) throw ValidationError("loss: every position is masked out");
  Var<S> lse = logsumexp_rows(logits);
  Var<S> picked = pick_per_row(logits, targets);
  LossVars<S> out;
  out.ce = masked_mean(sub(lse, picked), mask);
  out.z = scale(masked_mean(square(lse), mask), static_cast<S>(kZLossCoeff));
  out.total = add(out.ce, out.z);
  return out;
}

template <typename S>
struct LossValues {
  double total = 0.0;
  double ce = 0.0;
  double z = 0.0;
};

template <typename S>
LossValues<S> lm_loss_eval(const Tensor<S>& logits, const std::vector<std::int64_t>& targets,
                           const std::vector<double>& loss_mask) {
  Tape<S> t(false);
  Var<S> lg = t.constant(logits);
  LossVars<S> lv = lm_loss(t, lg, targets, loss_mask);
  LossValues<S> out;
  out.total = static_cast<double>(t.value(lv.total)[0]);
  out.ce = static_cast<double>(t.value(lv.ce)[0]);
  out.z = static_cast<double>(t.value(lv.z)[0]);
  return out;
}

}  // namespace desklm
