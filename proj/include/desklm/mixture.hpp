// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded mixture composition over document sources. Source selection is a
// weighted draw with a deficit correction (sources behind their target token
// share get proportionally more probability mass), so realized fractions
// track the spec within one document length. The stream position is a small
// serializable cursor, and tokens can be skipped exactly — both are needed
// for rollback-and-skip spike handling.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "desklm/common.hpp"

namespace desklm {

struct Document {
  std::vector<std::int64_t> tokens;
  std::vector<double> loss_mask;  // empty means all-ones
  std::string source;
  std::int64_t id = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(tokens.size()); }
  double mask_at(std::int64_t i) const {
    return loss_mask.empty() ? 1.0 : loss_mask[static_cast<std::size_t>(i)];
  }
};

// Deterministic random-access document source. Finite sources cycle.
class DocSource {
 public:
  virtual ~DocSource() = default;
  virtual std::string name() const = 0;
  virtual Document doc_at(std::int64_t index) const = 0;
};

class VectorSource final : public DocSource {
 public:
  VectorSource(std::string name, std::vector<Document> docs)
      : name_(std::move(name)), docs_(std::move(docs)) {
    if (docs_.empty()) throw ValidationError("source '" + name_ + "': no documents");
  }
  std::string name() const override { return name_; }
  Document doc_at(std::int64_t index) const override {
    Document d = docs_[static_cast<std::size_t>(index % static_cast<std::int64_t>(docs_.size()))];
    d.source = name_;
    d.id = index;
    return d;
  }

 private:
  std::string name_;
  std::vector<Document> docs_;
};

struct MixtureWeights {
  // (source name, weight); weights sum to 1.
  std::vector<std::pair<std::string, double>> entries;

  void validate() const {
    if (entries.empty()) throw ValidationError("mixture: no sources");
    double sum = 0.0;
    for (const auto& [name, w] : entries) {
      if (w < 0.0) throw ValidationError("mixture: negative weight for '" + name + "'");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ValidationError("mixture: weights sum to " + std::to_string(sum) + ", expected 1");
    }
  }
};

struct MixtureCursor {
  std::uint64_t rng_state = 0;
  std::vector<std::int64_t> next_index;       // per source: next doc to draw
  std::vector<std::int64_t> drawn_tokens;     // per source: tokens drawn so far
  std::int64_t total_tokens = 0;              // includes skipped tokens
  std::int64_t open_source = -1;              // partially consumed doc, if any
  std::int64_t open_doc_index = 0;
  std::int64_t open_offset = 0;
};

class MixtureStream {
 public:
  MixtureStream(std::vector<std::shared_ptr<DocSource>> sources, MixtureWeights weights,
                std::uint64_t seed)
      : sources_(std::move(sources)), weights_(std::move(weights)), rng_(seed) {
    weights_.validate();
    if (sources_.size() != weights_.entries.size()) {
      throw ValidationError("mixture: " + std::to_string(sources_.size()) + " sources vs " +
                            std::to_string(weights_.entries.size()) + " weights");
    }
    for (std::size_t i = 0; i < sources_.size(); ++i) {
      if (sources_[i]->name() != weights_.entries[i].first) {
        throw ValidationError("mixture: source '" + sources_[i]->name() +
                              "' does not match weight entry '" + weights_.entries[i].first +
                              "'");
      }
    }
    cur_.next_index.assign(sources_.size(), 0);
    cur_.drawn_tokens.assign(sources_.size(), 0);
  }

  // Next document in the stream. After a skip that stopped mid-document, the
  // remaining tail of that document is delivered first.
  Document next_document() {
    if (cur_.open_source >= 0) {
      Document d = sources_[static_cast<std::size_t>(cur_.open_source)]->doc_at(
          cur_.open_doc_index);
      Document tail;
      tail.source = d.source;
      tail.id = d.id;
      tail.tokens.assign(d.tokens.begin() + cur_.open_offset, d.tokens.end());
      if (!d.loss_mask.empty()) {
        tail.loss_mask.assign(d.loss_mask.begin() + cur_.open_offset, d.loss_mask.end());
      }
      cur_.open_source = -1;
      cur_.open_offset = 0;
      return tail;
    }
    const std::size_t s = pick_source();
    return draw_from(s);
  }

  // Advance the stream by exactly n tokens without delivering them.
  void skip_tokens(std::int64_t n) {
    if (n < 0) throw ValidationError("mixture: cannot skip a negative span");
    while (n > 0) {
      if (cur_.open_source >= 0) {
        const Document d = sources_[static_cast<std::size_t>(cur_.open_source)]->doc_at(
            cur_.open_doc_index);
        const std::int64_t remaining = d.size() - cur_.open_offset;
        const std::int64_t take = std::min(remaining, n);
        cur_.open_offset += take;
        n -= take;
        if (cur_.open_offset == d.size()) {
          cur_.open_source = -1;
          cur_.open_offset = 0;
        }
        continue;
      }
      const std::size_t s = pick_source();
      const std::int64_t idx = cur_.next_index[s];
      const Document d = draw_from(s, idx);
      if (d.size() > n) {
        cur_.open_source = static_cast<std::int64_t>(s);
        cur_.open_doc_index = idx;
        cur_.open_offset = n;
        n = 0;
      } else {
        n -= d.size();
      }
    }
  }

  MixtureCursor cursor() const {
    MixtureCursor c = cur_;
    c.rng_state = rng_.state();
    return c;
  }

  void restore(const MixtureCursor& c) {
    if (c.next_index.size() != sources_.size() || c.drawn_tokens.size() != sources_.size()) {
      throw ValidationError("mixture: cursor does not match source count");
    }
    cur_ = c;
    rng_.set_state(c.rng_state);
  }

  // Realized token fraction per source, over everything drawn so far.
  std::vector<double> fractions() const {
    std::vector<double> f(sources_.size(), 0.0);
    if (cur_.total_tokens == 0) return f;
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i] = static_cast<double>(cur_.drawn_tokens[i]) /
             static_cast<double>(cur_.total_tokens);
    }
    return f;
  }

  std::int64_t total_tokens() const { return cur_.total_tokens; }

 private:
  // Weighted draw with a deficit boost: mass_s = max(w_s * (total+1) -
  // drawn_s, w_s). The floor keeps every weighted source drawable; the
  // deficit term pulls lagging sources back toward their target share.
  std::size_t pick_source() {
    std::vector<double> mass(sources_.size(), 0.0);
    double total_mass = 0.0;
    for (std::size_t i = 0; i < sources_.size(); ++i) {
      const double w = weights_.entries[i].second;
      if (w <= 0.0) continue;
      const double deficit = w * static_cast<double>(cur_.total_tokens + 1) -
                             static_cast<double>(cur_.drawn_tokens[i]);
      mass[i] = std::max(deficit, w);
      total_mass += mass[i];
    }
    if (total_mass <= 0.0) throw ValidationError("mixture: all weights are zero");
    const double u = rng_.uniform() * total_mass;
    double acc = 0.0;
    for (std::size_t i = 0; i < sources_.size(); ++i) {
      acc += mass[i];
      if (u < acc && mass[i] > 0.0) return i;
    }
    for (std::size_t i = sources_.size(); i-- > 0;) {
      if (mass[i] > 0.0) return i;
    }
    throw ValidationError("mixture: no drawable source");
  }

  Document draw_from(std::size_t s) { return draw_from(s, cur_.next_index[s]); }

  Document draw_from(std::size_t s, std::int64_t idx) {
    Document d = sources_[s]->doc_at(idx);
    if (d.size() == 0) throw ValidationError("mixture: empty document from '" + d.source + "'");
    cur_.next_index[s] = idx + 1;
    cur_.drawn_tokens[s] += d.size();
    cur_.total_tokens += d.size();
    return d;
  }

  std::vector<std::shared_ptr<DocSource>> sources_;
  MixtureWeights weights_;
  Rng rng_;
  MixtureCursor cur_;
};

inline MixtureStream compose_mixture(std::vector<std::shared_ptr<DocSource>> sources,
                                     MixtureWeights weights, std::uint64_t seed) {
  return MixtureStream(std::move(sources), std::move(weights), seed);
}

}  // namespace desklm
