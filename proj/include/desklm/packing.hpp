// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Context-window packing. Documents are laid into fixed-size samples in
// stream order (greedy: close a sample when the next piece does not fit).
// A document never spans two samples — anything longer than the window is
// first cut by split_long_samples. Per-position segment ids record the
// document boundaries that drive the block-diagonal attention mask; padding
// carries segment -1 and loss mask 0.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "desklm/common.hpp"
#include "desklm/mixture.hpp"

namespace desklm {

// Order-preserving partition into pieces of at most max_len tokens;
// concatenating the pieces reproduces the input exactly.
inline std::vector<std::vector<std::int64_t>> split_long_samples(
    const std::vector<std::int64_t>& tokens, std::int64_t max_len) {
  if (max_len < 1) throw ValidationError("split: max_len must be >= 1");
  std::vector<std::vector<std::int64_t>> out;
  for (std::size_t off = 0; off < tokens.size(); off += static_cast<std::size_t>(max_len)) {
    const std::size_t end = std::min(tokens.size(), off + static_cast<std::size_t>(max_len));
    out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(off),
                     tokens.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (out.empty()) out.emplace_back();
  return out;
}

inline std::vector<Document> split_long_samples(const Document& doc, std::int64_t max_len) {
  if (max_len < 1) throw ValidationError("split: max_len must be >= 1");
  std::vector<Document> out;
  if (doc.size() == 0) {
    out.push_back(doc);
    return out;
  }
  for (std::int64_t off = 0; off < doc.size(); off += max_len) {
    const std::int64_t end = std::min<std::int64_t>(doc.size(), off + max_len);
    Document piece;
    piece.source = doc.source;
    piece.id = doc.id;
    piece.tokens.assign(doc.tokens.begin() + off, doc.tokens.begin() + end);
    if (!doc.loss_mask.empty()) {
      piece.loss_mask.assign(doc.loss_mask.begin() + off, doc.loss_mask.begin() + end);
    }
    out.push_back(std::move(piece));
  }
  return out;
}

struct PackedSample {
  std::vector<std::int64_t> tokens;    // exactly context_len entries
  std::vector<std::int64_t> segments;  // per position; -1 on padding
  std::vector<double> loss_mask;       // 0 on padding and repeated messages
  std::vector<std::string> sources;    // per segment
};

inline std::vector<PackedSample> pack_sequences(const std::vector<Document>& docs,
                                                std::int64_t context_len, std::int64_t pad_id) {
  if (context_len < 1) throw ValidationError("pack: context length must be >= 1");
  std::vector<PackedSample> packs;
  PackedSample cur;
  std::int64_t seg = 0;
  auto flush = [&]() {
    if (cur.tokens.empty()) return;
    while (static_cast<std::int64_t>(cur.tokens.size()) < context_len) {
      cur.tokens.push_back(pad_id);
      cur.segments.push_back(-1);
      cur.loss_mask.push_back(0.0);
    }
    packs.push_back(std::move(cur));
    cur = PackedSample{};
    seg = 0;
  };
  for (const Document& doc : docs) {
    for (const Document& piece : split_long_samples(doc, context_len)) {
      if (piece.size() == 0) continue;
      const std::int64_t room = context_len - static_cast<std::int64_t>(cur.tokens.size());
      if (piece.size() > room) flush();
      for (std::int64_t i = 0; i < piece.size(); ++i) {
        cur.tokens.push_back(piece.tokens[static_cast<std::size_t>(i)]);
        cur.segments.push_back(seg);
        cur.loss_mask.push_back(piece.mask_at(i));
      }
      cur.sources.push_back(piece.source);
      ++seg;
    }
  }
  flush();
  return packs;
}

// Fraction of corpus tokens that live in documents longer than `threshold`
// tokens — the accounting used for long-context staging claims.
inline double long_doc_token_fraction(const std::vector<Document>& docs, std::int64_t threshold) {
  std::int64_t total = 0, in_long = 0;
  for (const Document& d : docs) {
    total += d.size();
    if (d.size() > threshold) in_long += d.size();
  }
  if (total == 0) throw ValidationError("length stats: empty corpus");
  return static_cast<double>(in_long) / static_cast<double>(total);
}

}  // namespace desklm
