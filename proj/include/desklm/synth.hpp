// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic corpora for desk-scale runs and tests. Documents
// are pure functions of (flavor, seed, index), so any stream position can be
// re-created from a cursor alone. The text is template-heavy on purpose: a
// small model can visibly learn it within a few thousand steps.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "desklm/common.hpp"
#include "desklm/conversation.hpp"
#include "desklm/mixture.hpp"
#include "desklm/tokenizer.hpp"

namespace desklm {

namespace synth_detail {

inline const std::vector<std::string>& subjects() {
  static const std::vector<std::string> v = {
      "the cat",   "the dog",    "a bird",      "the old man", "a small child",
      "the baker", "the sailor", "the teacher", "a stranger",  "the gardener"};
  return v;
}
inline const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v = {"sees",    "likes",  "follows", "finds",
                                             "watches", "visits", "remembers", "paints"};
  return v;
}
inline const std::vector<std::string>& objects() {
  static const std::vector<std::string> v = {
      "the river", "a tree",   "the market", "a book",    "the garden",
      "the moon",  "a letter", "the bridge", "the hills", "an old song"};
  return v;
}
inline const std::vector<std::string>& topics() {
  static const std::vector<std::string> v = {"weather", "harvest", "voyage", "festival",
                                             "library", "recipe",  "journey", "melody"};
  return v;
}

inline std::string pick(const std::vector<std::string>& bank, std::uint64_t h) {
  return bank[static_cast<std::size_t>(h % bank.size())];
}

inline std::string sentence(std::uint64_t seed, std::uint64_t k) {
  const std::uint64_t a = hash_u64(seed, 3 * k);
  const std::uint64_t b = hash_u64(seed, 3 * k + 1);
  const std::uint64_t c = hash_u64(seed, 3 * k + 2);
  return pick(subjects(), a) + " " + pick(verbs(), b) + " " + pick(objects(), c) + ". ";
}

}  // namespace synth_detail

// Flavors: web (short template prose), curated (longer prose), code
// (tiny python-like snippets), qa (question/answer pairs), long (prose far
// beyond desk context lengths, for split/packing statistics).
inline std::string synth_text(const std::string& flavor, std::uint64_t seed, std::int64_t index) {
  using namespace synth_detail;
  const std::uint64_t h = hash_u64(seed, static_cast<std::uint64_t>(index));
  if (flavor == "web") {
    const int n_sent = 2 + static_cast<int>(hash_u64(h, 1) % 5);
    std::string out;
    for (int k = 0; k < n_sent; ++k) out += sentence(h, static_cast<std::uint64_t>(k));
    return out;
  }
  if (flavor == "curated") {
    const int n_sent = 6 + static_cast<int>(hash_u64(h, 1) % 8);
    std::string out = "On the subject of the " + pick(topics(), hash_u64(h, 2)) + ": ";
    for (int k = 0; k < n_sent; ++k) out += sentence(h, static_cast<std::uint64_t>(k) + 100);
    return out;
  }
  if (flavor == "code") {
    const int fn = static_cast<int>(hash_u64(h, 1) % 90) + 10;
    const int add = static_cast<int>(hash_u64(h, 2) % 9) + 1;
    const int arg = static_cast<int>(hash_u64(h, 3) % 9);
    std::string out;
    out += "def fn" + std::to_string(fn) + "(x):\n";
    out += "    return x + " + std::to_string(add) + "\n\n";
    out += "print(fn" + std::to_string(fn) + "(" + std::to_string(arg) + "))\n";
    const int extra = static_cast<int>(hash_u64(h, 4) % 3);
    for (int k = 0; k < extra; ++k) {
      out += "# value " + std::to_string(static_cast<int>(hash_u64(h, 5 + static_cast<std::uint64_t>(k)) % 100)) + "\n";
    }
    return out;
  }
  if (flavor == "qa") {
    const std::string topic = pick(topics(), hash_u64(h, 1));
    std::string out = "Q: tell me about the " + topic + ".\n";
    out += "A: " + sentence(h, 7) + sentence(h, 8) + "\n";
    return out;
  }
  if (flavor == "long") {
    const int n_sent = 40 + static_cast<int>(hash_u64(h, 1) % 120);
    std::string out;
    for (int k = 0; k < n_sent; ++k) out += sentence(h, static_cast<std::uint64_t>(k));
    return out;
  }
  throw ValidationError("synthetic: unknown flavor '" + flavor + "'");
}

class SyntheticSource final : public DocSource {
 public:
  SyntheticSource(std::string name, std::string flavor, std::uint64_t seed)
      : name_(std::move(name)), flavor_(std::move(flavor)), seed_(seed) {
    (void)synth_text(flavor_, seed_, 0);  // validate the flavor eagerly
  }

  std::string name() const override { return name_; }

  Document doc_at(std::int64_t index) const override {
    Document d;
    d.source = name_;
    d.id = index;
    d.tokens = tok_.encode(synth_text(flavor_, seed_, index));
    return d;
  }

 private:
  std::string name_;
  std::string flavor_;
  std::uint64_t seed_;
  ByteTokenizer tok_;
};

// Random small conversation tree: `max_nodes` capped, every non-root parent
// is an earlier node, messages are 1..8 tokens. Deterministic in (seed,
// index).
inline ConversationTree synth_tree(std::uint64_t seed, std::int64_t index,
                                   std::int64_t max_nodes = 15) {
  const std::uint64_t h = hash_u64(seed, static_cast<std::uint64_t>(index));
  const std::int64_t n_nodes = 1 + static_cast<std::int64_t>(hash_u64(h, 1) %
                                                             static_cast<std::uint64_t>(max_nodes));
  ConversationTree tree;
  for (std::int64_t i = 0; i < n_nodes; ++i) {
    ConvNode node;
    node.id = i;
    node.role = (i % 2 == 0) ? "user" : "assistant";
    node.parent = (i == 0) ? -1
                           : static_cast<std::int64_t>(hash_u64(h, 100 + static_cast<std::uint64_t>(i)) %
                                                       static_cast<std::uint64_t>(i));
    const std::int64_t len = 1 + static_cast<std::int64_t>(hash_u64(h, 200 + static_cast<std::uint64_t>(i)) % 8);
    for (std::int64_t k = 0; k < len; ++k) {
      node.tokens.push_back(static_cast<std::int64_t>(
          hash_u64(h, 300 + static_cast<std::uint64_t>(i * 16 + k)) % 250));
    }
    tree.nodes.push_back(std::move(node));
  }
  return tree;
}

}  // namespace desklm
