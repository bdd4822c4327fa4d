// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Conversation trees are flattened into one thread per leaf (root-to-leaf,
// depth-first by child order). A message trains exactly once: the first
// thread that contains it carries its tokens with loss mask 1, every later
// thread repeats them with mask 0.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace desklm {

struct ConvNode {
  std::int64_t id = 0;
  std::string role;
  std::vector<std::int64_t> tokens;
  std::int64_t parent = -1;  // -1 marks the root
};

struct ConversationTree {
  std::vector<ConvNode> nodes;

  // Throws ValidationError on multiple/missing roots, unknown parents,
  // duplicate ids, or cycles.
  void validate() const;
};

struct FlatThread {
  std::vector<std::int64_t> tokens;
  std::vector<double> loss_mask;          // 1 trains, 0 is a repeated message
  std::vector<std::int64_t> path;         // node ids, root to leaf
};

std::vector<FlatThread> flatten_conversation_tree(const ConversationTree& tree);

// (total tokens across flattened threads / total tokens across unique
// messages) - 1. Zero exactly when the tree is a single path.
double repetition_overhead(const ConversationTree& tree);

// Corpus-level view: sum of per-source share * per-source overhead, i.e. the
// extra compute fraction contributed by thread repetition.
double weighted_repetition_overhead(const std::vector<double>& shares,
                                    const std::vector<double>& overheads);

}  // namespace desklm
