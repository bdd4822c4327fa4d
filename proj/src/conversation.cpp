// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0

#include "desklm/conversation.hpp"

#include <map>
#include <set>

#include "desklm/common.hpp"

namespace desklm {

namespace {

// id -> children (in input order) plus the root index, after validation.
struct TreeIndex {
  std::map<std::int64_t, std::size_t> by_id;
  std::map<std::int64_t, std::vector<std::int64_t>> children;
  std::int64_t root = -1;
};

TreeIndex index_tree(const ConversationTree& tree) {
  if (tree.nodes.empty()) throw ValidationError("conversation: empty tree");
  TreeIndex idx;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const ConvNode& n = tree.nodes[i];
    if (idx.by_id.count(n.id)) {
      throw ValidationError("conversation: duplicate node id " + std::to_string(n.id));
    }
    idx.by_id[n.id] = i;
  }
  for (const ConvNode& n : tree.nodes) {
    if (n.parent < 0) {
      if (idx.root >= 0) {
        throw ValidationError("conversation: multiple roots (" + std::to_string(idx.root) +
                              " and " + std::to_string(n.id) + ")");
      }
      idx.root = n.id;
    } else {
      if (!idx.by_id.count(n.parent)) {
        throw ValidationError("conversation: node " + std::to_string(n.id) +
                              " references missing parent " + std::to_string(n.parent));
      }
      idx.children[n.parent].push_back(n.id);
    }
  }
  if (idx.root < 0) throw ValidationError("conversation: no root node");
  // Reachability from the root doubles as the cycle check: a cycle's nodes
  // can never be reached, so the visit count falls short.
  std::set<std::int64_t> seen;
  std::vector<std::int64_t> stack = {idx.root};
  while (!stack.empty()) {
    const std::int64_t cur = stack.back();
    stack.pop_back();
    if (!seen.insert(cur).second) continue;
    auto it = idx.children.find(cur);
    if (it != idx.children.end()) {
      for (std::int64_t c : it->second) stack.push_back(c);
    }
  }
  if (seen.size() != tree.nodes.size()) {
    throw ValidationError("conversation: " +
                          std::to_string(tree.nodes.size() - seen.size()) +
                          " node(s) unreachable from the root (cycle or orphan cluster)");
  }
  return idx;
}

void collect_paths(const TreeIndex& idx, std::int64_t node, std::vector<std::int64_t>& prefix,
                   std::vector<std::vector<std::int64_t>>& out) {
  prefix.push_back(node);
  auto it = idx.children.find(node);
  if (it == idx.children.end() || it->second.empty()) {
    out.push_back(prefix);
  } else {
    for (std::int64_t c : it->second) collect_paths(idx, c, prefix, out);
  }
  prefix.pop_back();
}

}  // namespace

void ConversationTree::validate() const { (void)index_tree(*this); }

std::vector<FlatThread> flatten_conversation_tree(const ConversationTree& tree) {
  TreeIndex idx = index_tree(tree);
  std::vector<std::vector<std::int64_t>> paths;
  std::vector<std::int64_t> prefix;
  collect_paths(idx, idx.root, prefix, paths);

  std::set<std::int64_t> trained;  // node ids already emitted with mask 1
  std::vector<FlatThread> threads;
  threads.reserve(paths.size());
  for (const auto& path : paths) {
    FlatThread th;
    th.path = path;
    for (std::int64_t id : path) {
      const ConvNode& n = tree.nodes[idx.by_id.at(id)];
      const double mask = trained.count(id) ? 0.0 : 1.0;
      for (std::int64_t tok : n.tokens) {
        th.tokens.push_back(tok);
        th.loss_mask.push_back(mask);
      }
    }
    for (std::int64_t id : path) trained.insert(id);
    threads.push_back(std::move(th));
  }
  return threads;
}

double repetition_overhead(const ConversationTree& tree) {
  TreeIndex idx = index_tree(tree);
  std::vector<std::vector<std::int64_t>> paths;
  std::vector<std::int64_t> prefix;
  collect_paths(idx, idx.root, prefix, paths);
  std::int64_t unique = 0;
  for (const ConvNode& n : tree.nodes) unique += static_cast<std::int64_t>(n.tokens.size());
  if (unique == 0) throw ValidationError("conversation: tree has no tokens");
  std::int64_t total = 0;
  for (const auto& path : paths) {
    for (std::int64_t id : path) {
      total += static_cast<std::int64_t>(tree.nodes[idx.by_id.at(id)].tokens.size());
    }
  }
  return static_cast<double>(total) / static_cast<double>(unique) - 1.0;
}

double weighted_repetition_overhead(const std::vector<double>& shares,
                                    const std::vector<double>& overheads) {
  if (shares.size() != overheads.size()) {
    throw ValidationError("overhead: " + std::to_string(shares.size()) + " shares vs " +
                          std::to_string(overheads.size()) + " overheads");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    if (shares[i] < 0.0 || overheads[i] < 0.0) {
      throw ValidationError("overhead: shares and overheads must be non-negative");
    }
    total += shares[i] * overheads[i];
  }
  return total;
}

}  // namespace desklm
