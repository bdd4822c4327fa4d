// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0

#include "desklm/dedup.hpp"

#include <algorithm>
#include <numeric>

#include "desklm/common.hpp"

namespace desklm {

// Doubling construction, O(n log^2 n) — plenty for desk-scale corpora.
std::vector<std::int64_t> suffix_array(const std::vector<std::int64_t>& seq) {
  const std::int64_t n = static_cast<std::int64_t>(seq.size());
  std::vector<std::int64_t> sa(static_cast<std::size_t>(n));
  std::iota(sa.begin(), sa.end(), 0);
  if (n == 0) return sa;

  // Initial ranks: compress token values.
  std::vector<std::int64_t> sorted_vals = seq;
  std::sort(sorted_vals.begin(), sorted_vals.end());
  sorted_vals.erase(std::unique(sorted_vals.begin(), sorted_vals.end()), sorted_vals.end());
  std::vector<std::int64_t> rank(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    rank[static_cast<std::size_t>(i)] =
        std::lower_bound(sorted_vals.begin(), sorted_vals.end(), seq[static_cast<std::size_t>(i)]) -
        sorted_vals.begin();
  }

  std::vector<std::int64_t> tmp(static_cast<std::size_t>(n));
  for (std::int64_t k = 1;; k *= 2) {
    auto key = [&](std::int64_t i) {
      const std::int64_t second = (i + k < n) ? rank[static_cast<std::size_t>(i + k)] : -1;
      return std::make_pair(rank[static_cast<std::size_t>(i)], second);
    };
    std::sort(sa.begin(), sa.end(),
              [&](std::int64_t a, std::int64_t b) { return key(a) < key(b); });
    tmp[static_cast<std::size_t>(sa[0])] = 0;
    for (std::int64_t i = 1; i < n; ++i) {
      tmp[static_cast<std::size_t>(sa[static_cast<std::size_t>(i)])] =
          tmp[static_cast<std::size_t>(sa[static_cast<std::size_t>(i - 1)])] +
          (key(sa[static_cast<std::size_t>(i - 1)]) < key(sa[static_cast<std::size_t>(i)]) ? 1
                                                                                           : 0);
    }
    rank = tmp;
    if (rank[static_cast<std::size_t>(sa[static_cast<std::size_t>(n - 1)])] == n - 1) break;
  }
  return sa;
}

// Kasai et al.: lcp[i] = longest common prefix of sa[i-1] and sa[i]; lcp[0]=0.
std::vector<std::int64_t> lcp_array(const std::vector<std::int64_t>& seq,
                                    const std::vector<std::int64_t>& sa) {
  const std::int64_t n = static_cast<std::int64_t>(seq.size());
  std::vector<std::int64_t> rank(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) rank[static_cast<std::size_t>(sa[static_cast<std::size_t>(i)])] = i;
  std::vector<std::int64_t> lcp(static_cast<std::size_t>(n), 0);
  std::int64_t h = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t r = rank[static_cast<std::size_t>(i)];
    if (r > 0) {
      const std::int64_t j = sa[static_cast<std::size_t>(r - 1)];
      while (i + h < n && j + h < n &&
             seq[static_cast<std::size_t>(i + h)] == seq[static_cast<std::size_t>(j + h)]) {
        ++h;
      }
      lcp[static_cast<std::size_t>(r)] = h;
      if (h > 0) --h;
    } else {
      h = 0;
    }
  }
  return lcp;
}

DedupResult dedup_exact_substrings(const std::vector<std::vector<std::int64_t>>& docs,
                                   std::int64_t min_len) {
  if (min_len < 1) throw ValidationError("dedup: min_len must be >= 1");
  DedupResult res;
  res.docs.reserve(docs.size());

  // Concatenate with unique negative separators so no window or suffix
  // comparison can cross a document boundary.
  std::vector<std::int64_t> seq;
  std::vector<std::size_t> doc_of;   // corpus position -> document
  std::vector<std::int64_t> off_of;  // corpus position -> offset inside doc
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (std::size_t i = 0; i < docs[d].size(); ++i) {
      const std::int64_t tok = docs[d][i];
      if (tok < 0) throw ValidationError("dedup: token ids must be non-negative");
      seq.push_back(tok);
      doc_of.push_back(d);
      off_of.push_back(static_cast<std::int64_t>(i));
    }
    res.tokens_in += static_cast<std::int64_t>(docs[d].size());
    seq.push_back(-static_cast<std::int64_t>(d) - 1);
    doc_of.push_back(d);
    off_of.push_back(-1);
  }

  const std::int64_t n = static_cast<std::int64_t>(seq.size());
  std::vector<char> dup(static_cast<std::size_t>(n), 0);
  if (n > 0) {
    const std::vector<std::int64_t> sa = suffix_array(seq);
    const std::vector<std::int64_t> lcp = lcp_array(seq, sa);

    // Maximal runs of suffixes that pairwise share >= min_len: every suffix
    // except the earliest corpus position starts a duplicated window.
    std::int64_t run_start = 0;
    auto close_run = [&](std::int64_t run_end) {  // [run_start, run_end) inclusive range of sa
      if (run_end - run_start < 1) return;
      std::int64_t first_pos = sa[static_cast<std::size_t>(run_start)];
      for (std::int64_t i = run_start + 1; i <= run_end; ++i) {
        first_pos = std::min(first_pos, sa[static_cast<std::size_t>(i)]);
      }
      for (std::int64_t i = run_start; i <= run_end; ++i) {
        const std::int64_t pos = sa[static_cast<std::size_t>(i)];
        if (pos == first_pos) continue;
        for (std::int64_t k = 0; k < min_len; ++k) {
          dup[static_cast<std::size_t>(pos + k)] = 1;
        }
      }
    };
    for (std::int64_t i = 1; i <= n; ++i) {
      const bool joined = i < n && lcp[static_cast<std::size_t>(i)] >= min_len;
      if (!joined) {
        close_run(i - 1);
        run_start = i;
      }
    }
  }

  for (std::size_t d = 0; d < docs.size(); ++d) res.docs.emplace_back();
  for (std::int64_t p = 0; p < n; ++p) {
    if (off_of[static_cast<std::size_t>(p)] < 0) continue;  // separator
    if (dup[static_cast<std::size_t>(p)]) {
      ++res.tokens_removed;
    } else {
      res.docs[doc_of[static_cast<std::size_t>(p)]].push_back(seq[static_cast<std::size_t>(p)]);
    }
  }
  return res;
}

}  // namespace desklm
