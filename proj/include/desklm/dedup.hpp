// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Exact-substring deduplication over a small corpus, built on a suffix array
// with Kasai LCPs. Any token span of at least min_len that already occurred
// earlier in the corpus (earlier document, or earlier in the same document)
// is removed; the first occurrence is kept verbatim.

#pragma once

#include <cstdint>
#include <vector>

namespace desklm {

struct DedupResult {
  std::vector<std::vector<std::int64_t>> docs;
  std::int64_t tokens_in = 0;
  std::int64_t tokens_removed = 0;
};

DedupResult dedup_exact_substrings(const std::vector<std::vector<std::int64_t>>& docs,
                                   std::int64_t min_len);

// Building blocks, exposed for testing.
std::vector<std::int64_t> suffix_array(const std::vector<std::int64_t>& seq);
std::vector<std::int64_t> lcp_array(const std::vector<std::int64_t>& seq,
                                    const std::vector<std::int64_t>& sa);

}  // namespace desklm
