// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats: line-delimited JSON records for documents and
// conversation trees, and binary token shards ("DLMPACK1": magic, JSON
// manifest, little-endian payloads) for packed samples.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "desklm/conversation.hpp"
#include "desklm/packing.hpp"
#include "desklm/tokenizer.hpp"

namespace desklm {

struct RawRecord {
  std::string id;
  std::string lang;
  std::string text;
};

// Each line is {"id": ..., "lang": ..., "text": ...}.
std::vector<RawRecord> read_jsonl_docs(const std::string& path);
void write_jsonl_docs(const std::string& path, const std::vector<RawRecord>& records);

// Each line is {"id": ..., "tree": {"nodes": [{"id", "role", "parent",
// "text"}...]}}; node text is tokenized on load.
std::vector<ConversationTree> read_jsonl_trees(const std::string& path, const Tokenizer& tok);

void write_pack_shard(const std::string& path, const std::vector<PackedSample>& packs,
                      std::int64_t context_len);
std::vector<PackedSample> read_pack_shard(const std::string& path,
                                          std::int64_t* context_len_out = nullptr);

}  // namespace desklm
