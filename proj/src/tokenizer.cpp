// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0

#include "desklm/tokenizer.hpp"

#include "desklm/common.hpp"

namespace desklm {

std::vector<std::int64_t> ByteTokenizer::encode(const std::string& text) const {
  std::vector<std::int64_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<std::int64_t>(c));
  return ids;
}

std::string ByteTokenizer::decode(const std::vector<std::int64_t>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (std::int64_t id : ids) {
    if (id == kPad || id == kEod) continue;
    if (id < 0 || id > 255) {
      throw ValidationError("decode: id " + std::to_string(id) + " is not a byte token");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

std::unique_ptr<Tokenizer> make_byte_tokenizer() { return std::make_unique<ByteTokenizer>(); }

}  // namespace desklm
