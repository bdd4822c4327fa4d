// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Tokenization sits behind a small interface so the pipeline code never
// assumes a particular vocabulary. The shipped implementation is a reversible
// byte-level tokenizer: ids 0..255 are raw bytes, followed by a pad and an
// end-of-document marker.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace desklm {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<std::int64_t> encode(const std::string& text) const = 0;
  virtual std::string decode(const std::vector<std::int64_t>& ids) const = 0;
  virtual std::int64_t vocab_size() const = 0;
  virtual std::int64_t pad_id() const = 0;
  virtual std::int64_t eod_id() const = 0;
};

class ByteTokenizer final : public Tokenizer {
 public:
  static constexpr std::int64_t kPad = 256;
  static constexpr std::int64_t kEod = 257;

  std::vector<std::int64_t> encode(const std::string& text) const override;
  std::string decode(const std::vector<std::int64_t>& ids) const override;
  std::int64_t vocab_size() const override { return 258; }
  std::int64_t pad_id() const override { return kPad; }
  std::int64_t eod_id() const override { return kEod; }
};

std::unique_ptr<Tokenizer> make_byte_tokenizer();

}  // namespace desklm
