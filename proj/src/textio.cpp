// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0

#include "desklm/textio.hpp"

#include <fstream>

#include <json.hpp>

#include "desklm/common.hpp"

namespace desklm {

namespace {

using nlohmann::json;

json parse_line(const std::string& line, const std::string& path, std::size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw IoError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
  }
}

template <typename T>
void write_le(std::ofstream& out, T v) {
  // Little-endian byte order regardless of host.
  unsigned char buf[sizeof(T)];
  std::uint64_t u = static_cast<std::uint64_t>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw IoError(path + ": truncated payload");
  }
  std::uint64_t u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(u);
}

constexpr char kPackMagic[9] = "DLMPACK1";

}  // namespace

std::vector<RawRecord> read_jsonl_docs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<RawRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    RawRecord r;
    try {
      r.id = j.at("id").is_string() ? j.at("id").get<std::string>()
                                    : std::to_string(j.at("id").get<std::int64_t>());
      r.lang = j.value("lang", std::string{});
      r.text = j.at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": bad record: " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_jsonl_docs(const std::string& path, const std::vector<RawRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["lang"] = r.lang;
    j["text"] = r.text;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("short write to " + path);
}

std::vector<ConversationTree> read_jsonl_trees(const std::string& path, const Tokenizer& tok) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ConversationTree> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    ConversationTree tree;
    try {
      for (const json& jn : j.at("tree").at("nodes")) {
        ConvNode n;
        n.id = jn.at("id").get<std::int64_t>();
        n.role = jn.value("role", std::string{});
        n.parent = jn.value("parent", std::int64_t{-1});
        n.tokens = tok.encode(jn.at("text").get<std::string>());
        tree.nodes.push_back(std::move(n));
      }
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": bad tree: " + e.what());
    }
    tree.validate();
    out.push_back(std::move(tree));
  }
  return out;
}

void write_pack_shard(const std::string& path, const std::vector<PackedSample>& packs,
                      std::int64_t context_len) {
  for (const auto& p : packs) {
    if (static_cast<std::int64_t>(p.tokens.size()) != context_len ||
        p.segments.size() != p.tokens.size() || p.loss_mask.size() != p.tokens.size()) {
      throw ValidationError("pack shard: sample does not match context length " +
                            std::to_string(context_len));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kPackMagic, 8);
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["context_len"] = context_len;
  manifest["n_samples"] = packs.size();
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& p : packs) sources.push_back(p.sources);
  manifest["sources"] = std::move(sources);
  const std::string mtxt = manifest.dump();
  write_le<std::uint64_t>(out, mtxt.size());
  out.write(mtxt.data(), static_cast<std::streamsize>(mtxt.size()));
  for (const auto& p : packs) {
    for (std::int64_t t : p.tokens) write_le<std::int64_t>(out, t);
    for (std::int64_t s : p.segments) write_le<std::int64_t>(out, s);
    for (double m : p.loss_mask) {
      out.put(m == 0.0 ? '\0' : '\1');
    }
  }
  if (!out) throw IoError("short write to " + path);
}

std::vector<PackedSample> read_pack_shard(const std::string& path,
                                          std::int64_t* context_len_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::string(magic, 8) != std::string(kPackMagic, 8)) {
    throw IoError(path + ": not a pack shard (bad magic)");
  }
  const std::uint64_t mlen = read_le<std::uint64_t>(in, path);
  std::string mtxt(mlen, '\0');
  if (!in.read(mtxt.data(), static_cast<std::streamsize>(mlen))) {
    throw IoError(path + ": truncated manifest");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mtxt);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad manifest: " + e.what());
  }
  const std::int64_t context_len = manifest.at("context_len").get<std::int64_t>();
  const std::size_t n_samples = manifest.at("n_samples").get<std::size_t>();
  if (context_len_out != nullptr) *context_len_out = context_len;
  std::vector<PackedSample> packs(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    PackedSample& p = packs[i];
    p.tokens.resize(static_cast<std::size_t>(context_len));
    p.segments.resize(static_cast<std::size_t>(context_len));
    p.loss_mask.resize(static_cast<std::size_t>(context_len));
    for (auto& t : p.tokens) t = read_le<std::int64_t>(in, path);
    for (auto& s : p.segments) s = read_le<std::int64_t>(in, path);
    for (auto& m : p.loss_mask) {
      const int c = in.get();
      if (c == EOF) throw IoError(path + ": truncated mask");
      m = (c == 0 ? 0.0 : 1.0);
    }
    p.sources = manifest.at("sources").at(i).get<std::vector<std::string>>();
  }
  return packs;
}

}  // namespace desklm
