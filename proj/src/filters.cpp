// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0

#include "desklm/filters.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "desklm/common.hpp"

namespace desklm {

namespace {

// Lowercase ASCII letters only; multi-byte sequences are left untouched.
std::string ascii_lower(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// Strip ASCII punctuation off both ends so "de," still counts as "de".
std::string strip_punct(const std::string& s) {
  std::size_t b = 0, e = s.size();
  auto is_punct = [](unsigned char c) { return c < 0x80 && std::ispunct(c); };
  while (b < e && is_punct(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_punct(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::int64_t utf8_len(const std::string& s) {
  std::int64_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;  // count everything but continuation bytes
  }
  return n;
}

void LanguageRuleSet::validate() const {
  if (language.empty()) throw ValidationError("rules: missing language code");
  if (!(char_per_word_min < char_per_word_max)) {
    throw ValidationError("rules[" + language + "]: need char_per_word_min < max, got " +
                          std::to_string(char_per_word_min) + " vs " +
                          std::to_string(char_per_word_max));
  }
  if (stop_words.empty()) throw ValidationError("rules[" + language + "]: empty stop word list");
  if (min_stop_word_count < 1) {
    throw ValidationError("rules[" + language + "]: min_stop_word_count must be >= 1");
  }
  if (min_remaining_ratio < 0.0 || min_remaining_ratio > 1.0) {
    throw ValidationError("rules[" + language + "]: min_remaining_ratio must be in [0,1]");
  }
  for (const std::string& p : line_patterns) {
    try {
      std::regex re(p, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw ValidationError("rules[" + language + "]: bad pattern '" + p + "': " + e.what());
    }
  }
}

FilterDecision heuristic_filter(const std::string& text, const LanguageRuleSet& rules) {
  const std::vector<std::string> words = split_words(text);
  if (words.empty()) return FilterDecision::reject("word-length: no words");
  std::int64_t chars = 0;
  for (const auto& w : words) chars += utf8_len(w);
  const double mean = static_cast<double>(chars) / static_cast<double>(words.size());
  if (mean < rules.char_per_word_min || mean > rules.char_per_word_max) {
    std::ostringstream os;
    os << "word-length: mean " << mean << " outside [" << rules.char_per_word_min << ", "
       << rules.char_per_word_max << "]";
    return FilterDecision::reject(os.str());
  }
  std::int64_t hits = 0;
  for (const auto& w : words) {
    const std::string bare = ascii_lower(strip_punct(w));
    for (const auto& sw : rules.stop_words) {
      if (bare == sw) {
        ++hits;
        break;
      }
    }
  }
  if (hits < rules.min_stop_word_count) {
    return FilterDecision::reject("stop-words: found " + std::to_string(hits) + ", need " +
                                  std::to_string(rules.min_stop_word_count));
  }
  return FilterDecision::ok();
}

LineFilterResult line_quality_filter(const std::string& text, const LanguageRuleSet& rules) {
  LineFilterResult res;
  if (rules.line_patterns.empty()) {
    res.text = text;
    std::int64_t lines = text.empty() ? 0 : 1;
    for (char c : text) {
      if (c == '\n') ++lines;
    }
    res.lines_total = lines;
    return res;
  }
  std::vector<std::regex> regs;
  regs.reserve(rules.line_patterns.size());
  for (const auto& p : rules.line_patterns) {
    regs.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
  }
  std::istringstream in(text);
  std::string line;
  std::string kept;
  std::int64_t kept_chars = 0, total_chars = 0;
  while (std::getline(in, line)) {
    ++res.lines_total;
    total_chars += utf8_len(line);
    bool matched = false;
    for (const auto& re : regs) {
      if (std::regex_search(line, re)) {
        matched = true;
        break;
      }
    }
    if (matched) {
      ++res.lines_removed;
    } else {
      if (!kept.empty()) kept.push_back('\n');
      kept += line;
      kept_chars += utf8_len(line);
    }
  }
  res.text = std::move(kept);
  if (res.lines_total > 0) {
    const double ratio = total_chars == 0
                             ? 0.0
                             : static_cast<double>(kept_chars) / static_cast<double>(total_chars);
    res.dropped = ratio < rules.min_remaining_ratio;
  }
  return res;
}

CodeFilterConfig CodeFilterConfig::defaults() {
  CodeFilterConfig cfg;
  cfg.languages = {
      "Assembly",   "Batchfile",  "C",           "CMake",       "C++",
      "C#",         "CSS",        "Dart",        "Dockerfile",  "Fortran",
      "Go",         "Haskell",    "HTML",        "Java",        "JavaScript",
      "Julia",      "Kotlin",     "Labview",     "Lua",         "Makefile",
      "Maple",      "Markdown",   "Mathematica", "Matlab",      "Nix",
      "Objective-C++", "Octave",  "Perl",        "PHP",         "Powershell",
      "Python",     "R",          "Ruby",        "Rust",        "SAS",
      "Scala",      "Scilab",     "Shell",       "SQL",         "Swift",
      "TeX",        "TypeScript", "Visual Basic"};
  return cfg;
}

FilterDecision code_filter(const std::string& text, const std::string& prog_lang,
                           double nl_score, const CodeFilterConfig& cfg) {
  const std::string want = ascii_lower(prog_lang);
  bool known = false;
  for (const auto& l : cfg.languages) {
    if (ascii_lower(l) == want) {
      known = true;
      break;
    }
  }
  if (!known) return FilterDecision::reject("language: '" + prog_lang + "' not in registry");
  if (nl_score < cfg.min_nl_score) {
    std::ostringstream os;
    os << "score: " << nl_score << " below " << cfg.min_nl_score;
    return FilterDecision::reject(os.str());
  }
  const std::vector<std::string> words = split_words(text);
  if (static_cast<std::int64_t>(words.size()) < cfg.min_words) {
    return FilterDecision::reject("word-count: " + std::to_string(words.size()) + " below " +
                                  std::to_string(cfg.min_words));
  }
  std::int64_t alnum = 0, total = 0;
  for (unsigned char c : text) {
    if ((c & 0xC0) == 0x80) continue;  // continuation bytes are not characters
    ++total;
    if (is_word_char(c)) ++alnum;
  }
  const double ratio = total == 0 ? 0.0 : static_cast<double>(alnum) / static_cast<double>(total);
  if (ratio < cfg.min_alnum_ratio) {
    std::ostringstream os;
    os << "alnum-ratio: " << ratio << " below " << cfg.min_alnum_ratio;
    return FilterDecision::reject(os.str());
  }
  std::int64_t chars = 0;
  for (const auto& w : words) chars += utf8_len(w);
  const double avg = static_cast<double>(chars) / static_cast<double>(words.size());
  if (avg > cfg.max_avg_word_len) {
    std::ostringstream os;
    os << "avg-word-length: " << avg << " above " << cfg.max_avg_word_len;
    return FilterDecision::reject(os.str());
  }
  return FilterDecision::ok();
}

double StubLanguageScorer::nl_score(const std::string& text) const {
  const std::vector<std::string> words = split_words(text);
  if (words.empty()) return 0.0;
  std::int64_t lettery = 0;
  for (const auto& w : words) {
    const std::string bare = strip_punct(w);
    if (bare.empty()) continue;
    bool ok = true;
    for (unsigned char c : bare) {
      if (c < 0x80 && !std::isalpha(c)) {
        ok = false;
        break;
      }
    }
    if (ok) ++lettery;
  }
  return static_cast<double>(lettery) / static_cast<double>(words.size());
}

LanguageRuleSet load_rule_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("rules: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("rules: cannot parse " + path + ": " + e.what());
  }
  LanguageRuleSet r;
  try {
    r.language = j.at("language").get<std::string>();
    r.char_per_word_min = j.at("char_per_word_min").get<double>();
    r.char_per_word_max = j.at("char_per_word_max").get<double>();
    r.stop_words = j.at("stop_words").get<std::vector<std::string>>();
    r.min_stop_word_count = j.value("min_stop_word_count", std::int64_t{2});
    r.line_patterns = j.value("line_patterns", std::vector<std::string>{});
    r.min_remaining_ratio = j.value("min_remaining_ratio", 0.3);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("rules: bad schema in " + path + ": " + e.what());
  }
  r.validate();
  return r;
}

std::map<std::string, LanguageRuleSet> load_rule_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("rules: not a directory: " + dir);
  std::map<std::string, LanguageRuleSet> out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    LanguageRuleSet r = load_rule_file(f.string());
    out[r.language] = std::move(r);
  }
  return out;
}

const LanguageRuleSet& rules_for(const std::map<std::string, LanguageRuleSet>& rules,
                                 const std::string& lang) {
  std::string key = ascii_lower(lang);
  if (key == "cz") key = "cs";  // alias
  auto it = rules.find(key);
  if (it == rules.end()) {
    throw ValidationError("rules: no rule set for language '" + lang + "'");
  }
  return it->second;
}

}  // namespace desklm
