// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Document quality filtering. Word statistics operate on whitespace-split
// words; character counts are UTF-8 code points. Per-language thresholds and
// line-wise boilerplate patterns live in data files (data/filters/*.json),
// not in code. The line-pattern sets are an illustrative starter inventory;
// removal rates are reported, never asserted against fixed values.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace desklm {

struct FilterDecision {
  bool pass = true;
  std::string reason;  // empty on pass; names the failing rule otherwise

  static FilterDecision ok() { return {}; }
  static FilterDecision reject(std::string why) { return {false, std::move(why)}; }
};

struct LanguageRuleSet {
  std::string language;
  double char_per_word_min = 0.0;
  double char_per_word_max = 0.0;
  std::int64_t min_stop_word_count = 2;
  std::vector<std::string> stop_words;
  std::vector<std::string> line_patterns;   // regex, matched case-insensitively
  double min_remaining_ratio = 0.3;         // drop doc when less text survives

  void validate() const;
};

// Word-level heuristics: mean characters per word within [min, max] and at
// least min_stop_word_count stop-word occurrences.
FilterDecision heuristic_filter(const std::string& text, const LanguageRuleSet& rules);

struct LineFilterResult {
  std::string text;              // surviving lines, original order
  std::int64_t lines_total = 0;
  std::int64_t lines_removed = 0;
  bool dropped = false;          // too little text survived
};

LineFilterResult line_quality_filter(const std::string& text, const LanguageRuleSet& rules);

struct CodeFilterConfig {
  double min_nl_score = 0.15;       // inclusive: exactly 0.15 passes
  std::int64_t min_words = 50;      // inclusive
  double min_alnum_ratio = 0.1;     // inclusive
  double max_avg_word_len = 100.0;  // inclusive
  std::vector<std::string> languages;  // the 43-entry registry by default

  static CodeFilterConfig defaults();
};

// Conjunctive gates: registry membership, natural-language score, word count,
// alphanumeric ratio, average word length.
FilterDecision code_filter(const std::string& text, const std::string& prog_lang,
                           double nl_score, const CodeFilterConfig& cfg);

// Natural-language score behind an interface; the shipped stub is a
// deterministic letter-word fraction, good enough to exercise the gates.
class LanguageScorer {
 public:
  virtual ~LanguageScorer() = default;
  virtual double nl_score(const std::string& text) const = 0;
};

class StubLanguageScorer final : public LanguageScorer {
 public:
  double nl_score(const std::string& text) const override;
};

// Rule-file loading. `load_rule_dir` reads every *.json in a directory and
// keys the result by language code; `rules_for` resolves aliases (cz -> cs).
LanguageRuleSet load_rule_file(const std::string& path);
std::map<std::string, LanguageRuleSet> load_rule_dir(const std::string& dir);
const LanguageRuleSet& rules_for(const std::map<std::string, LanguageRuleSet>& rules,
                                 const std::string& lang);

// Text helpers shared by the filters (whitespace words, UTF-8 length).
std::vector<std::string> split_words(const std::string& text);
std::int64_t utf8_len(const std::string& s);

}  // namespace desklm
