// Copyright 2026 The morphseg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "morphseg/corpus.hpp"

namespace morphseg::eval {

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  double Precision() const;
  double Recall() const;
  double F1() const;
};

// Multiset overlap of morphemes.
Counts WordPrf(const corpus::SegmentedWord& gold, const corpus::SegmentedWord& pred);

struct WordAlignment {
  std::vector<std::pair<std::size_t, std::size_t>> matched;  // (gold, pred)
  std::vector<std::size_t> unmatched_gold;
  std::vector<std::size_t> unmatched_pred;
};

// Positional when counts agree; otherwise minimum word-level edit distance
// over surfaces (substitution and indel cost 1, equal surfaces cost 0).
WordAlignment AlignWords(std::span<const corpus::SegmentedWord> gold,
                         std::span<const corpus::SegmentedWord> pred);

// Unit-cost edit distance over Unicode scalar values.
std::size_t Levenshtein(std::string_view a, std::string_view b);
std::size_t Levenshtein(std::u32string_view a, std::u32string_view b);

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;                 // micro morpheme F1, primary
  double macro_sentence_f1 = 0.0;  // mean of per-sentence F1
  double sentence_accuracy = 0.0;  // every word correct
  double word_accuracy = 0.0;
  double mean_levenshtein = 0.0;
  std::size_t sentences = 0;
  std::size_t words = 0;  // gold words
  std::size_t correct_words = 0;
  std::size_t gold_morphemes = 0;
  std::size_t predicted_morphemes = 0;
  Counts totals;

  // key=value lines; F1-style scores on a 0-100 scale.
  std::string ToText() const;
  // One-line JSON record.
  std::string ToJson() const;
};

// Per-sentence scoring result, exposed for diagnostics and tests.
struct SentenceScore {
  Counts counts;
  bool exact = false;
  std::size_t correct_words = 0;
  std::size_t levenshtein = 0;
};

// `gold` must be well formed; `pred` is parsed leniently.
SentenceScore ScoreSentence(std::string_view gold, std::string_view pred);

// Gold and predictions are order-aligned segmented sentences.
EvalReport CorpusMetrics(std::span<const std::string> gold, std::span<const std::string> pred);

}  // namespace morphseg::eval
