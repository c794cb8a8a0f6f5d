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
#include <cstdint>
#include <string>
#include <vector>

#include "morphseg/corpus.hpp"

// Generator for a small agglutinative toy language with context-dependent
// segmentation: a few surface forms are either an unanalyzable root or a
// stem plus suffix, and the word before them decides which.
namespace morphseg::synth {

struct SynthConfig {
  std::size_t roots = 30;
  std::size_t suffixes = 8;
  std::size_t ambiguous = 3;
  std::size_t train = 300;
  std::size_t dev = 50;
  std::size_t test = 50;
  std::size_t words = 200;  // word-level list, ambiguous forms excluded
  std::size_t min_words = 3;
  std::size_t max_words = 7;
  std::uint64_t seed = 1;
  std::string language = "syn";
};

struct AmbiguousForm {
  std::string surface;
  std::string stem;    // regular root
  std::string suffix;  // stem + suffix == surface
  std::string whole_context;  // precedes the unanalyzed reading
  std::string split_context;  // precedes the stem + suffix reading
};

struct Lexicon {
  std::vector<std::string> roots;
  std::vector<std::string> suffixes;  // in slot order
  std::vector<AmbiguousForm> forms;
};

struct AmbiguousOccurrence {
  std::size_t sentence = 0;
  std::size_t word = 0;  // index of the ambiguous word
  std::size_t form = 0;
  bool split = false;
};

struct SynthCorpus {
  Lexicon lexicon;
  corpus::Dataset train, dev, test, words;
  std::vector<AmbiguousOccurrence> test_occurrences;
};

// Deterministic in the config. Every sentence holds exactly one ambiguous
// form preceded by one of its context words, with the reading balanced per
// split; no regular word shares a surface with an ambiguous form or with a
// differently segmented regular word.
SynthCorpus Generate(const SynthConfig& config);

}  // namespace morphseg::synth
