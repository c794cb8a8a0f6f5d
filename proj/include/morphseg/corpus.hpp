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
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace morphseg::corpus {

inline constexpr std::string_view kMarker = "@@";

// One word broken into its morphemes, in surface order.
struct SegmentedWord {
  std::vector<std::string> morphemes;

  std::string Surface() const;
  bool operator==(const SegmentedWord&) const = default;
};

enum class MarkerStyle {
  kSentence,  // "Гэр @@т": continuation morphemes are space-prefixed
  kWord,      // "poke@@er@@s": markers inline
};

// Parses either marker style (or a mix). `line` is only used in error
// messages. Throws FormatError on a leading marker or an empty morpheme.
std::vector<SegmentedWord> ParseSegmentation(std::string_view target,
                                             std::size_t line = 0);

// Best-effort parse for model output: drops empty morphemes and a marker
// with nothing before it instead of throwing.
std::vector<SegmentedWord> ParseSegmentationLenient(std::string_view target);

std::string RenderSegmentation(std::span<const SegmentedWord> words, MarkerStyle style);

// Style of already well-formed text: kWord if any token carries an inline marker.
MarkerStyle DetectStyle(std::string_view target);

// Surface sentence: morphemes of each word glued back, words joined by a space.
std::string SurfaceOf(std::span<const SegmentedWord> words);

struct SentencePair {
  std::string source;
  std::string target;  // sentence-style markers
  std::string language;

  bool operator==(const SentencePair&) const = default;
};

struct Dataset {
  std::vector<SentencePair> pairs;
  std::string provenance;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct LoadOptions {
  bool lenient = false;  // skip bad lines instead of failing
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t skipped = 0;
};

// Two tab-separated columns: raw sentence, segmented sentence.
Dataset LoadSentenceDataset(const std::filesystem::path& path, std::string_view language,
                            const LoadOptions& options = {}, LoadStats* stats = nullptr);

// Columns: word, word-style segmentation, optional category (ignored).
// Each word becomes a single-word pair with a sentence-style target.
Dataset LoadWordDataset(const std::filesystem::path& path, std::string_view language,
                        const LoadOptions& options = {}, LoadStats* stats = nullptr);

// Writes `source<TAB>target` lines.
void WriteDataset(const std::filesystem::path& path, const Dataset& dataset);

// Validates a pair and canonicalizes its target to sentence style.
// Throws FormatError on bad markup, or on a surface mismatch when
// `check_surface` is set. Word lists use canonical segmentations
// ("pokers" -> "poke @@er @@s"), so their loader skips that check.
SentencePair MakePair(std::string_view source, std::string_view target,
                      std::string_view language, std::size_t line = 0,
                      bool check_surface = true);

// `factor` consecutive passes over the input, in input order.
Dataset Upsample(const Dataset& dataset, std::size_t factor);

// Sentences first, then words. Languages must agree unless `multilingual`.
Dataset AugmentWithWords(const Dataset& sentences, const Dataset& words,
                         bool multilingual = false);

struct ConcatOptions {
  // Prepend "<lang> " to every source. Off by default; the reference setup
  // concatenates without any language identifier.
  bool language_token = false;
};

Dataset ConcatMultilingual(std::span<const Dataset> parts, const ConcatOptions& options = {});

std::string LanguageToken(std::string_view language);

}  // namespace morphseg::corpus
