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

#include "morphseg/corpus.hpp"

#include <fstream>
#include <sstream>

#include "morphseg/errors.hpp"
#include "morphseg/utf8.hpp"

namespace morphseg::corpus {

namespace {

// 1-based code point column of `token` within `text`.
std::size_t ColumnOf(std::string_view text, std::string_view token) {
  const auto offset = static_cast<std::size_t>(token.data() - text.data());
  std::size_t column = 1;
  for (std::size_t i = 0; i < offset; ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) ++column;
  }
  return column;
}

// Splits on inline markers; pieces may be empty.
std::vector<std::string_view> SplitMarkers(std::string_view token) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = token.find(kMarker, start);
    if (pos == std::string_view::npos) {
      out.push_back(token.substr(start));
      return out;
    }
    out.push_back(token.substr(start, pos - start));
    start = pos + kMarker.size();
  }
}

std::vector<SegmentedWord> Parse(std::string_view target, std::size_t line, bool lenient) {
  std::vector<SegmentedWord> words;
  for (std::string_view token : utf8::SplitWhitespace(target)) {
    const bool continuation = token.substr(0, kMarker.size()) == kMarker;
    if (continuation) token.remove_prefix(kMarker.size());
    std::vector<std::string_view> pieces = SplitMarkers(token);

    if (continuation && words.empty()) {
      if (!lenient) {
        throw FormatError("segmentation marker with no preceding word", line,
                          ColumnOf(target, token) - kMarker.size());
      }
    }
    SegmentedWord* current = nullptr;
    if (continuation && !words.empty()) {
      current = &words.back();
    } else {
      words.emplace_back();
      current = &words.back();
    }
    for (std::string_view piece : pieces) {
      if (piece.empty()) {
        if (lenient) continue;
        throw FormatError("empty morpheme", line, ColumnOf(target, token));
      }
      current->morphemes.emplace_back(piece);
    }
    if (current->morphemes.empty()) words.pop_back();
  }
  return words;
}

std::string StripCarriageReturn(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

template <class LineFn>
Dataset LoadTsv(const std::filesystem::path& path, const LoadOptions& options,
                LoadStats* stats, const std::string& provenance, LineFn&& parse_line) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string(), 0, "cannot open file");
  Dataset dataset;
  dataset.provenance = provenance;
  LoadStats local;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = StripCarriageReturn(std::move(raw));
    if (utf8::SplitWhitespace(line).empty()) continue;
    ++local.lines;
    try {
      dataset.pairs.push_back(parse_line(line, line_no));
    } catch (const std::exception& e) {
      if (!options.lenient) throw LoadError(path.string(), line_no, e.what());
      ++local.skipped;
    }
  }
  if (stats != nullptr) *stats = local;
  return dataset;
}

}  // namespace

std::string SegmentedWord::Surface() const {
  std::string out;
  for (const auto& m : morphemes) out += m;
  return out;
}

std::vector<SegmentedWord> ParseSegmentation(std::string_view target, std::size_t line) {
  return Parse(target, line, /*lenient=*/false);
}

std::vector<SegmentedWord> ParseSegmentationLenient(std::string_view target) {
  return Parse(target, 0, /*lenient=*/true);
}

std::string RenderSegmentation(std::span<const SegmentedWord> words, MarkerStyle style) {
  const std::string joiner =
      style == MarkerStyle::kSentence ? " " + std::string(kMarker) : std::string(kMarker);
  std::string out;
  for (const auto& word : words) {
    if (!out.empty()) out.push_back(' ');
    for (std::size_t i = 0; i < word.morphemes.size(); ++i) {
      if (i > 0) out += joiner;
      out += word.morphemes[i];
    }
  }
  return out;
}

MarkerStyle DetectStyle(std::string_view target) {
  for (std::string_view token : utf8::SplitWhitespace(target)) {
    if (token.find(kMarker, 1) != std::string_view::npos) return MarkerStyle::kWord;
  }
  return MarkerStyle::kSentence;
}

std::string SurfaceOf(std::span<const SegmentedWord> words) {
  std::string out;
  for (const auto& word : words) {
    if (!out.empty()) out.push_back(' ');
    out += word.Surface();
  }
  return out;
}

SentencePair MakePair(std::string_view source, std::string_view target,
                      std::string_view language, std::size_t line, bool check_surface) {
  if (source.find(kMarker) != std::string_view::npos) {
    throw FormatError("source contains a segmentation marker", line, 0);
  }
  const auto words = ParseSegmentation(target, line);
  if (check_surface && SurfaceOf(words) != source) {
    throw FormatError("segmentation surface '" + SurfaceOf(words) +
                          "' does not match source '" + std::string(source) + "'",
                      line, 0);
  }
  return SentencePair{std::string(source), RenderSegmentation(words, MarkerStyle::kSentence),
                      std::string(language)};
}

Dataset LoadSentenceDataset(const std::filesystem::path& path, std::string_view language,
                            const LoadOptions& options, LoadStats* stats) {
  return LoadTsv(path, options, stats, "sentence",
                 [&](const std::string& line, std::size_t line_no) {
                   const auto fields = utf8::Split(line, '\t');
                   if (fields.size() != 2) {
                     throw FormatError("expected 2 tab-separated columns, found " +
                                           std::to_string(fields.size()),
                                       line_no, 0);
                   }
                   return MakePair(fields[0], fields[1], language, line_no);
                 });
}

Dataset LoadWordDataset(const std::filesystem::path& path, std::string_view language,
                        const LoadOptions& options, LoadStats* stats) {
  return LoadTsv(path, options, stats, "word",
                 [&](const std::string& line, std::size_t line_no) {
                   const auto fields = utf8::Split(line, '\t');
                   if (fields.size() != 2 && fields.size() != 3) {
                     throw FormatError("expected 2 or 3 tab-separated columns, found " +
                                           std::to_string(fields.size()),
                                       line_no, 0);
                   }
                   if (utf8::SplitWhitespace(fields[0]).size() != 1) {
                     throw FormatError("word column must hold exactly one word", line_no, 0);
                   }
                   return MakePair(fields[0], fields[1], language, line_no,
                                   /*check_surface=*/false);
                 });
}

void WriteDataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError(path.string(), 0, "cannot open file for writing");
  for (const auto& pair : dataset.pairs) out << pair.source << '\t' << pair.target << '\n';
  if (!out) throw LoadError(path.string(), 0, "write failed");
}

Dataset Upsample(const Dataset& dataset, std::size_t factor) {
  if (factor == 0) throw ArgumentError("upsample factor must be >= 1");
  Dataset out;
  out.provenance = factor == 1 ? dataset.provenance
                               : dataset.provenance + "+upsampled x" + std::to_string(factor);
  out.pairs.reserve(dataset.size() * factor);
  for (std::size_t k = 0; k < factor; ++k) {
    out.pairs.insert(out.pairs.end(), dataset.pairs.begin(), dataset.pairs.end());
  }
  return out;
}

namespace {
// Single language shared by every pair, or empty if mixed/none.
std::string CommonLanguage(const Dataset& d) {
  if (d.empty()) return {};
  const std::string& first = d.pairs.front().language;
  for (const auto& p : d.pairs) {
    if (p.language != first) return {};
  }
  return first;
}
}  // namespace

Dataset AugmentWithWords(const Dataset& sentences, const Dataset& words, bool multilingual) {
  if (!multilingual && !sentences.empty() && !words.empty()) {
    const std::string a = CommonLanguage(sentences);
    const std::string b = CommonLanguage(words);
    if (a.empty() || a != b) {
      throw ArgumentError("language mismatch between sentence set ('" + a +
                          "') and word set ('" + b + "')");
    }
  }
  Dataset out;
  out.provenance = words.empty() ? sentences.provenance : sentences.provenance + "+words";
  out.pairs.reserve(sentences.size() + words.size());
  out.pairs = sentences.pairs;
  out.pairs.insert(out.pairs.end(), words.pairs.begin(), words.pairs.end());
  return out;
}

std::string LanguageToken(std::string_view language) {
  return "<" + std::string(language) + ">";
}

Dataset ConcatMultilingual(std::span<const Dataset> parts, const ConcatOptions& options) {
  if (parts.empty()) throw ArgumentError("concatenation needs at least one dataset");
  if (parts.size() == 1 && !options.language_token) return parts.front();
  Dataset out;
  std::size_t total = 0;
  for (const auto& part : parts) total += part.size();
  out.pairs.reserve(total);
  for (const auto& part : parts) {
    if (!out.provenance.empty()) out.provenance += "|";
    out.provenance += part.provenance;
    for (const auto& pair : part.pairs) {
      SentencePair copy = pair;
      if (options.language_token) copy.source = LanguageToken(pair.language) + " " + pair.source;
      out.pairs.push_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace morphseg::corpus
