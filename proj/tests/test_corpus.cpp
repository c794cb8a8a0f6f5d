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

#include <algorithm>
#include <random>

#include "doctest.h"
#include "morphseg/corpus.hpp"
#include "morphseg/errors.hpp"
#include "morphseg/utf8.hpp"
#include "test_util.hpp"

using namespace morphseg;
using namespace morphseg::corpus;
using morphseg::testing::TempDir;
using morphseg::testing::WriteText;

namespace {

using Words = std::vector<std::vector<std::string>>;

Words Morphemes(const std::vector<SegmentedWord>& words) {
  Words out;
  for (const auto& w : words) out.push_back(w.morphemes);
  return out;
}

std::vector<SegmentedWord> RandomWords(Rng& rng) {
  static const std::vector<std::string> alphabet = {"a", "b", "k", "э", "м", "ü", "z", "."};
  std::vector<SegmentedWord> words(1 + rng.Below(5));
  for (auto& w : words) {
    w.morphemes.resize(1 + rng.Below(4));
    for (auto& m : w.morphemes) {
      const std::size_t len = 1 + rng.Below(4);
      for (std::size_t i = 0; i < len; ++i) m += alphabet[rng.Below(alphabet.size())];
    }
  }
  return words;
}

Dataset Sized(std::size_t n, const std::string& lang) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string w = "w" + std::to_string(i);
    d.pairs.push_back(MakePair(w, "w @@" + std::to_string(i), lang));
  }
  return d;
}

}  // namespace

TEST_CASE("parse both marker styles") {
  CHECK(Morphemes(ParseSegmentation("Гэр @@т эмээ")) == Words{{"Гэр", "т"}, {"эмээ"}});
  CHECK(Morphemes(ParseSegmentation("poke@@er@@s")) == Words{{"poke", "er", "s"}});
  CHECK(Morphemes(ParseSegmentation("hello")) == Words{{"hello"}});
  CHECK(Morphemes(ParseSegmentation("хийх @@в.")) == Words{{"хийх", "в."}});
  CHECK(Morphemes(ParseSegmentation("a@@b @@c")) == Words{{"a", "b", "c"}});
  CHECK(ParseSegmentation("").empty());
}

TEST_CASE("parse errors carry line and column") {
  try {
    ParseSegmentation("@@т эмээ", 7);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.line() == 7);
    CHECK(e.column() == 1);
  }
  try {
    ParseSegmentation("эм a@@@@b", 2);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.line() == 2);
    CHECK(e.column() == 4);
  }
  CHECK_THROWS_AS(ParseSegmentation("poke@@"), FormatError);
  CHECK_THROWS_AS(ParseSegmentation("a @@"), FormatError);
  CHECK(Morphemes(ParseSegmentationLenient("@@x a@@ b")) == Words{{"x"}, {"a"}, {"b"}});
}

TEST_CASE("render examples") {
  const std::vector<SegmentedWord> em = {{{"эм", "ээ"}}};
  CHECK(RenderSegmentation(em, MarkerStyle::kSentence) == "эм @@ээ");
  const std::vector<SegmentedWord> poke = {{{"poke", "er", "s"}}};
  CHECK(RenderSegmentation(poke, MarkerStyle::kWord) == "poke@@er@@s");
  const std::vector<SegmentedWord> a = {{{"a"}}};
  CHECK(RenderSegmentation(a, MarkerStyle::kSentence) == "a");
}

TEST_CASE("round trip on random segmentations") {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const auto words = RandomWords(rng);
    for (auto style : {MarkerStyle::kSentence, MarkerStyle::kWord}) {
      const std::string text = RenderSegmentation(words, style);
      CHECK(ParseSegmentation(text) == words);
      CHECK(RenderSegmentation(ParseSegmentation(text), DetectStyle(text)) == text);
    }
    // Extra whitespace normalizes away.
    std::string spaced = "  " + RenderSegmentation(words, MarkerStyle::kSentence) + " \t";
    CHECK(RenderSegmentation(ParseSegmentation(spaced), MarkerStyle::kSentence) ==
          utf8::NormalizeWhitespace(spaced));
  }
}

TEST_CASE("make pair checks surface recoverability") {
  const auto p = MakePair("Гэрт эмээ", "Гэр @@т эмээ", "mon");
  CHECK(p.target == "Гэр @@т эмээ");
  CHECK(MakePair("pokes", "poke@@s", "eng").target == "poke @@s");
  CHECK_THROWS_AS(MakePair("pokers", "poke @@er @@s", "eng"), FormatError);
  CHECK(MakePair("pokers", "poke@@er@@s", "eng", 0, /*check_surface=*/false).target ==
        "poke @@er @@s");
  CHECK_THROWS_AS(MakePair("a@@b", "a@@b", "eng"), FormatError);
}

TEST_CASE("load sentence dataset") {
  TempDir dir;
  WriteText(dir / "ok.tsv", "abc\tab @@c\nГэрт эмээ\tГэр @@т эмээ\r\n\n");
  LoadStats stats;
  const auto d = LoadSentenceDataset(dir / "ok.tsv", "mon", {}, &stats);
  REQUIRE(d.size() == 2);
  CHECK(stats.lines == 2);
  CHECK(d.pairs[0].source == "abc");
  CHECK(Morphemes(ParseSegmentation(d.pairs[0].target)) == Words{{"ab", "c"}});
  CHECK(d.pairs[1].language == "mon");

  WriteText(dir / "empty.tsv", "");
  CHECK(LoadSentenceDataset(dir / "empty.tsv", "ces").empty());

  WriteText(dir / "bad.tsv", "abc\tab @@c\nabc\tab @@d\nx\ty\tz\n");
  try {
    LoadSentenceDataset(dir / "bad.tsv", "ces");
    FAIL("expected a load error");
  } catch (const LoadError& e) {
    CHECK(e.line() == 2);
  }
  const auto lenient = LoadSentenceDataset(dir / "bad.tsv", "ces", {.lenient = true}, &stats);
  CHECK(lenient.size() == 1);
  CHECK(stats.skipped == 2);
  CHECK_THROWS_AS(LoadSentenceDataset(dir / "missing.tsv", "ces"), LoadError);
}

TEST_CASE("load word dataset") {
  TempDir dir;
  WriteText(dir / "w.tsv", "pokers\tpoke@@er@@s\t100\nhello\thello\n");
  const auto d = LoadWordDataset(dir / "w.tsv", "eng");
  REQUIRE(d.size() == 2);
  CHECK(d.pairs[0].source == "pokers");
  CHECK(d.pairs[0].target == RenderSegmentation(ParseSegmentation("poke@@er@@s"), MarkerStyle::kSentence));
  CHECK(d.pairs[0].target == "poke @@er @@s");
  WriteText(dir / "bad.tsv", "two words\ttwo words\n");
  CHECK_THROWS_AS(LoadWordDataset(dir / "bad.tsv", "eng"), LoadError);
  WriteText(dir / "bad.tsv", "pokers\t@@s\n");
  CHECK_THROWS_AS(LoadWordDataset(dir / "bad.tsv", "eng"), LoadError);
}

TEST_CASE("write then load is lossless") {
  TempDir dir;
  const auto d = Sized(20, "ces");
  WriteDataset(dir / "d.tsv", d);
  const auto back = LoadSentenceDataset(dir / "d.tsv", "ces");
  CHECK(back.pairs == d.pairs);
}

TEST_CASE("upsample") {
  const auto d = Sized(1000, "ces");
  const auto up = Upsample(d, 100);
  CHECK(up.size() == 100000);
  for (std::size_t i = 0; i < up.size(); i += 997) CHECK(up.pairs[i] == d.pairs[i % 1000]);
  CHECK(Upsample(Sized(11007, "eng"), 10).size() == 110070);
  CHECK(Upsample(d, 1).pairs == d.pairs);
  CHECK_THROWS_AS(Upsample(d, 0), ArgumentError);
}

TEST_CASE("augment with words") {
  const auto s = Sized(1000, "ces");
  const auto w = Sized(38682, "ces");
  const auto a = AugmentWithWords(s, w);
  CHECK(a.size() == 39682);
  CHECK(std::equal(s.pairs.begin(), s.pairs.end(), a.pairs.begin()));
  CHECK(AugmentWithWords(s, Dataset{}).pairs == s.pairs);
  CHECK_THROWS_AS(AugmentWithWords(s, Sized(3, "eng")), ArgumentError);
  CHECK(AugmentWithWords(s, Sized(3, "eng"), /*multilingual=*/true).size() == 1003);
}

TEST_CASE("multilingual concatenation") {
  const std::vector<Dataset> parts = {Sized(1000, "ces"), Sized(11007, "eng"), Sized(1000, "mon")};
  const auto all = ConcatMultilingual(parts);
  CHECK(all.size() == 13007);
  CHECK(all.pairs[1000] == parts[1].pairs[0]);
  // Multiset of pairs preserved.
  auto flat = parts[0].pairs;
  flat.insert(flat.end(), parts[1].pairs.begin(), parts[1].pairs.end());
  flat.insert(flat.end(), parts[2].pairs.begin(), parts[2].pairs.end());
  CHECK(all.pairs == flat);
  CHECK(ConcatMultilingual(std::span(parts.data(), 1)).pairs == parts[0].pairs);
  CHECK_THROWS_AS(ConcatMultilingual({}), ArgumentError);

  Dataset one;
  one.pairs.push_back(MakePair("abc", "ab @@c", "ces"));
  const auto tagged = ConcatMultilingual(std::span(&one, 1), {.language_token = true});
  CHECK(tagged.pairs[0].source == "<ces> abc");
}
