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

#include <map>
#include <set>

#include "doctest.h"
#include "morphseg/corpus.hpp"
#include "morphseg/errors.hpp"
#include "morphseg/synth.hpp"
#include "morphseg/utf8.hpp"

using namespace morphseg;
using namespace morphseg::synth;

TEST_CASE("generation is deterministic and sized") {
  SynthConfig c;
  const auto a = Generate(c), b = Generate(c);
  CHECK(a.train.size() == 300);
  CHECK(a.dev.size() == 50);
  CHECK(a.test.size() == 50);
  CHECK(a.words.size() == 200);
  CHECK(a.lexicon.roots.size() == 30);
  CHECK(a.lexicon.suffixes.size() == 8);
  CHECK(a.lexicon.forms.size() == 3);
  CHECK(a.test_occurrences.size() == 50);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train.pairs[i].source == b.train.pairs[i].source);
    CHECK(a.train.pairs[i].target == b.train.pairs[i].target);
  }
  c.seed = 2;
  const auto other = Generate(c);
  CHECK(other.train.pairs[0].source != a.train.pairs[0].source);
}

TEST_CASE("each sentence has one balanced ambiguous occurrence") {
  SynthConfig c;
  c.min_words = 3;
  c.max_words = 6;
  const auto data = Generate(c);
  std::set<std::string> ambiguous;
  for (const auto& f : data.lexicon.forms) ambiguous.insert(f.surface);

  for (const auto* split : {&data.train, &data.dev, &data.test}) {
    std::map<std::pair<std::size_t, bool>, int> readings;
    for (const auto& pair : split->pairs) {
      const auto words = utf8::SplitWhitespace(pair.source);
      CHECK(words.size() >= c.min_words);
      CHECK(words.size() <= c.max_words);
      const auto gold = corpus::ParseSegmentation(pair.target);
      int count = 0;
      for (std::size_t w = 0; w < words.size(); ++w) {
        if (!ambiguous.contains(std::string(words[w]))) continue;
        ++count;
        REQUIRE(w > 0);
        for (std::size_t f = 0; f < data.lexicon.forms.size(); ++f) {
          const auto& form = data.lexicon.forms[f];
          if (form.surface != words[w]) continue;
          const bool split_reading = gold[w].morphemes.size() == 2;
          CHECK(words[w - 1] == (split_reading ? form.split_context : form.whole_context));
          if (split_reading) CHECK(gold[w].morphemes == std::vector<std::string>{form.stem, form.suffix});
          else CHECK(gold[w].morphemes == std::vector<std::string>{form.surface});
          readings[{f, split_reading}] += 1;
        }
      }
      CHECK(count == 1);
    }
    for (std::size_t f = 0; f < data.lexicon.forms.size(); ++f) {
      CHECK(std::abs(readings[{f, true}] - readings[{f, false}]) <= 1);
    }
  }
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto& occ = data.test_occurrences[i];
    CHECK(occ.sentence == i);
    const auto words = utf8::SplitWhitespace(data.test.pairs[i].source);
    CHECK(words[occ.word] == data.lexicon.forms[occ.form].surface);
    CHECK((corpus::ParseSegmentation(data.test.pairs[i].target)[occ.word].morphemes.size() == 2) == occ.split);
  }
}

TEST_CASE("regular words have a single analysis") {
  const auto data = Generate({});
  std::set<std::string> ambiguous;
  for (const auto& f : data.lexicon.forms) ambiguous.insert(f.surface);
  std::map<std::string, std::vector<std::string>> analyses;
  std::set<std::string> listed;
  for (const auto& pair : data.words.pairs) {
    CHECK(!ambiguous.contains(pair.source));
    CHECK(listed.insert(pair.source).second);
  }
  for (const auto* split : {&data.train, &data.dev, &data.test, &data.words}) {
    for (const auto& pair : split->pairs) {
      const auto words = utf8::SplitWhitespace(pair.source);
      const auto gold = corpus::ParseSegmentation(pair.target);
      REQUIRE(words.size() == gold.size());
      for (std::size_t w = 0; w < words.size(); ++w) {
        CHECK(gold[w].Surface() == words[w]);
        if (ambiguous.contains(std::string(words[w]))) continue;
        const auto [it, inserted] = analyses.emplace(std::string(words[w]), gold[w].morphemes);
        if (!inserted) CHECK(it->second == gold[w].morphemes);
      }
    }
  }
}

TEST_CASE("invalid configurations") {
  SynthConfig c;
  c.min_words = 2;
  CHECK_THROWS_AS(Generate(c), ArgumentError);
  c = {};
  c.ambiguous = 0;
  CHECK_THROWS_AS(Generate(c), ArgumentError);
  c = {};
  c.max_words = 2;
  CHECK_THROWS_AS(Generate(c), ArgumentError);
}
