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

#include <functional>
#include <map>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "morphseg/errors.hpp"
#include "morphseg/evaluation.hpp"
#include "morphseg/random.hpp"
#include "morphseg/utf8.hpp"

using namespace morphseg;
using namespace morphseg::eval;
using corpus::SegmentedWord;

namespace {

std::vector<SegmentedWord> Words(std::string_view text) { return corpus::ParseSegmentation(text); }

std::size_t WordEditOracle(const std::vector<SegmentedWord>& g, const std::vector<SegmentedWord>& p) {
  std::vector<std::vector<std::size_t>> d(g.size() + 1, std::vector<std::size_t>(p.size() + 1));
  for (std::size_t i = 0; i <= g.size(); ++i) {
    for (std::size_t j = 0; j <= p.size(); ++j) {
      if (i == 0 || j == 0) {
        d[i][j] = i + j;
        continue;
      }
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (g[i - 1].Surface() == p[j - 1].Surface() ? 0 : 1)});
    }
  }
  return d[g.size()][p.size()];
}

std::string RandomWordText(Rng& rng) {
  static const std::vector<std::string> morphs = {"ab", "c", "эм", "ээ", "x", "poke", "er", "s"};
  std::string out;
  const std::size_t n = 1 + rng.Below(3);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) out += "@@";
    out += morphs[rng.Below(morphs.size())];
  }
  return out;
}

std::string RandomSentence(Rng& rng, std::size_t max_words) {
  std::string out;
  const std::size_t n = 1 + rng.Below(max_words);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) out += ' ';
    out += RandomWordText(rng);
  }
  return out;
}

}  // namespace

TEST_CASE("word counts") {
  const auto c = WordPrf(SegmentedWord{{"poke", "er", "s"}}, SegmentedWord{{"poke", "ers"}});
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 2);
  CHECK(c.Precision() == 0.5);
  CHECK(c.Recall() == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(c.F1() == doctest::Approx(0.4).epsilon(1e-15));
  const auto same = WordPrf(SegmentedWord{{"a", "b"}}, SegmentedWord{{"a", "b"}});
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  CHECK(same.F1() == 1.0);
  CHECK(WordPrf(SegmentedWord{{"a"}}, SegmentedWord{{"b"}}).F1() == 0.0);
  const auto multi = WordPrf(SegmentedWord{{"a", "a", "b"}}, SegmentedWord{{"a", "b", "b"}});
  CHECK(multi.tp == 2);
  CHECK(Counts{}.F1() == 0.0);
}

TEST_CASE("alignment examples") {
  const auto gold = Words("a b @@c d");
  const auto equal = AlignWords(gold, Words("x y z"));
  CHECK(equal.matched.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(equal.matched[i] == std::make_pair(i, i));

  const auto missing = AlignWords(gold, Words("a d"));
  CHECK(missing.matched.size() == 2);
  CHECK(missing.unmatched_gold == std::vector<std::size_t>{1});
  CHECK(missing.unmatched_pred.empty());

  const auto inserted = AlignWords(gold, Words("a b @@c q d"));
  CHECK(inserted.matched.size() == 3);
  CHECK(inserted.unmatched_pred == std::vector<std::size_t>{2});
}

TEST_CASE("alignment matches the edit-distance oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const auto g = Words(RandomSentence(rng, 6));
    const auto p = Words(RandomSentence(rng, 6));
    const auto al = AlignWords(g, p);
    std::vector<int> used_g(g.size()), used_p(p.size());
    std::size_t cost = al.unmatched_gold.size() + al.unmatched_pred.size();
    std::size_t prev_g = 0, prev_p = 0;
    bool first = true;
    for (auto [i, j] : al.matched) {
      ++used_g[i];
      ++used_p[j];
      if (!first) CHECK((i > prev_g && j > prev_p));
      first = false;
      prev_g = i;
      prev_p = j;
      cost += g[i].Surface() == p[j].Surface() ? 0 : 1;
    }
    for (auto i : al.unmatched_gold) ++used_g[i];
    for (auto j : al.unmatched_pred) ++used_p[j];
    for (int u : used_g) CHECK(u == 1);
    for (int u : used_p) CHECK(u == 1);
    if (g.size() != p.size()) CHECK(cost == WordEditOracle(g, p));
  }
}

TEST_CASE("levenshtein") {
  CHECK(Levenshtein("kitten", "sitting") == 3);
  CHECK(Levenshtein("", "abc") == 3);
  CHECK(Levenshtein("same", "same") == 0);
  CHECK(Levenshtein("эмээ", "эм") == 2);
  Rng rng(5);
  auto random = [&] {
    std::u32string s;
    const std::size_t n = rng.Below(9);
    for (std::size_t i = 0; i < n; ++i) s.push_back(U"abэ"[rng.Below(3)]);
    return s;
  };
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random(), b = random(), c = random();
    CHECK(Levenshtein(a, b) == oracle::EditDistance(a, b));
    CHECK(Levenshtein(a, b) == Levenshtein(b, a));
    CHECK(Levenshtein(a, c) <= Levenshtein(a, b) + Levenshtein(b, c));
    CHECK(Levenshtein(utf8::Encode(a), utf8::Encode(b)) == Levenshtein(a, b));
  }
}

TEST_CASE("corpus metrics examples") {
  const std::vector<std::string> gold = {"Гэр @@т эмээ", "poke @@er @@s"};
  const auto perfect = CorpusMetrics(gold, gold);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.sentence_accuracy == 1.0);
  CHECK(perfect.mean_levenshtein == 0.0);

  const std::vector<std::string> g1 = {"poke @@er @@s"}, p1 = {"poke @@ers"};
  const auto poke = CorpusMetrics(g1, p1);
  CHECK(poke.precision == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(poke.recall == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(poke.f1 == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(poke.mean_levenshtein == 3.0);

  const std::vector<std::string> g2 = {"a @@b c", "d @@e f"}, p2 = {"a @@b c", "x @@y z"};
  CHECK(CorpusMetrics(g2, p2).sentence_accuracy == 0.5);

  const std::vector<std::string> short_pred = {"a"};
  CHECK_THROWS_AS(CorpusMetrics(g2, short_pred), ArgumentError);

  // A dropped word costs its morphemes as false negatives.
  const std::vector<std::string> g3 = {"a @@b c d"}, p3 = {"a @@b d"};
  const auto dropped = CorpusMetrics(g3, p3);
  CHECK(dropped.totals.tp == 3);
  CHECK(dropped.totals.fn == 1);
  CHECK(dropped.totals.fp == 0);
  CHECK(dropped.sentence_accuracy == 0.0);

  const auto text = poke.ToText();
  CHECK(text.find("f1=40.0000") != std::string::npos);
  CHECK(poke.ToJson().front() == '{');
  CHECK(poke.ToJson().find("\"f1\":40") != std::string::npos);
}

TEST_CASE("corpus metrics properties") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> gold, pred;
    const std::size_t n = 1 + rng.Below(12);
    for (std::size_t i = 0; i < n; ++i) {
      gold.push_back(RandomSentence(rng, 5));
      pred.push_back(rng.Uniform() < 0.3 ? gold.back() : RandomSentence(rng, 5));
    }
    const auto report = CorpusMetrics(gold, pred);
    CHECK(report.f1 >= 0.0);
    CHECK(report.f1 <= 1.0);
    CHECK((report.f1 == 0.0) == (report.totals.tp == 0));
    CHECK(report.sentence_accuracy * double(n) <= double(report.correct_words) + 1e-9);

    // Brute-force recomputation from per-word counts.
    Counts total;
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = Words(gold[i]);
      const auto p = corpus::ParseSegmentationLenient(pred[i]);
      const auto al = AlignWords(g, p);
      for (auto [a, b] : al.matched) total += WordPrf(g[a], p[b]);
      for (auto a : al.unmatched_gold) total.fn += g[a].morphemes.size();
      for (auto b : al.unmatched_pred) total.fp += p[b].morphemes.size();
    }
    CHECK(total.tp == report.totals.tp);
    CHECK(total.fp == report.totals.fp);
    CHECK(total.fn == report.totals.fn);
    CHECK(report.f1 == doctest::Approx(total.F1()).epsilon(1e-12));

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.Shuffle(std::span(perm));
    std::vector<std::string> gs, ps;
    for (auto i : perm) {
      gs.push_back(gold[i]);
      ps.push_back(pred[i]);
    }
    const auto shuffled = CorpusMetrics(gs, ps);
    CHECK(shuffled.totals.tp == report.totals.tp);
    CHECK(shuffled.f1 == doctest::Approx(report.f1).epsilon(1e-12));
    CHECK(shuffled.sentence_accuracy == doctest::Approx(report.sentence_accuracy));
    CHECK(shuffled.mean_levenshtein == doctest::Approx(report.mean_levenshtein));
  }
}

TEST_CASE("malformed predictions are scored leniently") {
  const auto s = ScoreSentence("a @@b", "@@a @@b");
  CHECK(s.counts.tp == 2);  // the stray leading marker is dropped
  const auto ok = ScoreSentence("a @@b", "a@@b");
  CHECK(ok.exact);
  CHECK(ok.correct_words == 1);
}
