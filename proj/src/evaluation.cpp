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

#include "morphseg/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"

#include "morphseg/errors.hpp"
#include "morphseg/utf8.hpp"

namespace morphseg::eval {

using corpus::SegmentedWord;

double Counts::Precision() const {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double Counts::Recall() const {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double Counts::F1() const {
  const double p = Precision();
  const double r = Recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

Counts WordPrf(const SegmentedWord& gold, const SegmentedWord& pred) {
  std::map<std::string_view, std::size_t> bag;
  for (const auto& m : gold.morphemes) ++bag[m];
  Counts c;
  for (const auto& m : pred.morphemes) {
    auto it = bag.find(m);
    if (it != bag.end() && it->second > 0) {
      --it->second;
      ++c.tp;
    }
  }
  c.fp = pred.morphemes.size() - c.tp;
  c.fn = gold.morphemes.size() - c.tp;
  return c;
}

WordAlignment AlignWords(std::span<const SegmentedWord> gold,
                         std::span<const SegmentedWord> pred) {
  WordAlignment out;
  if (gold.size() == pred.size()) {
    for (std::size_t i = 0; i < gold.size(); ++i) out.matched.emplace_back(i, i);
    return out;
  }
  const std::size_t n = gold.size();
  const std::size_t m = pred.size();
  std::vector<std::string> gs(n), ps(m);
  for (std::size_t i = 0; i < n; ++i) gs[i] = gold[i].Surface();
  for (std::size_t j = 0; j < m; ++j) ps[j] = pred[j].Surface();

  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (gs[i - 1] == ps[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  // Traceback prefers pairing, then dropping a gold word, then a predicted one.
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (gs[i - 1] == ps[j - 1] ? 0 : 1)) {
      out.matched.emplace_back(i - 1, j - 1);
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      out.unmatched_gold.push_back(i - 1);
      --i;
    } else {
      out.unmatched_pred.push_back(j - 1);
      --j;
    }
  }
  std::reverse(out.matched.begin(), out.matched.end());
  std::reverse(out.unmatched_gold.begin(), out.unmatched_gold.end());
  std::reverse(out.unmatched_pred.begin(), out.unmatched_pred.end());
  return out;
}

std::size_t Levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::size_t Levenshtein(std::string_view a, std::string_view b) {
  return Levenshtein(utf8::Decode(a), utf8::Decode(b));
}

SentenceScore ScoreSentence(std::string_view gold_text, std::string_view pred_text) {
  const auto gold = corpus::ParseSegmentation(gold_text);
  const auto pred = corpus::ParseSegmentationLenient(pred_text);
  const auto alignment = AlignWords(gold, pred);

  SentenceScore s;
  for (const auto& [g, p] : alignment.matched) {
    const Counts c = WordPrf(gold[g], pred[p]);
    s.counts += c;
    if (gold[g] == pred[p]) ++s.correct_words;
  }
  for (std::size_t g : alignment.unmatched_gold) s.counts.fn += gold[g].morphemes.size();
  for (std::size_t p : alignment.unmatched_pred) s.counts.fp += pred[p].morphemes.size();
  s.exact = alignment.unmatched_gold.empty() && alignment.unmatched_pred.empty() &&
            s.correct_words == gold.size();
  s.levenshtein =
      Levenshtein(corpus::RenderSegmentation(gold, corpus::MarkerStyle::kSentence),
                  corpus::RenderSegmentation(pred, corpus::MarkerStyle::kSentence));
  return s;
}

EvalReport CorpusMetrics(std::span<const std::string> gold, std::span<const std::string> pred) {
  if (gold.size() != pred.size()) {
    throw ArgumentError("corpus_metrics: " + std::to_string(gold.size()) + " gold vs " +
                        std::to_string(pred.size()) + " predicted sentences");
  }
  EvalReport r;
  r.sentences = gold.size();
  double macro = 0.0;
  double lev = 0.0;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const SentenceScore s = ScoreSentence(gold[i], pred[i]);
    r.totals += s.counts;
    macro += s.counts.F1();
    lev += static_cast<double>(s.levenshtein);
    exact += s.exact ? 1 : 0;
    r.correct_words += s.correct_words;
    for (const auto& w : corpus::ParseSegmentation(gold[i])) {
      ++r.words;
      r.gold_morphemes += w.morphemes.size();
    }
    for (const auto& w : corpus::ParseSegmentationLenient(pred[i])) {
      r.predicted_morphemes += w.morphemes.size();
    }
  }
  r.precision = r.totals.Precision();
  r.recall = r.totals.Recall();
  r.f1 = r.totals.F1();
  if (r.sentences > 0) {
    const double n = static_cast<double>(r.sentences);
    r.macro_sentence_f1 = macro / n;
    r.sentence_accuracy = static_cast<double>(exact) / n;
    r.mean_levenshtein = lev / n;
  }
  if (r.words > 0) r.word_accuracy = static_cast<double>(r.correct_words) / r.words;
  return r;
}

std::string EvalReport::ToText() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "f1=" << 100.0 * f1 << '\n'
      << "precision=" << 100.0 * precision << '\n'
      << "recall=" << 100.0 * recall << '\n'
      << "macro_sentence_f1=" << 100.0 * macro_sentence_f1 << '\n'
      << "sentence_accuracy=" << 100.0 * sentence_accuracy << '\n'
      << "word_accuracy=" << 100.0 * word_accuracy << '\n'
      << "mean_levenshtein=" << mean_levenshtein << '\n'
      << "sentences=" << sentences << '\n'
      << "words=" << words << '\n'
      << "gold_morphemes=" << gold_morphemes << '\n'
      << "predicted_morphemes=" << predicted_morphemes << '\n'
      << "tp=" << totals.tp << '\n'
      << "fp=" << totals.fp << '\n'
      << "fn=" << totals.fn << '\n';
  return out.str();
}

std::string EvalReport::ToJson() const {
  nlohmann::ordered_json j;
  j["f1"] = 100.0 * f1;
  j["precision"] = 100.0 * precision;
  j["recall"] = 100.0 * recall;
  j["macro_sentence_f1"] = 100.0 * macro_sentence_f1;
  j["sentence_accuracy"] = 100.0 * sentence_accuracy;
  j["word_accuracy"] = 100.0 * word_accuracy;
  j["mean_levenshtein"] = mean_levenshtein;
  j["sentences"] = sentences;
  j["words"] = words;
  j["gold_morphemes"] = gold_morphemes;
  j["predicted_morphemes"] = predicted_morphemes;
  j["tp"] = totals.tp;
  j["fp"] = totals.fp;
  j["fn"] = totals.fn;
  return j.dump();
}

}  // namespace morphseg::eval
