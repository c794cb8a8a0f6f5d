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

// Independent reference implementations shared by the unit tests and the
// acceptance suite. None of them calls the code it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "morphseg/decode.hpp"
#include "morphseg/random.hpp"
#include "morphseg/ulm.hpp"

namespace morphseg::oracle {

inline std::vector<double> RandomVector(Rng& rng, std::size_t n, double scale) {
  std::vector<double> z(n);
  for (auto& v : z) v = rng.Uniform(-scale, scale);
  return z;
}

inline double MaxAbsDiff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::size_t SupportSize(const std::vector<double>& p) {
  return static_cast<std::size_t>(std::count_if(p.begin(), p.end(), [](double v) { return v > 0; }));
}

inline double LogSumExp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Memoized recursion, independent of the library's table layout.
inline std::size_t EditDistance(const std::u32string& a, const std::u32string& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t best = std::min({rec(i + 1, j) + 1, rec(i, j + 1) + 1,
                                       rec(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1)});
    return memo[key] = best;
  };
  return rec(0, 0);
}

// Unigram piece table for brute-force lattice checks.
struct PieceTable {
  std::vector<std::u32string> surfaces;
  std::vector<double> logprobs;
  double unknown = -30.0;
  ulm::Segmenter Build() const { return ulm::Segmenter(surfaces, logprobs, unknown); }
};

// Up to 30 pieces over a 4-letter alphabet; single letters are sometimes
// missing so unknown-character edges get exercised.
inline PieceTable RandomPieceTable(Rng& rng) {
  static const std::u32string alphabet = U"abcd";
  PieceTable m;
  std::set<std::u32string> seen;
  for (char32_t c : alphabet) {
    if (rng.Uniform() < 0.85) seen.insert(std::u32string(1, c));
  }
  const std::size_t target = 4 + rng.Below(27);
  while (seen.size() < target) {
    std::u32string s;
    const std::size_t len = 2 + rng.Below(3);
    for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng.Below(4)]);
    seen.insert(s);
  }
  for (const auto& s : seen) {
    m.surfaces.push_back(s);
    m.logprobs.push_back(-rng.Uniform(0.1, 6.0));
  }
  return m;
}

inline std::u32string RandomText(Rng& rng, std::size_t max_len) {
  std::u32string s;
  const std::size_t len = 1 + rng.Below(max_len);
  for (std::size_t i = 0; i < len; ++i) s.push_back(U"abcd"[rng.Below(4)]);
  return s;
}

// Every segmentation of `text` with its piece list and score. Unknown
// single characters are allowed only where no single-character piece exists.
inline void EnumerateSegmentations(const PieceTable& m, std::u32string_view text,
                                   const std::function<void(const std::vector<int>&, double)>& visit) {
  std::map<std::u32string, int> index;
  for (std::size_t i = 0; i < m.surfaces.size(); ++i) index[m.surfaces[i]] = static_cast<int>(i);
  std::vector<int> path;
  std::function<void(std::size_t, double)> rec = [&](std::size_t pos, double score) {
    if (pos == text.size()) {
      visit(path, score);
      return;
    }
    for (std::size_t end = pos + 1; end <= text.size(); ++end) {
      const std::u32string piece(text.substr(pos, end - pos));
      auto it = index.find(piece);
      int id;
      double lp;
      if (it != index.end()) {
        id = it->second;
        lp = m.logprobs[id];
      } else if (end == pos + 1) {
        id = ulm::Segmenter::kUnknown;
        lp = m.unknown;
      } else {
        continue;
      }
      path.push_back(id);
      rec(end, score + lp);
      path.pop_back();
    }
  };
  rec(0, 0.0);
}

inline constexpr int kTableBos = 1;
inline constexpr int kTableEos = 2;

// Scores depend only on the prefix, drawn from a keyed stream.
class TableScorer : public decode::StepScorer {
 public:
  TableScorer(std::uint64_t seed, std::size_t vocab, decode::ScoreMapping mapping, double scale)
      : seed_(seed), vocab_(vocab), mapping_(mapping), scale_(scale) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<double> NextScores(std::span<const int> prefix) override {
    ++calls;
    std::uint64_t key = seed_;
    for (int t : prefix) key = MixKeys(key, static_cast<std::uint64_t>(t));
    Rng rng(key);
    std::vector<double> logits(vocab_);
    for (auto& v : logits) v = rng.Uniform(-scale_, scale_);
    return decode::LogScores(logits, mapping_);
  }
  int calls = 0;

 private:
  std::uint64_t seed_;
  std::size_t vocab_;
  decode::ScoreMapping mapping_;
  double scale_;
};

// Best finished or length-capped sequence by ranking score; ties to smaller ids.
inline decode::Hypothesis ExhaustiveSearch(decode::StepScorer& scorer, std::size_t max_len,
                                           double penalty) {
  decode::Hypothesis best;
  bool have = false;
  std::function<void(decode::Hypothesis&)> rec = [&](decode::Hypothesis& h) {
    if (h.finished || h.ids.size() == max_len) {
      const double a = decode::RankingScore(h, penalty);
      if (!have || a > decode::RankingScore(best, penalty) ||
          (a == decode::RankingScore(best, penalty) && h.ids < best.ids)) {
        best = h;
        have = true;
      }
      return;
    }
    std::vector<int> prefix{kTableBos};
    prefix.insert(prefix.end(), h.ids.begin(), h.ids.end());
    const auto scores = scorer.NextScores(prefix);
    for (int t = 0; t < static_cast<int>(scores.size()); ++t) {
      if (scores[t] == -INFINITY) continue;
      decode::Hypothesis next = h;
      next.ids.push_back(t);
      next.score += scores[t];
      next.finished = t == kTableEos;
      rec(next);
    }
  };
  decode::Hypothesis root;
  rec(root);
  return best;
}

inline decode::BeamConfig TableBeam(std::size_t beam, std::size_t max_len, double penalty = 1.0) {
  decode::BeamConfig c;
  c.beam = beam;
  c.max_len = max_len;
  c.length_penalty = penalty;
  c.bos = kTableBos;
  c.eos = kTableEos;
  return c;
}

}  // namespace morphseg::oracle
