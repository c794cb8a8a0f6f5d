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

#include "morphseg/ulm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "morphseg/errors.hpp"
#include "morphseg/utf8.hpp"

namespace morphseg::ulm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kNoPiece = -2;
constexpr std::string_view kFormatVersion = "ulm-v1";
constexpr std::string_view kSpecialSurfaces[kNumSpecials] = {"<pad>", "<s>", "</s>", "<unk>"};

double LogAddExp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

std::uint64_t ChildKey(std::uint32_t node, char32_t c) {
  return (static_cast<std::uint64_t>(node) << 21) | static_cast<std::uint64_t>(c);
}

}  // namespace

std::vector<std::u32string> PrepareWords(std::string_view text) {
  std::vector<std::u32string> words;
  for (std::string_view token : utf8::SplitWhitespace(text)) {
    std::u32string w(1, kWordBoundaryChar);
    w += utf8::Decode(token);
    words.push_back(std::move(w));
  }
  return words;
}

// ---------------------------------------------------------------- Segmenter

Segmenter::Segmenter(std::vector<std::u32string> surfaces, std::vector<double> logprobs,
                     double unknown_logprob)
    : surfaces_(std::move(surfaces)),
      logprobs_(std::move(logprobs)),
      unknown_logprob_(unknown_logprob) {
  if (surfaces_.size() != logprobs_.size()) {
    throw ArgumentError("segmenter: surfaces and log probabilities differ in length");
  }
  terminal_.push_back(kNoPiece);
  for (std::size_t p = 0; p < surfaces_.size(); ++p) {
    const std::u32string& s = surfaces_[p];
    if (s.empty()) throw ArgumentError("segmenter: empty piece surface");
    max_length_ = std::max(max_length_, s.size());
    std::uint32_t node = 0;
    for (char32_t c : s) {
      auto [it, inserted] =
          children_.try_emplace(ChildKey(node, c), static_cast<std::uint32_t>(terminal_.size()));
      if (inserted) terminal_.push_back(kNoPiece);
      node = it->second;
    }
    if (terminal_[node] != kNoPiece) {
      throw ArgumentError("segmenter: duplicate piece '" + utf8::Encode(s) + "'");
    }
    terminal_[node] = static_cast<int>(p);
  }
}

std::vector<std::vector<Segmenter::Edge>> Segmenter::Lattice(std::u32string_view text,
                                                             int excluded) const {
  const std::size_t n = text.size();
  std::vector<std::vector<Edge>> starts(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t node = 0;
    bool has_single = false;
    for (std::size_t k = i; k < n && k - i < max_length_; ++k) {
      auto it = children_.find(ChildKey(node, text[k]));
      if (it == children_.end()) break;
      node = it->second;
      const int piece = terminal_[node];
      if (piece >= 0 && piece != excluded) {
        starts[i].push_back(Edge{i, k + 1, piece});
        if (k == i) has_single = true;
      }
    }
    if (!has_single) starts[i].insert(starts[i].begin(), Edge{i, i + 1, kUnknown});
  }
  return starts;
}

std::vector<int> Segmenter::Viterbi(std::u32string_view text, double* score,
                                    int excluded) const {
  const std::size_t n = text.size();
  if (n == 0) {
    if (score != nullptr) *score = 0.0;
    return {};
  }
  const auto starts = Lattice(text, excluded);
  // Best suffix path from each position: (score, piece count, first edge).
  std::vector<double> best(n + 1, kNegInf);
  std::vector<std::size_t> count(n + 1, 0);
  std::vector<const Edge*> choice(n + 1, nullptr);
  best[n] = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const auto& edges = starts[i];
    for (auto it = edges.rbegin(); it != edges.rend(); ++it) {  // longest first
      if (best[it->end] == kNegInf) continue;
      const double s = logprob(it->piece) + best[it->end];
      const std::size_t c = count[it->end] + 1;
      if (s > best[i] || (s == best[i] && c < count[i])) {
        best[i] = s;
        count[i] = c;
        choice[i] = &*it;
      }
    }
  }
  std::vector<int> path;
  path.reserve(count[0]);
  for (std::size_t i = 0; i < n; i = choice[i]->end) path.push_back(choice[i]->piece);
  if (score != nullptr) *score = best[0];
  return path;
}

double Segmenter::ExpectedCounts(std::u32string_view text, double weight,
                                 std::span<double> counts) const {
  const std::size_t n = text.size();
  if (n == 0) return 0.0;
  if (counts.size() != size()) throw ArgumentError("segmenter: counts size mismatch");
  const auto starts = Lattice(text);
  std::vector<double> alpha(n + 1, kNegInf);
  std::vector<double> beta(n + 1, kNegInf);
  alpha[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (alpha[i] == kNegInf) continue;
    for (const Edge& e : starts[i]) {
      alpha[e.end] = LogAddExp(alpha[e.end], alpha[i] + logprob(e.piece));
    }
  }
  beta[n] = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    for (const Edge& e : starts[i]) {
      beta[i] = LogAddExp(beta[i], logprob(e.piece) + beta[e.end]);
    }
  }
  const double z = alpha[n];
  for (std::size_t i = 0; i < n; ++i) {
    for (const Edge& e : starts[i]) {
      if (e.piece == kUnknown) continue;
      const double lp = alpha[i] + logprob(e.piece) + beta[e.end] - z;
      if (lp > kNegInf) counts[e.piece] += weight * std::exp(lp);
    }
  }
  return z;
}

std::vector<int> Segmenter::Sample(std::u32string_view text, double smoothing,
                                   Rng& rng) const {
  if (!(smoothing > 0.0)) throw ArgumentError("encode_sample: smoothing must be > 0");
  const std::size_t n = text.size();
  if (n == 0) return {};
  const auto starts = Lattice(text);
  std::vector<std::vector<Edge>> ends(n + 1);
  for (const auto& edges : starts) {
    for (const Edge& e : edges) ends[e.end].push_back(e);
  }
  std::vector<double> alpha(n + 1, kNegInf);
  alpha[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (alpha[i] == kNegInf) continue;
    for (const Edge& e : starts[i]) {
      alpha[e.end] = LogAddExp(alpha[e.end], alpha[i] + smoothing * logprob(e.piece));
    }
  }
  std::vector<int> reversed;
  std::size_t j = n;
  while (j > 0) {
    const auto& candidates = ends[j];
    double u = rng.Uniform();
    const Edge* picked = &candidates.back();
    for (const Edge& e : candidates) {
      const double w = std::exp(alpha[e.begin] + smoothing * logprob(e.piece) - alpha[j]);
      if (u < w) {
        picked = &e;
        break;
      }
      u -= w;
    }
    reversed.push_back(picked->piece);
    j = picked->begin;
  }
  return {reversed.rbegin(), reversed.rend()};
}

double Segmenter::PathScore(std::span<const int> path) const {
  double s = 0.0;
  for (int p : path) s += logprob(p);
  return s;
}

// --------------------------------------------------------------- VocabModel

VocabModel VocabModel::FromPieces(std::vector<Piece> pieces, bool normalize,
                                  double smoothing_default) {
  VocabModel model;
  model.smoothing_default_ = smoothing_default;
  for (std::string_view s : kSpecialSurfaces) model.pieces_.push_back(Piece{std::string(s), 0.0});
  if (normalize && !pieces.empty()) {
    double z = kNegInf;
    for (const auto& p : pieces) z = LogAddExp(z, p.logprob);
    for (auto& p : pieces) p.logprob -= z;
  }
  for (auto& p : pieces) {
    if (p.surface.empty()) throw ArgumentError("vocab: empty piece surface");
    model.pieces_.push_back(std::move(p));
  }
  model.Rebuild();
  return model;
}

void VocabModel::Rebuild() {
  index_.clear();
  std::vector<std::u32string> surfaces;
  std::vector<double> logprobs;
  double min_lp = 0.0;
  for (int id = 0; id < size(); ++id) {
    const Piece& p = pieces_[id];
    if (!index_.emplace(p.surface, id).second) {
      throw ArgumentError("vocab: duplicate piece '" + p.surface + "'");
    }
    if (id >= kNumSpecials) {
      surfaces.push_back(utf8::Decode(p.surface));
      logprobs.push_back(p.logprob);
      min_lp = std::min(min_lp, p.logprob);
    }
  }
  segmenter_ = Segmenter(std::move(surfaces), std::move(logprobs), min_lp - 10.0);
}

const Piece& VocabModel::piece(int id) const {
  if (id < 0 || id >= size()) {
    throw ArgumentError("vocab: id " + std::to_string(id) + " out of range [0, " +
                        std::to_string(size()) + ")");
  }
  return pieces_[id];
}

std::optional<int> VocabModel::IdOf(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool VocabModel::Covers(char32_t c) const { return index_.count(utf8::Encode(c)) > 0; }

namespace {
void AppendPath(const std::vector<int>& path, std::vector<int>& ids) {
  for (int p : path) ids.push_back(p == Segmenter::kUnknown ? kUnkId : p + kNumSpecials);
}
}  // namespace

std::vector<int> VocabModel::Encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& word : PrepareWords(text)) AppendPath(segmenter_.Viterbi(word), ids);
  return ids;
}

std::vector<int> VocabModel::EncodeSample(std::string_view text, double smoothing,
                                          std::uint64_t seed) const {
  if (!(smoothing > 0.0)) throw ArgumentError("encode_sample: smoothing must be > 0");
  Rng rng(seed);
  std::vector<int> ids;
  for (const auto& word : PrepareWords(text)) AppendPath(segmenter_.Sample(word, smoothing, rng), ids);
  return ids;
}

std::string VocabModel::Decode(std::span<const int> ids) const {
  std::string joined;
  for (int id : ids) {
    const Piece& p = piece(id);
    if (id == kUnkId) {
      joined += kUnkRendering;
    } else if (!IsSpecial(id)) {
      joined += p.surface;
    }
  }
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = joined.find(kWordBoundary, pos);
    out.append(joined, pos, next == std::string::npos ? std::string::npos : next - pos);
    if (next == std::string::npos) break;
    if (!out.empty()) out.push_back(' ');
    pos = next + kWordBoundary.size();
  }
  return out;
}

double VocabModel::Score(std::span<const int> ids) const {
  double s = 0.0;
  for (int id : ids) {
    if (id == kUnkId) {
      s += segmenter_.logprob(Segmenter::kUnknown);
    } else {
      s += piece(id).logprob;
    }
  }
  return s;
}

void VocabModel::Save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError(path.string(), 0, "cannot open file for writing");
  out.precision(17);
  out << kFormatVersion << '\t' << size() << '\t' << smoothing_default_ << '\n';
  for (const Piece& p : pieces_) out << p.surface << '\t' << p.logprob << '\n';
  if (!out) throw LoadError(path.string(), 0, "write failed");
}

VocabModel VocabModel::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string(), 0, "cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw LoadError(path.string(), 1, "missing header");
  const auto header = utf8::Split(line, '\t');
  if (header.size() != 3 || header[0] != kFormatVersion) {
    throw LoadError(path.string(), 1, "unsupported tokenizer format (expected ulm-v1 header)");
  }
  std::size_t count = 0;
  double smoothing = 0.0;
  try {
    count = std::stoul(std::string(header[1]));
    smoothing = std::stod(std::string(header[2]));
  } catch (const std::exception&) {
    throw LoadError(path.string(), 1, "malformed header");
  }
  std::vector<Piece> pieces;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = utf8::Split(line, '\t');
    if (fields.size() != 2 || fields[0].empty()) {
      throw LoadError(path.string(), line_no, "expected 'surface<TAB>logprob'");
    }
    Piece p{std::string(fields[0]), 0.0};
    char* end = nullptr;
    const std::string value(fields[1]);
    p.logprob = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0' || !(p.logprob <= 0.0)) {
      throw LoadError(path.string(), line_no, "malformed log probability '" + value + "'");
    }
    pieces.push_back(std::move(p));
  }
  if (pieces.size() != count) {
    throw LoadError(path.string(), line_no,
                    "header declares " + std::to_string(count) + " pieces, found " +
                        std::to_string(pieces.size()));
  }
  if (count < static_cast<std::size_t>(kNumSpecials)) {
    throw LoadError(path.string(), 1, "missing special pieces");
  }
  for (int i = 0; i < kNumSpecials; ++i) {
    if (pieces[i].surface != kSpecialSurfaces[i]) {
      throw LoadError(path.string(), i + 2, "expected special piece " +
                                                std::string(kSpecialSurfaces[i]));
    }
  }
  pieces.erase(pieces.begin(), pieces.begin() + kNumSpecials);
  try {
    return FromPieces(std::move(pieces), /*normalize=*/false, smoothing);
  } catch (const ArgumentError& e) {
    throw LoadError(path.string(), 0, e.what());
  }
}

// ----------------------------------------------------------------- training

namespace {

struct TrainingState {
  std::vector<std::u32string> surfaces;
  std::vector<double> logprobs;
  std::vector<bool> protect;  // single characters and required pieces

  Segmenter MakeSegmenter() const { return Segmenter(surfaces, logprobs, kNegInf); }

  void Keep(const std::vector<bool>& keep) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
      if (!keep[i]) continue;
      if (out != i) surfaces[out] = std::move(surfaces[i]);
      logprobs[out] = logprobs[i];
      protect[out] = protect[i];
      ++out;
    }
    surfaces.resize(out);
    logprobs.resize(out);
    protect.resize(out);
  }
};

using WordList = std::vector<std::pair<std::u32string, double>>;

// Expected counts below this are dropped at the M-step (protected pieces are
// floored to it instead).
constexpr double kMinExpectedCount = 0.5;

void RunEm(TrainingState& state, const WordList& words, const ULMConfig& config,
           TrainingTrace* trace) {
  double previous = std::numeric_limits<double>::quiet_NaN();
  for (int it = 0; it < std::max(config.em_subiterations, 1); ++it) {
    const Segmenter segmenter = state.MakeSegmenter();
    std::vector<double> counts(state.surfaces.size(), 0.0);
    double log_likelihood = 0.0;
    for (const auto& [word, freq] : words) {
      log_likelihood += freq * segmenter.ExpectedCounts(word, freq, counts);
    }
    std::vector<bool> keep(counts.size(), true);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] < kMinExpectedCount) {
        if (state.protect[i]) {
          counts[i] = kMinExpectedCount;
        } else {
          keep[i] = false;
        }
      }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (keep[i]) total += counts[i];
    }
    const double log_total = std::log(total);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      state.logprobs[i] = keep[i] ? std::log(counts[i]) - log_total : kNegInf;
    }
    state.Keep(keep);
    if (trace != nullptr) {
      double mass = 0.0;
      for (double lp : state.logprobs) mass += std::exp(lp);
      trace->log_likelihoods.push_back(log_likelihood);
      trace->sizes.push_back(state.surfaces.size());
      trace->probability_mass.push_back(mass);
    }
    if (std::isfinite(previous) &&
        std::abs(log_likelihood - previous) <= config.convergence * std::abs(previous)) {
      break;
    }
    previous = log_likelihood;
  }
}

// Removes the lowest-utility fraction of unprotected pieces, where utility
// approximates the corpus likelihood lost if the piece were replaced by its
// best alternative segmentation.
void Prune(TrainingState& state, const WordList& words, const ULMConfig& config,
           std::size_t target_pieces) {
  const Segmenter segmenter = state.MakeSegmenter();
  const std::size_t n = state.surfaces.size();
  std::vector<double> freq(n, 0.0);
  for (const auto& [word, f] : words) {
    for (int p : segmenter.Viterbi(word)) {
      if (p >= 0) freq[p] += f;
    }
  }
  double sum = 0.0;
  for (double f : freq) sum += f;
  const double log_sum = std::log(sum);

  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (state.protect[i]) continue;
    double utility = kNegInf;
    if (freq[i] > 0.0) {
      const std::vector<int> alt = segmenter.Viterbi(state.surfaces[i], nullptr, static_cast<int>(i));
      const double log_sp = std::log(freq[i]) - log_sum;
      const double log_sum_alt =
          std::log(sum + freq[i] * (static_cast<double>(alt.size()) - 1.0));
      double log_alt = 0.0;
      for (int a : alt) log_alt += std::log(freq[a] + freq[i]) - log_sum_alt;
      utility = freq[i] / sum * (log_sp - log_alt);
    }
    candidates.emplace_back(utility, i);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return state.surfaces[a.second] < state.surfaces[b.second];
  });
  const std::size_t excess = n > target_pieces ? n - target_pieces : 0;
  const auto fraction =
      static_cast<std::size_t>(std::floor(config.prune_fraction * static_cast<double>(n)));
  const std::size_t remove =
      std::min({excess, std::max<std::size_t>(fraction, 1), candidates.size()});
  std::vector<bool> keep(n, true);
  for (std::size_t k = 0; k < remove; ++k) keep[candidates[k].second] = false;
  state.Keep(keep);
}

}  // namespace

VocabModel TrainUlm(std::span<const std::string> corpus, std::size_t target_vocab,
                    const ULMConfig& config, TrainingTrace* trace) {
  if (corpus.empty()) throw ArgumentError("train_ulm: empty corpus");
  if (config.max_piece_length < 1) throw ArgumentError("train_ulm: max_piece_length must be >= 1");
  if (!(config.prune_fraction > 0.0 && config.prune_fraction < 1.0)) {
    throw ArgumentError("train_ulm: prune_fraction must be in (0, 1)");
  }

  std::unordered_map<std::u32string, double> word_counts;
  for (const std::string& line : corpus) {
    for (auto& w : PrepareWords(line)) word_counts[std::move(w)] += 1.0;
  }
  if (word_counts.empty()) throw ArgumentError("train_ulm: corpus has no characters");
  WordList words(word_counts.begin(), word_counts.end());
  std::sort(words.begin(), words.end());

  std::map<char32_t, double> chars;
  std::unordered_map<std::u32string, double> substrings;
  for (const auto& [w, f] : words) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      chars[w[i]] += f;
      for (std::size_t len = 2; len <= config.max_piece_length && i + len <= w.size(); ++len) {
        substrings[w.substr(i, len)] += f;
      }
    }
  }

  std::vector<std::pair<std::u32string, double>> required;
  for (const std::string& r : config.required_pieces) {
    const std::u32string s = utf8::Decode(r);
    if (s.size() < 2) continue;
    double count = 0.0;
    for (const auto& [w, f] : words) {
      for (std::size_t pos = w.find(s); pos != std::u32string::npos; pos = w.find(s, pos + 1)) {
        count += f;
      }
    }
    if (count > 0.0) required.emplace_back(s, count);
  }

  const std::size_t floor = chars.size() + required.size() + kNumSpecials;
  if (target_vocab < floor) {
    throw ArgumentError("train_ulm: target vocabulary " + std::to_string(target_vocab) +
                        " is below the coverage floor " + std::to_string(floor) + " (" +
                        std::to_string(chars.size()) + " characters)");
  }
  const std::size_t target_pieces = target_vocab - kNumSpecials;

  // Seed: frequent substrings, most frequent first, capped.
  std::set<std::u32string> required_set;
  for (const auto& [s, c] : required) required_set.insert(s);
  std::vector<std::pair<std::u32string, double>> seeds;
  for (auto& [s, c] : substrings) {
    if (c >= static_cast<double>(config.min_seed_count) && !required_set.count(s)) {
      seeds.emplace_back(s, c);
    }
  }
  std::sort(seeds.begin(), seeds.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t cap = config.seed_cap_factor * target_vocab;
  const std::size_t room = cap > chars.size() + required.size()
                               ? cap - chars.size() - required.size()
                               : 0;
  if (seeds.size() > room) seeds.resize(room);

  TrainingState state;
  auto add = [&](std::u32string s, double count, bool protect) {
    state.surfaces.push_back(std::move(s));
    state.logprobs.push_back(std::log(count));
    state.protect.push_back(protect);
  };
  for (const auto& [c, f] : chars) add(std::u32string(1, c), f, true);
  for (auto& [s, f] : required) add(s, f, true);
  for (auto& [s, f] : seeds) add(s, f, false);
  double total = 0.0;
  for (double lp : state.logprobs) total += std::exp(lp);
  for (double& lp : state.logprobs) lp -= std::log(total);

  RunEm(state, words, config, trace);
  while (state.surfaces.size() > target_pieces) {
    const std::size_t before = state.surfaces.size();
    Prune(state, words, config, target_pieces);
    if (state.surfaces.size() == before) {
      throw ArgumentError("train_ulm: pruning made no progress");
    }
    RunEm(state, words, config, trace);
  }

  std::vector<Piece> pieces;
  pieces.reserve(state.surfaces.size());
  for (std::size_t i = 0; i < state.surfaces.size(); ++i) {
    pieces.push_back(Piece{utf8::Encode(state.surfaces[i]), state.logprobs[i]});
  }
  std::sort(pieces.begin(), pieces.end(), [](const Piece& a, const Piece& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.surface < b.surface;
  });
  return VocabModel::FromPieces(std::move(pieces), /*normalize=*/false,
                                config.smoothing_default);
}

}  // namespace morphseg::ulm
