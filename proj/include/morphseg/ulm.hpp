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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "morphseg/random.hpp"

// Unigram language model subword tokenizer: every piece carries an
// independent log probability, a segmentation scores as the sum of its
// pieces, and training alternates EM with likelihood-based pruning.
namespace morphseg::ulm {

// Prefix marking the start of every whitespace-separated word.
inline constexpr std::string_view kWordBoundary = "▁";
inline constexpr char32_t kWordBoundaryChar = U'▁';

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecials = 4;

inline constexpr std::string_view kUnkRendering = "⁇";

struct Piece {
  std::string surface;
  double logprob = 0.0;

  bool operator==(const Piece&) const = default;
};

// Scored segmentation lattice over plain code point strings. Piece indices
// are local to the segmenter; -1 stands for an unknown single character.
class Segmenter {
 public:
  static constexpr int kUnknown = -1;

  Segmenter() = default;
  Segmenter(std::vector<std::u32string> surfaces, std::vector<double> logprobs,
            double unknown_logprob);

  std::size_t size() const { return logprobs_.size(); }
  const std::u32string& surface(int index) const { return surfaces_[index]; }
  double logprob(int index) const {
    return index == kUnknown ? unknown_logprob_ : logprobs_[index];
  }

  // Best path by total log probability; ties go to fewer pieces, then to the
  // longest leading piece. `excluded` removes one piece from the lattice.
  std::vector<int> Viterbi(std::u32string_view text, double* score = nullptr,
                           int excluded = -2) const;

  // Adds weight * E[count of each piece] into `counts` (size() entries) and
  // returns the log marginal likelihood of `text`.
  double ExpectedCounts(std::u32string_view text, double weight, std::span<double> counts) const;

  // Draws a path with probability proportional to exp(smoothing * score).
  std::vector<int> Sample(std::u32string_view text, double smoothing, Rng& rng) const;

  double PathScore(std::span<const int> path) const;

 private:
  struct Edge {
    std::size_t begin;
    std::size_t end;
    int piece;
  };
  // Edges grouped by end position, ordered by begin.
  std::vector<std::vector<Edge>> Lattice(std::u32string_view text, int excluded = -2) const;

  std::vector<std::u32string> surfaces_;
  std::vector<double> logprobs_;
  double unknown_logprob_ = -100.0;
  std::size_t max_length_ = 0;
  // Trie: (node << 21 | code point) -> child node.
  std::unordered_map<std::uint64_t, std::uint32_t> children_;
  std::vector<int> terminal_;  // node -> piece index or -2
};

class VocabModel {
 public:
  VocabModel() = default;

  // Builds a model from non-special pieces; specials are prepended with ids
  // 0..3. With `normalize`, log probabilities are shifted so the pieces'
  // probabilities sum to one.
  static VocabModel FromPieces(std::vector<Piece> pieces, bool normalize = false,
                               double smoothing_default = 0.1);

  int size() const { return static_cast<int>(pieces_.size()); }
  const Piece& piece(int id) const;
  std::span<const Piece> pieces() const { return pieces_; }
  std::optional<int> IdOf(std::string_view surface) const;
  bool IsSpecial(int id) const { return id >= 0 && id < kNumSpecials; }
  double smoothing_default() const { return smoothing_default_; }

  // Single characters the model can always emit.
  bool Covers(char32_t c) const;

  std::vector<int> Encode(std::string_view text) const;
  std::vector<int> EncodeSample(std::string_view text, double smoothing,
                                std::uint64_t seed) const;
  std::string Decode(std::span<const int> ids) const;

  // Sum of piece log probabilities along `ids`.
  double Score(std::span<const int> ids) const;

  void Save(const std::filesystem::path& path) const;
  static VocabModel Load(const std::filesystem::path& path);

  const Segmenter& segmenter() const { return segmenter_; }

 private:
  void Rebuild();

  std::vector<Piece> pieces_;
  std::unordered_map<std::string, int> index_;
  Segmenter segmenter_;
  double smoothing_default_ = 0.1;
};

struct ULMConfig {
  std::size_t max_piece_length = 8;
  std::size_t min_seed_count = 2;
  std::size_t seed_cap_factor = 20;
  double prune_fraction = 0.2;
  int em_subiterations = 2;
  double convergence = 1e-4;
  double smoothing_default = 0.1;
  // Kept through pruning when they occur in the corpus (the word-initial
  // morpheme marker by default, so the boundary has a dedicated id).
  std::vector<std::string> required_pieces{std::string(kWordBoundary) + "@@"};
};

// Called after every M-step and pruning round; for diagnostics and tests.
struct TrainingTrace {
  std::vector<double> log_likelihoods;
  std::vector<std::size_t> sizes;
  std::vector<double> probability_mass;
};

// `target_vocab` counts the four specials.
VocabModel TrainUlm(std::span<const std::string> corpus, std::size_t target_vocab,
                    const ULMConfig& config = {}, TrainingTrace* trace = nullptr);

// Words of `text` with the boundary prefix applied, as code points.
std::vector<std::u32string> PrepareWords(std::string_view text);

}  // namespace morphseg::ulm
