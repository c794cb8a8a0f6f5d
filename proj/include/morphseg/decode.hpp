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
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "morphseg/model.hpp"
#include "morphseg/ulm.hpp"

namespace morphseg::decode {

struct Hypothesis {
  std::vector<int> ids;  // generated tokens, bos excluded; ends with eos when finished
  double score = 0.0;    // sum of per-step log-scores
  bool finished = false;
};

// Next-token log-scores for a prefix that starts with bos. Entries may be -inf.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<double> NextScores(std::span<const int> prefix) = 0;
};

enum class ScoreMapping { kEntmax15, kSoftmax };

// Log of entmax-1.5 (or softmax) probabilities; -inf outside the support.
std::vector<double> LogScores(std::span<const double> logits, ScoreMapping mapping);

struct BeamConfig {
  std::size_t beam = 5;
  std::size_t max_len = 0;  // 0: DefaultMaxLen of the source
  double length_penalty = 1.0;
  int bos = ulm::kBosId;
  int eos = ulm::kEosId;
};

std::size_t DefaultMaxLen(std::size_t source_tokens);

// score / length^penalty, length counting eos.
double RankingScore(const Hypothesis& h, double length_penalty);

// Each live hypothesis proposes its `beam` best continuations (ties: lower
// token id); candidates are ranked by cumulative score (ties: lexicographically
// smaller ids). Walking that order, finished candidates retire into the final
// pool and unfinished ones fill the live beam until it holds `beam` entries.
// Stops when no live hypothesis remains or after max_len tokens; the best
// hypothesis by RankingScore over retired and surviving ones is returned.
Hypothesis BeamSearch(StepScorer& scorer, const BeamConfig& config);

// Argmax continuation at every step (ties: lower token id).
Hypothesis Greedy(StepScorer& scorer, std::size_t max_len, int bos = ulm::kBosId,
                  int eos = ulm::kEosId);

// Incremental scorer over a trained model; caches decoder states per prefix.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const model::Transformer<float>& model, std::span<const int> src,
              ScoreMapping mapping = ScoreMapping::kEntmax15);
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  std::vector<double> NextScores(std::span<const int> prefix) override;

 private:
  const model::Transformer<float>& model_;
  model::EncoderCache<float> cache_;
  ScoreMapping mapping_;
  std::map<std::vector<int>, model::DecoderState<float>> states_;
  std::size_t last_length_ = 0;
};

struct Postprocessed {
  std::string text;          // sentence-style segmentation
  bool surface_mismatch = false;
  bool repaired = false;     // spacing or marker repairs were applied
};

// Removes special-token remnants, joins detached markers ("@@ x" -> "@@x"),
// converts inline markers to sentence style and flags predictions whose
// surface differs from `source`. The prediction itself is never replaced.
Postprocessed Postprocess(std::string_view raw, std::string_view source);

struct Prediction {
  std::string source;
  std::string raw;
  Postprocessed output;
  Hypothesis hypothesis;
};

struct PredictOptions {
  BeamConfig beam;
  ScoreMapping mapping = ScoreMapping::kEntmax15;
  std::size_t workers = 1;
};

// Decodes every source independently; output order follows input order
// regardless of worker count.
std::vector<Prediction> Predict(const model::Transformer<float>& model,
                                const ulm::VocabModel& vocab,
                                std::span<const std::string> sources,
                                const PredictOptions& options);

// `source<TAB>prediction<TAB>flags` lines; flags are "ok" or a comma list of
// "surface_mismatch" and "repaired".
std::string FormatPredictions(std::span<const Prediction> predictions);

}  // namespace morphseg::decode
