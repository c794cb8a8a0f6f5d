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
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "morphseg/checkpoint.hpp"
#include "morphseg/corpus.hpp"
#include "morphseg/model.hpp"
#include "morphseg/ulm.hpp"

namespace morphseg::train {

struct TrainConfig {
  std::size_t max_updates = 400000;
  std::size_t warmup_steps = 4000;
  double peak_lr = 5e-4;
  std::size_t batch_tokens = 8192;
  bool batch_sentences = false;  // batch_tokens counts sentences instead
  std::size_t patience = 10;
  std::size_t eval_interval = 0;  // 0: min(one epoch, 2000 updates)
  std::uint64_t seed = 1;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double alpha = 1.5;
  // Above zero, training sources and targets are tokenized once with sampled
  // segmentations at this smoothing instead of the Viterbi path.
  double sampling_smoothing = 0.0;

  void Validate() const;
  std::string ToText() const;
  static TrainConfig FromMap(const std::map<std::string, std::string>& values,
                             bool strict = true);
};

// peak_lr * min(step / warmup, sqrt(warmup / step)); step >= 1.
double LrAt(std::size_t step, const TrainConfig& config);

// Source ids end with eos; target ids carry neither bos nor eos.
struct TokenizedExample {
  std::vector<int> src;
  std::vector<int> tgt;
};

TokenizedExample Tokenize(const ulm::VocabModel& vocab, const corpus::SentencePair& pair);
std::vector<TokenizedExample> TokenizeDataset(const ulm::VocabModel& vocab,
                                              const corpus::Dataset& data,
                                              double sampling_smoothing = 0.0,
                                              std::uint64_t seed = 0);

// Decoder input (bos + tgt) and gold output (tgt + eos).
model::Example ToExample(const TokenizedExample& e);
std::vector<int> TargetOut(const TokenizedExample& e);

using Batch = std::vector<std::size_t>;

// One epoch of batches: examples shuffled by (seed, epoch), stably sorted by
// length, packed greedily so rows * longest side stays within `budget` (or
// rows <= budget when counting sentences), then batch order shuffled.
// Examples above the budget on their own become singletons and are reported
// through `oversized`.
std::vector<Batch> MakeBatches(std::span<const TokenizedExample> data, std::size_t budget,
                               std::uint64_t seed, std::size_t epoch,
                               bool count_sentences = false,
                               std::vector<std::size_t>* oversized = nullptr);

// Batches in length order without shuffling (dev and inference).
std::vector<Batch> SequentialBatches(std::span<const TokenizedExample> data, std::size_t budget);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

// Bias-corrected Adam. `state.step` is incremented before the update.
void AdamStep(model::Parameters<float>& params, std::span<const ad::Tensor<float>> grads,
              ckpt::OptimizerState& state, double lr, const AdamConfig& config);
ckpt::OptimizerState ZeroOptimizerState(const model::Parameters<float>& params);

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double ClipGradients(std::span<ad::Tensor<float>> grads, double max_norm);

// Token-weighted mean entmax loss in eval mode.
double DevLoss(const model::Transformer<float>& model, std::span<const TokenizedExample> dev,
               std::size_t budget, double alpha = 1.5);

struct Progress {
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // token-weighted since the previous validation
  double dev_loss = 0.0;
  bool improved = false;
};

struct Hooks {
  // Replaces the computed dev loss (tests of the stopping rule).
  std::function<double(std::size_t step, double computed)> dev_loss;
  std::function<void(const Progress&)> on_validation;
  // Called after every update with the batch's mean token loss.
  std::function<void(std::size_t step, double loss)> on_update;
  // Stop after this many updates in this invocation, saving resumable state.
  std::size_t interrupt_after = 0;
  std::ostream* log = nullptr;  // progress lines; nullptr silences them
};

struct TrainResult {
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_dev_loss = 0.0;
  std::size_t validations = 0;
  bool early_stopped = false;
  bool interrupted = false;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trains from `init` (or from `out_dir`/last when `resume`). Writes
// `out_dir`/best (lowest dev loss) and `out_dir`/last (resumable state).
// Throws TrainingError on a non-finite loss after saving `out_dir`/diagnostic.
TrainResult Train(const model::ModelConfig& model_config, const model::Parameters<float>& init,
                  const ulm::VocabModel& tokenizer, std::span<const TokenizedExample> train,
                  std::span<const TokenizedExample> dev, const TrainConfig& config,
                  const std::filesystem::path& out_dir, const Hooks& hooks = {},
                  bool resume = false);

}  // namespace morphseg::train
