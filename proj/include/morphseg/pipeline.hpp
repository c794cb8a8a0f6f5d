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
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "morphseg/checkpoint.hpp"
#include "morphseg/corpus.hpp"
#include "morphseg/decode.hpp"
#include "morphseg/evaluation.hpp"
#include "morphseg/synth.hpp"
#include "morphseg/trainer.hpp"
#include "morphseg/ulm.hpp"

// File-level stages shared by the command-line subcommands and by whole
// experiments, so a config run and the same stages run by hand agree.
namespace morphseg::pipeline {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr std::string_view kDefaultLanguage = "und";

// "ces=train.tsv", or a bare path tagged kDefaultLanguage.
struct LanguagePath {
  std::string language;
  std::filesystem::path path;
};
LanguagePath ParseLanguagePath(std::string_view spec);

struct AugmentSpec {
  std::vector<LanguagePath> sentences;
  std::vector<LanguagePath> words;  // matched to sentences by language
  std::size_t upsample = 1;
  bool language_token = false;
  // Upsample the augmented union (default) or the sentences alone, adding
  // each word list once afterwards.
  bool upsample_words = true;
};

// Each language's sentences followed by its words, languages concatenated
// in the order they first appear, then upsampled per `upsample_words`.
corpus::Dataset BuildTrainingSet(const AugmentSpec& spec);

// Trained on the sources and targets of every pair.
ulm::VocabModel TrainTokenizer(std::span<const corpus::Dataset> data, std::size_t vocab_size);

struct TrainSpec {
  model::ModelConfig model;
  train::TrainConfig train;
  std::uint64_t init_seed = 1;

  // "model.<key>", "train.<key>" and "init_seed"; unknown keys throw.
  static TrainSpec FromMap(const std::map<std::string, std::string>& values);
  std::string ToText() const;
};

// Tokenizes (sampled when train.sampling_smoothing > 0) and trains into
// out_dir/{best,last}. The model vocabulary size comes from the tokenizer.
train::TrainResult TrainModel(const TrainSpec& spec, const ulm::VocabModel& tokenizer,
                              const corpus::Dataset& train_set, const corpus::Dataset& dev_set,
                              const std::filesystem::path& out_dir, std::ostream* log,
                              bool resume = false);

struct PredictSpec {
  decode::PredictOptions options;
  std::string language_token;  // prepended to sources when non-empty
};

std::vector<decode::Prediction> PredictSources(const ckpt::Checkpoint& checkpoint,
                                               std::span<const std::string> sources,
                                               const PredictSpec& spec);

// One column (0-based) of every non-empty line; a missing column is a
// FormatError.
std::vector<std::string> ReadColumn(const std::filesystem::path& path, std::size_t column);
// First column of a TSV file, or whole lines of a plain text file.
std::vector<std::string> ReadSources(const std::filesystem::path& path);

// Gold and predicted segmentations are the second column of each file.
eval::EvalReport EvaluateFiles(const std::filesystem::path& gold,
                               const std::filesystem::path& predictions);

// Writes train.tsv, dev.tsv, test.tsv and words.tsv.
void WriteSynthetic(const synth::SynthCorpus& corpus, const std::filesystem::path& dir);

// Test occurrences whose ambiguous word is predicted with the gold
// segmentation, matched through the word alignment.
struct AmbiguityScore {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : double(correct) / double(total); }
};
AmbiguityScore ScoreAmbiguous(const synth::SynthCorpus& corpus,
                              std::span<const std::string> predictions);

struct LanguageFiles {
  std::filesystem::path train, dev, test, words;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<std::string> languages{"syn"};
  bool synthetic = true;
  synth::SynthConfig synth;  // language i is generated with seed synth.seed + i
  std::map<std::string, LanguageFiles> files;  // when not synthetic
  bool word_augmentation = false;
  std::size_t upsample = 1;
  bool upsample_words = true;
  bool language_token = false;
  std::size_t vocab_size = 200;
  TrainSpec train;
  std::string checkpoint = "best";  // or "last"
  decode::PredictOptions predict;

  // key = value lines, '#' comments; unknown keys throw ArgumentError.
  static ExperimentConfig FromText(const std::string& text);
  std::string ToText() const;
  void Validate() const;
};

struct LanguageOutcome {
  std::string language;
  eval::EvalReport report;
  std::optional<AmbiguityScore> ambiguity;  // synthetic data only
};

struct ExperimentOutcome {
  train::TrainResult training;
  std::vector<LanguageOutcome> languages;
};

// Runs every stage under out_dir:
//   data/<lang>/{train,dev,test,words}.tsv  (synthetic data)
//   train.tsv, dev.tsv, tokenizer.vocab, model/{best,last}
//   predictions/<lang>.tsv, reports/<lang>.txt, summary.txt
ExperimentOutcome RunExperiment(const ExperimentConfig& config,
                                const std::filesystem::path& out_dir, std::ostream* log);

}  // namespace morphseg::pipeline
