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
#include <limits>
#include <map>
#include <optional>
#include <string>

#include "morphseg/model.hpp"
#include "morphseg/ulm.hpp"

// Checkpoint directory layout:
//   config           key=value model hyperparameters
//   params.bin       MSQP1 tensor records (float32, little endian)
//   tokenizer.model  ulm-v1 tokenizer
//   meta             key=value training progress
//   optim.bin        optional Adam moments, same record format
namespace morphseg::ckpt {

struct Meta {
  std::size_t step = 0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  std::size_t validations = 0;
  std::size_t since_best = 0;
  std::size_t epoch = 0;
  std::size_t cursor = 0;  // next batch within the epoch
  double last_dev_loss = std::numeric_limits<double>::quiet_NaN();
  // Training loss accumulated since the last validation.
  double window_loss = 0.0;
  std::size_t window_tokens = 0;

  std::string ToText() const;
  static Meta FromText(const std::string& text);
};

void WriteTensors(const std::filesystem::path& path, const model::Parameters<float>& tensors);
model::Parameters<float> ReadTensors(const std::filesystem::path& path);

// key=value lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> ParseKeyValues(const std::string& text,
                                                  const std::string& source = "");
std::string ReadFile(const std::filesystem::path& path);
// Writes to a sibling temporary and renames over `path`.
void WriteFileAtomic(const std::filesystem::path& path, const std::string& data);

struct OptimizerState {
  std::size_t step = 0;
  model::Parameters<float> first;
  model::Parameters<float> second;
};

struct Checkpoint {
  model::ModelConfig config;
  model::Parameters<float> params;
  ulm::VocabModel tokenizer;
  Meta meta;
  std::optional<OptimizerState> optimizer;
};

void Save(const std::filesystem::path& dir, const Checkpoint& checkpoint);
// Throws LoadError on missing or malformed files; validates tensor names and
// shapes against the config.
Checkpoint Load(const std::filesystem::path& dir, bool with_optimizer = false);

}  // namespace morphseg::ckpt
