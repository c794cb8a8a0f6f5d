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

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "doctest.h"
#include "morphseg/checkpoint.hpp"
#include "morphseg/errors.hpp"
#include "morphseg/trainer.hpp"
#include "test_util.hpp"

using namespace morphseg;
using namespace morphseg::train;
using morphseg::testing::TempDir;

namespace {

ulm::VocabModel CopyVocab() {
  std::vector<ulm::Piece> pieces;
  for (char c = 'a'; c < 'i'; ++c) pieces.push_back({std::string("▁") + c, -2.0});
  return ulm::VocabModel::FromPieces(pieces, /*normalize=*/true);
}

model::ModelConfig CopyModel(std::size_t vocab) {
  model::ModelConfig c;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.d_model = 32;
  c.d_ffn = 64;
  c.dropout = 0.0;
  c.max_positions = 32;
  c.vocab_size = vocab;
  return c;
}

// Target equals source over the eight word ids.
std::vector<TokenizedExample> CopyData(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenizedExample> out(n);
  for (auto& e : out) {
    const std::size_t len = 2 + rng.Below(4);
    for (std::size_t i = 0; i < len; ++i) e.tgt.push_back(4 + static_cast<int>(rng.Below(8)));
    e.src = e.tgt;
    e.src.push_back(ulm::kEosId);
  }
  return out;
}

TokenizedExample OfLength(std::size_t n) {
  TokenizedExample e;
  e.src.assign(n, 5);
  e.tgt.assign(n > 1 ? n - 1 : 1, 6);
  return e;
}

TrainConfig SmallTrainConfig() {
  TrainConfig c;
  c.max_updates = 60;
  c.warmup_steps = 10;
  c.peak_lr = 3e-3;
  c.batch_tokens = 60;
  c.eval_interval = 10;
  c.patience = 100;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.peak_lr = 5e-4;
  c.warmup_steps = 4000;
  CHECK(LrAt(4000, c) == 5e-4);
  CHECK(LrAt(16000, c) == doctest::Approx(2.5e-4).epsilon(1e-15));
  CHECK(LrAt(2000, c) == doctest::Approx(2.5e-4).epsilon(1e-15));
  // Both branches meet at the end of warmup.
  CHECK(std::abs(LrAt(4000, c) - LrAt(3999, c)) <= 5e-4 / 4000 + 1e-15);
  CHECK(std::abs(LrAt(4001, c) - LrAt(4000, c)) <= 5e-4 / 8000 + 1e-15);
  for (std::size_t s = 1; s < 4000; s += 37) CHECK(LrAt(s + 1, c) > LrAt(s, c));
  for (std::size_t s = 4000; s < 40000; s += 371) CHECK(LrAt(s + 1, c) < LrAt(s, c));
  CHECK_THROWS_AS(LrAt(0, c), ArgumentError);
}

TEST_CASE("config validation and text round trip") {
  TrainConfig c = SmallTrainConfig();
  c.sampling_smoothing = 0.25;
  const auto back = TrainConfig::FromMap(ckpt::ParseKeyValues(c.ToText()));
  CHECK(back.ToText() == c.ToText());
  TrainConfig bad = c;
  bad.patience = 0;
  CHECK_THROWS_AS(bad.Validate(), ArgumentError);
  bad = c;
  bad.peak_lr = 0;
  CHECK_THROWS_AS(bad.Validate(), ArgumentError);
  CHECK_THROWS_AS(TrainConfig::FromMap({{"no_such_key", "1"}}), ArgumentError);
}

TEST_CASE("tokenization adds the sequence markers") {
  const auto vocab = CopyVocab();
  const auto pair = corpus::MakePair("ab", "a @@b", "syn");
  const auto e = Tokenize(vocab, pair);
  CHECK(e.src.back() == ulm::kEosId);
  CHECK(e.tgt.back() != ulm::kEosId);
  const auto ex = ToExample(e);
  CHECK(ex.tgt_in.front() == ulm::kBosId);
  CHECK(ex.tgt_in.size() == e.tgt.size() + 1);
  const auto out = TargetOut(e);
  CHECK(out.back() == ulm::kEosId);
  CHECK(std::equal(e.tgt.begin(), e.tgt.end(), out.begin()));
  CHECK(std::equal(e.tgt.begin(), e.tgt.end(), ex.tgt_in.begin() + 1));
}

TEST_CASE("batching") {
  SUBCASE("long example isolated") {
    const std::vector<TokenizedExample> data = {OfLength(10), OfLength(10), OfLength(4000)};
    const auto batches = MakeBatches(data, 8192, 1, 0);
    REQUIRE(batches.size() == 2);
    for (const auto& b : batches) {
      if (b.size() == 1) CHECK(b[0] == 2);
      else CHECK(b.size() == 2);
    }
    std::vector<std::size_t> oversized;
    MakeBatches(data, 1000, 1, 0, false, &oversized);
    CHECK(oversized == std::vector<std::size_t>{2});
  }
  SUBCASE("partition, budget and determinism") {
    const auto data = CopyData(500, 3);
    for (std::size_t epoch = 0; epoch < 3; ++epoch) {
      const auto batches = MakeBatches(data, 40, 9, epoch);
      std::vector<int> seen(data.size(), 0);
      for (const auto& b : batches) {
        std::size_t longest = 0;
        for (auto i : b) {
          ++seen[i];
          longest = std::max({longest, data[i].src.size(), data[i].tgt.size() + 1});
        }
        CHECK(b.size() * longest <= 40);
      }
      for (int s : seen) CHECK(s == 1);
      CHECK(MakeBatches(data, 40, 9, epoch) == batches);
    }
    CHECK(MakeBatches(data, 40, 9, 0) != MakeBatches(data, 40, 9, 1));
    const auto by_count = MakeBatches(data, 7, 9, 0, /*count_sentences=*/true);
    for (const auto& b : by_count) CHECK(b.size() <= 7);
    CHECK_THROWS_AS(MakeBatches(std::span<const TokenizedExample>(), 40, 1, 0), ArgumentError);
  }
}

TEST_CASE("adam and clipping") {
  const auto config = CopyModel(12);
  auto params = model::InitParams<float>(config, 5);
  const auto before = params;
  auto state = ZeroOptimizerState(params);
  std::vector<ad::Tensor<float>> zeros;
  for (const auto& t : params.tensors) zeros.emplace_back(t.shape());
  AdamStep(params, zeros, state, 1e-2, {});
  CHECK(state.step == 1);
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params.tensors[i] == before.tensors[i]);

  std::vector<ad::Tensor<float>> grads = {ad::Tensor<float>(ad::Shape{2}, {3.0f, 4.0f}),
                                          ad::Tensor<float>(ad::Shape{1}, {12.0f})};
  CHECK(ClipGradients(grads, 1.0) == doctest::Approx(13.0));
  double norm = 0;
  for (const auto& g : grads) for (float v : g.storage()) norm += double(v) * v;
  CHECK(std::sqrt(norm) <= 1.0 + 1e-6);
  CHECK(grads[1][0] == doctest::Approx(12.0 / 13.0));
  std::vector<ad::Tensor<float>> small = {ad::Tensor<float>(ad::Shape{1}, {0.5f})};
  ClipGradients(small, 1.0);
  CHECK(small[0][0] == 0.5f);
}

TEST_CASE("copy task converges and the best checkpoint is consistent") {
  TempDir dir;
  const auto vocab = CopyVocab();
  const auto config = CopyModel(static_cast<std::size_t>(vocab.size()));
  const auto data = CopyData(32, 11);
  TrainConfig tc;
  tc.max_updates = 2000;
  tc.warmup_steps = 100;
  tc.peak_lr = 3e-3;
  tc.batch_tokens = 64;
  tc.eval_interval = 100;
  tc.patience = 100;
  std::vector<double> dev_losses;
  Hooks hooks;
  hooks.on_validation = [&](const Progress& p) { dev_losses.push_back(p.dev_loss); };
  const auto result = Train(config, model::InitParams<float>(config, 1), vocab, data, data, tc,
                            dir.path(), hooks);
  REQUIRE(!dev_losses.empty());
  INFO("final dev loss " << dev_losses.back());
  CHECK(*std::min_element(dev_losses.begin(), dev_losses.end()) < 0.05);
  CHECK(result.best_dev_loss == *std::min_element(dev_losses.begin(), dev_losses.end()));

  const auto best = ckpt::Load(dir / "best");
  CHECK(best.meta.best_dev_loss == result.best_dev_loss);
  CHECK(best.meta.step == result.best_step);
  const model::Transformer<float> m(best.config, best.params);
  CHECK(std::abs(DevLoss(m, data, tc.batch_tokens) - best.meta.best_dev_loss) < 1e-5);
  const auto last = ckpt::Load(dir / "last", /*with_optimizer=*/true);
  CHECK(last.meta.step == result.steps);
  REQUIRE(last.optimizer.has_value());
  CHECK(last.optimizer->step == result.steps);
}

TEST_CASE("patience stops after exactly that many stale validations") {
  TempDir dir;
  const auto vocab = CopyVocab();
  const auto config = CopyModel(static_cast<std::size_t>(vocab.size()));
  const auto data = CopyData(16, 2);
  TrainConfig tc = SmallTrainConfig();
  tc.max_updates = 1000;
  tc.patience = 2;
  Hooks hooks;
  hooks.dev_loss = [](std::size_t, double) { return 1.0; };
  std::vector<Progress> seen;
  hooks.on_validation = [&](const Progress& p) { seen.push_back(p); };
  const auto r = Train(config, model::InitParams<float>(config, 1), vocab, data, data, tc,
                       dir.path(), hooks);
  CHECK(r.early_stopped);
  REQUIRE(seen.size() == 3);
  CHECK(seen[0].improved);
  CHECK(!seen[1].improved);
  CHECK(!seen[2].improved);
  CHECK(r.steps == 3 * tc.eval_interval);
  CHECK(r.best_step == tc.eval_interval);
}

TEST_CASE("resume reproduces the uninterrupted run") {
  const auto vocab = CopyVocab();
  const auto config = CopyModel(static_cast<std::size_t>(vocab.size()));
  const auto data = CopyData(24, 5);
  TrainConfig tc = SmallTrainConfig();
  tc.max_updates = 45;
  model::ModelConfig dropped = config;
  dropped.dropout = 0.2;
  const auto init = model::InitParams<float>(dropped, 3);

  TempDir full_dir, split_dir;
  std::vector<double> full, split;
  Hooks hooks;
  hooks.on_update = [&](std::size_t, double loss) { full.push_back(loss); };
  Train(dropped, init, vocab, data, data, tc, full_dir.path(), hooks);

  hooks.on_update = [&](std::size_t, double loss) { split.push_back(loss); };
  hooks.interrupt_after = 17;
  const auto first = Train(dropped, init, vocab, data, data, tc, split_dir.path(), hooks);
  CHECK(first.interrupted);
  CHECK(first.steps == 17);
  hooks.interrupt_after = 0;
  Train(dropped, init, vocab, data, data, tc, split_dir.path(), hooks, /*resume=*/true);

  CHECK(split == full);
  const auto a = ckpt::Load(full_dir / "last"), b = ckpt::Load(split_dir / "last");
  for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(a.params.tensors[i] == b.params.tensors[i]);
  CHECK(a.meta.ToText() == b.meta.ToText());
  CHECK(ckpt::ReadFile(full_dir / "best" / "params.bin") ==
        ckpt::ReadFile(split_dir / "best" / "params.bin"));
}

TEST_CASE("non-finite loss leaves a diagnostic checkpoint") {
  TempDir dir;
  const auto vocab = CopyVocab();
  const auto config = CopyModel(static_cast<std::size_t>(vocab.size()));
  auto init = model::InitParams<float>(config, 1);
  init.Get("embed.weight")[40] = std::numeric_limits<float>::quiet_NaN();
  const auto data = CopyData(8, 1);
  CHECK_THROWS_AS(Train(config, init, vocab, data, data, SmallTrainConfig(), dir.path()),
                  TrainingError);
  CHECK(std::filesystem::exists(dir / "diagnostic" / "params.bin"));
  CHECK_THROWS_AS(Train(config, model::InitParams<float>(config, 1), vocab, data,
                        std::span<const TokenizedExample>(), SmallTrainConfig(), dir.path()),
                  ArgumentError);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir;
  const auto vocab = CopyVocab();
  ckpt::Checkpoint c;
  c.config = CopyModel(static_cast<std::size_t>(vocab.size()));
  c.params = model::InitParams<float>(c.config, 8);
  c.tokenizer = vocab;
  c.meta.step = 12;
  c.meta.best_dev_loss = 0.1234567890123;
  c.meta.window_loss = 3.5;
  c.optimizer = ZeroOptimizerState(c.params);
  c.optimizer->step = 12;
  ckpt::Save(dir / "ck", c);
  const auto back = ckpt::Load(dir / "ck", true);
  CHECK(back.config == c.config);
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    CHECK(back.params.names[i] == c.params.names[i]);
    CHECK(back.params.tensors[i] == c.params.tensors[i]);
  }
  CHECK(back.meta.ToText() == c.meta.ToText());
  CHECK(std::isnan(back.meta.last_dev_loss));
  CHECK(back.optimizer->step == 12);
  CHECK(back.tokenizer.size() == vocab.size());

  ckpt::Meta fresh;
  CHECK(std::isinf(ckpt::Meta::FromText(fresh.ToText()).best_dev_loss));

  // A config whose shapes disagree with the stored tensors is rejected.
  auto wrong = c.config;
  wrong.d_ffn = 128;
  ckpt::WriteFileAtomic(dir / "ck" / "config", wrong.ToText());
  CHECK_THROWS_AS(ckpt::Load(dir / "ck"), LoadError);
  CHECK_THROWS_AS(ckpt::Load(dir / "missing"), LoadError);
}
