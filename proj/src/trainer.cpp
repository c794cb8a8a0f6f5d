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

#include "morphseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "morphseg/errors.hpp"
#include "morphseg/random.hpp"

namespace morphseg::train {

namespace fs = std::filesystem;

void TrainConfig::Validate() const {
  auto fail = [](const std::string& what) { throw ArgumentError("train config: " + what); };
  if (max_updates == 0) fail("max_updates must be positive");
  if (warmup_steps == 0) fail("warmup_steps must be positive");
  if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
  if (batch_tokens == 0) fail("batch_tokens must be positive");
  if (patience == 0) fail("patience must be >= 1");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(alpha > 1.0)) fail("alpha must be > 1");
  if (!(sampling_smoothing >= 0.0 && sampling_smoothing <= 1.0)) {
    fail("sampling_smoothing must be in [0, 1]");
  }
}

std::string TrainConfig::ToText() const {
  std::ostringstream out;
  out.precision(17);
  out << "max_updates=" << max_updates << '\n'
      << "warmup_steps=" << warmup_steps << '\n'
      << "peak_lr=" << peak_lr << '\n'
      << "batch_tokens=" << batch_tokens << '\n'
      << "batch_sentences=" << (batch_sentences ? 1 : 0) << '\n'
      << "patience=" << patience << '\n'
      << "eval_interval=" << eval_interval << '\n'
      << "seed=" << seed << '\n'
      << "clip_norm=" << clip_norm << '\n'
      << "beta1=" << beta1 << '\n'
      << "beta2=" << beta2 << '\n'
      << "adam_eps=" << adam_eps << '\n'
      << "alpha=" << alpha << '\n'
      << "sampling_smoothing=" << sampling_smoothing << '\n';
  return out.str();
}

TrainConfig TrainConfig::FromMap(const std::map<std::string, std::string>& values, bool strict) {
  TrainConfig c;
  for (const auto& [key, value] : values) {
    try {
      if (key == "max_updates") c.max_updates = std::stoull(value);
      else if (key == "warmup_steps") c.warmup_steps = std::stoull(value);
      else if (key == "peak_lr") c.peak_lr = std::stod(value);
      else if (key == "batch_tokens") c.batch_tokens = std::stoull(value);
      else if (key == "batch_sentences") c.batch_sentences = value == "1" || value == "true";
      else if (key == "patience") c.patience = std::stoull(value);
      else if (key == "eval_interval") c.eval_interval = std::stoull(value);
      else if (key == "seed") c.seed = std::stoull(value);
      else if (key == "clip_norm") c.clip_norm = std::stod(value);
      else if (key == "beta1") c.beta1 = std::stod(value);
      else if (key == "beta2") c.beta2 = std::stod(value);
      else if (key == "adam_eps") c.adam_eps = std::stod(value);
      else if (key == "alpha") c.alpha = std::stod(value);
      else if (key == "sampling_smoothing") c.sampling_smoothing = std::stod(value);
      else if (strict) throw ArgumentError("unknown key");
    } catch (const ArgumentError& e) {
      throw ArgumentError("train config: " + key + ": " + e.what());
    } catch (const std::exception&) {
      throw ArgumentError("train config: bad value for " + key + ": '" + value + "'");
    }
  }
  return c;
}

double LrAt(std::size_t step, const TrainConfig& config) {
  if (step == 0) throw ArgumentError("lr_at: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(config.warmup_steps);
  return config.peak_lr * std::min(s / w, std::sqrt(w / s));
}

// ------------------------------------------------------------- tokenizing

TokenizedExample Tokenize(const ulm::VocabModel& vocab, const corpus::SentencePair& pair) {
  TokenizedExample e;
  e.src = vocab.Encode(pair.source);
  e.src.push_back(ulm::kEosId);
  e.tgt = vocab.Encode(pair.target);
  return e;
}

std::vector<TokenizedExample> TokenizeDataset(const ulm::VocabModel& vocab,
                                              const corpus::Dataset& data,
                                              double sampling_smoothing, std::uint64_t seed) {
  std::vector<TokenizedExample> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& pair = data.pairs[i];
    if (sampling_smoothing <= 0.0) {
      out.push_back(Tokenize(vocab, pair));
      continue;
    }
    TokenizedExample e;
    e.src = vocab.EncodeSample(pair.source, sampling_smoothing, MixKeys(seed, 2 * i));
    e.src.push_back(ulm::kEosId);
    e.tgt = vocab.EncodeSample(pair.target, sampling_smoothing, MixKeys(seed, 2 * i + 1));
    out.push_back(std::move(e));
  }
  return out;
}

model::Example ToExample(const TokenizedExample& e) {
  model::Example ex;
  ex.src = e.src;
  ex.tgt_in.reserve(e.tgt.size() + 1);
  ex.tgt_in.push_back(ulm::kBosId);
  ex.tgt_in.insert(ex.tgt_in.end(), e.tgt.begin(), e.tgt.end());
  return ex;
}

std::vector<int> TargetOut(const TokenizedExample& e) {
  std::vector<int> out = e.tgt;
  out.push_back(ulm::kEosId);
  return out;
}

// ---------------------------------------------------------------- batching

namespace {

std::size_t LengthKey(const TokenizedExample& e) { return std::max(e.src.size(), e.tgt.size() + 1); }

std::vector<Batch> Pack(std::span<const TokenizedExample> data, std::vector<std::size_t> order,
                        std::size_t budget, bool count_sentences,
                        std::vector<std::size_t>* oversized) {
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return LengthKey(data[a]) < LengthKey(data[b]);
  });
  std::vector<Batch> batches;
  Batch current;
  std::size_t longest = 0;
  for (std::size_t i : order) {
    const std::size_t len = LengthKey(data[i]);
    if (!count_sentences && len > budget) {
      if (oversized != nullptr) oversized->push_back(i);
      if (!current.empty()) batches.push_back(std::move(current));
      batches.push_back({i});
      current = {};
      longest = 0;
      continue;
    }
    const std::size_t rows = current.size() + 1;
    const bool fits = count_sentences ? rows <= budget : rows * std::max(longest, len) <= budget;
    if (!fits) {
      batches.push_back(std::move(current));
      current = {};
      longest = 0;
    }
    current.push_back(i);
    longest = std::max(longest, len);
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

}  // namespace

std::vector<Batch> MakeBatches(std::span<const TokenizedExample> data, std::size_t budget,
                               std::uint64_t seed, std::size_t epoch, bool count_sentences,
                               std::vector<std::size_t>* oversized) {
  if (data.empty()) throw ArgumentError("make_batches: empty dataset");
  if (budget == 0) throw ArgumentError("make_batches: budget must be positive");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(MixKeys(seed, epoch));
  rng.Shuffle(std::span<std::size_t>(order));
  auto batches = Pack(data, std::move(order), budget, count_sentences, oversized);
  rng.Shuffle(std::span<Batch>(batches));
  return batches;
}

std::vector<Batch> SequentialBatches(std::span<const TokenizedExample> data, std::size_t budget) {
  if (data.empty()) return {};
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  return Pack(data, std::move(order), std::max<std::size_t>(budget, 1), false, nullptr);
}

// -------------------------------------------------------------- optimizer

ckpt::OptimizerState ZeroOptimizerState(const model::Parameters<float>& params) {
  ckpt::OptimizerState s;
  s.first.names = params.names;
  s.second.names = params.names;
  for (const auto& t : params.tensors) {
    s.first.tensors.emplace_back(t.shape());
    s.second.tensors.emplace_back(t.shape());
  }
  return s;
}

void AdamStep(model::Parameters<float>& params, std::span<const ad::Tensor<float>> grads,
              ckpt::OptimizerState& state, double lr, const AdamConfig& config) {
  if (grads.size() != params.size() || state.first.size() != params.size()) {
    throw ArgumentError("adam: parameter/gradient/state count mismatch");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const float b1 = static_cast<float>(config.beta1), b2 = static_cast<float>(config.beta2);
  const float step_size = static_cast<float>(lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(config.eps);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params.tensors[p].storage();
    const auto& g = grads[p].storage();
    auto& m = state.first.tensors[p].storage();
    auto& v = state.second.tensors[p].storage();
    if (g.size() != w.size()) throw ArgumentError("adam: gradient shape mismatch for " + params.names[p]);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

double ClipGradients(std::span<ad::Tensor<float>> grads, double max_norm) {
  double total = 0.0;
  for (const auto& g : grads) {
    for (float v : g.storage()) total += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& g : grads) {
      for (float& v : g.storage()) v *= scale;
    }
  }
  return norm;
}

// ----------------------------------------------------------------- training

namespace {

struct Assembled {
  std::vector<model::Example> examples;
  std::vector<int> targets;
};

Assembled Assemble(std::span<const TokenizedExample> data, const Batch& batch) {
  Assembled a;
  for (std::size_t i : batch) {
    a.examples.push_back(ToExample(data[i]));
    const auto out = TargetOut(data[i]);
    a.targets.insert(a.targets.end(), out.begin(), out.end());
  }
  return a;
}

}  // namespace

double DevLoss(const model::Transformer<float>& model, std::span<const TokenizedExample> dev,
               std::size_t budget, double alpha) {
  if (dev.empty()) throw ArgumentError("dev loss: empty dev set");
  ad::LossStats stats;
  for (const Batch& batch : SequentialBatches(dev, budget)) {
    const Assembled a = Assemble(dev, batch);
    ad::Tape<float> tape(false);
    const auto vars = model.Bind(tape, false);
    ad::EntmaxLoss(model.Logits(tape, vars, a.examples, model::Mode::kEval), a.targets, alpha, -1,
                   &stats);
  }
  return stats.sum / static_cast<double>(stats.tokens);
}

TrainResult Train(const model::ModelConfig& model_config, const model::Parameters<float>& init,
                  const ulm::VocabModel& tokenizer, std::span<const TokenizedExample> train,
                  std::span<const TokenizedExample> dev, const TrainConfig& config,
                  const fs::path& out_dir, const Hooks& hooks, bool resume) {
  config.Validate();
  model_config.Validate();
  if (train.empty()) throw ArgumentError("train: empty training set");
  if (dev.empty()) throw ArgumentError("train: empty dev set");
  if (static_cast<std::size_t>(tokenizer.size()) != model_config.vocab_size) {
    throw ArgumentError("train: tokenizer size " + std::to_string(tokenizer.size()) +
                        " != vocab_size " + std::to_string(model_config.vocab_size));
  }
  fs::create_directories(out_dir);

  ckpt::Meta meta;
  ckpt::OptimizerState optim;
  model::Parameters<float> start;
  if (resume) {
    auto last = ckpt::Load(out_dir / "last", /*with_optimizer=*/true);
    if (!(last.config == model_config)) {
      throw ArgumentError("train: resume checkpoint config differs from the requested model");
    }
    start = std::move(last.params);
    optim = std::move(*last.optimizer);
    meta = last.meta;
  } else {
    start = init;
    optim = ZeroOptimizerState(start);
  }
  model::Transformer<float> model(model_config, std::move(start));
  const AdamConfig adam{config.beta1, config.beta2, config.adam_eps};

  auto log = [&](const std::string& line) {
    if (hooks.log != nullptr) *hooks.log << line << '\n' << std::flush;
  };
  auto epoch_batches = [&](std::size_t epoch) {
    std::vector<std::size_t> oversized;
    auto b = MakeBatches(train, config.batch_tokens, config.seed, epoch, config.batch_sentences,
                         &oversized);
    for (std::size_t i : oversized) {
      log("warning=oversized_example index=" + std::to_string(i) +
          " length=" + std::to_string(LengthKey(train[i])) +
          " batch_tokens=" + std::to_string(config.batch_tokens));
    }
    return b;
  };
  auto snapshot = [&](bool with_optimizer) {
    ckpt::Checkpoint c{model_config, model.params(), tokenizer, meta, std::nullopt};
    if (with_optimizer) c.optimizer = optim;
    return c;
  };

  std::vector<Batch> batches = epoch_batches(meta.epoch);
  const std::size_t interval =
      config.eval_interval > 0 ? config.eval_interval
                               : std::max<std::size_t>(1, std::min<std::size_t>(batches.size(), 2000));

  TrainResult result;
  std::size_t updates_here = 0;
  std::vector<ad::Tensor<float>> grads;
  if (meta.since_best >= config.patience && meta.validations > 0) result.early_stopped = true;
  while (!result.early_stopped && meta.step < config.max_updates) {
    if (meta.cursor >= batches.size()) {
      meta.epoch += 1;
      meta.cursor = 0;
      batches = epoch_batches(meta.epoch);
    }
    const Assembled a = Assemble(train, batches[meta.cursor]);
    meta.cursor += 1;

    ad::Tape<float> tape;
    const auto vars = model.Bind(tape, true);
    ad::LossStats stats;
    ad::Var<float> loss;
    bool finite = true;
    try {
      loss = ad::EntmaxLoss(model.Logits(tape, vars, a.examples, model::Mode::kTrain,
                                         MixKeys(config.seed, meta.step + 1)),
                            a.targets, config.alpha, -1, &stats);
    } catch (const ArgumentError& e) {
      // NaN logits are rejected inside the loss before a value exists.
      if (std::string_view(e.what()).find("non-finite") == std::string_view::npos) throw;
      finite = false;
    }
    const double batch_loss =
        finite ? stats.sum / static_cast<double>(stats.tokens) : std::nan("");
    if (!std::isfinite(batch_loss)) {
      ckpt::Save(out_dir / "diagnostic", snapshot(true));
      throw TrainingError("non-finite training loss at step " + std::to_string(meta.step + 1) +
                          "; state saved to " + (out_dir / "diagnostic").string());
    }
    auto leaf_grads = ad::Backward(tape, loss);
    grads.clear();
    for (auto& g : leaf_grads) grads.push_back(std::move(g.grad));
    ClipGradients(grads, config.clip_norm);
    const double lr = LrAt(meta.step + 1, config);
    AdamStep(model.mutable_params(), grads, optim, lr, adam);
    meta.step += 1;
    meta.window_loss += stats.sum;
    meta.window_tokens += stats.tokens;
    if (hooks.on_update) hooks.on_update(meta.step, batch_loss);

    if (meta.step % interval == 0 || meta.step == config.max_updates) {
      double dev_loss = DevLoss(model, dev, config.batch_tokens, config.alpha);
      if (hooks.dev_loss) dev_loss = hooks.dev_loss(meta.step, dev_loss);
      Progress progress;
      progress.step = meta.step;
      progress.lr = lr;
      progress.train_loss = meta.window_loss / static_cast<double>(std::max<std::size_t>(1, meta.window_tokens));
      progress.dev_loss = dev_loss;
      progress.improved = dev_loss < meta.best_dev_loss;
      meta.validations += 1;
      meta.last_dev_loss = dev_loss;
      meta.window_loss = 0.0;
      meta.window_tokens = 0;
      if (progress.improved) {
        meta.best_dev_loss = dev_loss;
        meta.best_step = meta.step;
        meta.since_best = 0;
        ckpt::Save(out_dir / "best", snapshot(false));
      } else {
        meta.since_best += 1;
      }
      std::ostringstream line;
      line.precision(6);
      line << "step=" << progress.step << " epoch=" << meta.epoch << " lr=" << progress.lr
           << " train_loss=" << progress.train_loss << " dev_loss=" << progress.dev_loss
           << " best_dev_loss=" << meta.best_dev_loss << " best_step=" << meta.best_step
           << (progress.improved ? " improved=1" : " improved=0");
      log(line.str());
      if (hooks.on_validation) hooks.on_validation(progress);
      ckpt::Save(out_dir / "last", snapshot(true));
      if (meta.since_best >= config.patience) {
        result.early_stopped = true;
        log("early_stop=1 step=" + std::to_string(meta.step) + " patience=" +
            std::to_string(config.patience));
        break;
      }
    }
    updates_here += 1;
    if (hooks.interrupt_after > 0 && updates_here >= hooks.interrupt_after &&
        meta.step < config.max_updates) {
      result.interrupted = true;
      break;
    }
  }
  ckpt::Save(out_dir / "last", snapshot(true));
  if (meta.validations == 0 && !result.interrupted) {
    throw TrainingError("train: finished without a validation");
  }
  result.steps = meta.step;
  result.best_step = meta.best_step;
  result.best_dev_loss = meta.best_dev_loss;
  result.validations = meta.validations;
  return result;
}

}  // namespace morphseg::train
