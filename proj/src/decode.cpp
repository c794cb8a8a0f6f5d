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

#include "morphseg/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "morphseg/corpus.hpp"
#include "morphseg/entmax.hpp"
#include "morphseg/errors.hpp"
#include "morphseg/utf8.hpp"

namespace morphseg::decode {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Better-first order for candidates: higher score, then smaller ids.
bool Before(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.ids < b.ids;
}

// Indices of the k best finite scores, ties to the lower index.
std::vector<int> TopK(std::span<const double> scores, std::size_t k) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] != kNegInf) ids.push_back(static_cast<int>(i));
  }
  auto better = [&](int a, int b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  };
  if (ids.size() > k) {
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
    ids.resize(k);
  } else {
    std::sort(ids.begin(), ids.end(), better);
  }
  return ids;
}

std::vector<int> WithBos(int bos, const std::vector<int>& ids) {
  std::vector<int> p;
  p.reserve(ids.size() + 1);
  p.push_back(bos);
  p.insert(p.end(), ids.begin(), ids.end());
  return p;
}

void CheckScores(const StepScorer& scorer, const std::vector<double>& scores) {
  if (scores.size() != scorer.vocab_size()) {
    throw ArgumentError("beam search: scorer returned " + std::to_string(scores.size()) +
                        " scores for vocabulary " + std::to_string(scorer.vocab_size()));
  }
}

}  // namespace

std::vector<double> LogScores(std::span<const double> logits, ScoreMapping mapping) {
  std::vector<double> p = mapping == ScoreMapping::kEntmax15 ? entmax::Entmax15(logits)
                                                             : entmax::Softmax(logits);
  for (double& v : p) v = v > 0.0 ? std::log(v) : kNegInf;
  return p;
}

std::size_t DefaultMaxLen(std::size_t source_tokens) { return 2 * source_tokens + 16; }

double RankingScore(const Hypothesis& h, double length_penalty) {
  const double len = static_cast<double>(std::max<std::size_t>(h.ids.size(), 1));
  return h.score / std::pow(len, length_penalty);
}

Hypothesis BeamSearch(StepScorer& scorer, const BeamConfig& config) {
  if (config.beam == 0) throw ArgumentError("beam search: beam must be >= 1");
  if (config.max_len == 0) throw ArgumentError("beam search: max_len must be >= 1");
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> pool;
  for (std::size_t step = 0; step < config.max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const Hypothesis& h : live) {
      const auto scores = scorer.NextScores(WithBos(config.bos, h.ids));
      CheckScores(scorer, scores);
      for (int tok : TopK(scores, config.beam)) {
        Hypothesis c = h;
        c.ids.push_back(tok);
        c.score += scores[tok];
        c.finished = tok == config.eos;
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), Before);
    live.clear();
    for (auto& c : candidates) {
      if (live.size() == config.beam) break;
      if (c.finished) {
        pool.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }
  pool.insert(pool.end(), live.begin(), live.end());
  if (pool.empty()) throw ArgumentError("beam search: no hypothesis survived");
  const Hypothesis* best = &pool.front();
  for (const Hypothesis& h : pool) {
    const double a = RankingScore(h, config.length_penalty);
    const double b = RankingScore(*best, config.length_penalty);
    if (a > b || (a == b && h.ids < best->ids)) best = &h;
  }
  return *best;
}

Hypothesis Greedy(StepScorer& scorer, std::size_t max_len, int bos, int eos) {
  if (max_len == 0) throw ArgumentError("greedy: max_len must be >= 1");
  Hypothesis h;
  while (h.ids.size() < max_len && !h.finished) {
    const auto scores = scorer.NextScores(WithBos(bos, h.ids));
    CheckScores(scorer, scores);
    const auto top = TopK(scores, 1);
    if (top.empty()) throw ArgumentError("greedy: every continuation has score -inf");
    h.ids.push_back(top[0]);
    h.score += scores[top[0]];
    h.finished = top[0] == eos;
  }
  return h;
}

// ------------------------------------------------------------ model scorer

ModelScorer::ModelScorer(const model::Transformer<float>& model, std::span<const int> src,
                         ScoreMapping mapping)
    : model_(model), mapping_(mapping) {
  if (src.empty()) throw ArgumentError("decode: empty source");
  cache_ = model_.Encode(src);
}

std::vector<double> ModelScorer::NextScores(std::span<const int> prefix) {
  if (prefix.empty()) throw ArgumentError("decode: prefix must start with bos");
  if (prefix.size() > last_length_) {
    // States two or more tokens shorter can no longer be extended.
    std::erase_if(states_, [&](const auto& kv) { return kv.first.size() + 1 < prefix.size(); });
    last_length_ = prefix.size();
  }
  const std::vector<int> parent(prefix.begin(), prefix.end() - 1);
  model::DecoderState<float> state;
  std::vector<float> logits;
  if (auto it = states_.find(parent); !parent.empty() && it != states_.end()) {
    state = it->second;
    logits = model_.Advance(cache_, state, prefix.back());
  } else {
    state = model_.StartDecoding();
    for (int tok : prefix) logits = model_.Advance(cache_, state, tok);
  }
  states_[std::vector<int>(prefix.begin(), prefix.end())] = std::move(state);
  const std::vector<double> wide(logits.begin(), logits.end());
  return LogScores(wide, mapping_);
}

// ------------------------------------------------------------ postprocess

Postprocessed Postprocess(std::string_view raw, std::string_view source) {
  Postprocessed out;
  std::string text(raw);
  for (std::string_view special : {"<s>", "</s>", "<pad>"}) {
    for (auto pos = text.find(special); pos != std::string::npos; pos = text.find(special)) {
      text.replace(pos, special.size(), " ");
      out.repaired = true;
    }
  }
  const auto tokens = utf8::SplitWhitespace(text);
  std::vector<std::string> merged;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == corpus::kMarker) {
      out.repaired = true;
      if (i + 1 < tokens.size()) {
        merged.push_back(std::string(corpus::kMarker) + std::string(tokens[i + 1]));
        ++i;
      }
      continue;
    }
    merged.emplace_back(tokens[i]);
  }
  std::string joined;
  for (const auto& t : merged) {
    if (!joined.empty()) joined += ' ';
    joined += t;
  }
  const auto words = corpus::ParseSegmentationLenient(joined);
  out.text = corpus::RenderSegmentation(words, corpus::MarkerStyle::kSentence);
  if (out.text != joined) out.repaired = true;
  out.surface_mismatch = corpus::SurfaceOf(words) != utf8::NormalizeWhitespace(source);
  return out;
}

// --------------------------------------------------------------- predict

std::vector<Prediction> Predict(const model::Transformer<float>& model,
                                const ulm::VocabModel& vocab,
                                std::span<const std::string> sources,
                                const PredictOptions& options) {
  std::vector<Prediction> out(sources.size());
  auto run = [&](std::size_t i) {
    Prediction& p = out[i];
    p.source = sources[i];
    std::vector<int> src = vocab.Encode(sources[i]);
    if (src.empty()) throw ArgumentError("predict: empty source at line " + std::to_string(i + 1));
    src.push_back(ulm::kEosId);
    BeamConfig beam = options.beam;
    if (beam.max_len == 0) beam.max_len = DefaultMaxLen(src.size());
    beam.max_len = std::min(beam.max_len, model.config().max_positions);
    ModelScorer scorer(model, src, options.mapping);
    p.hypothesis = BeamSearch(scorer, beam);
    p.raw = vocab.Decode(p.hypothesis.ids);
    p.output = Postprocess(p.raw, sources[i]);
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, sources.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < sources.size(); ++i) run(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < sources.size(); i += workers) run(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string FormatPredictions(std::span<const Prediction> predictions) {
  std::string out;
  for (const auto& p : predictions) {
    std::string flags;
    if (p.output.surface_mismatch) flags = "surface_mismatch";
    if (p.output.repaired) flags += flags.empty() ? "repaired" : ",repaired";
    if (flags.empty()) flags = "ok";
    out += p.source + '\t' + p.output.text + '\t' + flags + '\n';
  }
  return out;
}

}  // namespace morphseg::decode
