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

// morphseg: command-line front end for the segmentation toolkit.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "morphseg/checkpoint.hpp"
#include "morphseg/errors.hpp"
#include "morphseg/manifest.hpp"
#include "morphseg/pipeline.hpp"
#include "morphseg/synth.hpp"

namespace fs = std::filesystem;
using namespace morphseg;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

std::optional<std::uint64_t> EnvNumber(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used == std::string(v).size()) return n;
  } catch (const std::exception&) {
  }
  throw ArgumentError(std::string(name) + " must be a non-negative integer");
}

// Flag, then environment, then the fallback.
std::uint64_t ResolveSeed(const CLI::Option* flag, std::uint64_t flag_value,
                          std::uint64_t fallback) {
  if (flag->count() > 0) return flag_value;
  if (const auto env = EnvNumber("MORPHSEG_SEED")) return *env;
  return fallback;
}

std::size_t ResolveWorkers(const CLI::Option* flag, std::size_t flag_value) {
  if (flag->count() > 0) return std::max<std::size_t>(1, flag_value);
  if (const auto env = EnvNumber("MORPHSEG_WORKERS")) return std::max<std::uint64_t>(1, *env);
  return std::max(1u, std::thread::hardware_concurrency());
}

manifest::RunManifest Begin(const std::string& command) {
  manifest::RunManifest m;
  m.command = command;
  m.version = std::string(pipeline::kVersion);
  m.started = manifest::UtcNow();
  return m;
}

void Finish(manifest::RunManifest& m, const fs::path& output) {
  m.finished = manifest::UtcNow();
  manifest::Write(output, m);
}

std::vector<pipeline::LanguagePath> LanguagePaths(const std::vector<std::string>& specs) {
  std::vector<pipeline::LanguagePath> out;
  for (const auto& s : specs) out.push_back(pipeline::ParseLanguagePath(s));
  return out;
}

void AddAll(manifest::RunManifest& m, const std::vector<pipeline::LanguagePath>& paths) {
  for (const auto& p : paths) m.AddInput(p.path);
}

std::string Join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sentence-level morpheme segmentation toolkit"};
  app.set_version_flag("--version", std::string(pipeline::kVersion));
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic toy language");
  synth::SynthConfig sc;
  fs::path synth_out;
  std::uint64_t synth_seed = 1;
  synth_cmd->add_option("--out-dir", synth_out, "Directory for train/dev/test/words.tsv")
      ->required();
  auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed, "Generator seed");
  synth_cmd->add_option("--language", sc.language, "Language tag")->capture_default_str();
  synth_cmd->add_option("--roots", sc.roots)->capture_default_str();
  synth_cmd->add_option("--suffixes", sc.suffixes)->capture_default_str();
  synth_cmd->add_option("--ambiguous", sc.ambiguous)->capture_default_str();
  synth_cmd->add_option("--train", sc.train)->capture_default_str();
  synth_cmd->add_option("--dev", sc.dev)->capture_default_str();
  synth_cmd->add_option("--test", sc.test)->capture_default_str();
  synth_cmd->add_option("--words", sc.words)->capture_default_str();
  synth_cmd->add_option("--min-words", sc.min_words)->capture_default_str();
  synth_cmd->add_option("--max-words", sc.max_words)->capture_default_str();

  // augment
  auto* augment_cmd = app.add_subcommand("augment", "Build a training set");
  std::vector<std::string> aug_sentences, aug_words;
  std::size_t aug_upsample = 1;
  bool aug_token = false, aug_words_once = false;
  fs::path aug_out;
  augment_cmd->add_option("--sentences", aug_sentences, "[LANG=]sentence TSV, repeatable")
      ->required();
  augment_cmd->add_option("--words", aug_words, "[LANG=]word list TSV, repeatable");
  augment_cmd->add_option("--upsample", aug_upsample, "Copies of the result")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  augment_cmd->add_flag("--language-token", aug_token, "Prefix sources with <LANG>");
  augment_cmd->add_flag("--words-once", aug_words_once,
                        "Upsample the sentences only and add each word list once");
  augment_cmd->add_option("--out", aug_out, "Output TSV")->required();

  // train-tokenizer
  auto* tok_cmd = app.add_subcommand("train-tokenizer", "Train the unigram subword model");
  std::vector<std::string> tok_sentences, tok_words;
  std::size_t tok_size = 0;
  bool tok_token = false;
  fs::path tok_out;
  tok_cmd->add_option("--sentences", tok_sentences, "[LANG=]sentence TSV, repeatable")
      ->required();
  tok_cmd->add_option("--words", tok_words, "[LANG=]word list TSV, repeatable");
  tok_cmd->add_option("--vocab-size", tok_size, "Target size including specials")
      ->required()
      ->check(CLI::PositiveNumber);
  tok_cmd->add_flag("--language-token", tok_token, "Prefix sources with <LANG>");
  tok_cmd->add_option("--out", tok_out, "Vocabulary file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the transformer");
  fs::path tr_train, tr_dev, tr_tok, tr_out, tr_config;
  std::vector<std::string> tr_set;
  std::uint64_t tr_seed = 1;
  bool tr_resume = false, tr_quiet = false;
  train_cmd->add_option("--train", tr_train, "Training TSV")->required();
  train_cmd->add_option("--dev", tr_dev, "Development TSV")->required();
  train_cmd->add_option("--tokenizer", tr_tok, "Vocabulary file")->required();
  train_cmd->add_option("--out-dir", tr_out, "Checkpoint directory")->required();
  train_cmd->add_option("--config", tr_config, "key=value file (model.*, train.*, init_seed)");
  train_cmd->add_option("--set", tr_set, "KEY=VALUE override, repeatable");
  auto* tr_seed_opt =
      train_cmd->add_option("--seed", tr_seed, "Seed for initialization, batching, dropout");
  train_cmd->add_flag("--resume", tr_resume, "Continue from out-dir/last");
  train_cmd->add_flag("--quiet", tr_quiet, "No progress lines");

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "Segment sentences");
  fs::path pr_ckpt, pr_input, pr_out;
  std::size_t pr_beam = 5, pr_max_len = 0, pr_workers = 1;
  double pr_penalty = 1.0;
  std::string pr_mapping = "entmax15", pr_token;
  pred_cmd->add_option("--checkpoint", pr_ckpt, "Checkpoint directory")->required();
  pred_cmd->add_option("--input", pr_input, "TSV (first column) or plain text")->required();
  pred_cmd->add_option("--out", pr_out, "Predictions TSV")->required();
  pred_cmd->add_option("--beam", pr_beam)->capture_default_str()->check(CLI::PositiveNumber);
  pred_cmd->add_option("--max-len", pr_max_len, "0 derives it from the source")
      ->capture_default_str();
  pred_cmd->add_option("--length-penalty", pr_penalty)->capture_default_str();
  pred_cmd->add_option("--mapping", pr_mapping)
      ->capture_default_str()
      ->check(CLI::IsMember({"entmax15", "softmax"}));
  pred_cmd->add_option("--language-token", pr_token, "Prefix sources with <LANG>");
  auto* pr_workers_opt = pred_cmd->add_option("--workers", pr_workers, "Decoding threads");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against gold");
  fs::path ev_gold, ev_pred, ev_out;
  std::string ev_format = "text";
  eval_cmd->add_option("--gold", ev_gold, "Gold TSV")->required();
  eval_cmd->add_option("--pred", ev_pred, "Predictions TSV")->required();
  eval_cmd->add_option("--out", ev_out, "Report file (stdout when omitted)");
  eval_cmd->add_option("--format", ev_format)
      ->capture_default_str()
      ->check(CLI::IsMember({"text", "json"}));

  // pipeline
  auto* pipe_cmd = app.add_subcommand("pipeline", "Run every stage for an experiment config");
  fs::path pp_config, pp_out;
  std::uint64_t pp_seed = 1;
  std::size_t pp_workers = 1;
  pipe_cmd->add_option("--config", pp_config, "Experiment config")->required();
  pipe_cmd->add_option("--out-dir", pp_out, "Output directory (default runs/<name>)");
  auto* pp_seed_opt =
      pipe_cmd->add_option("--seed", pp_seed, "Overrides train.seed and init_seed");
  auto* pp_workers_opt = pipe_cmd->add_option("--workers", pp_workers, "Decoding threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) {
      sc.seed = ResolveSeed(synth_seed_opt, synth_seed, sc.seed);
      auto m = Begin("synth");
      const auto corpus = synth::Generate(sc);
      pipeline::WriteSynthetic(corpus, synth_out);
      m.seed = sc.seed;
      m.config = {{"language", sc.language},
                  {"roots", std::to_string(sc.roots)},
                  {"suffixes", std::to_string(sc.suffixes)},
                  {"ambiguous", std::to_string(sc.ambiguous)},
                  {"train", std::to_string(sc.train)},
                  {"dev", std::to_string(sc.dev)},
                  {"test", std::to_string(sc.test)},
                  {"words", std::to_string(sc.words)},
                  {"min_words", std::to_string(sc.min_words)},
                  {"max_words", std::to_string(sc.max_words)}};
      Finish(m, synth_out);
    } else if (augment_cmd->parsed()) {
      auto m = Begin("augment");
      pipeline::AugmentSpec spec{LanguagePaths(aug_sentences), LanguagePaths(aug_words),
                                 aug_upsample, aug_token, !aug_words_once};
      const auto data = pipeline::BuildTrainingSet(spec);
      corpus::WriteDataset(aug_out, data);
      AddAll(m, spec.sentences);
      AddAll(m, spec.words);
      m.config = {{"sentences", Join(aug_sentences)},
                  {"words", Join(aug_words)},
                  {"upsample", std::to_string(aug_upsample)},
                  {"language_token", aug_token ? "true" : "false"},
                  {"upsample_words", aug_words_once ? "false" : "true"},
                  {"pairs", std::to_string(data.size())}};
      Finish(m, aug_out);
    } else if (tok_cmd->parsed()) {
      auto m = Begin("train-tokenizer");
      pipeline::AugmentSpec spec{LanguagePaths(tok_sentences), LanguagePaths(tok_words), 1,
                                 tok_token};
      const corpus::Dataset data[] = {pipeline::BuildTrainingSet(spec)};
      const auto vocab = pipeline::TrainTokenizer(data, tok_size);
      vocab.Save(tok_out);
      AddAll(m, spec.sentences);
      AddAll(m, spec.words);
      m.config = {{"sentences", Join(tok_sentences)},
                  {"words", Join(tok_words)},
                  {"vocab_size", std::to_string(tok_size)},
                  {"language_token", tok_token ? "true" : "false"},
                  {"pieces", std::to_string(vocab.size())}};
      Finish(m, tok_out);
    } else if (train_cmd->parsed()) {
      auto m = Begin("train");
      std::map<std::string, std::string> values;
      if (!tr_config.empty()) {
        values = ckpt::ParseKeyValues(ckpt::ReadFile(tr_config), tr_config.string());
      }
      for (const auto& kv : tr_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) {
          throw ArgumentError("--set expects KEY=VALUE, got '" + kv + "'");
        }
        values[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      auto spec = pipeline::TrainSpec::FromMap(values);
      if (tr_seed_opt->count() > 0 || EnvNumber("MORPHSEG_SEED")) {
        spec.train.seed = spec.init_seed = ResolveSeed(tr_seed_opt, tr_seed, spec.train.seed);
      }
      const auto tokenizer = ulm::VocabModel::Load(tr_tok);
      const auto train_set = corpus::LoadSentenceDataset(tr_train, pipeline::kDefaultLanguage);
      const auto dev_set = corpus::LoadSentenceDataset(tr_dev, pipeline::kDefaultLanguage);
      m.AddInput(tr_train);
      m.AddInput(tr_dev);
      m.AddInput(tr_tok);
      if (!tr_config.empty()) m.AddInput(tr_config);
      const auto result = pipeline::TrainModel(spec, tokenizer, train_set, dev_set, tr_out,
                                               tr_quiet ? nullptr : &std::cerr, tr_resume);
      m.seed = spec.train.seed;
      const auto text = spec.ToText();
      m.config = ckpt::ParseKeyValues(text, "train");
      m.config["model.vocab_size"] = std::to_string(tokenizer.size());
      m.config["resume"] = tr_resume ? "true" : "false";
      m.config["result.steps"] = std::to_string(result.steps);
      m.config["result.best_step"] = std::to_string(result.best_step);
      m.config["result.early_stopped"] = result.early_stopped ? "true" : "false";
      Finish(m, tr_out);
    } else if (pred_cmd->parsed()) {
      auto m = Begin("predict");
      pipeline::PredictSpec spec;
      spec.options.beam.beam = pr_beam;
      spec.options.beam.max_len = pr_max_len;
      spec.options.beam.length_penalty = pr_penalty;
      spec.options.mapping =
          pr_mapping == "softmax" ? decode::ScoreMapping::kSoftmax : decode::ScoreMapping::kEntmax15;
      spec.options.workers = ResolveWorkers(pr_workers_opt, pr_workers);
      spec.language_token = pr_token;
      const auto checkpoint = ckpt::Load(pr_ckpt);
      const auto sources = pipeline::ReadSources(pr_input);
      const auto predictions = pipeline::PredictSources(checkpoint, sources, spec);
      ckpt::WriteFileAtomic(pr_out, decode::FormatPredictions(predictions));
      m.AddInput(pr_ckpt);
      m.AddInput(pr_input);
      m.config = {{"beam", std::to_string(pr_beam)},
                  {"max_len", std::to_string(pr_max_len)},
                  {"length_penalty", std::to_string(pr_penalty)},
                  {"mapping", pr_mapping},
                  {"language_token", pr_token},
                  {"workers", std::to_string(spec.options.workers)}};
      Finish(m, pr_out);
    } else if (eval_cmd->parsed()) {
      auto m = Begin("evaluate");
      const auto report = pipeline::EvaluateFiles(ev_gold, ev_pred);
      const auto text = ev_format == "json" ? report.ToJson() + "\n" : report.ToText();
      if (ev_out.empty()) {
        std::cout << text;
      } else {
        ckpt::WriteFileAtomic(ev_out, text);
        m.AddInput(ev_gold);
        m.AddInput(ev_pred);
        m.config = {{"format", ev_format}};
        Finish(m, ev_out);
      }
    } else if (pipe_cmd->parsed()) {
      auto m = Begin("pipeline");
      auto config = pipeline::ExperimentConfig::FromText(ckpt::ReadFile(pp_config));
      if (pp_seed_opt->count() > 0 || EnvNumber("MORPHSEG_SEED")) {
        config.train.train.seed = config.train.init_seed =
            ResolveSeed(pp_seed_opt, pp_seed, config.train.train.seed);
      }
      if (pp_workers_opt->count() > 0 || EnvNumber("MORPHSEG_WORKERS")) {
        config.predict.workers = ResolveWorkers(pp_workers_opt, pp_workers);
      } else if (config.predict.workers == 0) {
        config.predict.workers = ResolveWorkers(pp_workers_opt, pp_workers);
      }
      const fs::path out = pp_out.empty() ? fs::path("runs") / config.name : pp_out;
      m.AddInput(pp_config);
      const auto outcome = pipeline::RunExperiment(config, out, &std::cerr);
      m.seed = config.train.train.seed;
      m.config = ckpt::ParseKeyValues(config.ToText(), "config");
      Finish(m, out);
      std::cout << ckpt::ReadFile(out / "summary.txt");
    }
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
