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

#include "morphseg/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "morphseg/errors.hpp"
#include "morphseg/utf8.hpp"

namespace morphseg::pipeline {

namespace fs = std::filesystem;

LanguagePath ParseLanguagePath(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos) return {std::string(kDefaultLanguage), fs::path(spec)};
  if (eq == 0 || eq + 1 == spec.size()) {
    throw ArgumentError("expected LANG=PATH or PATH, got '" + std::string(spec) + "'");
  }
  return {std::string(spec.substr(0, eq)), fs::path(spec.substr(eq + 1))};
}

corpus::Dataset BuildTrainingSet(const AugmentSpec& spec) {
  if (spec.sentences.empty()) throw ArgumentError("augment: no sentence files given");
  std::vector<std::string> order;
  std::map<std::string, corpus::Dataset> sentences, words;
  for (const auto& s : spec.sentences) {
    if (!sentences.contains(s.language)) order.push_back(s.language);
    const auto d = corpus::LoadSentenceDataset(s.path, s.language);
    auto& into = sentences[s.language];
    into.pairs.insert(into.pairs.end(), d.pairs.begin(), d.pairs.end());
    into.provenance = s.path.string();
  }
  for (const auto& w : spec.words) {
    if (!sentences.contains(w.language)) {
      throw ArgumentError("augment: word list for '" + w.language +
                          "' has no matching sentence file");
    }
    const auto d = corpus::LoadWordDataset(w.path, w.language);
    auto& into = words[w.language];
    into.pairs.insert(into.pairs.end(), d.pairs.begin(), d.pairs.end());
    into.provenance = w.path.string();
  }
  const std::size_t inner = spec.upsample_words ? 1 : spec.upsample;
  std::vector<corpus::Dataset> parts;
  for (const auto& language : order) {
    const auto upsampled = corpus::Upsample(sentences[language], inner);
    const auto it = words.find(language);
    parts.push_back(it == words.end() ? upsampled
                                      : corpus::AugmentWithWords(upsampled, it->second));
  }
  corpus::ConcatOptions concat;
  concat.language_token = spec.language_token;
  return corpus::Upsample(corpus::ConcatMultilingual(parts, concat),
                          spec.upsample_words ? spec.upsample : 1);
}

ulm::VocabModel TrainTokenizer(std::span<const corpus::Dataset> data, std::size_t vocab_size) {
  std::vector<std::string> text;
  for (const auto& d : data) {
    for (const auto& p : d.pairs) {
      text.push_back(p.source);
      text.push_back(p.target);
    }
  }
  if (text.empty()) throw ArgumentError("train-tokenizer: empty corpus");
  return ulm::TrainUlm(text, vocab_size);
}

TrainSpec TrainSpec::FromMap(const std::map<std::string, std::string>& values) {
  std::map<std::string, std::string> model_values, train_values;
  TrainSpec spec;
  for (const auto& [key, value] : values) {
    if (key.starts_with("model.")) {
      model_values[key.substr(6)] = value;
    } else if (key.starts_with("train.")) {
      train_values[key.substr(6)] = value;
    } else if (key == "init_seed") {
      try {
        spec.init_seed = std::stoull(value);
      } catch (const std::exception&) {
        throw ArgumentError("bad value for init_seed: '" + value + "'");
      }
    } else {
      throw ArgumentError("unknown training key '" + key + "'");
    }
  }
  spec.model = model::ModelConfig::FromMap(model_values);
  spec.train = train::TrainConfig::FromMap(train_values);
  return spec;
}

namespace {

std::string Prefixed(const std::string& text, std::string_view prefix) {
  std::istringstream in(text);
  std::string out, line;
  while (std::getline(in, line)) {
    if (!line.empty()) out += std::string(prefix) + line + '\n';
  }
  return out;
}

}  // namespace

std::string TrainSpec::ToText() const {
  return Prefixed(model.ToText(), "model.") + Prefixed(train.ToText(), "train.") +
         "init_seed=" + std::to_string(init_seed) + '\n';
}

train::TrainResult TrainModel(const TrainSpec& spec, const ulm::VocabModel& tokenizer,
                              const corpus::Dataset& train_set, const corpus::Dataset& dev_set,
                              const fs::path& out_dir, std::ostream* log, bool resume) {
  model::ModelConfig config = spec.model;
  config.vocab_size = static_cast<std::size_t>(tokenizer.size());
  config.Validate();
  spec.train.Validate();
  const auto train_ids = train::TokenizeDataset(tokenizer, train_set,
                                                spec.train.sampling_smoothing, spec.train.seed);
  const auto dev_ids = train::TokenizeDataset(tokenizer, dev_set);
  train::Hooks hooks;
  hooks.log = log;
  return train::Train(config, model::InitParams<float>(config, spec.init_seed), tokenizer,
                      train_ids, dev_ids, spec.train, out_dir, hooks, resume);
}

std::vector<decode::Prediction> PredictSources(const ckpt::Checkpoint& checkpoint,
                                               std::span<const std::string> sources,
                                               const PredictSpec& spec) {
  const model::Transformer<float> model(checkpoint.config, checkpoint.params);
  if (spec.language_token.empty()) {
    return decode::Predict(model, checkpoint.tokenizer, sources, spec.options);
  }
  const std::string prefix = corpus::LanguageToken(spec.language_token) + " ";
  std::vector<std::string> tagged;
  for (const auto& s : sources) tagged.push_back(prefix + s);
  auto out = decode::Predict(model, checkpoint.tokenizer, tagged, spec.options);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].source = sources[i];
    out[i].output = decode::Postprocess(out[i].raw, sources[i]);
  }
  return out;
}

std::vector<std::string> ReadColumn(const fs::path& path, std::size_t column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string(), 0, "cannot open file");
  std::vector<std::string> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (utf8::SplitWhitespace(line).empty()) continue;
    const auto fields = utf8::Split(line, '\t');
    if (fields.size() <= column) {
      throw LoadError(path.string(), number,
                      "expected at least " + std::to_string(column + 1) + " columns");
    }
    out.emplace_back(fields[column]);
  }
  return out;
}

std::vector<std::string> ReadSources(const fs::path& path) { return ReadColumn(path, 0); }

eval::EvalReport EvaluateFiles(const fs::path& gold, const fs::path& predictions) {
  const auto g = ReadColumn(gold, 1);
  const auto p = ReadColumn(predictions, 1);
  if (g.size() != p.size()) {
    throw LoadError(predictions.string(), 0,
                    "has " + std::to_string(p.size()) + " lines, gold has " +
                        std::to_string(g.size()));
  }
  return eval::CorpusMetrics(g, p);
}

void WriteSynthetic(const synth::SynthCorpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  corpus::WriteDataset(dir / "train.tsv", corpus.train);
  corpus::WriteDataset(dir / "dev.tsv", corpus.dev);
  corpus::WriteDataset(dir / "test.tsv", corpus.test);
  corpus::WriteDataset(dir / "words.tsv", corpus.words);
}

AmbiguityScore ScoreAmbiguous(const synth::SynthCorpus& corpus,
                              std::span<const std::string> predictions) {
  if (predictions.size() != corpus.test.size()) {
    throw ArgumentError("ambiguity score: prediction count differs from the test set");
  }
  AmbiguityScore score;
  for (const auto& occ : corpus.test_occurrences) {
    ++score.total;
    const auto gold = corpus::ParseSegmentation(corpus.test.pairs[occ.sentence].target);
    const auto pred = corpus::ParseSegmentationLenient(predictions[occ.sentence]);
    for (const auto& [g, p] : eval::AlignWords(gold, pred).matched) {
      if (g == occ.word && pred[p] == gold[g]) ++score.correct;
    }
  }
  return score;
}

namespace {

bool ParseBool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw ArgumentError("bad boolean for " + key + ": '" + value + "'");
}

std::size_t ParseSize(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ArgumentError("bad integer for " + key + ": '" + value + "'");
}

double ParseDouble(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ArgumentError("bad number for " + key + ": '" + value + "'");
}

std::vector<std::string> ParseList(const std::string& value) {
  std::vector<std::string> out;
  for (auto part : utf8::Split(value, ',')) {
    const auto s = utf8::NormalizeWhitespace(part);
    if (!s.empty()) out.push_back(s);
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::FromText(const std::string& text) {
  ExperimentConfig c;
  std::map<std::string, std::string> train_values;
  for (const auto& [key, value] : ckpt::ParseKeyValues(text, "config")) {
    if (key == "name") c.name = value;
    else if (key == "languages") c.languages = ParseList(value);
    else if (key == "data") {
      if (value != "synthetic" && value != "files") {
        throw ArgumentError("data must be 'synthetic' or 'files'");
      }
      c.synthetic = value == "synthetic";
    } else if (key == "synth.seed") c.synth.seed = ParseSize(key, value);
    else if (key == "synth.roots") c.synth.roots = ParseSize(key, value);
    else if (key == "synth.suffixes") c.synth.suffixes = ParseSize(key, value);
    else if (key == "synth.ambiguous") c.synth.ambiguous = ParseSize(key, value);
    else if (key == "synth.train") c.synth.train = ParseSize(key, value);
    else if (key == "synth.dev") c.synth.dev = ParseSize(key, value);
    else if (key == "synth.test") c.synth.test = ParseSize(key, value);
    else if (key == "synth.words") c.synth.words = ParseSize(key, value);
    else if (key == "synth.min_words") c.synth.min_words = ParseSize(key, value);
    else if (key == "synth.max_words") c.synth.max_words = ParseSize(key, value);
    else if (key.starts_with("files.")) {
      // files.<lang>.<split> = path
      const auto rest = key.substr(6);
      const auto dot = rest.rfind('.');
      if (dot == std::string::npos || dot == 0) throw ArgumentError("bad key '" + key + "'");
      auto& f = c.files[rest.substr(0, dot)];
      const auto split = rest.substr(dot + 1);
      if (split == "train") f.train = value;
      else if (split == "dev") f.dev = value;
      else if (split == "test") f.test = value;
      else if (split == "words") f.words = value;
      else throw ArgumentError("bad key '" + key + "'");
    } else if (key == "word_augmentation") c.word_augmentation = ParseBool(key, value);
    else if (key == "upsample") c.upsample = ParseSize(key, value);
    else if (key == "upsample_words") c.upsample_words = ParseBool(key, value);
    else if (key == "language_token") c.language_token = ParseBool(key, value);
    else if (key == "tokenizer.vocab_size") c.vocab_size = ParseSize(key, value);
    else if (key == "checkpoint") c.checkpoint = value;
    else if (key == "predict.beam") c.predict.beam.beam = ParseSize(key, value);
    else if (key == "predict.max_len") c.predict.beam.max_len = ParseSize(key, value);
    else if (key == "predict.length_penalty") {
      c.predict.beam.length_penalty = ParseDouble(key, value);
    } else if (key == "predict.workers") c.predict.workers = ParseSize(key, value);
    else if (key.starts_with("model.") || key.starts_with("train.") || key == "init_seed") {
      train_values[key] = value;
    } else {
      throw ArgumentError("unknown config key '" + key + "'");
    }
  }
  c.train = TrainSpec::FromMap(train_values);
  c.Validate();
  return c;
}

std::string ExperimentConfig::ToText() const {
  std::ostringstream out;
  out.precision(17);
  out << "name=" << name << '\n' << "languages=";
  for (std::size_t i = 0; i < languages.size(); ++i) out << (i ? "," : "") << languages[i];
  out << '\n' << "data=" << (synthetic ? "synthetic" : "files") << '\n';
  if (synthetic) {
    out << "synth.seed=" << synth.seed << '\n'
        << "synth.roots=" << synth.roots << '\n'
        << "synth.suffixes=" << synth.suffixes << '\n'
        << "synth.ambiguous=" << synth.ambiguous << '\n'
        << "synth.train=" << synth.train << '\n'
        << "synth.dev=" << synth.dev << '\n'
        << "synth.test=" << synth.test << '\n'
        << "synth.words=" << synth.words << '\n'
        << "synth.min_words=" << synth.min_words << '\n'
        << "synth.max_words=" << synth.max_words << '\n';
  }
  for (const auto& [language, f] : files) {
    out << "files." << language << ".train=" << f.train.string() << '\n'
        << "files." << language << ".dev=" << f.dev.string() << '\n'
        << "files." << language << ".test=" << f.test.string() << '\n';
    if (!f.words.empty()) out << "files." << language << ".words=" << f.words.string() << '\n';
  }
  out << "word_augmentation=" << (word_augmentation ? "true" : "false") << '\n'
      << "upsample=" << upsample << '\n'
      << "upsample_words=" << (upsample_words ? "true" : "false") << '\n'
      << "language_token=" << (language_token ? "true" : "false") << '\n'
      << "tokenizer.vocab_size=" << vocab_size << '\n'
      << "checkpoint=" << checkpoint << '\n'
      << "predict.beam=" << predict.beam.beam << '\n'
      << "predict.max_len=" << predict.beam.max_len << '\n'
      << "predict.length_penalty=" << predict.beam.length_penalty << '\n'
      << "predict.workers=" << predict.workers << '\n'
      << train.ToText();
  return out.str();
}

void ExperimentConfig::Validate() const {
  if (languages.empty()) throw ArgumentError("config: no languages");
  if (std::set<std::string>(languages.begin(), languages.end()).size() != languages.size()) {
    throw ArgumentError("config: repeated language");
  }
  if (!synthetic) {
    for (const auto& l : languages) {
      const auto it = files.find(l);
      if (it == files.end() || it->second.train.empty() || it->second.dev.empty() ||
          it->second.test.empty()) {
        throw ArgumentError("config: files." + l + ".{train,dev,test} are required");
      }
      if (word_augmentation && it->second.words.empty()) {
        throw ArgumentError("config: word_augmentation needs files." + l + ".words");
      }
    }
  }
  if (upsample == 0) throw ArgumentError("config: upsample must be >= 1");
  if (checkpoint != "best" && checkpoint != "last") {
    throw ArgumentError("config: checkpoint must be 'best' or 'last'");
  }
  if (predict.beam.beam == 0) throw ArgumentError("config: predict.beam must be >= 1");
  train.train.Validate();
  model::ModelConfig m = train.model;
  m.vocab_size = std::max<std::size_t>(m.vocab_size, 5);  // filled in from the tokenizer
  m.Validate();
}

ExperimentOutcome RunExperiment(const ExperimentConfig& config, const fs::path& out_dir,
                                std::ostream* log) {
  config.Validate();
  fs::create_directories(out_dir);
  auto note = [&](const std::string& s) {
    if (log != nullptr) *log << "[" << config.name << "] " << s << '\n';
  };

  std::map<std::string, LanguageFiles> files = config.files;
  std::map<std::string, synth::SynthCorpus> generated;
  if (config.synthetic) {
    for (std::size_t i = 0; i < config.languages.size(); ++i) {
      const auto& language = config.languages[i];
      synth::SynthConfig sc = config.synth;
      sc.seed = config.synth.seed + i;
      sc.language = language;
      const fs::path dir = out_dir / "data" / language;
      note("generating " + language + " into " + dir.string());
      generated[language] = synth::Generate(sc);
      WriteSynthetic(generated[language], dir);
      files[language] = {dir / "train.tsv", dir / "dev.tsv", dir / "test.tsv", dir / "words.tsv"};
    }
  }

  AugmentSpec train_spec, dev_spec;
  for (const auto& language : config.languages) {
    const auto& f = files.at(language);
    train_spec.sentences.push_back({language, f.train});
    if (config.word_augmentation) train_spec.words.push_back({language, f.words});
    dev_spec.sentences.push_back({language, f.dev});
  }
  train_spec.language_token = dev_spec.language_token = config.language_token;

  note("building the training set");
  AugmentSpec tokenizer_spec = train_spec;
  train_spec.upsample = config.upsample;
  train_spec.upsample_words = config.upsample_words;
  const auto train_set = BuildTrainingSet(train_spec);
  const auto dev_set = BuildTrainingSet(dev_spec);
  corpus::WriteDataset(out_dir / "train.tsv", train_set);
  corpus::WriteDataset(out_dir / "dev.tsv", dev_set);

  note("training the tokenizer");
  const corpus::Dataset tokenizer_data[] = {BuildTrainingSet(tokenizer_spec)};
  const auto tokenizer = TrainTokenizer(tokenizer_data, config.vocab_size);
  tokenizer.Save(out_dir / "tokenizer.vocab");

  note("training the model");
  ExperimentOutcome outcome;
  outcome.training = TrainModel(config.train, tokenizer, train_set, dev_set, out_dir / "model", log);

  const auto checkpoint = ckpt::Load(out_dir / "model" / config.checkpoint);
  fs::create_directories(out_dir / "predictions");
  fs::create_directories(out_dir / "reports");
  std::ostringstream summary;
  summary << "name=" << config.name << '\n'
          << "steps=" << outcome.training.steps << '\n'
          << "best_step=" << outcome.training.best_step << '\n'
          << "checkpoint=" << config.checkpoint << '\n';
  for (const auto& language : config.languages) {
    note("decoding the " + language + " test set");
    PredictSpec ps;
    ps.options = config.predict;
    if (config.language_token) ps.language_token = language;
    const auto sources = ReadSources(files.at(language).test);
    const auto predictions = PredictSources(checkpoint, sources, ps);
    const fs::path pred_path = out_dir / "predictions" / (language + ".tsv");
    ckpt::WriteFileAtomic(pred_path, decode::FormatPredictions(predictions));

    LanguageOutcome lo;
    lo.language = language;
    lo.report = EvaluateFiles(files.at(language).test, pred_path);
    ckpt::WriteFileAtomic(out_dir / "reports" / (language + ".txt"), lo.report.ToText());
    summary << language << ".f1=" << std::fixed << std::setprecision(4) << 100.0 * lo.report.f1
            << '\n';
    if (const auto it = generated.find(language); it != generated.end()) {
      std::vector<std::string> texts;
      for (const auto& p : predictions) texts.push_back(p.output.text);
      lo.ambiguity = ScoreAmbiguous(it->second, texts);
      summary << language << ".ambiguous_correct=" << lo.ambiguity->correct << '/'
              << lo.ambiguity->total << '\n';
    }
    outcome.languages.push_back(lo);
  }
  ckpt::WriteFileAtomic(out_dir / "summary.txt", summary.str());
  return outcome;
}

}  // namespace morphseg::pipeline
