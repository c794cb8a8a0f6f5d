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

#include "morphseg/model.hpp"

#include <cmath>
#include <sstream>

#include "morphseg/errors.hpp"
#include "morphseg/random.hpp"

namespace morphseg::model {

// ------------------------------------------------------------------ config

void ModelConfig::Validate() const {
  auto fail = [](const std::string& what) { throw ArgumentError("model config: " + what); };
  if (encoder_layers == 0 || decoder_layers == 0) fail("layer counts must be >= 1");
  if (heads == 0 || d_model == 0 || d_model % heads != 0) {
    fail("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
         std::to_string(heads) + ")");
  }
  if (d_ffn == 0) fail("d_ffn must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (max_positions == 0) fail("max_positions must be >= 1");
  if (vocab_size == 0) fail("vocab_size must be >= 1");
  if (pad_id < 0 || static_cast<std::size_t>(pad_id) >= vocab_size) fail("pad_id out of range");
}

std::string ModelConfig::ToText() const {
  std::ostringstream out;
  out.precision(17);
  out << "encoder_layers=" << encoder_layers << '\n'
      << "decoder_layers=" << decoder_layers << '\n'
      << "heads=" << heads << '\n'
      << "d_model=" << d_model << '\n'
      << "d_ffn=" << d_ffn << '\n'
      << "dropout=" << dropout << '\n'
      << "max_positions=" << max_positions << '\n'
      << "vocab_size=" << vocab_size << '\n'
      << "share_decoder_embeddings=" << (share_decoder_embeddings ? 1 : 0) << '\n'
      << "norm=" << (norm == NormPlacement::kPost ? "post" : "pre") << '\n'
      << "pad_id=" << pad_id << '\n';
  return out.str();
}

ModelConfig ModelConfig::FromMap(const std::map<std::string, std::string>& values,
                                 bool strict) {
  ModelConfig c;
  for (const auto& [key, value] : values) {
    try {
      if (key == "encoder_layers") c.encoder_layers = std::stoul(value);
      else if (key == "decoder_layers") c.decoder_layers = std::stoul(value);
      else if (key == "heads") c.heads = std::stoul(value);
      else if (key == "d_model") c.d_model = std::stoul(value);
      else if (key == "d_ffn") c.d_ffn = std::stoul(value);
      else if (key == "dropout") c.dropout = std::stod(value);
      else if (key == "max_positions") c.max_positions = std::stoul(value);
      else if (key == "vocab_size") c.vocab_size = std::stoul(value);
      else if (key == "share_decoder_embeddings") c.share_decoder_embeddings = value == "1" || value == "true";
      else if (key == "pad_id") c.pad_id = std::stoi(value);
      else if (key == "norm") {
        if (value == "post") c.norm = NormPlacement::kPost;
        else if (value == "pre") c.norm = NormPlacement::kPre;
        else throw ArgumentError("norm must be 'post' or 'pre'");
      } else if (strict) {
        throw ArgumentError("unknown key");
      }
    } catch (const ArgumentError& e) {
      throw ArgumentError("model config: " + key + "=" + value + ": " + e.what());
    } catch (const std::exception&) {
      throw ArgumentError("model config: bad value for " + key + ": '" + value + "'");
    }
  }
  return c;
}

std::vector<std::pair<std::string, ad::Shape>> ParameterShapes(const ModelConfig& c) {
  c.Validate();
  const std::size_t d = c.d_model, f = c.d_ffn;
  std::vector<std::pair<std::string, ad::Shape>> out;
  out.emplace_back("embed.weight", ad::Shape{c.vocab_size, d});
  auto attention = [&](const std::string& prefix) {
    for (const char* proj : {"q", "k", "v", "o"}) {
      out.emplace_back(prefix + "." + proj + ".weight", ad::Shape{d, d});
      out.emplace_back(prefix + "." + proj + ".bias", ad::Shape{d});
    }
  };
  auto norm = [&](const std::string& prefix) {
    out.emplace_back(prefix + ".gain", ad::Shape{d});
    out.emplace_back(prefix + ".bias", ad::Shape{d});
  };
  auto ffn = [&](const std::string& prefix) {
    out.emplace_back(prefix + ".fc1.weight", ad::Shape{d, f});
    out.emplace_back(prefix + ".fc1.bias", ad::Shape{f});
    out.emplace_back(prefix + ".fc2.weight", ad::Shape{f, d});
    out.emplace_back(prefix + ".fc2.bias", ad::Shape{d});
  };
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    attention(p + ".self");
    norm(p + ".ln1");
    ffn(p + ".ffn");
    norm(p + ".ln2");
  }
  if (c.norm == NormPlacement::kPre) norm("enc.ln");
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    attention(p + ".self");
    norm(p + ".ln1");
    attention(p + ".cross");
    norm(p + ".ln2");
    ffn(p + ".ffn");
    norm(p + ".ln3");
  }
  if (c.norm == NormPlacement::kPre) norm("dec.ln");
  if (!c.share_decoder_embeddings) out.emplace_back("out.weight", ad::Shape{c.vocab_size, d});
  return out;
}

// -------------------------------------------------------------- parameters

template <class T>
std::size_t Parameters<T>::Count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <class T>
std::size_t Parameters<T>::IndexOf(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ArgumentError("parameters: no tensor named '" + name + "'");
}

namespace {
bool EndsWith(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
}  // namespace

template <class T>
Parameters<T> InitParams(const ModelConfig& config, std::uint64_t seed) {
  Parameters<T> params;
  Rng rng(seed);
  for (auto& [name, shape] : ParameterShapes(config)) {
    ad::Tensor<T> t(shape);
    if (name == "embed.weight" || name == "out.weight") {
      const double a = std::sqrt(3.0 / static_cast<double>(config.d_model));
      for (T& v : t.storage()) v = static_cast<T>(rng.Uniform(-a, a));
      if (name == "embed.weight") {
        for (std::size_t c = 0; c < t.cols(); ++c) t.at(static_cast<std::size_t>(config.pad_id), c) = T(0);
      }
    } else if (EndsWith(name, ".weight")) {
      const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (T& v : t.storage()) v = static_cast<T>(rng.Uniform(-a, a));
    } else if (EndsWith(name, ".gain")) {
      for (T& v : t.storage()) v = T(1);
    }
    params.names.push_back(name);
    params.tensors.push_back(std::move(t));
  }
  return params;
}

// ------------------------------------------------------------- transformer

template <class T>
Transformer<T>::Transformer(ModelConfig config, Parameters<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  const auto shapes = ParameterShapes(config_);
  if (shapes.size() != params_.size()) {
    throw ArgumentError("transformer: expected " + std::to_string(shapes.size()) +
                        " parameter tensors, got " + std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].first != params_.names[i] || shapes[i].second != params_.tensors[i].shape()) {
      throw ArgumentError("transformer: parameter " + std::to_string(i) + " is " +
                          params_.names[i] + ad::ShapeString(params_.tensors[i].shape()) +
                          ", expected " + shapes[i].first + ad::ShapeString(shapes[i].second));
    }
  }
  auto id = [&](const std::string& name) { return params_.IndexOf(name); };
  auto attention = [&](const std::string& p) {
    return AttentionIds{id(p + ".q.weight"), id(p + ".q.bias"), id(p + ".k.weight"),
                        id(p + ".k.bias"),   id(p + ".v.weight"), id(p + ".v.bias"),
                        id(p + ".o.weight"), id(p + ".o.bias")};
  };
  embed_ = id("embed.weight");
  output_ = config_.share_decoder_embeddings ? embed_ : id("out.weight");
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    LayerIds ids;
    ids.self = attention(p + ".self");
    ids.ln1_g = id(p + ".ln1.gain");
    ids.ln1_b = id(p + ".ln1.bias");
    ids.ln2_g = id(p + ".ln2.gain");
    ids.ln2_b = id(p + ".ln2.bias");
    ids.fc1_w = id(p + ".ffn.fc1.weight");
    ids.fc1_b = id(p + ".ffn.fc1.bias");
    ids.fc2_w = id(p + ".ffn.fc2.weight");
    ids.fc2_b = id(p + ".ffn.fc2.bias");
    encoder_.push_back(ids);
  }
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    LayerIds ids;
    ids.self = attention(p + ".self");
    ids.cross = attention(p + ".cross");
    ids.ln1_g = id(p + ".ln1.gain");
    ids.ln1_b = id(p + ".ln1.bias");
    ids.ln2_g = id(p + ".ln2.gain");
    ids.ln2_b = id(p + ".ln2.bias");
    ids.ln3_g = id(p + ".ln3.gain");
    ids.ln3_b = id(p + ".ln3.bias");
    ids.fc1_w = id(p + ".ffn.fc1.weight");
    ids.fc1_b = id(p + ".ffn.fc1.bias");
    ids.fc2_w = id(p + ".ffn.fc2.weight");
    ids.fc2_b = id(p + ".ffn.fc2.bias");
    decoder_.push_back(ids);
  }
  if (config_.norm == NormPlacement::kPre) {
    enc_final_g_ = id("enc.ln.gain");
    enc_final_b_ = id("enc.ln.bias");
    dec_final_g_ = id("dec.ln.gain");
    dec_final_b_ = id("dec.ln.bias");
  }
}

template <class T>
std::vector<ad::Var<T>> Transformer<T>::Bind(ad::Tape<T>& tape, bool requires_grad) const {
  std::vector<ad::Var<T>> vars;
  vars.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    vars.push_back(tape.Borrow(params_.tensors[i], requires_grad, params_.names[i]));
  }
  return vars;
}

template <class T>
void Transformer<T>::CheckSequence(std::span<const int> ids, const char* side) const {
  if (ids.empty()) throw ArgumentError(std::string("transformer: empty ") + side + " sequence");
  if (ids.size() > config_.max_positions) {
    throw ArgumentError(std::string("transformer: ") + side + " length " +
                        std::to_string(ids.size()) + " exceeds max_positions " +
                        std::to_string(config_.max_positions));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw ArgumentError(std::string("transformer: unknown ") + side + " token id " +
                          std::to_string(id));
    }
  }
}

template <class T>
ad::Var<T> Transformer<T>::EmbedTokens(std::span<const ad::Var<T>> p, std::span<const int> ids,
                                       std::span<const std::size_t> positions) const {
  auto x = ad::Embedding(p[embed_], ids);
  x = ad::Scale(x, static_cast<T>(std::sqrt(static_cast<double>(config_.d_model))));
  return ad::AddPositions(x, positions);
}

template <class T>
ad::Var<T> Transformer<T>::Project(std::span<const ad::Var<T>> p, ad::Var<T> x, std::size_t w,
                                   std::size_t b) const {
  return ad::AddRow(ad::MatMul(x, p[w]), p[b]);
}

template <class T>
ad::Var<T> Transformer<T>::FeedForward(std::span<const ad::Var<T>> p, const LayerIds& ids,
                                       ad::Var<T> x) const {
  return Project(p, ad::Relu(Project(p, x, ids.fc1_w, ids.fc1_b)), ids.fc2_w, ids.fc2_b);
}

template <class T>
ad::Var<T> Transformer<T>::Norm(std::span<const ad::Var<T>> p, ad::Var<T> x, std::size_t g,
                                std::size_t b) const {
  return ad::LayerNorm(x, p[g], p[b]);
}

namespace {

template <class T>
ad::Var<T> MaybeDropout(ad::Var<T> x, Mode mode, double rate, std::uint64_t key,
                        std::uint64_t& site) {
  if (mode != Mode::kTrain || rate <= 0.0) return x;
  return ad::Dropout(x, ad::DropoutMask<T>(x.shape(), rate, MixKeys(key, site++)));
}

template <class T, class Ids>
ad::Var<T> AttentionBlock(std::span<const ad::Var<T>> p, const Ids& a, ad::Var<T> queries,
                          ad::Var<T> memory, const ad::AttentionLayout& layout, std::size_t heads) {
  auto proj = [&](ad::Var<T> x, std::size_t w, std::size_t b) {
    return ad::AddRow(ad::MatMul(x, p[w]), p[b]);
  };
  auto q = proj(queries, a.q_w, a.q_b);
  auto k = proj(memory, a.k_w, a.k_b);
  auto v = proj(memory, a.v_w, a.v_b);
  return proj(ad::Attention(q, k, v, layout, heads), a.o_w, a.o_b);
}

}  // namespace

template <class T>
ad::Var<T> Transformer<T>::Encoder(ad::Tape<T>& tape, std::span<const ad::Var<T>> p,
                                   std::span<const Example> batch, Mode mode, std::uint64_t key,
                                   std::uint64_t& site,
                                   std::vector<std::uint8_t>& src_masked) const {
  (void)tape;
  std::vector<int> ids;
  std::vector<std::size_t> positions;
  ad::AttentionLayout layout;
  for (const Example& ex : batch) {
    CheckSequence(ex.src, "source");
    bool any_token = false;
    layout.segments.push_back({ids.size(), ex.src.size(), ids.size(), ex.src.size()});
    for (std::size_t i = 0; i < ex.src.size(); ++i) {
      ids.push_back(ex.src[i]);
      positions.push_back(i);
      const bool pad = ex.src[i] == config_.pad_id;
      src_masked.push_back(pad ? 1 : 0);
      any_token = any_token || !pad;
    }
    if (!any_token) throw ArgumentError("transformer: source consists only of padding");
  }
  layout.key_masked = src_masked;

  const bool pre = config_.norm == NormPlacement::kPre;
  auto x = MaybeDropout(EmbedTokens(p, ids, positions), mode, config_.dropout, key, site);
  for (const LayerIds& l : encoder_) {
    auto h = pre ? Norm(p, x, l.ln1_g, l.ln1_b) : x;
    auto a = MaybeDropout(AttentionBlock(p, l.self, h, h, layout, config_.heads), mode,
                          config_.dropout, key, site);
    x = pre ? ad::Add(x, a) : Norm(p, ad::Add(x, a), l.ln1_g, l.ln1_b);
    h = pre ? Norm(p, x, l.ln2_g, l.ln2_b) : x;
    auto f = MaybeDropout(FeedForward(p, l, h), mode, config_.dropout, key, site);
    x = pre ? ad::Add(x, f) : Norm(p, ad::Add(x, f), l.ln2_g, l.ln2_b);
  }
  if (pre) x = Norm(p, x, enc_final_g_, enc_final_b_);
  return x;
}

template <class T>
ad::Var<T> Transformer<T>::Logits(ad::Tape<T>& tape, std::span<const ad::Var<T>> p,
                                  std::span<const Example> batch, Mode mode,
                                  std::uint64_t dropout_key) const {
  if (batch.empty()) throw ArgumentError("transformer: empty batch");
  if (p.size() != params_.size()) throw ArgumentError("transformer: parameters not bound");
  std::uint64_t site = 0;
  std::vector<std::uint8_t> src_masked;
  auto memory = Encoder(tape, p, batch, mode, dropout_key, site, src_masked);

  std::vector<int> ids;
  std::vector<std::size_t> positions;
  ad::AttentionLayout self_layout;
  ad::AttentionLayout cross_layout;
  self_layout.causal = true;
  std::size_t src_offset = 0;
  for (const Example& ex : batch) {
    CheckSequence(ex.tgt_in, "target");
    self_layout.segments.push_back({ids.size(), ex.tgt_in.size(), ids.size(), ex.tgt_in.size()});
    cross_layout.segments.push_back({ids.size(), ex.tgt_in.size(), src_offset, ex.src.size()});
    src_offset += ex.src.size();
    for (std::size_t i = 0; i < ex.tgt_in.size(); ++i) {
      ids.push_back(ex.tgt_in[i]);
      positions.push_back(i);
      self_layout.key_masked.push_back(ex.tgt_in[i] == config_.pad_id ? 1 : 0);
    }
  }
  cross_layout.key_masked = std::move(src_masked);

  const bool pre = config_.norm == NormPlacement::kPre;
  auto y = MaybeDropout(EmbedTokens(p, ids, positions), mode, config_.dropout, dropout_key, site);
  for (const LayerIds& l : decoder_) {
    auto h = pre ? Norm(p, y, l.ln1_g, l.ln1_b) : y;
    auto a = MaybeDropout(AttentionBlock(p, l.self, h, h, self_layout, config_.heads), mode,
                          config_.dropout, dropout_key, site);
    y = pre ? ad::Add(y, a) : Norm(p, ad::Add(y, a), l.ln1_g, l.ln1_b);
    h = pre ? Norm(p, y, l.ln2_g, l.ln2_b) : y;
    a = MaybeDropout(AttentionBlock(p, l.cross, h, memory, cross_layout, config_.heads), mode,
                     config_.dropout, dropout_key, site);
    y = pre ? ad::Add(y, a) : Norm(p, ad::Add(y, a), l.ln2_g, l.ln2_b);
    h = pre ? Norm(p, y, l.ln3_g, l.ln3_b) : y;
    auto f = MaybeDropout(FeedForward(p, l, h), mode, config_.dropout, dropout_key, site);
    y = pre ? ad::Add(y, f) : Norm(p, ad::Add(y, f), l.ln3_g, l.ln3_b);
  }
  if (pre) y = Norm(p, y, dec_final_g_, dec_final_b_);
  return ad::MatMulNT(y, p[output_]);
}

template <class T>
ad::Tensor<T> Transformer<T>::Forward(std::span<const int> src, std::span<const int> tgt_in,
                                      Mode mode, std::uint64_t seed) const {
  ad::Tape<T> tape(/*record=*/false);
  const auto p = Bind(tape, false);
  const Example ex{{src.begin(), src.end()}, {tgt_in.begin(), tgt_in.end()}};
  return Logits(tape, p, std::span<const Example>(&ex, 1), mode, seed).value();
}

template <class T>
EncoderCache<T> Transformer<T>::Encode(std::span<const int> src) const {
  ad::Tape<T> tape(/*record=*/false);
  const auto p = Bind(tape, false);
  const Example ex{{src.begin(), src.end()}, {}};
  std::uint64_t site = 0;
  EncoderCache<T> cache;
  auto memory = Encoder(tape, p, std::span<const Example>(&ex, 1), Mode::kEval, 0, site,
                        cache.src_masked);
  cache.src_len = src.size();
  for (const LayerIds& l : decoder_) {
    cache.cross_keys.push_back(Project(p, memory, l.cross.k_w, l.cross.k_b).value());
    cache.cross_values.push_back(Project(p, memory, l.cross.v_w, l.cross.v_b).value());
  }
  return cache;
}

template <class T>
DecoderState<T> Transformer<T>::StartDecoding() const {
  DecoderState<T> state;
  state.keys.resize(decoder_.size());
  state.values.resize(decoder_.size());
  return state;
}

template <class T>
std::vector<T> Transformer<T>::Advance(const EncoderCache<T>& cache, DecoderState<T>& state,
                                       int token) const {
  if (state.length >= config_.max_positions) {
    throw ArgumentError("transformer: target length exceeds max_positions " +
                        std::to_string(config_.max_positions));
  }
  const int single[1] = {token};
  CheckSequence(single, "target");
  const std::size_t d = config_.d_model;
  const std::size_t pos = state.length;
  const bool pre = config_.norm == NormPlacement::kPre;

  ad::Tape<T> tape(/*record=*/false);
  const auto p = Bind(tape, false);
  auto y = EmbedTokens(p, single, std::span<const std::size_t>(&pos, 1));
  state.masked.push_back(token == config_.pad_id ? 1 : 0);

  ad::AttentionLayout self_layout;
  self_layout.segments.push_back({0, 1, 0, pos + 1});
  self_layout.key_masked = state.masked;
  ad::AttentionLayout cross_layout;
  cross_layout.segments.push_back({0, 1, 0, cache.src_len});
  cross_layout.key_masked = cache.src_masked;

  for (std::size_t li = 0; li < decoder_.size(); ++li) {
    const LayerIds& l = decoder_[li];
    auto h = pre ? Norm(p, y, l.ln1_g, l.ln1_b) : y;
    auto q = Project(p, h, l.self.q_w, l.self.q_b);
    auto k = Project(p, h, l.self.k_w, l.self.k_b);
    auto v = Project(p, h, l.self.v_w, l.self.v_b);
    state.keys[li].insert(state.keys[li].end(), k.value().storage().begin(),
                          k.value().storage().end());
    state.values[li].insert(state.values[li].end(), v.value().storage().begin(),
                            v.value().storage().end());
    auto keys = tape.Constant(ad::Tensor<T>(ad::Shape{pos + 1, d}, state.keys[li]));
    auto values = tape.Constant(ad::Tensor<T>(ad::Shape{pos + 1, d}, state.values[li]));
    auto a = Project(p, ad::Attention(q, keys, values, self_layout, config_.heads), l.self.o_w,
                     l.self.o_b);
    y = pre ? ad::Add(y, a) : Norm(p, ad::Add(y, a), l.ln1_g, l.ln1_b);

    h = pre ? Norm(p, y, l.ln2_g, l.ln2_b) : y;
    q = Project(p, h, l.cross.q_w, l.cross.q_b);
    auto ck = tape.Borrow(cache.cross_keys[li], false);
    auto cv = tape.Borrow(cache.cross_values[li], false);
    a = Project(p, ad::Attention(q, ck, cv, cross_layout, config_.heads), l.cross.o_w,
                l.cross.o_b);
    y = pre ? ad::Add(y, a) : Norm(p, ad::Add(y, a), l.ln2_g, l.ln2_b);

    h = pre ? Norm(p, y, l.ln3_g, l.ln3_b) : y;
    auto f = FeedForward(p, l, h);
    y = pre ? ad::Add(y, f) : Norm(p, ad::Add(y, f), l.ln3_g, l.ln3_b);
  }
  if (pre) y = Norm(p, y, dec_final_g_, dec_final_b_);
  state.length += 1;
  const auto logits = ad::MatMulNT(y, p[output_]);
  return logits.value().storage();
}

template <class T>
std::vector<T> Transformer<T>::StepDecode(const EncoderCache<T>& cache,
                                          std::span<const int> prefix) const {
  if (prefix.empty()) throw ArgumentError("step_decode: prefix must start with bos");
  DecoderState<T> state = StartDecoding();
  std::vector<T> logits;
  for (int token : prefix) logits = Advance(cache, state, token);
  return logits;
}

template struct Parameters<float>;
template struct Parameters<double>;
template Parameters<float> InitParams<float>(const ModelConfig&, std::uint64_t);
template Parameters<double> InitParams<double>(const ModelConfig&, std::uint64_t);
template class Transformer<float>;
template class Transformer<double>;

}  // namespace morphseg::model
