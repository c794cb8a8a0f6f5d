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
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "morphseg/autodiff.hpp"

namespace morphseg::model {

enum class NormPlacement { kPost, kPre };

struct ModelConfig {
  std::size_t encoder_layers = 6;
  std::size_t decoder_layers = 6;
  std::size_t heads = 8;
  std::size_t d_model = 256;
  std::size_t d_ffn = 1024;
  double dropout = 0.3;
  std::size_t max_positions = 512;
  std::size_t vocab_size = 0;
  bool share_decoder_embeddings = true;
  NormPlacement norm = NormPlacement::kPost;
  int pad_id = 0;

  // Throws ArgumentError.
  void Validate() const;

  // key=value lines; FromMap ignores unknown keys only when `strict` is false.
  std::string ToText() const;
  static ModelConfig FromMap(const std::map<std::string, std::string>& values,
                             bool strict = true);
  bool operator==(const ModelConfig&) const = default;
};

// Name and shape of every parameter, in canonical order.
std::vector<std::pair<std::string, ad::Shape>> ParameterShapes(const ModelConfig& config);

template <class T>
struct Parameters {
  std::vector<std::string> names;
  std::vector<ad::Tensor<T>> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t Count() const;  // total scalar count
  std::size_t IndexOf(const std::string& name) const;
  const ad::Tensor<T>& Get(const std::string& name) const { return tensors[IndexOf(name)]; }
  ad::Tensor<T>& Get(const std::string& name) { return tensors[IndexOf(name)]; }

  template <class U>
  Parameters<U> Cast() const {
    Parameters<U> out;
    out.names = names;
    for (const auto& t : tensors) {
      std::vector<U> data(t.storage().begin(), t.storage().end());
      out.tensors.emplace_back(t.shape(), std::move(data));
    }
    return out;
  }
};

// Embeddings and projections from scaled uniform distributions (Xavier for
// projections, unit variance after the sqrt(d_model) embedding scale), the
// pad embedding row zeroed, layer-norm gains 1 and biases 0.
template <class T>
Parameters<T> InitParams(const ModelConfig& config, std::uint64_t seed);

enum class Mode { kTrain, kEval };

// One sentence pair. `tgt_in` starts with bos; neither side is padded unless
// the caller pads explicitly.
struct Example {
  std::vector<int> src;
  std::vector<int> tgt_in;
};

template <class T>
struct EncoderCache {
  std::size_t src_len = 0;
  std::vector<std::uint8_t> src_masked;
  std::vector<ad::Tensor<T>> cross_keys;    // per decoder layer, [src_len x d]
  std::vector<ad::Tensor<T>> cross_values;  // per decoder layer
};

// Self-attention keys and values of every consumed target position.
template <class T>
struct DecoderState {
  std::size_t length = 0;
  std::vector<std::uint8_t> masked;
  std::vector<std::vector<T>> keys;    // per layer, row-major [length x d]
  std::vector<std::vector<T>> values;  // per layer
};

template <class T>
class Transformer {
 public:
  Transformer(ModelConfig config, Parameters<T> params);

  const ModelConfig& config() const { return config_; }
  const Parameters<T>& params() const { return params_; }
  Parameters<T>& mutable_params() { return params_; }

  // Parameters as tape leaves, in canonical order.
  std::vector<ad::Var<T>> Bind(ad::Tape<T>& tape, bool requires_grad) const;

  // Logits for every target position of every example, rows packed in
  // example order: [sum |tgt_in| x vocab]. Dropout masks (train mode only)
  // derive from `dropout_key` and the application site.
  ad::Var<T> Logits(ad::Tape<T>& tape, std::span<const ad::Var<T>> bound,
                    std::span<const Example> batch, Mode mode,
                    std::uint64_t dropout_key = 0) const;

  // Single-example convenience wrapper: [|tgt_in| x vocab].
  ad::Tensor<T> Forward(std::span<const int> src, std::span<const int> tgt_in, Mode mode,
                        std::uint64_t seed = 0) const;

  EncoderCache<T> Encode(std::span<const int> src) const;
  DecoderState<T> StartDecoding() const;

  // Consumes `token` at position state.length and returns next-token logits.
  std::vector<T> Advance(const EncoderCache<T>& cache, DecoderState<T>& state, int token) const;

  // Logits following `prefix` (which starts with bos), computed from scratch.
  std::vector<T> StepDecode(const EncoderCache<T>& cache, std::span<const int> prefix) const;

 private:
  struct AttentionIds {
    std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  };
  struct LayerIds {
    AttentionIds self{};
    AttentionIds cross{};
    std::size_t ln1_g = 0, ln1_b = 0, ln2_g = 0, ln2_b = 0, ln3_g = 0, ln3_b = 0;
    std::size_t fc1_w = 0, fc1_b = 0, fc2_w = 0, fc2_b = 0;
  };

  void CheckSequence(std::span<const int> ids, const char* side) const;
  ad::Var<T> EmbedTokens(std::span<const ad::Var<T>> p, std::span<const int> ids,
                         std::span<const std::size_t> positions) const;
  ad::Var<T> Project(std::span<const ad::Var<T>> p, ad::Var<T> x, std::size_t w,
                     std::size_t b) const;
  ad::Var<T> FeedForward(std::span<const ad::Var<T>> p, const LayerIds& ids, ad::Var<T> x) const;
  ad::Var<T> Norm(std::span<const ad::Var<T>> p, ad::Var<T> x, std::size_t g,
                  std::size_t b) const;
  ad::Var<T> Encoder(ad::Tape<T>& tape, std::span<const ad::Var<T>> p,
                     std::span<const Example> batch, Mode mode, std::uint64_t key,
                     std::uint64_t& site, std::vector<std::uint8_t>& src_masked) const;

  ModelConfig config_;
  Parameters<T> params_;
  std::size_t embed_ = 0;
  std::size_t output_ = 0;
  std::size_t enc_final_g_ = 0, enc_final_b_ = 0, dec_final_g_ = 0, dec_final_b_ = 0;
  std::vector<LayerIds> encoder_;
  std::vector<LayerIds> decoder_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace morphseg::model
