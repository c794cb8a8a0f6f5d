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

#include "morphseg/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "morphseg/errors.hpp"

namespace morphseg::ckpt {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[5] = {'M', 'S', 'Q', 'P', '1'};

void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::string FormatDouble(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}
  bool done() const { return pos_ == data_.size(); }
  std::uint32_t U32() {
    Need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string Bytes(std::size_t n) {
    Need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[noreturn]] void Fail(const std::string& what) const { throw LoadError(path_, 0, what); }

 private:
  void Need(std::size_t n) const {
    if (data_.size() - pos_ < n) Fail("truncated file at byte " + std::to_string(pos_));
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Meta::ToText() const {
  std::ostringstream out;
  out << "step=" << step << '\n'
      << "best_dev_loss=" << FormatDouble(best_dev_loss) << '\n'
      << "best_step=" << best_step << '\n'
      << "validations=" << validations << '\n'
      << "since_best=" << since_best << '\n'
      << "epoch=" << epoch << '\n'
      << "cursor=" << cursor << '\n'
      << "last_dev_loss=" << FormatDouble(last_dev_loss) << '\n'
      << "window_loss=" << FormatDouble(window_loss) << '\n'
      << "window_tokens=" << window_tokens << '\n';
  return out.str();
}

Meta Meta::FromText(const std::string& text) {
  Meta m;
  for (const auto& [k, v] : ParseKeyValues(text, "meta")) {
    try {
      if (k == "step") m.step = std::stoull(v);
      else if (k == "best_dev_loss") m.best_dev_loss = std::stod(v);
      else if (k == "best_step") m.best_step = std::stoull(v);
      else if (k == "validations") m.validations = std::stoull(v);
      else if (k == "since_best") m.since_best = std::stoull(v);
      else if (k == "epoch") m.epoch = std::stoull(v);
      else if (k == "cursor") m.cursor = std::stoull(v);
      else if (k == "last_dev_loss") m.last_dev_loss = std::stod(v);
      else if (k == "window_loss") m.window_loss = std::stod(v);
      else if (k == "window_tokens") m.window_tokens = std::stoull(v);
    } catch (const std::exception&) {
      throw LoadError("meta", 0, "bad value for " + k + ": '" + v + "'");
    }
  }
  return m;
}

std::map<std::string, std::string> ParseKeyValues(const std::string& text,
                                                  const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw LoadError(source, number, "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw LoadError(source, number, "empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string(), 0, "cannot open file");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void WriteFileAtomic(const fs::path& path, const std::string& data) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void WriteTensors(const fs::path& path, const model::Parameters<float>& tensors) {
  std::string out(kMagic, sizeof kMagic);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& name = tensors.names[i];
    const auto& t = tensors.tensors[i];
    PutU32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    PutU32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) PutU32(out, static_cast<std::uint32_t>(e));
    for (float v : t.storage()) PutU32(out, std::bit_cast<std::uint32_t>(v));
  }
  WriteFileAtomic(path, out);
}

model::Parameters<float> ReadTensors(const fs::path& path) {
  Reader in(ReadFile(path), path.string());
  if (in.Bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) in.Fail("bad magic");
  model::Parameters<float> out;
  while (!in.done()) {
    const std::uint32_t len = in.U32();
    if (len == 0 || len > 4096) in.Fail("bad tensor name length");
    std::string name = in.Bytes(len);
    const std::uint32_t rank = in.U32();
    if (rank == 0 || rank > 8) in.Fail("bad rank for " + name);
    ad::Shape shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(in.U32());
      if (shape.back() == 0) in.Fail("zero extent in " + name);
      count *= shape.back();
    }
    std::vector<float> data(count);
    for (float& v : data) v = std::bit_cast<float>(in.U32());
    out.names.push_back(std::move(name));
    out.tensors.emplace_back(std::move(shape), std::move(data));
  }
  return out;
}

namespace {

void CheckAgainst(const model::ModelConfig& config, const model::Parameters<float>& p,
                  const fs::path& path) {
  const auto shapes = model::ParameterShapes(config);
  if (shapes.size() != p.size()) {
    throw LoadError(path.string(), 0, "expected " + std::to_string(shapes.size()) +
                                          " tensors, found " + std::to_string(p.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].first != p.names[i] || shapes[i].second != p.tensors[i].shape()) {
      throw LoadError(path.string(), 0,
                      "tensor " + p.names[i] + ad::ShapeString(p.tensors[i].shape()) +
                          " does not match config (" + shapes[i].first +
                          ad::ShapeString(shapes[i].second) + ")");
    }
  }
}

model::Parameters<float> Prefixed(const model::Parameters<float>& p, const std::string& prefix) {
  model::Parameters<float> out = p;
  for (auto& n : out.names) n = prefix + n;
  return out;
}

}  // namespace

void Save(const fs::path& dir, const Checkpoint& c) {
  fs::create_directories(dir);
  WriteFileAtomic(dir / "config", c.config.ToText());
  WriteTensors(dir / "params.bin", c.params);
  c.tokenizer.Save(dir / "tokenizer.model");
  if (c.optimizer) {
    model::Parameters<float> all = Prefixed(c.optimizer->first, "m.");
    const auto second = Prefixed(c.optimizer->second, "v.");
    all.names.insert(all.names.end(), second.names.begin(), second.names.end());
    all.tensors.insert(all.tensors.end(), second.tensors.begin(), second.tensors.end());
    WriteTensors(dir / "optim.bin", all);
  }
  // meta last: a directory with a meta file is complete.
  WriteFileAtomic(dir / "meta", c.meta.ToText());
}

Checkpoint Load(const fs::path& dir, bool with_optimizer) {
  Checkpoint c;
  try {
    c.config = model::ModelConfig::FromMap(ParseKeyValues(ReadFile(dir / "config"), "config"));
    c.config.Validate();
  } catch (const ArgumentError& e) {
    throw LoadError((dir / "config").string(), 0, e.what());
  }
  c.params = ReadTensors(dir / "params.bin");
  CheckAgainst(c.config, c.params, dir / "params.bin");
  c.tokenizer = ulm::VocabModel::Load(dir / "tokenizer.model");
  if (static_cast<std::size_t>(c.tokenizer.size()) != c.config.vocab_size) {
    throw LoadError((dir / "tokenizer.model").string(), 0,
                    "tokenizer has " + std::to_string(c.tokenizer.size()) +
                        " pieces but config says vocab_size=" +
                        std::to_string(c.config.vocab_size));
  }
  c.meta = Meta::FromText(ReadFile(dir / "meta"));
  if (with_optimizer) {
    const auto all = ReadTensors(dir / "optim.bin");
    OptimizerState state;
    state.step = c.meta.step;
    for (std::size_t i = 0; i < all.size(); ++i) {
      const std::string& n = all.names[i];
      auto& target = n.starts_with("m.") ? state.first : state.second;
      if (!n.starts_with("m.") && !n.starts_with("v.")) {
        throw LoadError((dir / "optim.bin").string(), 0, "unexpected tensor " + n);
      }
      target.names.push_back(n.substr(2));
      target.tensors.push_back(all.tensors[i]);
    }
    CheckAgainst(c.config, state.first, dir / "optim.bin");
    CheckAgainst(c.config, state.second, dir / "optim.bin");
    c.optimizer = std::move(state);
  }
  return c;
}

}  // namespace morphseg::ckpt
