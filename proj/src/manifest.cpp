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

#include "morphseg/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <vector>

#include "json.hpp"
#include "morphseg/checkpoint.hpp"
#include "morphseg/errors.hpp"

namespace morphseg::manifest {

namespace fs = std::filesystem;

std::string Sha256Hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string DigestPath(const fs::path& path) {
  if (fs::is_regular_file(path)) return Sha256Hex(ckpt::ReadFile(path));
  if (!fs::is_directory(path)) throw LoadError(path.string(), 0, "no such file or directory");
  std::vector<std::string> entries;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (!e.is_regular_file()) continue;
    entries.push_back(fs::relative(e.path(), path).generic_string() + '\t' +
                      Sha256Hex(ckpt::ReadFile(e.path())));
  }
  std::sort(entries.begin(), entries.end());
  std::string joined;
  for (const auto& e : entries) joined += e + '\n';
  return Sha256Hex(joined);
}

std::string UtcNow() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

void RunManifest::AddInput(const fs::path& path) { inputs[path.string()] = DigestPath(path); }

std::string RunManifest::ToJson() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config"] = config;
  j["inputs"] = inputs;
  j["seed"] = seed;
  j["version"] = version;
  j["started"] = started;
  j["finished"] = finished;
  return j.dump(2) + '\n';
}

void Write(const fs::path& output, const RunManifest& manifest) {
  fs::path target = output;
  if (target.has_filename()) {
    target += ".manifest";
  } else {
    target = target.parent_path();
    target += ".manifest";
  }
  ckpt::WriteFileAtomic(target, manifest.ToJson());
}

}  // namespace morphseg::manifest
