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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

// Run records written next to every command output.
namespace morphseg::manifest {

// Lowercase hex SHA-256.
std::string Sha256Hex(std::string_view data);
// Files hash their bytes; directories hash the sorted list of
// "relative path, file digest" entries beneath them.
std::string DigestPath(const std::filesystem::path& path);

// ISO-8601 UTC, seconds resolution.
std::string UtcNow();

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // resolved values
  std::map<std::string, std::string> inputs;  // path -> digest
  std::uint64_t seed = 0;
  std::string version;
  std::string started;
  std::string finished;

  void AddInput(const std::filesystem::path& path);
  std::string ToJson() const;
};

// Writes `output` + ".manifest".
void Write(const std::filesystem::path& output, const RunManifest& manifest);

}  // namespace morphseg::manifest
