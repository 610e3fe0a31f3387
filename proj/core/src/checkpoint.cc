// Copyright 2026 The TrajLM Authors
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

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "trajlm/common.h"
#include "trajlm/model.h"

namespace trajlm {
namespace {

constexpr char kMagic[8] = {'T', 'R', 'A', 'J', 'L', 'M', '0', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta) {
  const ModelParams& params = model.params();
  nlohmann::ordered_json header;
  header["format"] = "trajlm-checkpoint";
  header["library_version"] = meta.library_version.empty() ? std::string(kVersion) : meta.library_version;
  header["config"] = nlohmann::ordered_json::parse(model.config().to_json());
  header["vocab_fingerprint"] = hex64(meta.vocab_fingerprint);
  header["seed"] = meta.seed;
  header["config_hash"] = meta.config_hash;
  header["extra"] = meta.extra;
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.at(i);
    manifest.push_back({{"name", params.name(i)}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * 4;
  }
  header["parameters"] = manifest;
  header["total_scalars"] = params.scalar_count();
  const std::string text = header.dump();

  std::string blob(kMagic, sizeof kMagic);
  put_u64(blob, text.size());
  blob += text;
  blob.reserve(blob.size() + offset);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double v : params.at(i).data()) put_f32(blob, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write checkpoint '{}'", path.string()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error(fmt::format("failed writing checkpoint '{}'", path.string()));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("missing file '{}' (checkpoint)", path.string()));
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(fmt::format("'{}' is not a trajlm checkpoint (bad magic)", path.string()));
  }
  const std::uint64_t header_len = get_u64(blob.data() + 8);
  if (header_len > blob.size() - 16) {
    throw Error(fmt::format("checkpoint '{}' truncated in header", path.string()));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("checkpoint '{}' has a malformed header: {}", path.string(), e.what()));
  }
  LoadedCheckpoint result;
  ModelParams params;
  std::size_t data_start = 16 + header_len;
  std::size_t expected = 0;
  ModelConfig config;
  try {
    config = ModelConfig::from_json(header.at("config").dump());
    result.meta.vocab_fingerprint = std::stoull(header.at("vocab_fingerprint").get<std::string>(), nullptr, 16);
    result.meta.seed = header.at("seed").get<std::uint64_t>();
    result.meta.config_hash = header.at("config_hash").get<std::string>();
    result.meta.library_version = header.at("library_version").get<std::string>();
    result.meta.extra = header.at("extra").get<std::map<std::string, std::string>>();
    for (const auto& entry : header.at("parameters")) {
      auto shape = entry.at("shape").get<nn::Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      if (offset != expected) throw Error("parameter offsets are not contiguous");
      const std::size_t count =
          std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
      result.manifest.emplace_back(entry.at("name").get<std::string>(), shape);
      params.add(result.manifest.back().first, std::move(shape));
      expected += count * 4;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("checkpoint '{}' header: {}", path.string(), e.what()));
  }
  if (blob.size() != data_start + expected) {
    throw Error(fmt::format("checkpoint '{}' has {} bytes, manifest requires {}", path.string(),
                            blob.size(), data_start + expected));
  }
  const char* p = blob.data() + data_start;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double& v : params.at(i).data()) {
      v = get_f32(p);
      p += 4;
    }
  }
  result.model = Model(std::move(config), std::move(params));
  return result;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab) {
  LoadedCheckpoint ck = load_checkpoint(path);
  if (ck.meta.vocab_fingerprint != vocab.fingerprint()) {
    throw Error(fmt::format(
        "vocabulary mismatch: checkpoint '{}' was trained with vocabulary {}, given {}",
        path.string(), hex64(ck.meta.vocab_fingerprint), hex64(vocab.fingerprint())));
  }
  return ck;
}

}  // namespace trajlm
