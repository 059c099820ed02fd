// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_DUMP_IO_HPP
#define CTXPROBE_DUMP_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ctxprobe/attention.hpp"
#include "ctxprobe/errors.hpp"
#include "json.hpp"

// Dump file layout
// ----------------
// line 1: compact UTF-8 JSON header terminated by '\n', keys in this order:
//   {"version":1,"model_id":..,"L":..,"H":..,"T":..,"prompt_hash":..,
//    "token_offsets":[[b,e],..],"context_mask":[..],"special_token_flags":[..]}
// rest:   L*H*T IEEE-754 binary32 values, little-endian, layer-major then
//         head then token. Nothing may follow the payload.

namespace ctxprobe {

inline constexpr int kDumpFormatVersion = 1;

namespace detail {

inline void put_f32_le(std::string& out, float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<char>((bits >> shift) & 0xFF));
}

inline float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline std::size_t header_count(const nlohmann::ordered_json& header, const char* key) {
  const auto it = header.find(key);
  if (it == header.end() || !it->is_number_unsigned())
    throw CorruptHeader(std::string("header field '") + key + "' must be a non-negative integer");
  return it->get<std::size_t>();
}

inline std::vector<bool> header_flags(const nlohmann::ordered_json& header, const char* key,
                                      std::size_t expected) {
  const auto it = header.find(key);
  if (it == header.end() || !it->is_array() || it->size() != expected)
    throw CorruptHeader(std::string("header field '") + key + "' must be an array of length T");
  std::vector<bool> flags;
  flags.reserve(expected);
  for (const auto& v : *it) {
    if (!v.is_boolean()) throw CorruptHeader(std::string("'") + key + "' entries must be booleans");
    flags.push_back(v.get<bool>());
  }
  return flags;
}

}  // namespace detail

inline std::string write_dump(const AttentionDump& dump) {
  validate_dump(dump);
  nlohmann::ordered_json header;
  header["version"] = kDumpFormatVersion;
  header["model_id"] = dump.model_id;
  header["L"] = dump.num_layers;
  header["H"] = dump.num_heads;
  header["T"] = dump.num_tokens;
  header["prompt_hash"] = dump.prompt_hash;
  auto offsets = nlohmann::ordered_json::array();
  for (const auto& span : dump.token_offsets) offsets.push_back({span.begin, span.end});
  header["token_offsets"] = std::move(offsets);
  header["context_mask"] = dump.context_mask;
  header["special_token_flags"] = dump.special_token_flags;

  std::string bytes = header.dump();
  bytes.push_back('\n');
  bytes.reserve(bytes.size() + 4 * dump.attn.size());
  for (float v : dump.attn) detail::put_f32_le(bytes, v);
  return bytes;
}

inline AttentionDump read_dump(std::string_view bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string_view::npos) throw CorruptHeader("dump header is not newline-terminated");

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(std::string("dump header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw CorruptHeader("dump header must be a JSON object");

  static const std::set<std::string> kKeys = {"version", "model_id", "L", "H", "T", "prompt_hash",
                                              "token_offsets", "context_mask", "special_token_flags"};
  for (const auto& [key, _] : header.items())
    if (!kKeys.contains(key)) throw CorruptHeader("unknown header field '" + key + "'");

  const auto version = header.find("version");
  if (version == header.end() || !version->is_number_integer())
    throw CorruptHeader("header field 'version' must be an integer");
  if (version->get<std::int64_t>() != kDumpFormatVersion)
    throw UnsupportedVersion("dump format version " + version->dump() + " is not supported");

  AttentionDump dump;
  const auto model_id = header.find("model_id");
  const auto prompt_hash = header.find("prompt_hash");
  if (model_id == header.end() || !model_id->is_string())
    throw CorruptHeader("header field 'model_id' must be a string");
  if (prompt_hash == header.end() || !prompt_hash->is_string())
    throw CorruptHeader("header field 'prompt_hash' must be a string");
  dump.model_id = model_id->get<std::string>();
  dump.prompt_hash = prompt_hash->get<std::string>();
  dump.num_layers = detail::header_count(header, "L");
  dump.num_heads = detail::header_count(header, "H");
  dump.num_tokens = detail::header_count(header, "T");
  const std::size_t T = dump.num_tokens;

  const auto offsets = header.find("token_offsets");
  if (offsets == header.end() || !offsets->is_array() || offsets->size() != T)
    throw CorruptHeader("header field 'token_offsets' must be an array of length T");
  dump.token_offsets.reserve(T);
  for (const auto& pair : *offsets) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_unsigned() ||
        !pair[1].is_number_unsigned())
      throw CorruptHeader("token offsets must be [begin, end] pairs of non-negative integers");
    dump.token_offsets.push_back(CharSpan{pair[0].get<std::size_t>(), pair[1].get<std::size_t>()});
  }
  dump.context_mask = detail::header_flags(header, "context_mask", T);
  dump.special_token_flags = detail::header_flags(header, "special_token_flags", T);

  const auto payload = bytes.substr(newline + 1);
  const std::size_t values = dump.num_layers * dump.num_heads * T;
  if (payload.size() != 4 * values)
    throw PayloadLengthMismatch("expected " + std::to_string(4 * values) + " payload bytes, found " +
                                std::to_string(payload.size()));
  dump.attn.resize(values);
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < values; ++i) dump.attn[i] = detail::get_f32_le(p + 4 * i);

  validate_dump(dump);
  return dump;
}

inline std::string dump_file_name(std::string_view id, std::size_t chunk) {
  return std::string(id) + ".chunk" + std::to_string(chunk) + ".attn";
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingDump("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline AttentionDump load_dump(const std::filesystem::path& path) {
  return read_dump(read_file_bytes(path));
}

/// All chunk dumps for `id` in `dir`: <id>.chunk0.attn, <id>.chunk1.attn, ...
/// Stops at the first missing index. No chunk at all is MissingDump.
inline std::vector<AttentionDump> load_chunk_dumps(const std::filesystem::path& dir, std::string_view id) {
  if (!std::filesystem::is_directory(dir)) throw MissingDump("dump directory " + dir.string() + " does not exist");
  std::vector<AttentionDump> dumps;
  for (std::size_t k = 0;; ++k) {
    const auto path = dir / dump_file_name(id, k);
    if (!std::filesystem::exists(path)) break;
    dumps.push_back(load_dump(path));
  }
  if (dumps.empty()) throw MissingDump("no dump found for '" + std::string(id) + "' in " + dir.string());
  return dumps;
}

}  // namespace ctxprobe

#endif  // CTXPROBE_DUMP_IO_HPP
