// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_IO_HPP
#define CTXPROBE_IO_HPP

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ctxprobe/dump_io.hpp"
#include "ctxprobe/errors.hpp"
#include "json.hpp"

namespace ctxprobe {

/// Reads one JSON object per non-blank line. Parse failures name the line.
inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedRecord("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedRecord(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
    if (!out.back().is_object()) throw MalformedRecord(path.string() + ":" + std::to_string(number) + ": not an object");
  }
  return out;
}

inline std::string to_jsonl(const std::vector<nlohmann::ordered_json>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += row.dump();
    out.push_back('\n');
  }
  return out;
}

inline nlohmann::ordered_json read_json_file(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  try {
    return nlohmann::ordered_json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedRecord(path.string() + ": " + e.what());
  }
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw InvariantViolation("SHA-256 computation failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Callers write results
/// by index, so output does not depend on scheduling. The first exception
/// (lowest index among those thrown) is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  std::size_t failed_index = n;
  std::exception_ptr failure;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mutex);
          if (i < failed_index) {
            failed_index = i;
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Per-command record of what ran: config, inputs, outputs with checksums,
/// seed and wall time.
class RunManifest {
 public:
  RunManifest(std::string command, nlohmann::ordered_json config, std::uint64_t seed)
      : command_(std::move(command)), config_(std::move(config)), seed_(seed),
        start_(std::chrono::steady_clock::now()) {}

  void add_input(const std::filesystem::path& path) { inputs_.push_back(path.string()); }

  /// Writes `bytes` to `path` and records its checksum.
  void write_output(const std::filesystem::path& path, std::string_view bytes) {
    write_file_bytes(path, bytes);
    outputs_.push_back({{"path", path.string()}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
  }

  /// Records a summary of many files (e.g. a dump directory) as one entry.
  void record_output_set(const std::filesystem::path& path, std::size_t count, std::string_view combined_digest) {
    outputs_.push_back({{"path", path.string()}, {"files", count}, {"sha256", std::string(combined_digest)}});
  }

  void note(const std::string& key, nlohmann::ordered_json value) { notes_[key] = std::move(value); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command_;
    j["config"] = config_;
    j["seed"] = seed_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    if (!notes_.empty()) j["notes"] = notes_;
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j["timings"] = {{"wall_seconds", elapsed}};
    return j;
  }

  void save(const std::filesystem::path& path) const { write_file_bytes(path, to_json().dump(2) + "\n"); }

 private:
  std::string command_;
  nlohmann::ordered_json config_;
  std::uint64_t seed_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> inputs_;
  nlohmann::ordered_json outputs_ = nlohmann::ordered_json::array();
  nlohmann::ordered_json notes_ = nlohmann::ordered_json::object();
};

}  // namespace ctxprobe

#endif  // CTXPROBE_IO_HPP
