#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "cloze/numerics/keyvalue.hpp"
#include "json.hpp"

namespace cloze::cli {

std::string code_version();

/// FNV-1a over a file's bytes, or over a directory's files in sorted
/// relative-path order (path, then contents). Run records (manifest.json,
/// metrics.jsonl) are skipped so reruns hash equal.
std::uint64_t content_hash(const std::filesystem::path& path);
std::string hex64(std::uint64_t value);

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

struct InputRecord {
  std::string path;
  std::string hash;
};

/// Provenance of one output directory: what ran, with which resolved
/// configuration and seed, on which inputs.
struct RunManifest {
  std::string command;
  KeyValues config;
  std::uint64_t seed = 0;
  std::string version = code_version();
  std::map<std::string, InputRecord> inputs;
  std::string started = utc_timestamp();
  std::string finished;

  void add_input(const std::string& role, const std::filesystem::path& path);

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);

  /// Stamps `finished` and writes <dir>/manifest.json, replacing any earlier one.
  void write(const std::filesystem::path& dir);
  static RunManifest read(const std::filesystem::path& dir);
};

}  // namespace cloze::cli
