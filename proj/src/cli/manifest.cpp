#include "cloze/cli/manifest.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <vector>

#include "cloze/numerics/rng.hpp"

#ifndef CLOZE_VERSION
#define CLOZE_VERSION "dev"
#endif

namespace cloze::cli {

namespace fs = std::filesystem;

std::string code_version() { return CLOZE_VERSION; }

namespace {

std::uint64_t hash_file(const fs::path& path, std::uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = numerics::fnv1a(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
  }
  return h;
}

bool is_run_record(const fs::path& p) {
  const auto name = p.filename().string();
  return name == "manifest.json" || name == "metrics.jsonl";
}

}  // namespace

std::uint64_t content_hash(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("input " + path.string() + " does not exist");
  if (!fs::is_directory(path)) return hash_file(path, numerics::fnv1a(""));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file() && !is_run_record(e.path())) files.push_back(fs::relative(e.path(), path));
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = numerics::fnv1a("");
  for (const auto& f : files) {
    h = numerics::fnv1a(f.generic_string(), h);
    h = numerics::fnv1a(std::string_view("\0", 1), h);
    h = hash_file(path / f, h);
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::add_input(const std::string& role, const fs::path& path) {
  inputs[role] = {fs::absolute(path).lexically_normal().string(), hex64(content_hash(path))};
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config.entries();
  j["seed"] = seed;
  j["code_version"] = version;
  j["inputs"] = nlohmann::json::object();
  for (const auto& [role, rec] : inputs) j["inputs"][role] = {{"path", rec.path}, {"fnv1a", rec.hash}};
  j["started"] = started;
  j["finished"] = finished;
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  for (const auto& [k, v] : j.at("config").items()) m.config.set(k, v.get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  m.version = j.at("code_version").get<std::string>();
  for (const auto& [role, rec] : j.at("inputs").items()) {
    m.inputs[role] = {rec.at("path").get<std::string>(), rec.at("fnv1a").get<std::string>()};
  }
  m.started = j.at("started").get<std::string>();
  m.finished = j.at("finished").get<std::string>();
  return m;
}

void RunManifest::write(const fs::path& dir) {
  finished = utc_timestamp();
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::read(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest in " + dir.string());
  return from_json(nlohmann::json::parse(in));
}

}  // namespace cloze::cli
