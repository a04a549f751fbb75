#include "evomerge/manifest.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "evomerge/rng.hpp"

namespace evomerge {

std::string bytes_hash_hex(const std::string& bytes) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return buf;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot hash missing file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return bytes_hash_hex(os.str());
}

std::string timestamp_utc() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const RunManifest& m, const std::string& path) {
  nlohmann::json j;
  j["command"] = m.command;
  j["config_path"] = m.config_path;
  j["seed"] = m.seed;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["out_dir"] = m.out_dir;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["volatile_outputs"] = m.volatile_outputs;
  j["split_reads"] = m.split_reads;
  j["run_key"] = m.run_key;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  RunManifest m;
  m.command = j.value("command", "");
  m.config_path = j.value("config_path", "");
  m.seed = j.value("seed", uint64_t{0});
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  m.out_dir = j.value("out_dir", "");
  if (j.contains("inputs")) m.inputs = j["inputs"].get<std::map<std::string, std::string>>();
  if (j.contains("outputs")) {
    m.outputs = j["outputs"].get<std::map<std::string, std::string>>();
  }
  if (j.contains("volatile_outputs")) {
    m.volatile_outputs = j["volatile_outputs"].get<std::map<std::string, std::string>>();
  }
  if (j.contains("split_reads")) {
    m.split_reads = j["split_reads"].get<std::map<std::string, uint64_t>>();
  }
  m.run_key = j.value("run_key", "");
  return m;
}

}  // namespace evomerge
