#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace evomerge {

// One manifest per run directory. The run key identifies the inputs
// (command, config bytes, seed); two runs with the same key must produce
// byte-identical deterministic outputs. Outputs that carry wall-clock
// measurements are listed separately and excluded from that contract.
struct RunManifest {
  std::string command;
  std::string config_path;
  uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::string out_dir;
  std::map<std::string, std::string> inputs;            // name -> content hash
  std::map<std::string, std::string> outputs;           // deterministic
  std::map<std::string, std::string> volatile_outputs;  // wall-clock bearing
  std::map<std::string, uint64_t> split_reads;
  std::string run_key;
};

std::string file_hash_hex(const std::string& path);
std::string bytes_hash_hex(const std::string& bytes);
std::string timestamp_utc();

void write_manifest(const RunManifest& m, const std::string& path);
RunManifest read_manifest(const std::string& path);

}  // namespace evomerge
