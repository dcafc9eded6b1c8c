#ifndef STORMUQ_MANIFEST_HPP
#define STORMUQ_MANIFEST_HPP

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "stormuq/common.hpp"
#include "stormuq/rng.hpp"

namespace stormuq {

// Schema versions for every file format the pipeline emits.
inline constexpr const char* kSchemaGrid = "ascii-grid-v1";
inline constexpr const char* kSchemaErrorField = "error-field-v1";
inline constexpr const char* kSchemaSummary = "storm-summary-v1";
inline constexpr const char* kSchemaChain = "stormuq-chain-v1";
inline constexpr const char* kSchemaScores = "scores-csv-v1";
inline constexpr const char* kSchemaEvidence = "evidence-csv-v1";
inline constexpr const char* kSchemaReport = "stormuq-simstudy-report-v1";
inline constexpr const char* kSchemaManifest = "stormuq-manifest-v1";

inline std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot hash missing file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    const auto n = std::size_t(in.gcount());
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

/// Stage manifest: input hashes, outputs, and the effective configuration,
/// written next to each stage's outputs so a rerun can prove its inputs
/// were identical.
inline void write_manifest(const std::string& out_dir, const std::string& stage,
                           const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs,
                           const nlohmann::json& config) {
  nlohmann::json j;
  j["schema"] = kSchemaManifest;
  j["stage"] = stage;
  nlohmann::json in_j = nlohmann::json::object();
  for (const auto& p : inputs) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_file(p)));
    in_j[p] = buf;
  }
  j["inputs"] = in_j;
  j["outputs"] = outputs;
  j["config"] = config;
  std::filesystem::create_directories(out_dir);
  std::ofstream out(std::filesystem::path(out_dir) / "manifest.json");
  if (!out) throw data_error("cannot write manifest in " + out_dir);
  out << j.dump(2) << "\n";
}

} // namespace stormuq

#endif
