#pragma once

#include <nlohmann/json_fwd.hpp>
#include <string>

#include "sgmcmc/features.hpp"
#include "sgmcmc/samplers.hpp"

namespace sgmcmc {

// All binary containers are little-endian 64-bit floats behind a magic tag,
// a format version and a JSON header. Field orders are fixed and recorded
// in the headers/sidecars so a checkpoint alone reproduces a step
// bit-for-bit.
//
//   meta-parameter checkpoint (.l2ck):
//     "L2CK" | u32 version | u64 header_len | header JSON | 386 doubles
//     flat order: trunk_w row-major, trunk_b, alpha_w, alpha_b, beta_w, beta_b
//   sample set (.l2ss):
//     "L2SS" | u32 version | u64 header_len | header JSON | K*d doubles
//   reference predictive (.l2rp):
//     "L2RP" | u32 version | u64 rows | u64 cols | rows*cols doubles
//
// Wall-clock telemetry for a sample set lives in a separate
// "<path>.timing.json" sidecar so the container itself is byte-identical
// across reruns with the same (config, seed, version).

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kSampleSetVersion = 1;
inline constexpr std::uint32_t kReferenceVersion = 1;

void save_meta_params(const std::string& path, const MetaParams& meta);
MetaParams load_meta_params(const std::string& path);

void save_sample_set(const std::string& path, const SampleSet& samples);
SampleSet load_sample_set(const std::string& path);

void save_reference_predictive(const std::string& path, const Eigen::MatrixXd& probs);
// Accepts the binary container or a JSON file {"rows":N,"cols":C,"probs":[...]}.
Eigen::MatrixXd load_reference_predictive(const std::string& path);

// Strict config loading: unknown keys anywhere are rejected, seed is
// mandatory, "*_epochs" step counts are resolved against the dataset at
// parse time.
nlohmann::json load_config(const std::string& path);
std::uint64_t config_hash(const nlohmann::json& config);

struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string code_version;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> artifacts;
  std::vector<std::string> notes;
};

void write_manifest(const std::string& path, const Manifest& manifest);

}  // namespace sgmcmc
