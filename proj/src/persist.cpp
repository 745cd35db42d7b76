#include "sgmcmc/persist.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstring>
#include <fstream>

namespace sgmcmc {

namespace {

using nlohmann::json;

static_assert(sizeof(double) == 8);

// The containers assume a little-endian host (x86/ARM); asserted at load.
bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

void write_bytes(std::ofstream& out, const void* data, std::size_t len) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
}

void write_header(std::ofstream& out, const char magic[4], std::uint32_t version,
                  const std::string& header) {
  write_bytes(out, magic, 4);
  write_bytes(out, &version, 4);
  const std::uint64_t len = header.size();
  write_bytes(out, &len, 8);
  write_bytes(out, header.data(), header.size());
}

struct Reader {
  std::ifstream in;
  std::string path;

  Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw FormatError(p + ": cannot open");
    if (!host_is_little_endian()) throw FormatError("containers require a little-endian host");
  }
  void read(void* data, std::size_t len, const char* what) {
    if (!in.read(static_cast<char*>(data), static_cast<std::streamsize>(len)))
      throw FormatError(path + ": truncated while reading " + std::string(what));
  }
  std::uint32_t expect_magic(const char magic[4], std::uint32_t supported_version) {
    char m[4];
    read(m, 4, "magic");
    if (std::memcmp(m, magic, 4) != 0)
      throw FormatError(path + ": bad magic, expected " + std::string(magic, 4));
    std::uint32_t version = 0;
    read(&version, 4, "version");
    if (version != supported_version)
      throw FormatError(path + ": unsupported format version " + std::to_string(version) +
                        " (supported: " + std::to_string(supported_version) +
                        "); no migration path");
    return version;
  }
  json read_json_header() {
    std::uint64_t len = 0;
    read(&len, 8, "header length");
    std::string text(len, '\0');
    read(text.data(), len, "header");
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw FormatError(path + ": corrupt JSON header");
    return j;
  }
};

json layout_to_json(const std::vector<TensorSlot>& layout) {
  json arr = json::array();
  for (const auto& s : layout)
    arr.push_back({{"name", s.name}, {"shape", s.shape}, {"offset", s.offset}, {"size", s.size}});
  return arr;
}

std::vector<TensorSlot> layout_from_json(const json& arr) {
  std::vector<TensorSlot> layout;
  for (const auto& e : arr) {
    TensorSlot s;
    s.name = e.at("name").get<std::string>();
    s.shape = e.at("shape").get<std::vector<int>>();
    s.offset = e.at("offset").get<int>();
    s.size = e.at("size").get<int>();
    layout.push_back(std::move(s));
  }
  return layout;
}

}  // namespace

void save_meta_params(const std::string& path, const MetaParams& meta) {
  json header;
  header["param_count"] = MetaParams::kParamCount;
  header["field_order"] = {"trunk_w", "trunk_b", "alpha_w", "alpha_b", "beta_w", "beta_b"};
  header["hidden_units"] = kHiddenUnits;
  header["feature_columns"] = {"grad", "theta", "momentum", "ema_0.1", "ema_0.5",
                               "ema_0.9", "ema_0.99", "ema_0.999", "ema_0.9999"};
  header["ema_decays"] = kEmaDecays;
  header["normalization"] = "per_column_rms";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  write_header(out, "L2CK", kCheckpointVersion, header.dump());
  const Eigen::VectorXd flat = meta.flatten();
  write_bytes(out, flat.data(), sizeof(double) * flat.size());
  if (!out) throw FormatError(path + ": write failed");
}

MetaParams load_meta_params(const std::string& path) {
  Reader r(path);
  r.expect_magic("L2CK", kCheckpointVersion);
  const json header = r.read_json_header();
  const int count = header.at("param_count").get<int>();
  if (count != MetaParams::kParamCount)
    throw FormatError(path + ": checkpoint holds " + std::to_string(count) +
                      " parameters, expected " + std::to_string(MetaParams::kParamCount));
  Eigen::VectorXd flat(count);
  r.read(flat.data(), sizeof(double) * count, "parameters");
  return MetaParams::unflatten(flat);
}

void save_sample_set(const std::string& path, const SampleSet& samples) {
  json header;
  header["num_samples"] = samples.num_samples();
  header["dim"] = samples.dim();
  header["burnin"] = samples.burnin;
  header["thin"] = samples.thin;
  header["snapshot_steps"] = samples.snapshot_steps;
  header["diverged"] = samples.diverged;
  header["divergence_step"] = samples.divergence_step;
  header["divergence_detail"] = samples.divergence_detail;
  header["layout"] = layout_to_json(samples.layout);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  write_header(out, "L2SS", kSampleSetVersion, header.dump());
  for (const auto& snap : samples.snapshots)
    write_bytes(out, snap.data(), sizeof(double) * snap.size());
  if (!out) throw FormatError(path + ": write failed");

  json timing;
  timing["wall_clock_per_interval_s"] = samples.wall_clock_per_interval;
  std::ofstream side(path + ".timing.json");
  side << timing.dump(2) << "\n";
}

SampleSet load_sample_set(const std::string& path) {
  Reader r(path);
  r.expect_magic("L2SS", kSampleSetVersion);
  const json header = r.read_json_header();
  SampleSet s;
  const int k = header.at("num_samples").get<int>();
  const int d = header.at("dim").get<int>();
  s.burnin = header.at("burnin").get<std::int64_t>();
  s.thin = header.at("thin").get<std::int64_t>();
  s.snapshot_steps = header.at("snapshot_steps").get<std::vector<std::int64_t>>();
  s.diverged = header.at("diverged").get<bool>();
  s.divergence_step = header.at("divergence_step").get<std::int64_t>();
  s.divergence_detail = header.at("divergence_detail").get<std::string>();
  s.layout = layout_from_json(header.at("layout"));
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd snap(d);
    r.read(snap.data(), sizeof(double) * d, "snapshot");
    s.snapshots.push_back(std::move(snap));
  }

  std::ifstream side(path + ".timing.json");
  if (side) {
    json timing = json::parse(side, nullptr, false);
    if (!timing.is_discarded() && timing.contains("wall_clock_per_interval_s"))
      s.wall_clock_per_interval = timing["wall_clock_per_interval_s"].get<double>();
  }
  return s;
}

void save_reference_predictive(const std::string& path, const Eigen::MatrixXd& probs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  write_bytes(out, "L2RP", 4);
  write_bytes(out, &kReferenceVersion, 4);
  const std::uint64_t rows = probs.rows(), cols = probs.cols();
  write_bytes(out, &rows, 8);
  write_bytes(out, &cols, 8);
  // row-major so rows are contiguous records
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      const double v = probs(i, j);
      write_bytes(out, &v, 8);
    }
}

Eigen::MatrixXd load_reference_predictive(const std::string& path) {
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw FormatError(path + ": cannot open");
    char magic[4] = {};
    probe.read(magic, 4);
    if (std::memcmp(magic, "L2RP", 4) != 0) {
      // JSON fallback
      std::ifstream in(path);
      json j = json::parse(in, nullptr, false);
      if (j.is_discarded())
        throw FormatError(path + ": neither an L2RP container nor valid JSON");
      const int rows = j.at("rows").get<int>();
      const int cols = j.at("cols").get<int>();
      const auto values = j.at("probs").get<std::vector<double>>();
      if (static_cast<int>(values.size()) != rows * cols)
        throw FormatError(path + ": probs length does not match rows*cols");
      Eigen::MatrixXd m(rows, cols);
      for (int i = 0; i < rows; ++i)
        for (int c = 0; c < cols; ++c) m(i, c) = values[static_cast<std::size_t>(i) * cols + c];
      return m;
    }
  }
  Reader r(path);
  r.expect_magic("L2RP", kReferenceVersion);
  std::uint64_t rows = 0, cols = 0;
  r.read(&rows, 8, "rows");
  r.read(&cols, 8, "cols");
  Eigen::MatrixXd m(rows, cols);
  for (std::uint64_t i = 0; i < rows; ++i)
    for (std::uint64_t j = 0; j < cols; ++j) {
      double v;
      r.read(&v, 8, "probabilities");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  return m;
}

nlohmann::json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path + ": config is not valid JSON");
  if (!j.contains("seed")) throw ConfigError(path + ": config must set a seed");
  if (!j.contains("version")) throw ConfigError(path + ": config must set a version field");
  return j;
}

std::uint64_t config_hash(const nlohmann::json& config) {
  const std::string canon = config.dump();
  return fnv1a(canon.data(), canon.size());
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  json j;
  j["command"] = manifest.command;
  j["seed"] = manifest.seed;
  j["config_hash"] = manifest.config_hash;
  j["code_version"] = manifest.code_version;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;
  j["artifacts"] = manifest.artifacts;
  j["notes"] = manifest.notes;
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

}  // namespace sgmcmc
