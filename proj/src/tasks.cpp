#include "sgmcmc/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

namespace sgmcmc {

namespace {

void shuffle_indices(std::vector<int>& idx, RngStream& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = rng.uniform_int(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace

Dataset gen_blobs(int num_classes, int n, int dim, double separation,
                  std::uint64_t seed) {
  if (num_classes < 1 || dim < 1) throw ConfigError("gen_blobs: bad shape");
  if (n < num_classes) throw ConfigError("gen_blobs: n < num_classes");
  Dataset ds;
  ds.inputs.resize(n, dim);
  ds.labels.resize(n);
  ds.input_shape = {dim};
  ds.num_classes = num_classes;
  ds.provenance = "blobs";

  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(num_classes, dim);
  for (int c = 0; c < num_classes; ++c) {
    if (dim == 1) {
      centers(c, 0) = separation * (c - 0.5 * (num_classes - 1));
    } else {
      const double ang = 2.0 * M_PI * c / num_classes;
      centers(c, 0) = separation * std::cos(ang);
      centers(c, 1) = separation * std::sin(ang);
    }
  }

  RngStream rng(derive_seed(seed, 0xb10b5ull));
  for (int i = 0; i < n; ++i) {
    const int c = i % num_classes;
    ds.labels[i] = c;
    for (int j = 0; j < dim; ++j) ds.inputs(i, j) = centers(c, j) + rng.normal();
  }
  return ds;
}

Dataset gen_sine_regression(std::uint64_t seed,
                            const std::vector<std::pair<double, double>>& intervals,
                            int n) {
  if (intervals.empty()) throw ConfigError("gen_sine_regression: no intervals");
  double total_len = 0.0;
  for (const auto& [lo, hi] : intervals) {
    if (hi < lo) throw ConfigError("gen_sine_regression: inverted interval");
    total_len += hi - lo;
  }
  if (total_len <= 0.0) throw ConfigError("gen_sine_regression: degenerate intervals");

  Dataset ds;
  ds.inputs.resize(n, 1);
  ds.targets.resize(n, 1);
  ds.input_shape = {1};
  ds.num_classes = 0;
  ds.provenance = "sine";

  RngStream rng(derive_seed(seed, 0x51e4ull));
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform01() * total_len;
    double x = intervals.back().second;
    for (const auto& [lo, hi] : intervals) {
      const double len = hi - lo;
      if (u <= len) {
        x = lo + u;
        break;
      }
      u -= len;
    }
    ds.inputs(i, 0) = x;
    ds.targets(i, 0) = std::sin(x);
  }
  return ds;
}

namespace {

std::uint32_t read_be32(std::FILE* f, const std::string& path, long offset) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4)
    throw FormatError(path + ": truncated header at offset " + std::to_string(offset));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

int idx_elem_bytes(int type_code, const std::string& path) {
  switch (type_code) {
    case 0x08:
    case 0x09:
      return 1;
    case 0x0B:
      return 2;
    case 0x0C:
    case 0x0D:
      return 4;
    case 0x0E:
      return 8;
    default:
      throw FormatError(path + ": unknown IDX element type 0x" +
                        std::to_string(type_code) + " at offset 2");
  }
}

}  // namespace

IdxTensor load_idx(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw FormatError(path + ": cannot open");
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  unsigned char magic[4];
  if (std::fread(magic, 1, 4, f) != 4) throw FormatError(path + ": truncated magic at offset 0");
  if (magic[0] != 0 || magic[1] != 0)
    throw FormatError(path + ": bad magic at offset 0");
  IdxTensor t;
  t.type_code = magic[2];
  const int elem_bytes = idx_elem_bytes(t.type_code, path);
  const int rank = magic[3];
  if (rank < 1) throw FormatError(path + ": zero rank at offset 3");

  std::int64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const auto d = read_be32(f, path, 4 + 4 * i);
    t.dims.push_back(static_cast<int>(d));
    count *= d;
  }

  std::vector<unsigned char> payload(static_cast<std::size_t>(count) * elem_bytes);
  const long payload_offset = 4 + 4 * rank;
  if (!payload.empty() &&
      std::fread(payload.data(), 1, payload.size(), f) != payload.size())
    throw FormatError(path + ": truncated payload at offset " +
                      std::to_string(payload_offset));

  t.data.resize(static_cast<std::size_t>(count));
  const unsigned char* p = payload.data();
  for (std::int64_t i = 0; i < count; ++i, p += elem_bytes) {
    switch (t.type_code) {
      case 0x08:
        t.data[i] = static_cast<double>(*p);
        break;
      case 0x09:
        t.data[i] = static_cast<double>(static_cast<signed char>(*p));
        break;
      case 0x0B: {
        const std::uint16_t v = (std::uint16_t(p[0]) << 8) | p[1];
        t.data[i] = static_cast<double>(static_cast<std::int16_t>(v));
        break;
      }
      case 0x0C: {
        const std::uint32_t v = (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
                                (std::uint32_t(p[2]) << 8) | p[3];
        t.data[i] = static_cast<double>(static_cast<std::int32_t>(v));
        break;
      }
      case 0x0D: {
        const std::uint32_t v = (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
                                (std::uint32_t(p[2]) << 8) | p[3];
        float fv;
        std::memcpy(&fv, &v, 4);
        t.data[i] = static_cast<double>(fv);
        break;
      }
      case 0x0E: {
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v = (v << 8) | p[b];
        double dv;
        std::memcpy(&dv, &v, 8);
        t.data[i] = dv;
        break;
      }
    }
  }
  return t;
}

void save_idx_ubyte(const std::string& path, const std::vector<int>& dims,
                    const std::vector<unsigned char>& payload) {
  std::int64_t count = 1;
  for (int d : dims) count *= d;
  if (count != static_cast<std::int64_t>(payload.size()))
    throw ContractError("save_idx_ubyte: dims/payload mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const unsigned char magic[4] = {0, 0, 0x08, static_cast<unsigned char>(dims.size())};
  out.write(reinterpret_cast<const char*>(magic), 4);
  for (int d : dims) {
    const unsigned char b[4] = {static_cast<unsigned char>((d >> 24) & 0xff),
                                static_cast<unsigned char>((d >> 16) & 0xff),
                                static_cast<unsigned char>((d >> 8) & 0xff),
                                static_cast<unsigned char>(d & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
}

Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path) {
  const IdxTensor images = load_idx(images_path);
  const IdxTensor labels = load_idx(labels_path);
  if (images.dims.size() < 2)
    throw FormatError(images_path + ": image tensor must have rank >= 2");
  if (labels.dims.size() != 1)
    throw FormatError(labels_path + ": label tensor must have rank 1");
  if (images.dims[0] != labels.dims[0])
    throw FormatError("image/label count mismatch: " + std::to_string(images.dims[0]) +
                      " vs " + std::to_string(labels.dims[0]));

  const int n = images.dims[0];
  std::int64_t per_item = 1;
  for (std::size_t i = 1; i < images.dims.size(); ++i) per_item *= images.dims[i];

  Dataset ds;
  ds.inputs.resize(n, per_item);
  const double scale = images.type_code == 0x08 ? 1.0 / 255.0 : 1.0;
  for (int i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < per_item; ++j)
      ds.inputs(i, j) = images.data[static_cast<std::size_t>(i) * per_item + j] * scale;

  ds.labels.resize(n);
  int max_label = 0;
  for (int i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(labels.data[i]);
    max_label = std::max(max_label, ds.labels[i]);
    if (ds.labels[i] < 0) throw FormatError(labels_path + ": negative label");
  }
  ds.num_classes = max_label + 1;

  // rank 3 ubyte image stacks are single-channel (MNIST family)
  if (images.dims.size() == 3)
    ds.input_shape = {1, images.dims[1], images.dims[2]};
  else if (images.dims.size() == 4)
    ds.input_shape = {images.dims[1], images.dims[2], images.dims[3]};
  else
    ds.input_shape = {static_cast<int>(per_item)};
  ds.provenance = "idx:" + images_path;
  return ds;
}

namespace {

Dataset take_rows(const Dataset& ds, const std::vector<int>& rows) {
  Dataset out;
  out.inputs.resize(rows.size(), ds.inputs.cols());
  out.input_shape = ds.input_shape;
  out.num_classes = ds.num_classes;
  out.provenance = ds.provenance;
  if (ds.classification()) out.labels.resize(rows.size());
  else out.targets.resize(rows.size(), ds.targets.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(i) = ds.inputs.row(rows[i]);
    if (ds.classification())
      out.labels[i] = ds.labels[rows[i]];
    else
      out.targets.row(i) = ds.targets.row(rows[i]);
  }
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double val_fraction,
                                          std::uint64_t seed) {
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw ConfigError("split_dataset: val_fraction must be in (0,1)");
  const auto n = static_cast<int>(ds.n());
  const int n_val = static_cast<int>(std::llround(val_fraction * n));
  if (n_val == 0 || n_val == n) throw ConfigError("split_dataset: empty split side");

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  RngStream rng(derive_seed(seed, 0x5b117ull));
  shuffle_indices(idx, rng);

  const std::vector<int> val_rows(idx.begin(), idx.begin() + n_val);
  const std::vector<int> train_rows(idx.begin() + n_val, idx.end());
  return {take_rows(ds, train_rows), take_rows(ds, val_rows)};
}

BatchIterator::BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), rng_(derive_seed(seed, 0xba7c4ull)) {
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (batch_size > ds.n())
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                      std::to_string(ds.n()));
  perm_.resize(ds.n());
  std::iota(perm_.begin(), perm_.end(), 0);
  reshuffle();
}

void BatchIterator::reshuffle() {
  shuffle_indices(perm_, rng_);
  pos_ = 0;
}

DataBatch BatchIterator::next() {
  if (pos_ + batch_size_ > static_cast<std::int64_t>(perm_.size())) reshuffle();
  std::vector<int> rows(perm_.begin() + pos_, perm_.begin() + pos_ + batch_size_);
  pos_ += batch_size_;
  return take_batch(*ds_, rows);
}

DataBatch take_batch(const Dataset& ds, const std::vector<int>& rows) {
  DataBatch b;
  b.classification = ds.classification();
  b.dataset_size_n = ds.n();
  b.inputs.resize(rows.size(), ds.inputs.cols());
  if (b.classification) b.labels.resize(rows.size());
  else b.targets.resize(rows.size(), ds.targets.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.inputs.row(i) = ds.inputs.row(rows[i]);
    if (b.classification)
      b.labels[i] = ds.labels[rows[i]];
    else
      b.targets.row(i) = ds.targets.row(rows[i]);
  }
  return b;
}

DataBatch full_batch(const Dataset& ds) {
  std::vector<int> rows(ds.n());
  std::iota(rows.begin(), rows.end(), 0);
  return take_batch(ds, rows);
}

void TaskDistribution::validate() const {
  if (pool.empty()) throw ConfigError("task distribution has an empty dataset pool");
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw ConfigError("task distribution val_fraction must be in (0,1)");
  for (const auto& ds : pool) {
    const bool image = ds.input_shape.size() == 3;
    if (image && (conv_channel_choices.empty() || conv_depth_choices.empty()))
      throw ConfigError("image dataset in pool but no conv choices");
    if (!image && mlp_hidden_choices.empty())
      throw ConfigError("vector dataset in pool but no mlp choices");
  }
}

Task sample_task(const TaskDistribution& dist, RngStream& rng) {
  dist.validate();
  Task task;
  const auto& ds = dist.pool[rng.uniform_int(dist.pool.size())];

  ArchitectureConfig arch;
  arch.input_shape = ds.input_shape;
  arch.num_outputs = ds.output_dim();
  arch.classification = ds.classification();
  arch.activation = Activation::relu;
  if (ds.input_shape.size() == 3) {
    arch.kind = ArchKind::conv;
    arch.channels = dist.conv_channel_choices[rng.uniform_int(dist.conv_channel_choices.size())];
    arch.conv_depth = dist.conv_depth_choices[rng.uniform_int(dist.conv_depth_choices.size())];
    arch.residual = dist.sample_residual ? rng.uniform_int(2) == 1 : false;
  } else {
    arch.kind = ArchKind::mlp;
    const auto& hidden = dist.mlp_hidden_choices[rng.uniform_int(dist.mlp_hidden_choices.size())];
    arch.layer_widths.push_back(arch.input_size());
    arch.layer_widths.insert(arch.layer_widths.end(), hidden.begin(), hidden.end());
    arch.layer_widths.push_back(arch.num_outputs);
  }
  arch.validate();
  task.arch = arch;

  const std::uint64_t split_seed = rng.uniform_int(UINT64_MAX - 1);
  std::tie(task.train, task.val) = split_dataset(ds, dist.val_fraction, split_seed);
  task.task_id = derive_seed(split_seed, arch.kind == ArchKind::conv ? 1u : 0u);
  return task;
}

}  // namespace sgmcmc
