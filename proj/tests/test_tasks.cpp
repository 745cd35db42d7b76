#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "sgmcmc/tasks.hpp"

using namespace sgmcmc;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("sgmcmc_test_" + name)).string();
}

// Nearest-class-mean rule: a linear classifier trained in closed form.
double nearest_centroid_accuracy(const Dataset& ds) {
  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(ds.num_classes, ds.inputs.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(ds.num_classes);
  for (int i = 0; i < ds.n(); ++i) {
    centers.row(ds.labels[i]) += ds.inputs.row(i);
    counts[ds.labels[i]] += 1.0;
  }
  for (int c = 0; c < ds.num_classes; ++c) centers.row(c) /= counts[c];
  std::int64_t hits = 0;
  for (int i = 0; i < ds.n(); ++i) {
    int best = 0;
    double best_d = (ds.inputs.row(i) - centers.row(0)).squaredNorm();
    for (int c = 1; c < ds.num_classes; ++c) {
      const double d = (ds.inputs.row(i) - centers.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best == ds.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.n());
}

}  // namespace

TEST_CASE("blobs: separation controls separability") {
  const Dataset easy = gen_blobs(2, 2000, 2, 10.0, 3);
  CHECK(nearest_centroid_accuracy(easy) > 0.99);

  const Dataset impossible = gen_blobs(3, 3000, 2, 0.0, 4);
  const double acc = nearest_centroid_accuracy(impossible);
  CHECK(acc > 1.0 / 3.0 - 0.05);
  CHECK(acc < 1.0 / 3.0 + 0.05);
}

TEST_CASE("blobs: balanced labels and determinism") {
  const Dataset ds = gen_blobs(3, 100, 4, 5.0, 9);
  std::map<int, int> counts;
  for (int i = 0; i < ds.n(); ++i) counts[ds.labels[i]]++;
  CHECK(counts.size() == 3);
  int lo = 1 << 30, hi = 0;
  for (auto& [c, k] : counts) {
    lo = std::min(lo, k);
    hi = std::max(hi, k);
  }
  CHECK(hi - lo <= 1);

  const Dataset again = gen_blobs(3, 100, 4, 5.0, 9);
  CHECK(ds.inputs == again.inputs);
  CHECK(ds.labels == again.labels);
}

TEST_CASE("sine regression: interval support, exact targets, n") {
  const Dataset ds = gen_sine_regression(5);
  CHECK(ds.n() == 1000);
  for (int i = 0; i < ds.n(); ++i) {
    const double x = ds.inputs(i, 0);
    const bool in_first = x >= -5.0 && x <= 1.0;
    const bool in_second = x >= 1.0 && x <= 4.0;
    CHECK((in_first || in_second));
    CHECK(ds.targets(i, 0) == std::sin(x));
  }

  // configured bounds give a real gap
  const Dataset gapped = gen_sine_regression(6, {{-5.0, -1.0}, {1.5, 4.0}}, 500);
  for (int i = 0; i < gapped.n(); ++i) {
    const double x = gapped.inputs(i, 0);
    CHECK(!(x > -1.0 && x < 1.5));
  }
}

TEST_CASE("idx parser matches a byte-level reference decode") {
  const std::string img_path = temp_path("imgs.idx");
  const std::string lbl_path = temp_path("lbls.idx");

  // 2 images of 3x3, pixel value = position index
  std::vector<unsigned char> pixels(2 * 3 * 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<unsigned char>(13 * i);
  save_idx_ubyte(img_path, {2, 3, 3}, pixels);
  save_idx_ubyte(lbl_path, {2}, {7, 1});

  // independent reference decode straight from the bytes
  std::ifstream raw(img_path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(raw)),
                                   std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 4 + 3 * 4 + pixels.size());
  CHECK(bytes[0] == 0);
  CHECK(bytes[1] == 0);
  CHECK(bytes[2] == 0x08);
  CHECK(bytes[3] == 3);
  auto be32 = [&](std::size_t at) {
    return (std::uint32_t(bytes[at]) << 24) | (std::uint32_t(bytes[at + 1]) << 16) |
           (std::uint32_t(bytes[at + 2]) << 8) | std::uint32_t(bytes[at + 3]);
  };
  CHECK(be32(4) == 2);
  CHECK(be32(8) == 3);
  CHECK(be32(12) == 3);

  const IdxTensor t = load_idx(img_path);
  CHECK(t.dims == std::vector<int>{2, 3, 3});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    CHECK(t.data[i] == static_cast<double>(bytes[16 + i]));

  const IdxTensor labels = load_idx(lbl_path);
  CHECK(labels.dims == std::vector<int>{2});
  CHECK(labels.data[0] == 7.0);
  CHECK(labels.data[1] == 1.0);

  const Dataset ds = load_idx_dataset(img_path, lbl_path);
  CHECK(ds.n() == 2);
  CHECK(ds.num_classes == 8);
  CHECK(ds.input_shape == std::vector<int>{1, 3, 3});
  for (int i = 0; i < 9; ++i)
    CHECK(ds.inputs(0, i) == doctest::Approx(pixels[i] / 255.0).epsilon(1e-15));
}

TEST_CASE("idx roundtrip is lossless") {
  const std::string path = temp_path("roundtrip.idx");
  std::vector<unsigned char> payload(4 * 2 * 2);
  for (std::size_t i = 0; i < payload.size(); ++i)
    payload[i] = static_cast<unsigned char>((i * 37) % 256);
  save_idx_ubyte(path, {4, 2, 2}, payload);
  const IdxTensor t = load_idx(path);
  REQUIRE(t.size() == static_cast<std::int64_t>(payload.size()));
  for (std::size_t i = 0; i < payload.size(); ++i)
    CHECK(t.data[i] == static_cast<double>(payload[i]));
}

TEST_CASE("idx error paths: bad magic, unknown type, truncation") {
  const std::string path = temp_path("bad.idx");
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char junk[4] = {1, 2, 3, 4};
    out.write(reinterpret_cast<const char*>(junk), 4);
  }
  CHECK_THROWS_AS(load_idx(path), FormatError);

  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char hdr[4] = {0, 0, 0x42, 1};
    out.write(reinterpret_cast<const char*>(hdr), 4);
  }
  CHECK_THROWS_AS(load_idx(path), FormatError);

  {
    // claims 10 entries, delivers 3
    std::ofstream out(path, std::ios::binary);
    const unsigned char hdr[8] = {0, 0, 0x08, 1, 0, 0, 0, 10};
    out.write(reinterpret_cast<const char*>(hdr), 8);
    const unsigned char data[3] = {1, 2, 3};
    out.write(reinterpret_cast<const char*>(data), 3);
  }
  CHECK_THROWS_AS(load_idx(path), FormatError);
  CHECK_THROWS_AS(load_idx(temp_path("does_not_exist.idx")), FormatError);
}

TEST_CASE("split_dataset: sizes, disjoint union, determinism") {
  const Dataset ds = gen_blobs(2, 10, 2, 4.0, 17);
  const auto [train, val] = split_dataset(ds, 0.2, 99);
  CHECK(val.n() == 2);
  CHECK(train.n() == 8);

  // union of rows equals the original multiset
  std::vector<double> all;
  for (int i = 0; i < train.n(); ++i) all.push_back(train.inputs(i, 0));
  for (int i = 0; i < val.n(); ++i) all.push_back(val.inputs(i, 0));
  std::vector<double> orig;
  for (int i = 0; i < ds.n(); ++i) orig.push_back(ds.inputs(i, 0));
  std::sort(all.begin(), all.end());
  std::sort(orig.begin(), orig.end());
  CHECK(all == orig);

  const auto [train2, val2] = split_dataset(ds, 0.2, 99);
  CHECK(train.inputs == train2.inputs);
  CHECK(val.inputs == val2.inputs);

  CHECK_THROWS_AS(split_dataset(ds, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_dataset(ds, 0.04, 1), ConfigError);  // empty val side
}

TEST_CASE("batch iterator: contract, epoch cover, scaling factor, determinism") {
  const Dataset ds = gen_blobs(2, 12, 2, 4.0, 23);
  CHECK_THROWS_AS(BatchIterator(ds, 128, 1), ConfigError);

  BatchIterator it(ds, 4, 7);
  std::vector<double> seen;
  for (int b = 0; b < 3; ++b) {
    const DataBatch batch = it.next();
    CHECK(batch.dataset_size_n == 12);
    CHECK(batch.size() == 4);
    for (int i = 0; i < 4; ++i) seen.push_back(batch.inputs(i, 0));
  }
  std::vector<double> orig;
  for (int i = 0; i < ds.n(); ++i) orig.push_back(ds.inputs(i, 0));
  std::sort(seen.begin(), seen.end());
  std::sort(orig.begin(), orig.end());
  CHECK(seen == orig);

  BatchIterator it_a(ds, 4, 7);
  BatchIterator it_b(ds, 4, 7);
  for (int b = 0; b < 6; ++b) CHECK(it_a.next().inputs == it_b.next().inputs);
}

TEST_CASE("sample_task: fixed pool, domain, determinism") {
  TaskDistribution singular;
  singular.pool.push_back(gen_blobs(2, 40, 2, 6.0, 31));
  singular.mlp_hidden_choices = {{8}};
  RngStream rng(1);
  const Task t = sample_task(singular, rng);
  CHECK(t.arch.kind == ArchKind::mlp);
  CHECK(t.arch.layer_widths == std::vector<int>{2, 8, 2});
  CHECK(t.train.n() + t.val.n() == 40);
  CHECK(t.val.n() > 0);

  TaskDistribution image_dist;
  Dataset img;
  img.inputs = Eigen::MatrixXd::Zero(40, 1 * 6 * 6);
  img.labels = Eigen::VectorXi::Zero(40);
  for (int i = 0; i < 40; ++i) img.labels[i] = i % 2;
  img.num_classes = 2;
  img.input_shape = {1, 6, 6};
  image_dist.pool.push_back(img);
  RngStream rng2(5);
  for (int i = 0; i < 200; ++i) {
    const Task task = sample_task(image_dist, rng2);
    CHECK(task.arch.kind == ArchKind::conv);
    const bool ch_ok =
        task.arch.channels == 4 || task.arch.channels == 8 || task.arch.channels == 16;
    CHECK(ch_ok);
    CHECK(task.arch.conv_depth >= 1);
    CHECK(task.arch.conv_depth <= 5);
  }

  RngStream ra(9), rb(9);
  for (int i = 0; i < 10; ++i) {
    const Task a = sample_task(image_dist, ra);
    const Task b = sample_task(image_dist, rb);
    CHECK(a.arch.channels == b.arch.channels);
    CHECK(a.arch.conv_depth == b.arch.conv_depth);
    CHECK(a.arch.residual == b.arch.residual);
    CHECK(a.task_id == b.task_id);
  }
}

TEST_CASE("sample_task draws the architecture cross-product uniformly") {
  TaskDistribution image_dist;
  Dataset img;
  img.inputs = Eigen::MatrixXd::Zero(20, 16);
  img.labels = Eigen::VectorXi::Zero(20);
  for (int i = 0; i < 20; ++i) img.labels[i] = i % 2;
  img.num_classes = 2;
  img.input_shape = {1, 4, 4};
  image_dist.pool.push_back(img);

  // 3 channels x 5 depths x 2 residual = 30 cells
  std::map<std::tuple<int, int, bool>, int> counts;
  RngStream rng(77);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Task t = sample_task(image_dist, rng);
    counts[{t.arch.channels, t.arch.conv_depth, t.arch.residual}]++;
  }
  CHECK(counts.size() == 30);
  const double expected = draws / 30.0;
  double chi2 = 0.0;
  for (const auto& [key, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  // chi-square critical value, 29 dof, 1%
  CHECK(chi2 < 49.588);
}
