#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sgmcmc/common.hpp"
#include "sgmcmc/nn.hpp"

namespace sgmcmc {

struct Dataset {
  Eigen::MatrixXd inputs;   // n x input_size
  Eigen::VectorXi labels;   // classification labels, empty for regression
  Eigen::MatrixXd targets;  // regression targets, empty for classification
  std::vector<int> input_shape;
  int num_classes = 0;  // 0 means regression
  std::string provenance;

  std::int64_t n() const { return inputs.rows(); }
  bool classification() const { return num_classes > 0; }
  int output_dim() const {
    return classification() ? num_classes : static_cast<int>(targets.cols());
  }
};

// Gaussian clusters with unit covariance. Class centers sit on a ring of
// radius `separation` in the first two dimensions (evenly spaced on a line
// for dim == 1), so separation 0 collapses all classes onto one blob.
// Labels are assigned round-robin, keeping class counts balanced within 1.
Dataset gen_blobs(int num_classes, int n, int dim, double separation,
                  std::uint64_t seed);

// y = sin(x) with x uniform over a union of intervals; noiseless targets.
Dataset gen_sine_regression(std::uint64_t seed,
                            const std::vector<std::pair<double, double>>& intervals =
                                {{-5.0, 1.0}, {1.0, 4.0}},
                            int n = 1000);

// Raw IDX tensor: big-endian header (two zero bytes, element-type code,
// rank), rank 32-bit big-endian dims, then the payload.
struct IdxTensor {
  int type_code = 0;
  std::vector<int> dims;
  std::vector<double> data;  // row-major

  std::int64_t size() const {
    std::int64_t s = 1;
    for (int d : dims) s *= d;
    return s;
  }
};

IdxTensor load_idx(const std::string& path);
void save_idx_ubyte(const std::string& path, const std::vector<int>& dims,
                    const std::vector<unsigned char>& payload);

// Pairs an image tensor (rank >= 2, first dim = n) with a rank-1 label
// tensor. ubyte pixels are scaled to [0,1]; labels stay integral.
Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path);

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double val_fraction,
                                          std::uint64_t seed);

// Reshuffling mini-batch stream. Every batch carries dataset_size_n so the
// n/|B| energy scaling is exact. When batch_size does not divide n the
// epoch tail is dropped and the next epoch reshuffles.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed);
  DataBatch next();
  std::int64_t batches_per_epoch() const {
    return ds_->n() / batch_size_;
  }

 private:
  void reshuffle();
  const Dataset* ds_;
  int batch_size_;
  RngStream rng_;
  std::vector<int> perm_;
  std::int64_t pos_ = 0;
};

DataBatch full_batch(const Dataset& ds);
DataBatch take_batch(const Dataset& ds, const std::vector<int>& indices);

struct Task {
  Dataset train;
  Dataset val;
  ArchitectureConfig arch;
  std::uint64_t task_id = 0;
};

// Cross-product of a dataset pool and an architecture family. Image
// datasets ({C,H,W} inputs) draw conv architectures; vector datasets draw
// MLPs from the hidden-width choices.
struct TaskDistribution {
  std::vector<Dataset> pool;
  std::vector<int> conv_channel_choices = {4, 8, 16};
  std::vector<int> conv_depth_choices = {1, 2, 3, 4, 5};
  bool sample_residual = true;
  std::vector<std::vector<int>> mlp_hidden_choices = {{8}, {16}};
  double val_fraction = 0.2;

  void validate() const;
};

Task sample_task(const TaskDistribution& dist, RngStream& rng);

}  // namespace sgmcmc
