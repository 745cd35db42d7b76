#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sgmcmc/common.hpp"

namespace sgmcmc {

struct Dataset;  // tasks.hpp

enum class ArchKind { mlp, conv };
enum class Activation { relu, identity };

// Closed architecture family: dense stacks and small conv stacks
// (3x3, stride 1, same padding, optional skip connections, global average
// pooling, dense readout). Everything the samplers and the meta-training
// task distribution need, nothing more.
struct ArchitectureConfig {
  ArchKind kind = ArchKind::mlp;

  // mlp: full width list including input and output, e.g. {784, 32, 10}.
  std::vector<int> layer_widths;

  // conv: number of output channels per conv layer and stack depth.
  int channels = 0;
  int conv_depth = 0;
  bool residual = false;

  Activation activation = Activation::relu;

  // mlp: {num_features}; conv: {C, H, W}.
  std::vector<int> input_shape;
  int num_outputs = 0;
  bool classification = true;

  void validate() const;
  int input_size() const;
  std::string describe() const;
};

struct TensorSlot {
  std::string name;
  std::vector<int> shape;
  int offset = 0;
  int size = 0;
};

// Flat parameter vector plus the per-tensor layout describing it.
struct ParamVector {
  Eigen::VectorXd values;
  std::vector<TensorSlot> layout;

  int dim() const { return static_cast<int>(values.size()); }
};

std::vector<TensorSlot> build_layout(const ArchitectureConfig& arch);
int param_count(const ArchitectureConfig& arch);

// Mini-batch with the originating dataset size carried along for the
// n/|B| gradient scaling.
struct DataBatch {
  Eigen::MatrixXd inputs;   // batch x input_size; conv inputs flattened C*H*W
  Eigen::VectorXi labels;   // classification targets
  Eigen::MatrixXd targets;  // regression targets, batch x num_outputs
  bool classification = true;
  std::int64_t dataset_size_n = 0;

  int size() const { return static_cast<int>(inputs.rows()); }
};

// Architecture + prior + temperature. The energy is
//   U~(θ) = [ (n/|B|) Σ_{i∈B} nll_i(θ) + λ‖θ‖² ] / T,
// i.e. a zero-mean Gaussian prior with precision 2λ (prior variance
// 1/(2λ)) and the whole energy tempered by 1/T. Normalization constants
// of likelihood and prior are dropped; energy values are comparable only
// within a run.
struct EnergyModel {
  ArchitectureConfig arch;
  double prior_precision_lambda = 0.0;
  double temperature = 1.0;
  const Dataset* data = nullptr;  // optional handle for chain drivers
};

// Fan-in scaled Gaussian init (std = sqrt(2/fan_in)), biases zero.
ParamVector init_params(const ArchitectureConfig& arch, std::uint64_t seed);

// Raw network outputs (logits for classification), batch x num_outputs.
Eigen::MatrixXd forward(const EnergyModel& model, const ParamVector& theta,
                        const DataBatch& batch);

double energy_value(const EnergyModel& model, const ParamVector& theta,
                    const DataBatch& batch);

ParamVector energy_grad(const EnergyModel& model, const ParamVector& theta,
                        const DataBatch& batch);

// Central-difference comparison of energy_grad against energy_value.
// Checks all coordinates, or a seeded sample of max_coords when
// 0 < max_coords < d. Returns the max relative error.
double finite_diff_check(const EnergyModel& model, const ParamVector& theta,
                         const DataBatch& batch, double epsilon,
                         int max_coords = 0, std::uint64_t seed = 0);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

}  // namespace sgmcmc
