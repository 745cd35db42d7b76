#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sgmcmc/metrics.hpp"
#include "sgmcmc/nn.hpp"
#include "sgmcmc/samplers.hpp"
#include "sgmcmc/tasks.hpp"

namespace sgmcmc {

struct PathSpec {
  ParamVector theta_a;
  ParamVector theta_b;
  int num_points = 11;  // includes both endpoints
};

struct PathPoint {
  double t = 0.0;
  double loss = 0.0;           // mean per-point NLL on the eval split
  double error_percent = 0.0;  // 100*(1-accuracy); NaN for regression
};

// Evaluates theta(t) = (1-t)*theta_a + t*theta_b on a uniform grid over
// [0, 1] including both endpoints (which are evaluated at the exact
// endpoint parameters).
std::vector<PathPoint> linear_path_losses(const EnergyModel& model, const Dataset& eval_split,
                                          const PathSpec& spec);

// Max interior loss minus max endpoint loss; <= 0 means no barrier.
double path_barrier(const std::vector<PathPoint>& path);

struct CosineResult {
  Eigen::MatrixXd similarity;  // K x K, unit diagonal
  bool any_zero_norm = false;
};

CosineResult pairwise_cosine(const SampleSet& samples);

}  // namespace sgmcmc
