#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "sgmcmc/samplers.hpp"

namespace sgmcmc {

// Per-parameter scalar traces extracted from a chain: S steps by m
// coordinates, plus timing metadata for ESS/s.
struct ChainMatrix {
  Eigen::MatrixXd traces;
  std::vector<int> coordinate_ids;
  std::vector<std::string> coordinate_layers;
  double wall_clock_per_interval = 0.0;
};

// Deterministic stratified coordinate subset: every layout slot gets a
// share of max_coords proportional to its size (at least one), coordinates
// evenly spaced within the slot.
ChainMatrix chain_matrix_from(const SampleSet& samples, int max_coords = 1024);

struct EssResult {
  double ess = 0.0;
  bool degenerate = false;  // constant trace; ess reported as S
};

// Autocorrelation ESS with Geyer initial-positive-sequence truncation,
// clamped to at most S.
EssResult ess(const Eigen::VectorXd& trace);

// Median per-coordinate ESS divided by the recorded seconds per thinning
// interval. scale_down_1e5 divides the reported value by 1e5, the
// convention for making large-d figures readable.
double ess_per_second(const SampleSet& samples, int max_coords = 1024,
                      bool scale_down_1e5 = false);

struct RhatResult {
  Eigen::VectorXd rhat;              // NaN where degenerate
  std::vector<bool> degenerate;      // zero within-chain variance
};

// Split-chain R-hat: each column's trace is cut into kappa equal contiguous
// sub-chains (tail remainder dropped) and the classical between/within
// variance ratio is computed. No rank normalization by default.
RhatResult chain_split_rhat(const Eigen::MatrixXd& traces, int kappa = 2,
                            bool rank_normalize = false);

// Fraction of finite entries below the threshold. Degenerate (NaN) entries
// are excluded from both numerator and denominator.
double rhat_summary(const Eigen::VectorXd& rhats, double threshold = 1.1);

// Per-layer proportion keyed by the tensor name prefix of each coordinate.
std::map<std::string, double> rhat_summary_by_layer(
    const Eigen::VectorXd& rhats, const std::vector<std::string>& layers,
    double threshold = 1.1);

struct UpdateNormTrace {
  std::vector<double> dtheta_sq;  // ||theta_{t+1} - theta_t||^2 per interval
  std::vector<double> beta_sq;    // dtheta_sq / eps^2
};

UpdateNormTrace update_norm_trace(const std::vector<Eigen::VectorXd>& thetas, double eps);

}  // namespace sgmcmc
