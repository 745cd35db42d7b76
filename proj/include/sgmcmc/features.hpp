#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>

#include "sgmcmc/common.hpp"

namespace sgmcmc {

inline constexpr std::array<double, 6> kEmaDecays = {0.1, 0.5, 0.9, 0.99, 0.999, 0.9999};
inline constexpr int kNumFeatures = 9;
inline constexpr int kHiddenUnits = 32;

// Feature column order (fixed; persisted in checkpoint sidecars):
//   0 raw gradient, 1 raw parameter, 2 raw momentum,
//   3..8 gradient EMAs at the decays above.
inline constexpr int kGradCol = 0;
inline constexpr int kThetaCol = 1;
inline constexpr int kMomentumCol = 2;

// Running averages of the stochastic gradient at six time scales,
// m <- rho*m + (1-rho)*g, zero-initialized, no bias correction.
struct FeatureBank {
  Eigen::MatrixXd ema;  // d x 6
  std::int64_t updates = 0;

  FeatureBank() = default;
  explicit FeatureBank(int d)
      : ema(Eigen::MatrixXd::Zero(d, static_cast<int>(kEmaDecays.size()))) {}

  int dim() const { return static_cast<int>(ema.rows()); }
};

void update_emas(FeatureBank& bank, const Eigen::VectorXd& grad);

// Unnormalized d x 9 feature matrix in the fixed column order.
Eigen::MatrixXd raw_features(const Eigen::VectorXd& theta, const Eigen::VectorXd& momentum,
                             const Eigen::VectorXd& grad, const FeatureBank& bank);

// Per-column scale that makes the column root-mean-square 1. Columns with
// RMS below 1e-12 get scale 1 so they pass through unchanged.
Eigen::VectorXd feature_column_scales(const Eigen::MatrixXd& raw);

Eigen::MatrixXd scale_columns(const Eigen::MatrixXd& raw, const Eigen::VectorXd& scales);

// raw_features followed by RMS normalization.
Eigen::MatrixXd normalize_features(const Eigen::MatrixXd& raw);
Eigen::MatrixXd build_features(const Eigen::VectorXd& theta, const Eigen::VectorXd& momentum,
                               const Eigen::VectorXd& grad, const FeatureBank& bank);

// Shared two-layer trunk (9 -> 32, ReLU) with scalar alpha/beta output
// heads, applied independently to each coordinate's feature row. 386
// parameters total.
struct MetaParams {
  Eigen::MatrixXd trunk_w;   // 32 x 9
  Eigen::VectorXd trunk_b;   // 32
  Eigen::VectorXd alpha_w;   // 32
  double alpha_b = 0.0;
  Eigen::VectorXd beta_w;    // 32
  double beta_b = 0.0;

  static constexpr int kParamCount =
      kHiddenUnits * kNumFeatures + kHiddenUnits + 2 * (kHiddenUnits + 1);

  // Flat order: trunk_w row-major, trunk_b, alpha_w, alpha_b, beta_w, beta_b.
  Eigen::VectorXd flatten() const;
  static MetaParams unflatten(const Eigen::VectorXd& flat);
};

// Trunk fan-in scaled Gaussian, zero heads: the untrained sampler emits
// alpha = beta = 0 so outer iteration 0 is well defined.
MetaParams init_meta_params(std::uint64_t seed);

void eval_alpha_beta(const MetaParams& meta, const Eigen::MatrixXd& features,
                     Eigen::VectorXd& alpha, Eigen::VectorXd& beta);

// Beta head only, plus its derivative with respect to one input column
// (holding everything else fixed). Used by the learned kinetic-energy
// sampler for the f * df/dtheta term.
void eval_beta_with_input_grad(const MetaParams& meta, const Eigen::MatrixXd& features,
                               int column, Eigen::VectorXd& beta,
                               Eigen::VectorXd& dbeta_dcol);

// Explicit weights making alpha == 0 and beta == output_scale * x_momentum
// via a ReLU(x) - ReLU(-x) pair on the momentum column. With output_scale
// equal to the momentum column's normalization scale this reproduces the
// raw momentum exactly.
MetaParams make_momentum_identity_meta(double output_scale);

}  // namespace sgmcmc
