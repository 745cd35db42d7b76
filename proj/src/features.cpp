#include "sgmcmc/features.hpp"

#include <cmath>

namespace sgmcmc {

void update_emas(FeatureBank& bank, const Eigen::VectorXd& grad) {
  if (bank.dim() != grad.size()) throw ContractError("feature bank dimension mismatch");
  for (std::size_t j = 0; j < kEmaDecays.size(); ++j) {
    const double rho = kEmaDecays[j];
    bank.ema.col(static_cast<int>(j)) =
        rho * bank.ema.col(static_cast<int>(j)) + (1.0 - rho) * grad;
  }
  ++bank.updates;
}

Eigen::MatrixXd raw_features(const Eigen::VectorXd& theta, const Eigen::VectorXd& momentum,
                             const Eigen::VectorXd& grad, const FeatureBank& bank) {
  const auto d = theta.size();
  if (momentum.size() != d || grad.size() != d || bank.ema.rows() != d)
    throw ContractError("feature inputs must share the parameter dimension");
  if (!theta.allFinite() || !momentum.allFinite() || !grad.allFinite())
    throw ContractError("feature inputs contain non-finite values");
  Eigen::MatrixXd f(d, kNumFeatures);
  f.col(kGradCol) = grad;
  f.col(kThetaCol) = theta;
  f.col(kMomentumCol) = momentum;
  f.rightCols(static_cast<int>(kEmaDecays.size())) = bank.ema;
  return f;
}

Eigen::VectorXd feature_column_scales(const Eigen::MatrixXd& raw) {
  const double d = static_cast<double>(raw.rows());
  Eigen::VectorXd scales(raw.cols());
  for (int j = 0; j < raw.cols(); ++j) {
    const double rms = std::sqrt(raw.col(j).squaredNorm() / d);
    scales[j] = rms <= 1e-12 ? 1.0 : rms;
  }
  return scales;
}

Eigen::MatrixXd scale_columns(const Eigen::MatrixXd& raw, const Eigen::VectorXd& scales) {
  return raw * scales.cwiseInverse().asDiagonal();
}

Eigen::MatrixXd normalize_features(const Eigen::MatrixXd& raw) {
  if (raw.cols() != kNumFeatures) throw ContractError("feature matrix must have 9 columns");
  return scale_columns(raw, feature_column_scales(raw));
}

Eigen::MatrixXd build_features(const Eigen::VectorXd& theta, const Eigen::VectorXd& momentum,
                               const Eigen::VectorXd& grad, const FeatureBank& bank) {
  return normalize_features(raw_features(theta, momentum, grad, bank));
}

Eigen::VectorXd MetaParams::flatten() const {
  Eigen::VectorXd flat(kParamCount);
  int at = 0;
  for (int h = 0; h < kHiddenUnits; ++h)
    for (int j = 0; j < kNumFeatures; ++j) flat[at++] = trunk_w(h, j);
  flat.segment(at, kHiddenUnits) = trunk_b;
  at += kHiddenUnits;
  flat.segment(at, kHiddenUnits) = alpha_w;
  at += kHiddenUnits;
  flat[at++] = alpha_b;
  flat.segment(at, kHiddenUnits) = beta_w;
  at += kHiddenUnits;
  flat[at++] = beta_b;
  return flat;
}

MetaParams MetaParams::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != kParamCount) throw ContractError("meta-parameter vector has wrong length");
  MetaParams m;
  m.trunk_w.resize(kHiddenUnits, kNumFeatures);
  int at = 0;
  for (int h = 0; h < kHiddenUnits; ++h)
    for (int j = 0; j < kNumFeatures; ++j) m.trunk_w(h, j) = flat[at++];
  m.trunk_b = flat.segment(at, kHiddenUnits);
  at += kHiddenUnits;
  m.alpha_w = flat.segment(at, kHiddenUnits);
  at += kHiddenUnits;
  m.alpha_b = flat[at++];
  m.beta_w = flat.segment(at, kHiddenUnits);
  at += kHiddenUnits;
  m.beta_b = flat[at++];
  return m;
}

MetaParams init_meta_params(std::uint64_t seed) {
  MetaParams m;
  RngStream rng(derive_seed(seed, 0x6d657461ull));  // "meta"
  const double std_dev = std::sqrt(2.0 / kNumFeatures);
  m.trunk_w.resize(kHiddenUnits, kNumFeatures);
  for (int h = 0; h < kHiddenUnits; ++h)
    for (int j = 0; j < kNumFeatures; ++j) m.trunk_w(h, j) = std_dev * rng.normal();
  m.trunk_b = Eigen::VectorXd::Zero(kHiddenUnits);
  m.alpha_w = Eigen::VectorXd::Zero(kHiddenUnits);
  m.beta_w = Eigen::VectorXd::Zero(kHiddenUnits);
  m.alpha_b = 0.0;
  m.beta_b = 0.0;
  return m;
}

void eval_alpha_beta(const MetaParams& meta, const Eigen::MatrixXd& features,
                     Eigen::VectorXd& alpha, Eigen::VectorXd& beta) {
  if (features.cols() != kNumFeatures) throw ContractError("feature matrix must have 9 columns");
  Eigen::MatrixXd hidden = features * meta.trunk_w.transpose();
  hidden.rowwise() += meta.trunk_b.transpose();
  hidden = hidden.cwiseMax(0.0);
  alpha = hidden * meta.alpha_w;
  alpha.array() += meta.alpha_b;
  beta = hidden * meta.beta_w;
  beta.array() += meta.beta_b;
}

void eval_beta_with_input_grad(const MetaParams& meta, const Eigen::MatrixXd& features,
                               int column, Eigen::VectorXd& beta,
                               Eigen::VectorXd& dbeta_dcol) {
  if (features.cols() != kNumFeatures) throw ContractError("feature matrix must have 9 columns");
  Eigen::MatrixXd pre = features * meta.trunk_w.transpose();
  pre.rowwise() += meta.trunk_b.transpose();
  const Eigen::MatrixXd active = (pre.array() > 0.0).cast<double>();
  beta = pre.cwiseMax(0.0) * meta.beta_w;
  beta.array() += meta.beta_b;
  // d beta_i / d x_{i,col} = sum_h beta_w[h] * 1[pre_{i,h} > 0] * trunk_w(h, col)
  dbeta_dcol = active * meta.beta_w.cwiseProduct(meta.trunk_w.col(column));
}

MetaParams make_momentum_identity_meta(double output_scale) {
  MetaParams m;
  m.trunk_w = Eigen::MatrixXd::Zero(kHiddenUnits, kNumFeatures);
  m.trunk_b = Eigen::VectorXd::Zero(kHiddenUnits);
  m.alpha_w = Eigen::VectorXd::Zero(kHiddenUnits);
  m.beta_w = Eigen::VectorXd::Zero(kHiddenUnits);
  m.alpha_b = 0.0;
  m.beta_b = 0.0;
  m.trunk_w(0, kMomentumCol) = 1.0;
  m.trunk_w(1, kMomentumCol) = -1.0;
  m.beta_w[0] = output_scale;
  m.beta_w[1] = -output_scale;
  return m;
}

}  // namespace sgmcmc
