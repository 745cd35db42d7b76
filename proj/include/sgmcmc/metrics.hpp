#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sgmcmc/nn.hpp"
#include "sgmcmc/samplers.hpp"

namespace sgmcmc {

// Per-member class probabilities for a fixed evaluation set.
struct PredictiveSet {
  std::vector<Eigen::MatrixXd> members;  // K matrices, each N x C, rows sum to 1
  Eigen::MatrixXd reference;             // optional N x C reference predictive

  int num_members() const { return static_cast<int>(members.size()); }
  int num_points() const { return members.empty() ? 0 : static_cast<int>(members[0].rows()); }
  int num_classes() const { return members.empty() ? 0 : static_cast<int>(members[0].cols()); }
  bool has_reference() const { return reference.size() > 0; }
  void validate() const;
};

// Argmax with ties broken toward the lowest class index; used identically
// by accuracy and agreement.
int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row);

// Softmax predictives for every snapshot in the sample set.
PredictiveSet member_predictives(const SampleSet& samples, const EnergyModel& model,
                                 const DataBatch& batch);

// Probability each member assigns to the true outcome: softmax probability
// of the label for classification, unit-variance Gaussian density of the
// target for regression. K x N.
Eigen::MatrixXd member_true_probs(const SampleSet& samples, const EnergyModel& model,
                                  const DataBatch& batch);

// (1/K) sum_k softmax(forward(theta_k, x)); rows sum to 1.
Eigen::MatrixXd bma_predict(const SampleSet& samples, const EnergyModel& model,
                            const DataBatch& batch);

double accuracy(const Eigen::MatrixXd& pred, const Eigen::VectorXi& labels);

// Mean -log p of the true class; probabilities clamped at 1e-300 (sets
// *clamped when the clamp fires).
double nll(const Eigen::MatrixXd& pred, const Eigen::VectorXi& labels, bool* clamped = nullptr);

// Expected calibration error over equal-width max-probability bins; empty
// bins contribute zero.
double ece(const Eigen::MatrixXd& pred, const Eigen::VectorXi& labels, int n_bins = 15);

// Mean over data of (1/(K(K-1))) sum_{i != j} p_i log(p_i/p_j) where p_i is
// member i's probability of the labeled class (clamped at 1e-12). This is
// the true-class scalar diversity statistic, not a full-distribution KL,
// despite the conventional name.
double pairwise_kld(const Eigen::MatrixXd& member_true_probs, const Eigen::VectorXi& labels);
double pairwise_kld(const PredictiveSet& set, const Eigen::VectorXi& labels);

// Fraction of matching top-1 predictions against a reference predictive.
double agreement(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& reference);

// Mean over points of (1/2) sum_k |pred - reference|.
double total_variation(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& reference);

}  // namespace sgmcmc
