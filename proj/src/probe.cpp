#include "sgmcmc/probe.hpp"

#include <cmath>
#include <limits>

namespace sgmcmc {

std::vector<PathPoint> linear_path_losses(const EnergyModel& model, const Dataset& eval_split,
                                          const PathSpec& spec) {
  if (spec.num_points < 2) throw ContractError("linear path needs at least two points");
  if (spec.theta_a.dim() != spec.theta_b.dim())
    throw ContractError("path endpoints have different dimensions");
  const DataBatch batch = full_batch(eval_split);

  std::vector<PathPoint> out;
  ParamVector theta = spec.theta_a;
  for (int i = 0; i < spec.num_points; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(spec.num_points - 1);
    if (i == 0)
      theta.values = spec.theta_a.values;
    else if (i == spec.num_points - 1)
      theta.values = spec.theta_b.values;
    else
      theta.values = (1.0 - t) * spec.theta_a.values + t * spec.theta_b.values;

    PathPoint p;
    p.t = t;
    const Eigen::MatrixXd outputs = forward(model, theta, batch);
    if (batch.classification) {
      const Eigen::MatrixXd probs = softmax_rows(outputs);
      p.loss = nll(probs, batch.labels);
      p.error_percent = 100.0 * (1.0 - accuracy(probs, batch.labels));
    } else {
      p.loss = 0.5 * (outputs - batch.targets).squaredNorm() / batch.size();
      p.error_percent = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(p);
  }
  return out;
}

double path_barrier(const std::vector<PathPoint>& path) {
  if (path.size() < 2) throw ContractError("path too short");
  double interior = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < path.size(); ++i) interior = std::max(interior, path[i].loss);
  const double endpoints = std::max(path.front().loss, path.back().loss);
  if (!std::isfinite(interior)) return 0.0;  // two-point path has no interior
  return interior - endpoints;
}

CosineResult pairwise_cosine(const SampleSet& samples) {
  const int k = samples.num_samples();
  if (k < 1) throw ContractError("pairwise_cosine needs at least one snapshot");
  CosineResult out;
  out.similarity = Eigen::MatrixXd::Zero(k, k);
  std::vector<double> norms(k);
  for (int i = 0; i < k; ++i) {
    norms[i] = samples.snapshots[i].norm();
    if (norms[i] == 0.0) out.any_zero_norm = true;
  }
  for (int i = 0; i < k; ++i) {
    out.similarity(i, i) = 1.0;
    for (int j = i + 1; j < k; ++j) {
      double c = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0)
        c = samples.snapshots[i].dot(samples.snapshots[j]) / (norms[i] * norms[j]);
      out.similarity(i, j) = c;
      out.similarity(j, i) = c;
    }
  }
  return out;
}

}  // namespace sgmcmc
