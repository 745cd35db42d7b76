#include "sgmcmc/metrics.hpp"

#include <cmath>

namespace sgmcmc {

void PredictiveSet::validate() const {
  if (members.empty()) throw ContractError("predictive set has no members");
  const auto n = members[0].rows();
  const auto c = members[0].cols();
  for (const auto& m : members) {
    if (m.rows() != n || m.cols() != c) throw ContractError("member shape mismatch");
    for (int i = 0; i < m.rows(); ++i) {
      if (std::abs(m.row(i).sum() - 1.0) > 1e-9)
        throw ContractError("member row does not sum to 1");
      if ((m.row(i).array() < 0.0).any() || (m.row(i).array() > 1.0).any())
        throw ContractError("member probabilities out of [0,1]");
    }
  }
  if (has_reference() && (reference.rows() != n || reference.cols() != c))
    throw ContractError("reference predictive shape mismatch");
}

int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

PredictiveSet member_predictives(const SampleSet& samples, const EnergyModel& model,
                                 const DataBatch& batch) {
  if (samples.num_samples() < 1) throw ContractError("sample set is empty");
  if (!batch.classification) throw ContractError("member_predictives needs a classification batch");
  PredictiveSet out;
  ParamVector theta;
  theta.layout = samples.layout;
  for (const auto& snap : samples.snapshots) {
    theta.values = snap;
    out.members.push_back(softmax_rows(forward(model, theta, batch)));
  }
  return out;
}

Eigen::MatrixXd member_true_probs(const SampleSet& samples, const EnergyModel& model,
                                  const DataBatch& batch) {
  if (samples.num_samples() < 1) throw ContractError("sample set is empty");
  const int k = samples.num_samples();
  const int n = batch.size();
  Eigen::MatrixXd probs(k, n);
  ParamVector theta;
  theta.layout = samples.layout;
  for (int m = 0; m < k; ++m) {
    theta.values = samples.snapshots[m];
    const Eigen::MatrixXd outputs = forward(model, theta, batch);
    if (batch.classification) {
      const Eigen::MatrixXd soft = softmax_rows(outputs);
      for (int i = 0; i < n; ++i) probs(m, i) = soft(i, batch.labels[i]);
    } else {
      for (int i = 0; i < n; ++i) {
        const double r2 = (outputs.row(i) - batch.targets.row(i)).squaredNorm();
        probs(m, i) =
            std::exp(-0.5 * r2) / std::pow(2.0 * M_PI, 0.5 * outputs.cols());
      }
    }
  }
  return probs;
}

Eigen::MatrixXd bma_predict(const SampleSet& samples, const EnergyModel& model,
                            const DataBatch& batch) {
  const PredictiveSet set = member_predictives(samples, model, batch);
  Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(set.num_points(), set.num_classes());
  for (const auto& m : set.members) avg += m;
  return avg / set.num_members();
}

double accuracy(const Eigen::MatrixXd& pred, const Eigen::VectorXi& labels) {
  if (pred.rows() != labels.size()) throw ContractError("pred/labels size mismatch");
  if (pred.rows() == 0) throw ContractError("empty predictions");
  std::int64_t correct = 0;
  for (int i = 0; i < pred.rows(); ++i)
    if (argmax_row(pred.row(i)) == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pred.rows());
}

double nll(const Eigen::MatrixXd& pred, const Eigen::VectorXi& labels, bool* clamped) {
  if (pred.rows() != labels.size()) throw ContractError("pred/labels size mismatch");
  if (pred.rows() == 0) throw ContractError("empty predictions");
  if (clamped) *clamped = false;
  double total = 0.0;
  for (int i = 0; i < pred.rows(); ++i) {
    double p = pred(i, labels[i]);
    if (p < 1e-300) {
      p = 1e-300;
      if (clamped) *clamped = true;
    }
    total -= std::log(p);
  }
  return total / static_cast<double>(pred.rows());
}

double ece(const Eigen::MatrixXd& pred, const Eigen::VectorXi& labels, int n_bins) {
  if (n_bins < 1) throw ContractError("ece needs n_bins >= 1");
  if (pred.rows() != labels.size()) throw ContractError("pred/labels size mismatch");
  const auto n = pred.rows();
  std::vector<std::int64_t> count(n_bins, 0);
  std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
  for (int i = 0; i < n; ++i) {
    const int top = argmax_row(pred.row(i));
    const double conf = pred(i, top);
    int b = static_cast<int>(conf * n_bins);
    if (b >= n_bins) b = n_bins - 1;  // confidence 1.0 lands in the last bin
    if (b < 0) b = 0;
    ++count[b];
    conf_sum[b] += conf;
    acc_sum[b] += top == labels[i] ? 1.0 : 0.0;
  }
  double total = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double cb = static_cast<double>(count[b]);
    total += cb / static_cast<double>(n) * std::abs(acc_sum[b] / cb - conf_sum[b] / cb);
  }
  return total;
}

double pairwise_kld(const Eigen::MatrixXd& true_probs, const Eigen::VectorXi& labels) {
  const int k = static_cast<int>(true_probs.rows());
  const auto n = true_probs.cols();
  if (k < 2) throw ContractError("pairwise_kld needs at least two members");
  if (n != labels.size()) throw ContractError("true_probs/labels size mismatch");
  double total = 0.0;
  for (int x = 0; x < n; ++x) {
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
      const double pi = std::max(true_probs(i, x), 1e-12);
      for (int j = 0; j < k; ++j) {
        if (i == j) continue;
        const double pj = std::max(true_probs(j, x), 1e-12);
        acc += pi * std::log(pi / pj);
      }
    }
    total += acc / (static_cast<double>(k) * (k - 1));
  }
  return total / static_cast<double>(n);
}

double pairwise_kld(const PredictiveSet& set, const Eigen::VectorXi& labels) {
  if (set.num_members() < 2) throw ContractError("pairwise_kld needs at least two members");
  Eigen::MatrixXd probs(set.num_members(), set.num_points());
  for (int m = 0; m < set.num_members(); ++m)
    for (int i = 0; i < set.num_points(); ++i) probs(m, i) = set.members[m](i, labels[i]);
  return pairwise_kld(probs, labels);
}

double agreement(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& reference) {
  if (pred.rows() != reference.rows() || pred.cols() != reference.cols())
    throw ContractError("agreement shape mismatch");
  if (pred.rows() == 0) throw ContractError("empty predictions");
  std::int64_t match = 0;
  for (int i = 0; i < pred.rows(); ++i)
    if (argmax_row(pred.row(i)) == argmax_row(reference.row(i))) ++match;
  return static_cast<double>(match) / static_cast<double>(pred.rows());
}

double total_variation(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& reference) {
  if (pred.rows() != reference.rows() || pred.cols() != reference.cols())
    throw ContractError("total_variation shape mismatch");
  if (pred.rows() == 0) throw ContractError("empty predictions");
  double total = 0.0;
  for (int i = 0; i < pred.rows(); ++i)
    total += 0.5 * (pred.row(i) - reference.row(i)).cwiseAbs().sum();
  return total / static_cast<double>(pred.rows());
}

}  // namespace sgmcmc
