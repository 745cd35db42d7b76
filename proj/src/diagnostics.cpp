#include "sgmcmc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sgmcmc {

ChainMatrix chain_matrix_from(const SampleSet& samples, int max_coords) {
  if (samples.num_samples() < 1) throw ContractError("empty sample set");
  const int s = samples.num_samples();
  const int d = samples.dim();

  std::vector<int> coords;
  std::vector<std::string> layers;
  if (max_coords <= 0 || max_coords >= d || samples.layout.empty()) {
    coords.resize(d);
    std::iota(coords.begin(), coords.end(), 0);
    for (int c : coords) {
      std::string layer = "all";
      for (const auto& slot : samples.layout)
        if (c >= slot.offset && c < slot.offset + slot.size) layer = slot.name;
      layers.push_back(layer);
    }
  } else {
    for (const auto& slot : samples.layout) {
      const int share = std::max(
          1, static_cast<int>(std::llround(static_cast<double>(max_coords) * slot.size / d)));
      const int take = std::min(share, slot.size);
      for (int i = 0; i < take; ++i) {
        // evenly spaced within the slot, deterministic
        const int local = static_cast<int>((static_cast<std::int64_t>(i) * slot.size) / take);
        coords.push_back(slot.offset + local);
        layers.push_back(slot.name);
      }
    }
  }

  ChainMatrix cm;
  cm.coordinate_ids = coords;
  cm.coordinate_layers = layers;
  cm.wall_clock_per_interval = samples.wall_clock_per_interval;
  cm.traces.resize(s, static_cast<int>(coords.size()));
  for (int t = 0; t < s; ++t)
    for (std::size_t j = 0; j < coords.size(); ++j)
      cm.traces(t, static_cast<int>(j)) = samples.snapshots[t][coords[j]];
  return cm;
}

EssResult ess(const Eigen::VectorXd& trace) {
  const auto s = trace.size();
  if (s < 10) throw ContractError("ess needs at least 10 samples");
  const double mean = trace.mean();
  const Eigen::VectorXd centered = trace.array() - mean;
  const double var0 = centered.squaredNorm() / static_cast<double>(s);
  if (var0 <= 1e-300) return {static_cast<double>(s), true};

  auto rho = [&](std::int64_t k) -> double {
    if (k >= s) return 0.0;
    double acc = 0.0;
    for (std::int64_t t = 0; t + k < s; ++t) acc += centered[t] * centered[t + k];
    return acc / (static_cast<double>(s) * var0);
  };

  // Geyer initial positive sequence: sum pair autocorrelations while the
  // pair sums stay positive.
  double tau = 0.0;
  for (std::int64_t m = 0;; ++m) {
    const double pair = rho(2 * m) + rho(2 * m + 1);
    if (pair <= 0.0 || 2 * m >= s) break;
    tau += 2.0 * pair;
  }
  tau -= 1.0;  // rho_0 was counted inside the first pair
  if (tau < 1.0) tau = 1.0;  // clamp: never report more than S effective samples
  return {static_cast<double>(s) / tau, false};
}

double ess_per_second(const SampleSet& samples, int max_coords, bool scale_down_1e5) {
  if (samples.wall_clock_per_interval <= 0.0)
    throw ContractError("sample set has no timing metadata");
  const ChainMatrix cm = chain_matrix_from(samples, max_coords);
  std::vector<double> values;
  values.reserve(cm.traces.cols());
  for (int j = 0; j < cm.traces.cols(); ++j) values.push_back(ess(cm.traces.col(j)).ess);
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const double median =
      n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  double result = median / samples.wall_clock_per_interval;
  if (scale_down_1e5) result /= 1e5;
  return result;
}

RhatResult chain_split_rhat(const Eigen::MatrixXd& traces, int kappa, bool rank_normalize) {
  const auto s = traces.rows();
  const auto m = traces.cols();
  if (kappa < 2) throw ContractError("chain_split_rhat needs kappa >= 2");
  if (s < 2 * kappa) throw ContractError("chain_split_rhat needs at least 2*kappa steps");
  const std::int64_t len = s / kappa;

  RhatResult out;
  out.rhat.resize(m);
  out.degenerate.assign(m, false);

  Eigen::MatrixXd work = traces;
  if (rank_normalize) {
    // ranks -> normal scores (average ranks for ties)
    for (int j = 0; j < m; ++j) {
      std::vector<int> order(s);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return traces(a, j) < traces(b, j); });
      std::vector<double> rank(s);
      std::int64_t i = 0;
      while (i < s) {
        std::int64_t k = i;
        while (k + 1 < s && traces(order[k + 1], j) == traces(order[i], j)) ++k;
        const double avg = 0.5 * static_cast<double>(i + k) + 1.0;
        for (std::int64_t t = i; t <= k; ++t) rank[order[t]] = avg;
        i = k + 1;
      }
      for (std::int64_t t = 0; t < s; ++t) {
        const double u = (rank[t] - 0.375) / (static_cast<double>(s) + 0.25);
        // logistic approximation to the normal quantile; rank order is
        // what the between/within ratio consumes
        work(t, j) = std::log(u / (1.0 - u)) * 0.5513;
      }
    }
  }

  for (int j = 0; j < m; ++j) {
    double w_sum = 0.0;
    Eigen::VectorXd means(kappa);
    for (int c = 0; c < kappa; ++c) {
      const auto seg = work.col(j).segment(c * len, len);
      const double mu = seg.mean();
      means[c] = mu;
      w_sum += (seg.array() - mu).square().sum() / static_cast<double>(len - 1);
    }
    const double w = w_sum / kappa;
    const double grand = means.mean();
    const double b = static_cast<double>(len) *
                     (means.array() - grand).square().sum() / static_cast<double>(kappa - 1);
    if (w <= 1e-300) {
      out.rhat[j] = std::numeric_limits<double>::quiet_NaN();
      out.degenerate[j] = true;
      continue;
    }
    const double var_plus =
        (static_cast<double>(len - 1) / len) * w + b / static_cast<double>(len);
    out.rhat[j] = std::sqrt(var_plus / w);
  }
  return out;
}

double rhat_summary(const Eigen::VectorXd& rhats, double threshold) {
  if (rhats.size() == 0) throw ContractError("rhat_summary needs a nonempty input");
  std::int64_t finite = 0, below = 0;
  for (int i = 0; i < rhats.size(); ++i) {
    if (!std::isfinite(rhats[i])) continue;
    ++finite;
    if (rhats[i] < threshold) ++below;
  }
  if (finite == 0) return 0.0;
  return static_cast<double>(below) / static_cast<double>(finite);
}

std::map<std::string, double> rhat_summary_by_layer(const Eigen::VectorXd& rhats,
                                                    const std::vector<std::string>& layers,
                                                    double threshold) {
  if (static_cast<std::size_t>(rhats.size()) != layers.size())
    throw ContractError("rhat/layer size mismatch");
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> buckets;
  for (int i = 0; i < rhats.size(); ++i) {
    if (!std::isfinite(rhats[i])) continue;
    auto& [finite, below] = buckets[layers[i]];
    ++finite;
    if (rhats[i] < threshold) ++below;
  }
  std::map<std::string, double> out;
  for (const auto& [name, counts] : buckets)
    if (counts.first > 0)
      out[name] = static_cast<double>(counts.second) / static_cast<double>(counts.first);
  return out;
}

UpdateNormTrace update_norm_trace(const std::vector<Eigen::VectorXd>& thetas, double eps) {
  if (eps <= 0.0) throw ContractError("update_norm_trace needs eps > 0");
  UpdateNormTrace out;
  for (std::size_t t = 0; t + 1 < thetas.size(); ++t) {
    const double d2 = (thetas[t + 1] - thetas[t]).squaredNorm();
    out.dtheta_sq.push_back(d2);
    out.beta_sq.push_back(d2 / (eps * eps));
  }
  return out;
}

}  // namespace sgmcmc
