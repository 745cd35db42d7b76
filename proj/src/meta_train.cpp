#include "sgmcmc/meta_train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

namespace sgmcmc {

double bma_meta_loss(const SampleSet& samples, const EnergyModel& model,
                     const DataBatch& val_batch, bool* clamped) {
  if (samples.num_samples() < 1) throw ContractError("bma_meta_loss needs K >= 1 snapshots");
  if (val_batch.size() == 0) throw ContractError("bma_meta_loss needs a nonempty batch");
  if (clamped) *clamped = false;
  const Eigen::MatrixXd probs = member_true_probs(samples, model, val_batch);
  double total = 0.0;
  for (int i = 0; i < probs.cols(); ++i) {
    double mean_p = probs.col(i).mean();
    if (mean_p < 1e-300) {
      mean_p = 1e-300;
      if (clamped) *clamped = true;
    }
    total -= std::log(mean_p);
  }
  return total / static_cast<double>(probs.cols());
}

double ce_meta_loss(const SampleSet& samples, const EnergyModel& model,
                    const DataBatch& val_batch, bool* clamped) {
  if (samples.num_samples() < 1) throw ContractError("ce_meta_loss needs K >= 1 snapshots");
  if (val_batch.size() == 0) throw ContractError("ce_meta_loss needs a nonempty batch");
  if (clamped) *clamped = false;
  const Eigen::MatrixXd probs = member_true_probs(samples, model, val_batch);
  double total = 0.0;
  for (int k = 0; k < probs.rows(); ++k) {
    for (int i = 0; i < probs.cols(); ++i) {
      double p = probs(k, i);
      if (p < 1e-300) {
        p = 1e-300;
        if (clamped) *clamped = true;
      }
      total -= std::log(p);
    }
  }
  return total / static_cast<double>(probs.size());
}

void InnerLoopConfig::validate() const {
  sampler.validate();
  if (inner_steps < 1) throw ConfigError("inner_steps must be positive");
  if (num_samples < 1) throw ConfigError("num_samples must be positive");
  if (thin < 1) throw ConfigError("thin must be positive");
  if (burnin + static_cast<std::int64_t>(num_samples) * thin > inner_steps)
    throw ConfigError("burnin + K*thin must not exceed inner_steps");
  if (train_batch_size < 1 || val_batch_size < 1)
    throw ConfigError("batch sizes must be positive");
  if (prior_lambda < 0.0) throw ConfigError("prior_lambda must be non-negative");
  if (divergence_penalty_factor <= 0.0)
    throw ConfigError("divergence_penalty_factor must be positive");
}

void ESConfig::validate() const {
  if (sigma <= 0.0) throw ConfigError("es sigma must be positive");
  if (pairs_per_iter < 1) throw ConfigError("pairs_per_iter must be positive");
  if (threads < 1) throw ConfigError("threads must be positive");
  inner.validate();
}

InnerLoopResult inner_loop(const Task& task, const MetaParams* meta,
                           const InnerLoopConfig& config, std::uint64_t seed,
                           SamplerKind kind, RolloutTranscript* transcript) {
  config.validate();
  EnergyModel model;
  model.arch = task.arch;
  model.prior_precision_lambda = config.prior_lambda;
  model.data = &task.train;

  const ParamVector theta0 = init_params(task.arch, derive_seed(seed, 10));
  RngStream r0_rng(derive_seed(seed, 11));
  Eigen::VectorXd r0(theta0.dim());
  for (int i = 0; i < r0.size(); ++i) r0[i] = r0_rng.normal();
  SamplerState state = make_state(theta0, r0);

  ChainSpec spec;
  spec.total_steps = config.inner_steps;
  spec.burnin = config.burnin;
  spec.thin = config.thin;
  spec.num_samples = config.num_samples;
  spec.batch_size = std::min<std::int64_t>(config.train_batch_size, task.train.n());
  spec.seed = derive_seed(seed, 13);

  ChainTranscript chain_transcript;
  if (transcript) {
    transcript->theta0_hash = fnv1a(theta0.values.data(), sizeof(double) * theta0.dim());
    transcript->r0_hash = fnv1a(r0.data(), sizeof(double) * r0.size());
    spec.transcript = &chain_transcript;
  }

  const SampleSet samples =
      run_chain_from(kind, model, task.train, config.sampler, spec, state, meta);

  // one freshly drawn held-out mini-batch for the meta-objective
  RngStream val_rng(derive_seed(seed, 12));
  const int n_val = static_cast<int>(task.val.n());
  if (n_val == 0) throw ContractError("task has an empty validation split");
  std::vector<int> idx(n_val);
  for (int i = 0; i < n_val; ++i) idx[i] = i;
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[val_rng.uniform_int(i)]);
  idx.resize(std::min(n_val, config.val_batch_size));
  const DataBatch val_batch = take_batch(task.val, idx);

  if (transcript) {
    transcript->batch_hash = chain_transcript.batch_hash;
    transcript->noise_hash = chain_transcript.noise_hash;
    transcript->val_batch_hash =
        fnv1a(val_batch.inputs.data(), sizeof(double) * val_batch.inputs.size());
  }

  InnerLoopResult result;
  if (samples.diverged) {
    result.diverged = true;
    result.divergence_step = samples.divergence_step;
    const int classes = task.train.num_classes;
    result.loss = config.divergence_penalty_factor *
                  (classes > 1 ? std::log(static_cast<double>(classes)) : 1.0);
    return result;
  }
  result.loss = bma_meta_loss(samples, model, val_batch);
  return result;
}

InnerLoopResult inner_loop(const Task& task, const MetaParams& meta,
                           const InnerLoopConfig& config, std::uint64_t seed,
                           RolloutTranscript* transcript) {
  return inner_loop(task, &meta, config, seed, SamplerKind::l2e, transcript);
}

Eigen::VectorXd es_gradient_generic(
    const Eigen::VectorXd& phi,
    const std::function<double(const Eigen::VectorXd&, int pair, int sign)>& loss,
    double sigma, int pairs, std::uint64_t seed) {
  if (sigma <= 0.0) throw ContractError("es sigma must be positive");
  if (pairs < 1) throw ContractError("es needs at least one pair");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(phi.size());
  Eigen::VectorXd eta(phi.size());
  for (int i = 0; i < pairs; ++i) {
    RngStream eta_rng(derive_seed(seed, static_cast<std::uint64_t>(i), 21));
    for (int j = 0; j < eta.size(); ++j) eta[j] = sigma * eta_rng.normal();
    const double up = loss(phi + eta, i, +1);
    const double down = loss(phi - eta, i, -1);
    grad += ((up - down) / (2.0 * sigma * sigma)) * eta;
  }
  return grad / static_cast<double>(pairs);
}

EsGradient es_gradient(const MetaParams& meta, const Task& task, const ESConfig& config,
                       std::uint64_t seed) {
  config.validate();
  const Eigen::VectorXd phi = meta.flatten();
  const int n = config.pairs_per_iter;

  struct Rollout {
    Eigen::VectorXd eta;
    InnerLoopResult plus;
    InnerLoopResult minus;
  };
  std::vector<Rollout> rollouts(n);
  for (int i = 0; i < n; ++i) {
    RngStream eta_rng(derive_seed(seed, static_cast<std::uint64_t>(i), 21));
    rollouts[i].eta.resize(phi.size());
    for (int j = 0; j < phi.size(); ++j) rollouts[i].eta[j] = config.sigma * eta_rng.normal();
  }

  // the +eta/-eta rollouts of pair i share rollout_seed(i): common random numbers
  auto run_one = [&](int pair, int sign) {
    const std::uint64_t rollout_seed = derive_seed(seed, static_cast<std::uint64_t>(pair), 20);
    const Eigen::VectorXd perturbed =
        sign > 0 ? (phi + rollouts[pair].eta).eval() : (phi - rollouts[pair].eta).eval();
    const MetaParams m = MetaParams::unflatten(perturbed);
    InnerLoopResult r = inner_loop(task, m, config.inner, rollout_seed);
    if (sign > 0)
      rollouts[pair].plus = r;
    else
      rollouts[pair].minus = r;
  };

  const int jobs = 2 * n;
  if (config.threads <= 1 || jobs == 1) {
    for (int j = 0; j < jobs; ++j) run_one(j / 2, j % 2 == 0 ? +1 : -1);
  } else {
    std::vector<std::thread> workers;
    std::atomic<int> next{0};
    const int n_workers = std::min(config.threads, jobs);
    for (int w = 0; w < n_workers; ++w) {
      workers.emplace_back([&]() {
        for (int j = next.fetch_add(1); j < jobs; j = next.fetch_add(1))
          run_one(j / 2, j % 2 == 0 ? +1 : -1);
      });
    }
    for (auto& t : workers) t.join();
  }

  EsGradient out;
  out.grad = Eigen::VectorXd::Zero(phi.size());
  for (int i = 0; i < n; ++i) {
    const auto& r = rollouts[i];
    out.mean_loss_plus += r.plus.loss / n;
    out.mean_loss_minus += r.minus.loss / n;
    if (r.plus.diverged && r.minus.diverged) {
      ++out.diverged_pairs;
      continue;
    }
    out.grad += ((r.plus.loss - r.minus.loss) / (2.0 * config.sigma * config.sigma)) * r.eta;
  }
  out.grad /= static_cast<double>(n);
  return out;
}

OuterState make_outer_state(const MetaParams& init, double learning_rate) {
  OuterState s;
  s.meta = init;
  s.adam_m = Eigen::VectorXd::Zero(MetaParams::kParamCount);
  s.adam_v = Eigen::VectorXd::Zero(MetaParams::kParamCount);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(OuterState& outer, const Eigen::VectorXd& grad) {
  if (grad.size() != MetaParams::kParamCount)
    throw ContractError("adam_step gradient has wrong length");
  ++outer.step;
  outer.adam_m = outer.beta1 * outer.adam_m + (1.0 - outer.beta1) * grad;
  outer.adam_v =
      outer.beta2 * outer.adam_v.array() + (1.0 - outer.beta2) * grad.array().square();
  const double m_corr = 1.0 - std::pow(outer.beta1, static_cast<double>(outer.step));
  const double v_corr = 1.0 - std::pow(outer.beta2, static_cast<double>(outer.step));
  Eigen::VectorXd phi = outer.meta.flatten();
  phi.array() -= outer.learning_rate * (outer.adam_m.array() / m_corr) /
                 ((outer.adam_v.array() / v_corr).sqrt() + outer.epsilon);
  outer.meta = MetaParams::unflatten(phi);
}

Eigen::VectorXd clip_global_norm(const Eigen::VectorXd& grad, double max_norm) {
  if (max_norm <= 0.0) throw ContractError("clip max_norm must be positive");
  const double norm = grad.norm();
  if (norm <= max_norm) return grad;
  return grad * (max_norm / norm);
}

void OuterConfig::validate() const {
  if (outer_iters < 0) throw ConfigError("outer_iters must be non-negative");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (clip_max_norm <= 0.0) throw ConfigError("clip_max_norm must be positive");
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be positive");
  if (divergence_abort_after < 1) throw ConfigError("divergence_abort_after must be positive");
}

MetaTrainResult meta_train(const TaskDistribution& dist, const ESConfig& es,
                           const OuterConfig& outer_cfg, std::uint64_t seed,
                           const CheckpointHook& checkpoint) {
  es.validate();
  outer_cfg.validate();
  dist.validate();

  MetaTrainResult result;
  OuterState outer = make_outer_state(init_meta_params(derive_seed(seed, 40)),
                                      outer_cfg.learning_rate);
  int consecutive_diverged = 0;

  using Clock = std::chrono::steady_clock;
  for (int iter = 1; iter <= outer_cfg.outer_iters; ++iter) {
    const auto t0 = Clock::now();
    RngStream task_rng(derive_seed(seed, static_cast<std::uint64_t>(iter), 30));
    const Task task = sample_task(dist, task_rng);
    const EsGradient eg =
        es_gradient(outer.meta, task, es, derive_seed(seed, static_cast<std::uint64_t>(iter), 31));

    const Eigen::VectorXd clipped = clip_global_norm(eg.grad, outer_cfg.clip_max_norm);
    adam_step(outer, clipped);

    MetaTrainRecord rec;
    rec.outer_iter = iter;
    rec.task_id = task.task_id;
    rec.loss_plus = eg.mean_loss_plus;
    rec.loss_minus = eg.mean_loss_minus;
    rec.grad_norm = clipped.norm();
    rec.diverged_pairs = eg.diverged_pairs;
    rec.wall_clock_s = std::chrono::duration<double>(Clock::now() - t0).count();
    result.trace.push_back(rec);

    if (eg.diverged_pairs == es.pairs_per_iter) {
      if (++consecutive_diverged >= outer_cfg.divergence_abort_after)
        throw ChainDivergence(iter, "meta-training aborted: every rollout diverged for " +
                                        std::to_string(consecutive_diverged) +
                                        " consecutive outer iterations");
    } else {
      consecutive_diverged = 0;
    }

    if (checkpoint && iter % outer_cfg.checkpoint_interval == 0)
      checkpoint(iter, outer.meta);
  }
  result.meta = outer.meta;
  return result;
}

}  // namespace sgmcmc
