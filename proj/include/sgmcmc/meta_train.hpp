#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "sgmcmc/features.hpp"
#include "sgmcmc/metrics.hpp"
#include "sgmcmc/samplers.hpp"
#include "sgmcmc/tasks.hpp"

namespace sgmcmc {

// Mean over validation points of -log[(1/K) sum_k p(y*|x*, theta_k)].
// Probabilities below 1e-300 are clamped (sets *clamped).
double bma_meta_loss(const SampleSet& samples, const EnergyModel& model,
                     const DataBatch& val_batch, bool* clamped = nullptr);

// -(1/K) sum_k mean log p(y*|x*, theta_k): the per-member average loss,
// which upper-bounds the BMA loss (Jensen) with equality iff the members'
// true-class probabilities agree pointwise.
double ce_meta_loss(const SampleSet& samples, const EnergyModel& model,
                    const DataBatch& val_batch, bool* clamped = nullptr);

// Inner rollout settings: the chain the meta-objective is measured on.
struct InnerLoopConfig {
  SamplerConfig sampler;
  double prior_lambda = 1e-2;
  std::int64_t inner_steps = 3000;
  std::int64_t burnin = 2500;
  std::int64_t thin = 50;
  int num_samples = 10;  // K
  int train_batch_size = 32;
  int val_batch_size = 64;
  // Loss assigned to a diverged rollout: factor * log(num_classes) for
  // classification, factor for regression.
  double divergence_penalty_factor = 10.0;

  void validate() const;
};

struct ESConfig {
  double sigma = 0.01;
  int pairs_per_iter = 1;  // N
  InnerLoopConfig inner;
  int threads = 1;

  void validate() const;
};

// Common-random-numbers evidence recorded by a rollout: hashes of the
// initial state and of every consumed batch and injected noise vector.
struct RolloutTranscript {
  std::uint64_t theta0_hash = 0;
  std::uint64_t r0_hash = 0;
  std::uint64_t batch_hash = 0;
  std::uint64_t noise_hash = 0;
  std::uint64_t val_batch_hash = 0;
};

struct InnerLoopResult {
  double loss = 0.0;
  bool diverged = false;
  std::int64_t divergence_step = -1;
};

// One rollout: fresh theta_0 from the task architecture, momentum
// r_0 ~ N(0, I_d), inner_steps learned-sampler updates, K snapshots by the
// burn-in/thinning rule, BMA meta-loss on one freshly drawn validation
// mini-batch. Fully deterministic given (task, meta, config, seed).
InnerLoopResult inner_loop(const Task& task, const MetaParams& meta,
                           const InnerLoopConfig& config, std::uint64_t seed,
                           RolloutTranscript* transcript = nullptr);

// Same rollout mechanics with an arbitrary kernel; meta may be null for
// the non-learned kinds. Used to run baseline samplers at the exact inner
// budget the learned sampler gets.
InnerLoopResult inner_loop(const Task& task, const MetaParams* meta,
                           const InnerLoopConfig& config, std::uint64_t seed,
                           SamplerKind kind, RolloutTranscript* transcript = nullptr);

struct EsGradient {
  Eigen::VectorXd grad;
  double mean_loss_plus = 0.0;
  double mean_loss_minus = 0.0;
  int diverged_pairs = 0;  // pairs where both rollouts diverged (zero contribution)
};

// Antithetic estimator (1/N) sum_i [(L(phi+eta_i) - L(phi-eta_i)) / (2 sigma^2)] eta_i
// over a generic loss; used directly by the estimator oracles.
Eigen::VectorXd es_gradient_generic(
    const Eigen::VectorXd& phi,
    const std::function<double(const Eigen::VectorXd&, int pair, int sign)>& loss,
    double sigma, int pairs, std::uint64_t seed);

// Task-bound estimator. The +eta and -eta rollouts of a pair share the
// task, theta_0, batch order and sampler noise streams (the rollout seed
// depends only on (seed, pair)).
EsGradient es_gradient(const MetaParams& meta, const Task& task, const ESConfig& config,
                       std::uint64_t seed);

// Adam over the flattened meta-parameters, bias-corrected.
struct OuterState {
  MetaParams meta;
  Eigen::VectorXd adam_m;
  Eigen::VectorXd adam_v;
  std::int64_t step = 0;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

OuterState make_outer_state(const MetaParams& init, double learning_rate = 0.01);
void adam_step(OuterState& outer, const Eigen::VectorXd& grad);

Eigen::VectorXd clip_global_norm(const Eigen::VectorXd& grad, double max_norm);

struct OuterConfig {
  int outer_iters = 1000;
  double learning_rate = 0.01;
  double clip_max_norm = 1.0;
  int checkpoint_interval = 100;
  int divergence_abort_after = 25;

  void validate() const;
};

struct MetaTrainRecord {
  int outer_iter = 0;
  std::uint64_t task_id = 0;
  double loss_plus = 0.0;
  double loss_minus = 0.0;
  double grad_norm = 0.0;
  double wall_clock_s = 0.0;
  int diverged_pairs = 0;
};

struct MetaTrainResult {
  MetaParams meta;
  std::vector<MetaTrainRecord> trace;
};

using CheckpointHook = std::function<void(int iter, const MetaParams& meta)>;

// Outer loop: sample task, antithetic rollouts, ES gradient, clip, Adam.
// Aborts (ChainDivergence) after divergence_abort_after consecutive
// iterations whose every pair diverged.
MetaTrainResult meta_train(const TaskDistribution& dist, const ESConfig& es,
                           const OuterConfig& outer_cfg, std::uint64_t seed,
                           const CheckpointHook& checkpoint = nullptr);

}  // namespace sgmcmc
