#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sgmcmc/common.hpp"
#include "sgmcmc/features.hpp"
#include "sgmcmc/nn.hpp"
#include "sgmcmc/tasks.hpp"

namespace sgmcmc {

enum class SamplerKind { sgld, sghmc, psgld, csgmcmc, l2e, kinetic_l2e };

SamplerKind parse_sampler_kind(const std::string& name);
std::string sampler_kind_name(SamplerKind kind);
bool is_learned_kind(SamplerKind kind);

enum class ScheduleKind { constant, cosine_decay, cyclical };
enum class Phase { explore, sample };

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::constant;
  double base_eps = 1e-3;
  std::int64_t total_steps = 0;
  std::int64_t num_cycles = 1;
  double exploration_ratio = 0.8;
};

// Cyclical schedule: eps_t = (eps0/2) * (cos(pi * mod(t, L) / L) + 1)
// with L = ceil(total/num_cycles). The first exploration_ratio fraction of
// every cycle is the deterministic explore phase (no noise, no collection).
std::pair<double, Phase> cyclical_step_size(std::int64_t t, const ScheduleSpec& schedule);

// eps_t and phase for any schedule kind. Constant and cosine-decay
// schedules are always in the sample phase.
std::pair<double, Phase> schedule_at(std::int64_t t, const ScheduleSpec& schedule);

struct SamplerConfig {
  double step_size = 1e-3;
  // Scalar friction C, applied isotropically. momentum_decay, when set,
  // resolves to C = momentum_decay / step_size (per-step damping factor
  // eps*C then equals momentum_decay). The two are mutually exclusive.
  double friction_c = 0.0;
  std::optional<double> momentum_decay;
  double mass_m = 1.0;
  double psgld_alpha = 0.99;
  double psgld_lambda = 1e-5;
  double temperature = 1.0;
  ScheduleSpec schedule;

  double resolved_friction() const;
  void validate() const;
};

// One chain's full mutable state. precond_v is the pSGLD second-moment
// accumulator; the feature bank backs the learned kinds.
struct SamplerState {
  ParamVector theta;
  Eigen::VectorXd momentum;
  FeatureBank bank;
  Eigen::VectorXd precond_v;
  std::int64_t step = 0;
  std::uint64_t chain_id = 0;

  int dim() const { return theta.dim(); }
};

SamplerState make_state(const ParamVector& theta0, std::uint64_t chain_id = 0);
SamplerState make_state(const ParamVector& theta0, const Eigen::VectorXd& momentum0,
                        std::uint64_t chain_id = 0);

// Transition kernels. Each consumes exactly one stochastic gradient
// (computed by the caller at the current theta), draws its noise from
// `rng`, advances state.step by one and throws ChainDivergence if any
// produced quantity is non-finite. Pass a zeroed RngStream to disable
// noise (the deterministic test hook, also used by explore phases).

// theta <- theta - eps*grad + N(0, 2*eps*T)
void sgld_step(SamplerState& state, const Eigen::VectorXd& grad, double eps,
               double temperature, RngStream& rng);

// r <- r - eps*(grad + C*M^{-1}*r) + N(0, 2*C*eps*T);  theta <- theta + eps*M^{-1}*r
void sghmc_step(SamplerState& state, const Eigen::VectorXd& grad, double eps, double friction_c,
                double mass_m, double temperature, RngStream& rng);

// RMSprop-style preconditioned Langevin. V is updated first with the
// current gradient scaled by 1/n, then G = 1/(lambda + sqrt(V)) and
// theta <- theta - eps*G.*grad + N(0, 2*G*eps*T). The recipe's correction
// term is set to zero.
void psgld_step(SamplerState& state, const Eigen::VectorXd& grad, double eps, double alpha,
                double lambda, std::int64_t dataset_size_n, double temperature, RngStream& rng);

// Learned sampler: alpha/beta heads replace the kinetic-energy gradients.
//   r <- r - eps*(grad + alpha(F) + C*beta(F)) + N(0, 2*C*eps*T)
//   theta <- theta + eps*beta(F')   with F' rebuilt using the new momentum.
// The EMA bank is updated once, with `grad`, before the first feature
// build. Feature normalization scales are computed once per step from the
// pre-update state and reused for F', so the head sees both evaluations in
// the same input frame.
void l2e_step(SamplerState& state, const Eigen::VectorXd& grad, double eps, double friction_c,
              const MetaParams& meta, double temperature, RngStream& rng);

// Learned kinetic mean f(theta): unit-Gaussian momentum around f gives
//   r <- r - eps*(grad + f.*df/dtheta + a*(r - f)) + N(0, 2*eps*a*T)
//   theta <- theta + eps*(r - f).
// f is the beta head over the position features (momentum column zeroed);
// the df/dtheta factor differentiates the head with respect to the raw
// parameter input, holding normalization scales and the other features
// fixed.
void kinetic_l2e_step(SamplerState& state, const Eigen::VectorXd& grad, double eps,
                      double alpha_friction, const MetaParams& meta, double temperature,
                      RngStream& rng);

// Ordered snapshots with their collection metadata. Wall-clock seconds per
// thinning interval are run telemetry: kept alongside the snapshots in
// memory, persisted in a sidecar (see persist.hpp) so the container itself
// is byte-reproducible.
struct SampleSet {
  std::vector<Eigen::VectorXd> snapshots;
  std::vector<std::int64_t> snapshot_steps;
  std::vector<TensorSlot> layout;
  std::int64_t burnin = 0;
  std::int64_t thin = 1;
  double wall_clock_per_interval = 0.0;
  bool diverged = false;
  std::int64_t divergence_step = -1;
  std::string divergence_detail;

  int num_samples() const { return static_cast<int>(snapshots.size()); }
  int dim() const { return snapshots.empty() ? 0 : static_cast<int>(snapshots[0].size()); }
};

// Rolling hashes over everything a chain consumes from its streams: the
// mini-batch contents and the injected noise values. Two runs with equal
// transcripts saw identical data and noise.
struct ChainTranscript {
  std::uint64_t batch_hash = 0xcbf29ce484222325ull;
  std::uint64_t noise_hash = 0xcbf29ce484222325ull;
};

struct ChainSpec {
  std::int64_t total_steps = 0;
  std::int64_t burnin = 0;
  std::int64_t thin = 1;
  int num_samples = 0;  // K
  int batch_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t chain_id = 0;
  ChainTranscript* transcript = nullptr;
};

// Runs one chain of the given kind against model.data's train split.
// theta0 is freshly initialized from the seed, r0 ~ N(0, I_d). Snapshots
// are the first K states at steps i with i > burnin and i % thin == 0
// (sample phase only for cyclical schedules). On divergence the partial
// SampleSet is returned with the divergence flag set.
SampleSet run_chain(SamplerKind kind, const EnergyModel& model, const Dataset& train,
                    const SamplerConfig& config, const ChainSpec& spec,
                    const MetaParams* meta = nullptr);

// Same, but from an explicit initial state (used by the inner loop, which
// owns its initialization policy).
SampleSet run_chain_from(SamplerKind kind, const EnergyModel& model, const Dataset& train,
                         const SamplerConfig& config, const ChainSpec& spec,
                         SamplerState& state, const MetaParams* meta = nullptr);

}  // namespace sgmcmc
