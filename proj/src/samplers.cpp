#include "sgmcmc/samplers.hpp"

#include <chrono>
#include <cmath>

namespace sgmcmc {

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "sgld") return SamplerKind::sgld;
  if (name == "sghmc") return SamplerKind::sghmc;
  if (name == "psgld") return SamplerKind::psgld;
  if (name == "csgmcmc") return SamplerKind::csgmcmc;
  if (name == "l2e") return SamplerKind::l2e;
  if (name == "kinetic_l2e") return SamplerKind::kinetic_l2e;
  throw ConfigError("unknown sampler kind '" + name + "'");
}

std::string sampler_kind_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::sgld: return "sgld";
    case SamplerKind::sghmc: return "sghmc";
    case SamplerKind::psgld: return "psgld";
    case SamplerKind::csgmcmc: return "csgmcmc";
    case SamplerKind::l2e: return "l2e";
    case SamplerKind::kinetic_l2e: return "kinetic_l2e";
  }
  throw ContractError("bad sampler kind");
}

bool is_learned_kind(SamplerKind kind) {
  return kind == SamplerKind::l2e || kind == SamplerKind::kinetic_l2e;
}

double SamplerConfig::resolved_friction() const {
  if (momentum_decay.has_value()) {
    if (friction_c != 0.0)
      throw ConfigError("friction_c and momentum_decay are mutually exclusive");
    return *momentum_decay / step_size;
  }
  return friction_c;
}

void SamplerConfig::validate() const {
  if (step_size <= 0.0) throw ConfigError("step_size must be positive");
  if (friction_c < 0.0) throw ConfigError("friction_c must be non-negative");
  if (momentum_decay && *momentum_decay < 0.0)
    throw ConfigError("momentum_decay must be non-negative");
  if (mass_m <= 0.0) throw ConfigError("mass_m must be positive");
  if (psgld_alpha <= 0.0 || psgld_alpha >= 1.0)
    throw ConfigError("psgld_alpha must be in (0,1)");
  if (psgld_lambda <= 0.0) throw ConfigError("psgld_lambda must be positive");
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
  resolved_friction();
}

std::pair<double, Phase> cyclical_step_size(std::int64_t t, const ScheduleSpec& schedule) {
  if (schedule.num_cycles < 1) throw ConfigError("cyclical schedule needs num_cycles >= 1");
  if (schedule.exploration_ratio <= 0.0 || schedule.exploration_ratio >= 1.0)
    throw ConfigError("exploration_ratio must be in (0,1)");
  if (t < 0 || t >= schedule.total_steps)
    throw ContractError("schedule step index out of range");
  const std::int64_t cycle_len =
      (schedule.total_steps + schedule.num_cycles - 1) / schedule.num_cycles;
  const std::int64_t pos = t % cycle_len;
  const double frac = static_cast<double>(pos) / static_cast<double>(cycle_len);
  const double eps = 0.5 * schedule.base_eps * (std::cos(M_PI * frac) + 1.0);
  const Phase phase = frac < schedule.exploration_ratio ? Phase::explore : Phase::sample;
  return {eps, phase};
}

std::pair<double, Phase> schedule_at(std::int64_t t, const ScheduleSpec& schedule) {
  switch (schedule.kind) {
    case ScheduleKind::constant:
      return {schedule.base_eps, Phase::sample};
    case ScheduleKind::cosine_decay: {
      if (t < 0 || t >= schedule.total_steps)
        throw ContractError("schedule step index out of range");
      const double frac = static_cast<double>(t) / static_cast<double>(schedule.total_steps);
      return {0.5 * schedule.base_eps * (std::cos(M_PI * frac) + 1.0), Phase::sample};
    }
    case ScheduleKind::cyclical:
      return cyclical_step_size(t, schedule);
  }
  throw ContractError("bad schedule kind");
}

SamplerState make_state(const ParamVector& theta0, std::uint64_t chain_id) {
  return make_state(theta0, Eigen::VectorXd::Zero(theta0.dim()), chain_id);
}

SamplerState make_state(const ParamVector& theta0, const Eigen::VectorXd& momentum0,
                        std::uint64_t chain_id) {
  if (momentum0.size() != theta0.dim())
    throw ContractError("momentum dimension does not match theta");
  SamplerState s;
  s.theta = theta0;
  s.momentum = momentum0;
  s.bank = FeatureBank(theta0.dim());
  s.precond_v = Eigen::VectorXd::Zero(theta0.dim());
  s.chain_id = chain_id;
  return s;
}

namespace {

void require_finite_grad(const SamplerState& state, const Eigen::VectorXd& grad) {
  if (grad.size() != state.theta.values.size())
    throw ContractError("gradient dimension does not match state");
  if (!grad.allFinite())
    throw ChainDivergence(state.step, "non-finite energy gradient at step " +
                                          std::to_string(state.step));
}

void require_finite_state(const SamplerState& state) {
  if (!state.theta.values.allFinite() || !state.momentum.allFinite())
    throw ChainDivergence(state.step, "non-finite chain state at step " +
                                          std::to_string(state.step));
}

Eigen::VectorXd gaussian_noise(int d, double std_dev, RngStream& rng) {
  Eigen::VectorXd xi(d);
  for (int i = 0; i < d; ++i) xi[i] = std_dev * rng.normal();
  return xi;
}

}  // namespace

void sgld_step(SamplerState& state, const Eigen::VectorXd& grad, double eps,
               double temperature, RngStream& rng) {
  require_finite_grad(state, grad);
  const double std_dev = std::sqrt(2.0 * eps * temperature);
  state.theta.values -= eps * grad;
  state.theta.values += gaussian_noise(state.dim(), std_dev, rng);
  ++state.step;
  require_finite_state(state);
}

void sghmc_step(SamplerState& state, const Eigen::VectorXd& grad, double eps, double friction_c,
                double mass_m, double temperature, RngStream& rng) {
  require_finite_grad(state, grad);
  const double minv = 1.0 / mass_m;
  const double std_dev = std::sqrt(2.0 * friction_c * eps * temperature);
  state.momentum -= eps * (grad + (friction_c * minv) * state.momentum);
  state.momentum += gaussian_noise(state.dim(), std_dev, rng);
  state.theta.values += eps * minv * state.momentum;
  ++state.step;
  require_finite_state(state);
}

void psgld_step(SamplerState& state, const Eigen::VectorXd& grad, double eps, double alpha,
                double lambda, std::int64_t dataset_size_n, double temperature, RngStream& rng) {
  require_finite_grad(state, grad);
  if (alpha <= 0.0 || alpha >= 1.0) throw ContractError("psgld alpha must be in (0,1)");
  if (lambda <= 0.0) throw ContractError("psgld lambda must be positive");
  const Eigen::ArrayXd g_per_point = grad.array() / static_cast<double>(dataset_size_n);
  state.precond_v = alpha * state.precond_v.array() + (1.0 - alpha) * g_per_point.square();
  const Eigen::ArrayXd precond = 1.0 / (lambda + state.precond_v.array().sqrt());
  state.theta.values.array() -= eps * precond * grad.array();
  for (int i = 0; i < state.dim(); ++i)
    state.theta.values[i] += std::sqrt(2.0 * precond[i] * eps * temperature) * rng.normal();
  ++state.step;
  require_finite_state(state);
}

void l2e_step(SamplerState& state, const Eigen::VectorXd& grad, double eps, double friction_c,
              const MetaParams& meta, double temperature, RngStream& rng) {
  require_finite_grad(state, grad);
  update_emas(state.bank, grad);

  const Eigen::MatrixXd raw = raw_features(state.theta.values, state.momentum, grad, state.bank);
  const Eigen::VectorXd scales = feature_column_scales(raw);
  Eigen::VectorXd alpha, beta;
  eval_alpha_beta(meta, scale_columns(raw, scales), alpha, beta);
  if (!alpha.allFinite())
    throw ChainDivergence(state.step, "alpha head produced non-finite output at step " +
                                          std::to_string(state.step));
  if (!beta.allFinite())
    throw ChainDivergence(state.step, "beta head produced non-finite output at step " +
                                          std::to_string(state.step));

  const double std_dev = std::sqrt(2.0 * friction_c * eps * temperature);
  state.momentum -= eps * (grad + alpha + friction_c * beta);
  state.momentum += gaussian_noise(state.dim(), std_dev, rng);

  // position update re-evaluates beta with the new momentum, same scales
  Eigen::MatrixXd raw2 = raw;
  raw2.col(kMomentumCol) = state.momentum;
  Eigen::VectorXd alpha2, beta2;
  eval_alpha_beta(meta, scale_columns(raw2, scales), alpha2, beta2);
  if (!beta2.allFinite())
    throw ChainDivergence(state.step, "beta head produced non-finite output at step " +
                                          std::to_string(state.step));
  state.theta.values += eps * beta2;
  ++state.step;
  require_finite_state(state);
}

void kinetic_l2e_step(SamplerState& state, const Eigen::VectorXd& grad, double eps,
                      double alpha_friction, const MetaParams& meta, double temperature,
                      RngStream& rng) {
  require_finite_grad(state, grad);
  update_emas(state.bank, grad);

  // f depends on position and gradient history only; momentum column zeroed
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(state.dim());
  const Eigen::MatrixXd raw = raw_features(state.theta.values, zero, grad, state.bank);
  const Eigen::VectorXd scales = feature_column_scales(raw);
  Eigen::VectorXd f, df_dx;
  eval_beta_with_input_grad(meta, scale_columns(raw, scales), kThetaCol, f, df_dx);
  if (!f.allFinite() || !df_dx.allFinite())
    throw ChainDivergence(state.step, "kinetic mean head produced non-finite output at step " +
                                          std::to_string(state.step));
  // d f_i / d theta_i through the frozen normalization scale
  const Eigen::VectorXd kinetic_grad = f.cwiseProduct(df_dx / scales[kThetaCol]);

  const double std_dev = std::sqrt(2.0 * eps * alpha_friction * temperature);
  state.momentum -= eps * (grad + kinetic_grad + alpha_friction * (state.momentum - f));
  state.momentum += gaussian_noise(state.dim(), std_dev, rng);
  state.theta.values += eps * (state.momentum - f);
  ++state.step;
  require_finite_state(state);
}

namespace {

void dispatch_step(SamplerKind kind, SamplerState& state, const Eigen::VectorXd& grad,
                   double eps, const SamplerConfig& config, std::int64_t dataset_size_n,
                   const MetaParams* meta, RngStream& rng) {
  switch (kind) {
    case SamplerKind::sgld:
      sgld_step(state, grad, eps, config.temperature, rng);
      return;
    case SamplerKind::sghmc:
    case SamplerKind::csgmcmc:
      sghmc_step(state, grad, eps, config.resolved_friction(), config.mass_m,
                 config.temperature, rng);
      return;
    case SamplerKind::psgld:
      psgld_step(state, grad, eps, config.psgld_alpha, config.psgld_lambda, dataset_size_n,
                 config.temperature, rng);
      return;
    case SamplerKind::l2e:
      l2e_step(state, grad, eps, config.resolved_friction(), *meta, config.temperature, rng);
      return;
    case SamplerKind::kinetic_l2e:
      kinetic_l2e_step(state, grad, eps, config.resolved_friction(), *meta,
                       config.temperature, rng);
      return;
  }
  throw ContractError("bad sampler kind");
}

}  // namespace

SampleSet run_chain(SamplerKind kind, const EnergyModel& model, const Dataset& train,
                    const SamplerConfig& config, const ChainSpec& spec,
                    const MetaParams* meta) {
  ParamVector theta0 = init_params(model.arch, derive_seed(spec.seed, spec.chain_id, 1));
  RngStream r0_rng(derive_seed(spec.seed, spec.chain_id, 2));
  SamplerState state = make_state(theta0, gaussian_noise(theta0.dim(), 1.0, r0_rng),
                                  spec.chain_id);
  return run_chain_from(kind, model, train, config, spec, state, meta);
}

SampleSet run_chain_from(SamplerKind kind, const EnergyModel& model, const Dataset& train,
                         const SamplerConfig& config, const ChainSpec& spec,
                         SamplerState& state, const MetaParams* meta) {
  config.validate();
  if (spec.num_samples < 1) throw ConfigError("num_samples must be at least 1");
  if (spec.thin < 1) throw ConfigError("thin must be at least 1");
  if (spec.burnin < 0) throw ConfigError("burnin must be non-negative");
  if (spec.burnin + static_cast<std::int64_t>(spec.num_samples) * spec.thin > spec.total_steps)
    throw ConfigError("requested snapshots exceed available steps: burnin + K*thin > total");
  if (is_learned_kind(kind) && meta == nullptr)
    throw ConfigError(sampler_kind_name(kind) + " requires meta-parameters");

  ScheduleSpec schedule = config.schedule;
  if (kind == SamplerKind::csgmcmc && schedule.kind != ScheduleKind::cyclical)
    throw ConfigError("csgmcmc requires a cyclical schedule");
  schedule.base_eps = config.step_size;  // the schedule only shapes the decay
  schedule.total_steps = spec.total_steps;

  SampleSet out;
  out.layout = state.theta.layout;
  out.burnin = spec.burnin;
  out.thin = spec.thin;

  BatchIterator batches(train, spec.batch_size, derive_seed(spec.seed, spec.chain_id, 3));

  using Clock = std::chrono::steady_clock;
  const auto chain_start = Clock::now();

  for (std::int64_t t = 1; t <= spec.total_steps; ++t) {
    const auto [eps, phase] = schedule_at(t - 1, schedule);
    const DataBatch batch = batches.next();
    const std::uint64_t step_seed =
        derive_seed(spec.seed, spec.chain_id, 4, static_cast<std::uint64_t>(t));
    if (spec.transcript) {
      auto& tr = *spec.transcript;
      tr.batch_hash =
          fnv1a(batch.inputs.data(), sizeof(double) * batch.inputs.size(), tr.batch_hash);
      if (batch.classification)
        tr.batch_hash =
            fnv1a(batch.labels.data(), sizeof(int) * batch.labels.size(), tr.batch_hash);
      else
        tr.batch_hash =
            fnv1a(batch.targets.data(), sizeof(double) * batch.targets.size(), tr.batch_hash);
      // replay the step's noise stream: kernels draw exactly dim() normals
      RngStream probe(step_seed, phase == Phase::explore);
      for (int i = 0; i < state.dim(); ++i) {
        const double v = probe.normal();
        tr.noise_hash = fnv1a(&v, sizeof(double), tr.noise_hash);
      }
    }
    try {
      const ParamVector grad = energy_grad(model, state.theta, batch);
      RngStream step_rng(step_seed, phase == Phase::explore);
      dispatch_step(kind, state, grad.values, eps, config, batch.dataset_size_n, meta, step_rng);
    } catch (const ChainDivergence& div) {
      out.diverged = true;
      out.divergence_step = t;
      out.divergence_detail = div.what();
      return out;
    }
    if (t > spec.burnin && t % spec.thin == 0 && phase == Phase::sample &&
        out.num_samples() < spec.num_samples) {
      out.snapshots.push_back(state.theta.values);
      out.snapshot_steps.push_back(t);
    }
  }
  if (out.num_samples() < spec.num_samples)
    throw ConfigError("chain finished with " + std::to_string(out.num_samples()) +
                      " snapshots, " + std::to_string(spec.num_samples) +
                      " requested (schedule phases may exclude collection steps)");
  // steady-state cost of producing one more sample
  const double elapsed = std::chrono::duration<double>(Clock::now() - chain_start).count();
  out.wall_clock_per_interval =
      elapsed / static_cast<double>(spec.total_steps) * static_cast<double>(spec.thin);
  return out;
}

}  // namespace sgmcmc
