#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sgmcmc/samplers.hpp"

using namespace sgmcmc;

namespace {

ParamVector flat_param(const Eigen::VectorXd& v) {
  ParamVector p;
  p.values = v;
  p.layout = {{"theta", {static_cast<int>(v.size())}, 0, static_cast<int>(v.size())}};
  return p;
}

SamplerState state_from(const Eigen::VectorXd& theta, const Eigen::VectorXd& r) {
  return make_state(flat_param(theta), r);
}

Eigen::VectorXd random_vector(int n, std::uint64_t seed) {
  RngStream rng(seed);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

double sample_variance(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return var / (xs.size() - 1);
}

}  // namespace

TEST_CASE("sgld: zero grad + zero noise leaves theta fixed; noise scale is 2*eps*T") {
  auto s = state_from(random_vector(4, 1), Eigen::VectorXd::Zero(4));
  const Eigen::VectorXd before = s.theta.values;
  RngStream zero(7, /*zeroed=*/true);
  sgld_step(s, Eigen::VectorXd::Zero(4), 0.1, 1.0, zero);
  CHECK(s.theta.values == before);
  CHECK(s.step == 1);

  // one big step from zero: coordinate-wise variance of the move ~ 2*eps*T
  const int d = 40000;
  auto big = state_from(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d));
  RngStream rng(8);
  const double eps = 0.01, temp = 0.7;
  sgld_step(big, Eigen::VectorXd::Zero(d), eps, temp, rng);
  std::vector<double> moves(big.theta.values.data(), big.theta.values.data() + d);
  CHECK(sample_variance(moves) == doctest::Approx(2 * eps * temp).epsilon(0.05));
}

TEST_CASE("sgld: T -> 0 equals plain gradient descent") {
  Eigen::VectorXd theta = random_vector(3, 2);
  auto s = state_from(theta, Eigen::VectorXd::Zero(3));
  RngStream rng(9);
  const double eps = 0.05;
  for (int k = 0; k < 10; ++k) {
    sgld_step(s, s.theta.values, eps, 0.0, rng);  // grad of theta^2/2 is theta
    theta -= eps * theta;
  }
  CHECK(s.theta.values == theta);
}

TEST_CASE("sgld: 1-D standard Gaussian target has unit stationary variance") {
  auto s = state_from(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
  RngStream rng(11);
  const double eps = 0.02;
  std::vector<double> samples;
  for (int k = 0; k < 200000; ++k) {
    sgld_step(s, s.theta.values, eps, 1.0, rng);
    if (k >= 10000) samples.push_back(s.theta.values[0]);
  }
  CHECK(sample_variance(samples) == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("sghmc: zero grad, zero friction, zero noise is pure drift") {
  Eigen::VectorXd r(2);
  r << 0.5, -2.0;
  auto s = state_from(Eigen::VectorXd::Zero(2), r);
  RngStream zero(1, true);
  sghmc_step(s, Eigen::VectorXd::Zero(2), 0.1, 0.0, 2.0, 1.0, zero);
  CHECK(s.momentum == r);
  CHECK(s.theta.values == (0.1 / 2.0 * r).eval());
}

TEST_CASE("sghmc: symplectic Euler conserves H to O(eps) on the harmonic target") {
  const double eps = 0.01;
  Eigen::VectorXd theta(1), r(1);
  theta << 1.3;
  r << 0.0;
  auto s = state_from(theta, r);
  RngStream zero(1, true);
  const double h0 = 0.5 * theta[0] * theta[0] + 0.5 * r[0] * r[0];
  double max_drift = 0.0;
  const int period_steps = static_cast<int>(2 * M_PI / eps);
  for (int k = 0; k < period_steps; ++k) {
    sghmc_step(s, s.theta.values, eps, 0.0, 1.0, 1.0, zero);
    const double h =
        0.5 * s.theta.values[0] * s.theta.values[0] + 0.5 * s.momentum[0] * s.momentum[0];
    max_drift = std::max(max_drift, std::abs(h - h0));
  }
  CHECK(max_drift < 5 * eps * h0);
  CHECK(max_drift > 0.0);
}

TEST_CASE("sghmc: stationary Var(theta) = 1 and Var(r) = M on the 1-D Gaussian") {
  const double eps = 0.05, friction = 1.0, mass = 2.0;
  auto s = state_from(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
  RngStream rng(13);
  std::vector<double> thetas, moms;
  for (int k = 0; k < 300000; ++k) {
    sghmc_step(s, s.theta.values, eps, friction, mass, 1.0, rng);
    if (k >= 20000) {
      thetas.push_back(s.theta.values[0]);
      moms.push_back(s.momentum[0]);
    }
  }
  CHECK(sample_variance(thetas) == doctest::Approx(1.0).epsilon(0.10));
  CHECK(sample_variance(moms) == doctest::Approx(mass).epsilon(0.10));
}

TEST_CASE("psgld: preconditioner follows the EMA recursion") {
  const double alpha = 0.9, lambda = 0.5, eps = 0.01;
  const std::int64_t n = 5;
  const Eigen::VectorXd g = Eigen::VectorXd::Constant(1, 2.0);  // g/n = 0.4

  auto s = state_from(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
  RngStream zero(1, true);
  double v_expect = 0.0;
  double theta_expect = 0.0;
  for (int k = 0; k < 150; ++k) {
    psgld_step(s, g, eps, alpha, lambda, n, 1.0, zero);
    v_expect = alpha * v_expect + (1 - alpha) * 0.4 * 0.4;
    theta_expect -= eps * (1.0 / (lambda + std::sqrt(v_expect))) * 2.0;
    CHECK(s.precond_v[0] == doctest::Approx(v_expect).epsilon(1e-12));
    CHECK(s.theta.values[0] == doctest::Approx(theta_expect).epsilon(1e-12));
  }
  // fixed point: V -> (g/n)^2, G -> 1/(lambda + |g/n|)
  CHECK(s.precond_v[0] == doctest::Approx(0.16).epsilon(1e-4));

  // zero gradient history: V stays 0, G = (1/lambda) I, so the noiseless
  // step does not move theta
  auto fresh = state_from(Eigen::VectorXd::Ones(3), Eigen::VectorXd::Zero(3));
  psgld_step(fresh, Eigen::VectorXd::Zero(3), eps, alpha, lambda, n, 1.0, zero);
  CHECK(fresh.precond_v.cwiseAbs().maxCoeff() == 0.0);
  CHECK(fresh.theta.values == Eigen::VectorXd::Ones(3));
}

TEST_CASE("psgld: 1-D Gaussian stationary variance within 10%") {
  auto s = state_from(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
  RngStream rng(17);
  const double eps = 0.01, alpha = 0.999, lambda = 1.0;
  std::vector<double> samples;
  for (int k = 0; k < 300000; ++k) {
    psgld_step(s, s.theta.values, eps, alpha, lambda, 1, 1.0, rng);
    if (k >= 20000) samples.push_back(s.theta.values[0]);
  }
  CHECK(sample_variance(samples) == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("cyclical step size formula, phases, periodicity") {
  ScheduleSpec sched;
  sched.kind = ScheduleKind::cyclical;
  sched.base_eps = 0.4;
  sched.total_steps = 1000;
  sched.num_cycles = 10;  // cycle length 100
  sched.exploration_ratio = 0.8;

  auto [eps0, phase0] = cyclical_step_size(0, sched);
  CHECK(eps0 == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(phase0 == Phase::explore);

  auto [eps99, phase99] = cyclical_step_size(99, sched);
  const double expect99 = 0.5 * 0.4 * (std::cos(M_PI * 99.0 / 100.0) + 1.0);
  CHECK(eps99 == doctest::Approx(expect99).epsilon(1e-12));
  CHECK(expect99 < 0.001);
  CHECK(phase99 == Phase::sample);

  CHECK(cyclical_step_size(79, sched).second == Phase::explore);
  CHECK(cyclical_step_size(80, sched).second == Phase::sample);

  // periodic with period 100; maximum over a cycle is exactly eps0
  for (int t = 0; t < 100; ++t) {
    CHECK(cyclical_step_size(t, sched).first ==
          doctest::Approx(cyclical_step_size(t + 100, sched).first).epsilon(1e-15));
    CHECK(cyclical_step_size(t, sched).first <= 0.4);
  }
  CHECK(cyclical_step_size(100, sched).first == doctest::Approx(0.4).epsilon(1e-15));

  CHECK_THROWS_AS(cyclical_step_size(-1, sched), ContractError);
  CHECK_THROWS_AS(cyclical_step_size(1000, sched), ContractError);
}

TEST_CASE("l2e: identity-constructed heads reduce to sghmc with M = 1") {
  for (const double friction : {0.0, 0.7}) {
    for (int trial = 0; trial < 5; ++trial) {
      const int d = 9;
      const auto seed = static_cast<std::uint64_t>(100 + trial);
      const Eigen::VectorXd theta = random_vector(d, seed);
      const Eigen::VectorXd r = random_vector(d, seed + 50);
      const Eigen::VectorXd grad = random_vector(d, seed + 100);

      auto learned = state_from(theta, r);
      auto reference = state_from(theta, r);
      // seed the EMA bank with some history so the feature matrix is dense
      update_emas(learned.bank, random_vector(d, seed + 150));
      update_emas(reference.bank, random_vector(d, seed + 150));

      const double scale = std::sqrt(r.squaredNorm() / d);
      const MetaParams meta = make_momentum_identity_meta(scale);

      const double eps = 0.03;
      RngStream rng_a(seed + 200), rng_b(seed + 200);
      l2e_step(learned, grad, eps, friction, meta, 1.0, rng_a);
      sghmc_step(reference, grad, eps, friction, 1.0, 1.0, rng_b);

      CHECK((learned.theta.values - reference.theta.values).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((learned.momentum - reference.momentum).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("l2e: zero meta freezes theta while momentum accumulates") {
  const int d = 6;
  const Eigen::VectorXd theta = random_vector(d, 300);
  const Eigen::VectorXd grad = random_vector(d, 301);
  auto s = state_from(theta, Eigen::VectorXd::Zero(d));

  MetaParams zero = MetaParams::unflatten(Eigen::VectorXd::Zero(MetaParams::kParamCount));
  RngStream rng(302);
  l2e_step(s, grad, 0.1, 0.5, zero, 1.0, rng);
  CHECK(s.theta.values == theta);
  CHECK(s.momentum != Eigen::VectorXd::Zero(d));

  // determinism: identical inputs and seed give a bit-identical successor
  auto s2 = state_from(theta, Eigen::VectorXd::Zero(d));
  RngStream rng2(302);
  l2e_step(s2, grad, 0.1, 0.5, zero, 1.0, rng2);
  CHECK(s.theta.values == s2.theta.values);
  CHECK(s.momentum == s2.momentum);
}

TEST_CASE("l2e: exactly one EMA update per step") {
  const int d = 4;
  auto s = state_from(random_vector(d, 310), random_vector(d, 311));
  const MetaParams meta = init_meta_params(312);
  RngStream rng(313);
  for (int k = 1; k <= 7; ++k) {
    l2e_step(s, random_vector(d, 313 + k), 0.01, 0.1, meta, 1.0, rng);
    CHECK(s.bank.updates == k);
    CHECK(s.bank.updates == s.step);
  }
}

TEST_CASE("l2e: divergence names the offending head") {
  const int d = 3;
  auto s = state_from(random_vector(d, 320), random_vector(d, 321));
  MetaParams meta = MetaParams::unflatten(Eigen::VectorXd::Zero(MetaParams::kParamCount));
  meta.trunk_w.setConstant(1e308);
  meta.alpha_w.setConstant(1e308);
  RngStream rng(322);
  try {
    l2e_step(s, random_vector(d, 323), 0.1, 0.1, meta, 1.0, rng);
    FAIL("expected ChainDivergence");
  } catch (const ChainDivergence& e) {
    CHECK(std::string(e.what()).find("alpha head") != std::string::npos);
  }
}

TEST_CASE("kinetic l2e: f = 0 reduces exactly to sghmc(C = alpha, M = 1)") {
  const int d = 7;
  const Eigen::VectorXd theta = random_vector(d, 400);
  const Eigen::VectorXd r = random_vector(d, 401);
  const Eigen::VectorXd grad = random_vector(d, 402);
  const double eps = 0.02, friction = 0.4;

  auto learned = state_from(theta, r);
  auto reference = state_from(theta, r);
  const MetaParams zero = MetaParams::unflatten(Eigen::VectorXd::Zero(MetaParams::kParamCount));

  RngStream rng_a(403), rng_b(403);
  kinetic_l2e_step(learned, grad, eps, friction, zero, 1.0, rng_a);
  sghmc_step(reference, grad, eps, friction, 1.0, 1.0, rng_b);
  CHECK(learned.theta.values == reference.theta.values);
  CHECK(learned.momentum == reference.momentum);
}

TEST_CASE("kinetic l2e: constant f shifts the drift") {
  const int d = 5;
  const double c = 0.8, eps = 0.05;
  const Eigen::VectorXd theta = random_vector(d, 410);
  const Eigen::VectorXd r = random_vector(d, 411);
  const Eigen::VectorXd grad = random_vector(d, 412);

  auto s = state_from(theta, r);
  MetaParams meta = MetaParams::unflatten(Eigen::VectorXd::Zero(MetaParams::kParamCount));
  meta.beta_b = c;  // f == c regardless of input
  RngStream zero_noise(1, true);
  kinetic_l2e_step(s, grad, eps, 0.0, meta, 1.0, zero_noise);

  const Eigen::VectorXd r_new = r - eps * grad;  // kinetic grad is 0, friction 0
  CHECK((s.momentum - r_new).cwiseAbs().maxCoeff() < 1e-15);
  const Eigen::VectorXd expect = theta + eps * (r_new.array() - c).matrix();
  CHECK((s.theta.values - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("kinetic l2e: f * df/dtheta matches finite differences of 0.5*||f||^2") {
  const int d = 8;
  MetaParams meta = init_meta_params(420);
  RngStream wrng(421);
  for (int i = 0; i < meta.beta_w.size(); ++i) meta.beta_w[i] = wrng.normal();
  meta.beta_b = 0.3;

  const Eigen::VectorXd theta = random_vector(d, 422);
  const Eigen::VectorXd grad = random_vector(d, 423);
  FeatureBank bank(d);
  update_emas(bank, grad);

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
  const Eigen::MatrixXd raw = raw_features(theta, zero, grad, bank);
  const Eigen::VectorXd scales = feature_column_scales(raw);

  Eigen::VectorXd f, df;
  eval_beta_with_input_grad(meta, scale_columns(raw, scales), kThetaCol, f, df);
  const Eigen::VectorXd kinetic_grad = f.cwiseProduct(df / scales[kThetaCol]);

  // the oracle: central differences of 0.5*||f(theta)||^2 holding the
  // normalization scales and the other features fixed
  const double h = 1e-6;
  for (int i = 0; i < d; ++i) {
    auto half_norm = [&](double t_i) {
      Eigen::VectorXd tp = theta;
      tp[i] = t_i;
      Eigen::MatrixXd rp = raw;
      rp.col(kThetaCol) = tp;
      Eigen::VectorXd alpha_unused, fp;
      eval_alpha_beta(meta, scale_columns(rp, scales), alpha_unused, fp);
      return 0.5 * fp.squaredNorm();
    };
    const double fd = (half_norm(theta[i] + h) - half_norm(theta[i] - h)) / (2 * h);
    CHECK(std::abs(fd - kinetic_grad[i]) < 1e-5);
  }
}

TEST_CASE("run_chain: collection rule, determinism, K overflow") {
  const Dataset ds = gen_blobs(2, 64, 2, 6.0, 500);
  EnergyModel model;
  model.arch.kind = ArchKind::mlp;
  model.arch.layer_widths = {2, 2};
  model.arch.input_shape = {2};
  model.arch.num_outputs = 2;
  model.prior_precision_lambda = 0.01;

  SamplerConfig cfg;
  cfg.step_size = 1e-3;

  ChainSpec spec;
  spec.total_steps = 200;
  spec.burnin = 100;
  spec.thin = 50;
  spec.num_samples = 2;
  spec.batch_size = 16;
  spec.seed = 7;

  const SampleSet set = run_chain(SamplerKind::sgld, model, ds, cfg, spec);
  CHECK(set.num_samples() == 2);
  CHECK(set.snapshot_steps == std::vector<std::int64_t>{150, 200});
  CHECK_FALSE(set.diverged);

  const SampleSet again = run_chain(SamplerKind::sgld, model, ds, cfg, spec);
  REQUIRE(again.num_samples() == 2);
  CHECK(again.snapshots[0] == set.snapshots[0]);
  CHECK(again.snapshots[1] == set.snapshots[1]);

  ChainSpec too_many = spec;
  too_many.num_samples = 3;
  CHECK_THROWS_AS(run_chain(SamplerKind::sgld, model, ds, cfg, too_many), ConfigError);
}

TEST_CASE("run_chain: divergence yields a flagged partial sample set") {
  const Dataset ds = gen_blobs(2, 32, 2, 6.0, 501);
  EnergyModel model;
  model.arch.kind = ArchKind::mlp;
  model.arch.layer_widths = {2, 2};
  model.arch.input_shape = {2};
  model.arch.num_outputs = 2;
  model.prior_precision_lambda = 0.1;

  SamplerConfig cfg;
  cfg.step_size = 1e10;  // guaranteed blow-up

  ChainSpec spec;
  spec.total_steps = 400;
  spec.burnin = 0;
  spec.thin = 1;
  spec.num_samples = 400;
  spec.batch_size = 8;
  spec.seed = 3;

  const SampleSet set = run_chain(SamplerKind::sgld, model, ds, cfg, spec);
  CHECK(set.diverged);
  CHECK(set.divergence_step > 0);
  CHECK(set.divergence_step < 400);
  CHECK(!set.divergence_detail.empty());
  CHECK(set.num_samples() < 400);
}

TEST_CASE("csgmcmc: cyclical gating controls noise and collection") {
  const Dataset ds = gen_blobs(2, 64, 2, 6.0, 502);
  EnergyModel model;
  model.arch.kind = ArchKind::mlp;
  model.arch.layer_widths = {2, 2};
  model.arch.input_shape = {2};
  model.arch.num_outputs = 2;
  model.prior_precision_lambda = 0.01;

  SamplerConfig cfg;
  cfg.step_size = 1e-3;
  cfg.momentum_decay = 0.05;
  cfg.schedule.kind = ScheduleKind::cyclical;
  cfg.schedule.num_cycles = 1;
  cfg.schedule.exploration_ratio = 0.8;

  ChainSpec spec;
  spec.total_steps = 100;
  spec.burnin = 0;
  spec.thin = 10;
  spec.num_samples = 2;
  spec.batch_size = 16;
  spec.seed = 11;

  const SampleSet set = run_chain(SamplerKind::csgmcmc, model, ds, cfg, spec);
  // sample phase starts at t = 81; eligible thinning steps are 90 and 100
  CHECK(set.snapshot_steps == std::vector<std::int64_t>{90, 100});

  SamplerConfig constant = cfg;
  constant.schedule = ScheduleSpec{};
  CHECK_THROWS_AS(run_chain(SamplerKind::csgmcmc, model, ds, constant, spec), ConfigError);

  // learned kinds refuse to run without meta-parameters
  CHECK_THROWS_AS(run_chain(SamplerKind::l2e, model, ds, constant, spec), ConfigError);
}
