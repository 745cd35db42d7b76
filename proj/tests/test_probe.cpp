#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sgmcmc/probe.hpp"

using namespace sgmcmc;

namespace {

EnergyModel linear_model() {
  EnergyModel m;
  m.arch.kind = ArchKind::mlp;
  m.arch.layer_widths = {1, 1};
  m.arch.input_shape = {1};
  m.arch.num_outputs = 1;
  m.arch.activation = Activation::identity;
  m.arch.classification = false;
  return m;
}

Dataset line_data(int n) {
  Dataset ds;
  ds.inputs.resize(n, 1);
  ds.targets.resize(n, 1);
  ds.input_shape = {1};
  ds.num_classes = 0;
  RngStream rng(5);
  for (int i = 0; i < n; ++i) {
    ds.inputs(i, 0) = rng.normal();
    ds.targets(i, 0) = 2.0 * ds.inputs(i, 0) + 0.5;
  }
  return ds;
}

ParamVector make_theta(double w, double b) {
  ParamVector p;
  p.layout = {{"dense0.w", {1, 1}, 0, 1}, {"dense0.b", {1}, 1, 1}};
  p.values.resize(2);
  p.values << w, b;
  return p;
}

}  // namespace

TEST_CASE("linear path: endpoint exactness and convexity on a quadratic loss") {
  const EnergyModel model = linear_model();
  const Dataset data = line_data(40);

  PathSpec spec;
  spec.theta_a = make_theta(0.0, 0.0);
  spec.theta_b = make_theta(3.0, 1.0);
  spec.num_points = 9;
  const auto path = linear_path_losses(model, data, spec);
  REQUIRE(path.size() == 9);
  CHECK(path.front().t == 0.0);
  CHECK(path.back().t == 1.0);

  // endpoints evaluated at the exact endpoint parameters
  const DataBatch full = full_batch(data);
  const double loss_a =
      0.5 * (forward(model, spec.theta_a, full) - full.targets).squaredNorm() / full.size();
  const double loss_b =
      0.5 * (forward(model, spec.theta_b, full) - full.targets).squaredNorm() / full.size();
  CHECK(path.front().loss == loss_a);
  CHECK(path.back().loss == loss_b);

  // squared loss of a linear model is convex along the segment
  for (const auto& p : path)
    CHECK(p.loss <= (1.0 - p.t) * loss_a + p.t * loss_b + 1e-12);

  PathSpec degenerate = spec;
  degenerate.theta_b = spec.theta_a;
  for (const auto& p : linear_path_losses(model, data, degenerate))
    CHECK(p.loss == doctest::Approx(loss_a).epsilon(1e-14));

  CHECK_THROWS_AS([&] {
    PathSpec bad = spec;
    bad.num_points = 1;
    linear_path_losses(model, data, bad);
  }(), ContractError);
}

TEST_CASE("path barrier statistic") {
  std::vector<PathPoint> flat = {{0.0, 1.0, 0}, {0.5, 1.0, 0}, {1.0, 1.0, 0}};
  CHECK(path_barrier(flat) == 0.0);
  std::vector<PathPoint> bump = {{0.0, 1.0, 0}, {0.5, 4.0, 0}, {1.0, 2.0, 0}};
  CHECK(path_barrier(bump) == 2.0);
  std::vector<PathPoint> valley = {{0.0, 1.0, 0}, {0.5, 0.2, 0}, {1.0, 1.0, 0}};
  CHECK(path_barrier(valley) < 0.0);
}

TEST_CASE("pairwise cosine: identity, orthogonality, scale invariance, zero norm") {
  SampleSet s;
  s.layout = {{"theta", {3}, 0, 3}};
  Eigen::VectorXd a(3), b(3), zero(3);
  a << 1, 0, 0;
  b << 0, 2, 0;
  zero.setZero();

  s.snapshots = {a, a, 2 * a};
  const CosineResult same = pairwise_cosine(s);
  CHECK((same.similarity.array() - 1.0).abs().maxCoeff() < 1e-15);
  CHECK_FALSE(same.any_zero_norm);

  s.snapshots = {a, b};
  const CosineResult ortho = pairwise_cosine(s);
  CHECK(ortho.similarity(0, 1) == 0.0);
  CHECK(ortho.similarity(0, 0) == 1.0);
  CHECK(ortho.similarity(1, 0) == ortho.similarity(0, 1));

  s.snapshots = {a, zero};
  const CosineResult flagged = pairwise_cosine(s);
  CHECK(flagged.any_zero_norm);
  CHECK(flagged.similarity(1, 1) == 1.0);
  CHECK(flagged.similarity(0, 1) == 0.0);

  // symmetric, unit diagonal, values in [-1, 1] for random snapshots
  RngStream rng(9);
  s.snapshots.clear();
  for (int k = 0; k < 6; ++k) {
    Eigen::VectorXd v(3);
    for (int i = 0; i < 3; ++i) v[i] = rng.normal();
    s.snapshots.push_back(v);
  }
  const CosineResult r = pairwise_cosine(s);
  for (int i = 0; i < 6; ++i) {
    CHECK(r.similarity(i, i) == 1.0);
    for (int j = 0; j < 6; ++j) {
      CHECK(r.similarity(i, j) == r.similarity(j, i));
      CHECK(std::abs(r.similarity(i, j)) <= 1.0 + 1e-12);
    }
  }
}
