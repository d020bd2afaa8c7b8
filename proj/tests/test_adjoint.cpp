#include "eikinv/adjoint.hpp"
#include "eikinv/meshgen.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace eikinv;
using eikinv::testing::jittered_square;

namespace {

VectorXd pt(double x, double y) {
  VectorXd v(2);
  v << x, y;
  return v;
}

VectorXd unit(Index n, Index k) {
  VectorXd e = VectorXd::Zero(n);
  e(k) = 1.0;
  return e;
}

struct Solved {
  ActivationField field;
  SolverTape tape;
};

Solved run(const EikonalSolver& s, const SiteSet& sites, double eps = 1e-10) {
  Solved r;
  r.field = s.solve(sites, EikonalOptions{eps, 0, 0}, &r.tape);
  return r;
}

}  // namespace

TEST(Backward, OnsetDerivativeIsOne) {
  const Mesh m = structured_square(10);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  const SiteSet sites{Site{pt(0, 0), 0.0}};
  const Solved r = run(solver, sites);
  const Index far = m.n_vertices() - 1;
  const Gradient g = backward(solver, r.field, r.tape, 1, unit(m.n_vertices(), far));
  EXPECT_NEAR(g.dt[0], 1.0, 1e-14);
  EXPECT_TRUE(g.active[0]);
}

TEST(Backward, PositionDerivativePointsAlongGeodesic) {
  const Mesh m = structured_square(20);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  const SiteSet sites{Site{pt(0.21, 0.33), 0.0}};
  const Solved r = run(solver, sites);
  const Index v = 17 * 21 + 16;
  const Gradient g = backward(solver, r.field, r.tape, 1, unit(m.n_vertices(), v));
  const VectorXd dir = m.vertex(v) - sites[0].x;
  const VectorXd expected = -dir / dir.norm();

  VectorXd fd(2);
  for (int p = 0; p < 2; ++p) {
    SiteSet sp = sites, sm = sites;
    sp[0].x(p) += 1e-3;
    sm[0].x(p) -= 1e-3;
    fd(p) = (run(solver, sp).field.phi(v) - run(solver, sm).field.phi(v)) / 2e-3;
  }
  EXPECT_LE((g.dx[0] - fd).norm() / fd.norm(), 0.02);
  // The discrete front is polygonal, so only the direction is close to the continuum one.
  EXPECT_GE(g.dx[0].normalized().dot(expected), 0.95);
}

TEST(Backward, OvershadowedSiteHasZeroGradient) {
  const Mesh m = structured_square(10);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  // The second site sits next to the first but fires much later.
  const SiteSet sites{Site{pt(0.5, 0.5), 0.0}, Site{pt(0.52, 0.47), 5.0}};
  const Solved r = run(solver, sites);
  const Gradient g = backward(solver, r.field, r.tape, 2, VectorXd::Ones(m.n_vertices()));
  EXPECT_FALSE(g.active[1]);
  EXPECT_EQ(g.dt[1], 0.0);
  EXPECT_EQ(g.dx[1], VectorXd::Zero(2));
  EXPECT_TRUE(g.active[0]);
}

TEST(Backward, ZeroCotangentGivesZeroGradient) {
  const Mesh m = jittered_square(8, 0.2, 1);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  const SiteSet sites{Site{pt(0.3, 0.3), 0.0}, Site{pt(0.8, 0.6), 1.0}};
  const Solved r = run(solver, sites);
  const Gradient g = backward(solver, r.field, r.tape, 2, VectorXd::Zero(m.n_vertices()));
  EXPECT_EQ(g.flatten(), VectorXd::Zero(6));
}

TEST(Backward, IsLinearInCotangent) {
  const Mesh m = jittered_square(10, 0.25, 3);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  const SiteSet sites{Site{pt(0.2, 0.7), 0.0}, Site{pt(0.7, 0.2), 0.5}, Site{pt(0.6, 0.8), 1.0}};
  const Solved r = run(solver, sites);
  std::mt19937_64 rng(4);
  VectorXd g1(m.n_vertices()), g2(m.n_vertices());
  for (Index v = 0; v < m.n_vertices(); ++v) {
    g1(v) = eikinv::testing::uniform(rng, -1, 1);
    g2(v) = eikinv::testing::uniform(rng, -1, 1);
  }
  const double a = 0.7, b = -1.3;
  const VectorXd lhs = backward(solver, r.field, r.tape, 3, a * g1 + b * g2).flatten();
  const VectorXd rhs = a * backward(solver, r.field, r.tape, 3, g1).flatten() +
                       b * backward(solver, r.field, r.tape, 3, g2).flatten();
  EXPECT_LE((lhs - rhs).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(Backward, OnsetWeightsPartitionUnity) {
  const Mesh m = jittered_square(10, 0.25, 5);
  MatrixXd D(2, 2);
  D << 2.0, 0.3, 0.3, 1.0;
  EikonalSolver solver(m, MetricField::constant(m, D));
  const SiteSet sites{Site{pt(0.1, 0.1), 0.0}, Site{pt(0.9, 0.2), 0.3}, Site{pt(0.5, 0.9), 0.1}};
  const Solved r = run(solver, sites);
  for (Index v = 0; v < m.n_vertices(); ++v) {
    const Gradient g = backward(solver, r.field, r.tape, 3, unit(m.n_vertices(), v));
    double total = 0.0;
    for (double dt : g.dt) {
      EXPECT_GE(dt, -1e-12);
      EXPECT_LE(dt, 1.0 + 1e-12);
      total += dt;
    }
    EXPECT_NEAR(total, 1.0, 1e-12) << "vertex " << v;
  }
}

TEST(Backward, StrictModeRejectsEqualValueCycles) {
  const Mesh m = structured_square(1);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  ActivationField field;
  field.phi = VectorXd::Ones(4);
  SolverTape tape;
  tape.dim = 2;
  tape.source.assign(4, VertexSource::seed);
  tape.seed_site.assign(4, 0);
  tape.winner_face.assign(4, -1);
  tape.alpha.assign(8, 0.0);
  tape.face_phi.assign(8, 1.0);
  tape.seed_element = {0};
  tape.seed_point = {pt(0, 0)};
  tape.seed_time = {1.0};
  // Vertices 0 and 1 each claim to come from a face containing the other
  // (element 0 is (0, 1, 3); face 0 is {1, 3}, face 1 is {0, 3}).
  tape.source[0] = tape.source[1] = VertexSource::face;
  tape.winner_face[0] = 0;
  tape.winner_face[1] = 1;
  std::fill(tape.alpha.begin(), tape.alpha.begin() + 4, 0.5);
  const VectorXd cot = unit(4, 0);
  const Gradient g = backward(solver, field, tape, 1, cot);
  EXPECT_GT(g.dropped_edges, 0);
  EXPECT_THROW(backward(solver, field, tape, 1, cot, BackwardOptions{true}), NumericalError);
}

TEST(Gradcheck, RandomMeshThreeSites) {
  const Mesh m = jittered_square(12, 0.25, 9);
  MatrixXd D(2, 2);
  D << 1.5, 0.2, 0.2, 0.8;
  EikonalSolver solver(m, MetricField::constant(m, D));
  const SiteSet sites{Site{pt(0.23, 0.31), 0.0}, Site{pt(0.77, 0.28), 0.4}, Site{pt(0.52, 0.81), 0.2}};
  VectorXd ref(m.n_vertices());
  for (Index v = 0; v < m.n_vertices(); ++v) ref(v) = 0.3 + 0.5 * m.vertex(v)(0);
  const auto loss = quadratic_field_loss(ref, VectorXd::Ones(m.n_vertices()));
  const GradcheckReport rep = gradcheck(solver, sites, loss);
  EXPECT_LE(rep.max_rel_error_x, 5e-2);
  EXPECT_LE(rep.max_rel_error_t, 1e-5);
  EXPECT_EQ(rep.entries.size(), 9u);
}

TEST(Gradcheck, OnsetOnlyIsExact) {
  const Mesh m = jittered_square(10, 0.2, 2);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  const SiteSet sites{Site{pt(0.4, 0.4), 0.0}};
  const auto loss = quadratic_field_loss(VectorXd::Zero(m.n_vertices()), VectorXd::Ones(m.n_vertices()));
  const GradcheckReport rep = gradcheck(solver, sites, loss);
  EXPECT_LE(rep.max_rel_error_t, 1e-6);
  EXPECT_EQ(rep.switched_steps, 0);
}
