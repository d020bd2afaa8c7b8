#include "eikinv/eikonal.hpp"
#include "eikinv/meshgen.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace eikinv;

namespace {

VectorXd pt(double x, double y) {
  VectorXd v(2);
  v << x, y;
  return v;
}

double max_error_vs(const Mesh& m, const VectorXd& phi, const std::function<double(const VectorXd&)>& exact) {
  double err = 0.0;
  for (Index v = 0; v < m.n_vertices(); ++v) err = std::max(err, std::abs(phi(v) - exact(m.vertex(v))));
  return err;
}

}  // namespace

TEST(Seed, SiteOnVertexGivesOnsetTime) {
  const Mesh m = structured_square(4);
  const MetricField D = MetricField::constant(m, MatrixXd::Identity(2, 2) * 3.0);
  EikonalSolver solver(m, D);
  const SeedResult s = solver.seed({Site{pt(0.25, 0.5), 2.0}});
  const Index v = 2 * 5 + 1;
  EXPECT_DOUBLE_EQ(s.phi(v), 2.0);
}

TEST(Seed, CentroidOfRightTriangle) {
  Mesh m;
  m.dim = 2;
  m.vertices.resize(2, 3);
  m.vertices << 0, 1, 0, 0, 0, 1;
  m.elements.resize(3, 1);
  m.elements << 0, 1, 2;
  const MetricField D = MetricField::constant(m, MatrixXd::Identity(2, 2));
  EikonalSolver solver(m, D);
  const SeedResult s = solver.seed({Site{pt(1.0 / 3, 1.0 / 3), 1.5}});
  EXPECT_NEAR(s.phi(0), 1.5 + std::sqrt(2.0) / 3.0, 1e-15);
  EXPECT_NEAR(s.phi(0) - 1.5, 0.4714, 1e-4);
}

TEST(Seed, OverlappingSitesKeepMinimum) {
  const Mesh m = structured_square(2);
  const MetricField D = MetricField::constant(m, MatrixXd::Identity(2, 2));
  EikonalSolver solver(m, D);
  const SeedResult s = solver.seed({Site{pt(0, 0), 3.0}, Site{pt(0, 0), 2.0}});
  EXPECT_DOUBLE_EQ(s.phi(0), 2.0);
  EXPECT_EQ(s.owner[0], 1);
}

TEST(Seed, EmptySiteSetThrows) {
  const Mesh m = structured_square(2);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  EXPECT_THROW(solver.seed({}), ArgumentError);
}

TEST(Solve, EuclideanDistanceFromCorner) {
  const Mesh m = structured_square(20);
  const MetricField D = MetricField::constant(m, MatrixXd::Identity(2, 2));
  EikonalSolver solver(m, D);
  SolverTape tape;
  const ActivationField f = solver.solve({Site{pt(0, 0), 0.0}}, {}, &tape);
  ASSERT_TRUE(f.converged);
  const double h = 0.05;
  EXPECT_LE(max_error_vs(m, f.phi, [](const VectorXd& x) { return x.norm(); }), 2 * h);
  EXPECT_EQ(count_causality_violations(solver, f, tape), 0);
}

TEST(Solve, ConstantAnisotropyIsStraightLineMetric) {
  const Mesh m = structured_square(20);
  MatrixXd Dm(2, 2);
  Dm << 4, 0, 0, 1;
  EikonalSolver solver(m, MetricField::constant(m, Dm));
  const ActivationField f = solver.solve({Site{pt(0, 0), 0.0}});
  ASSERT_TRUE(f.converged);
  const double err = max_error_vs(m, f.phi, [&](const VectorXd& x) { return std::sqrt(x.dot(Dm * x)); });
  EXPECT_LE(err, 2 * 0.05 * 2);
}

TEST(Solve, TwoSitesArePointwiseMinimum) {
  const Mesh m = structured_square(20);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  const auto a = solver.solve({Site{pt(0, 0), 0.0}});
  const auto b = solver.solve({Site{pt(1, 1), 0.0}});
  const auto ab = solver.solve({Site{pt(0, 0), 0.0}, Site{pt(1, 1), 0.0}});
  // Faces straddling the bisector combine both fronts, so the discrete union
  // field may sit below the pointwise minimum there but never above it.
  const VectorXd lo = a.phi.cwiseMin(b.phi);
  EXPECT_LE((ab.phi - lo).maxCoeff(), 1e-12);
  EXPECT_LE((lo - ab.phi).maxCoeff(), 0.05);
  // Away from the bisector each site's front is untouched.
  for (Index v = 0; v < m.n_vertices(); ++v) {
    const VectorXd x = m.vertex(v);
    if (std::abs(x.norm() - (x - pt(1, 1)).norm()) > 0.3) {
      EXPECT_NEAR(ab.phi(v), lo(v), 1e-9) << "vertex " << v;
    }
  }
}

TEST(Solve, TapeReproducesValues) {
  const Mesh m = structured_square(10);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  SolverTape tape;
  const auto f = solver.solve({Site{pt(0.33, 0.41), 1.0}}, {}, &tape);
  const int d = 2;
  for (Index v = 0; v < m.n_vertices(); ++v) {
    const auto vu = static_cast<std::size_t>(v);
    ASSERT_NE(tape.source[vu], VertexSource::unreached);
    if (tape.source[vu] != VertexSource::face) continue;
    const auto A = solver.faces().A_of(tape.winner_face[vu]);
    VectorXd alpha(d), phi(d);
    for (int n = 0; n < d; ++n) {
      alpha(n) = tape.alpha[vu * d + n];
      phi(n) = tape.face_phi[vu * d + n];
    }
    EXPECT_NEAR(alpha.dot(phi) + (A * alpha).norm(), f.phi(v), 1e-9);
  }
}

TEST(Solve, FixedPointResidualWithinEpsilon) {
  const Mesh m = structured_square(16);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  const EikonalOptions opts{1e-4, 0, 0};
  const auto f = solver.solve({Site{pt(0.5, 0.2), 0.0}}, opts);
  ASSERT_TRUE(f.converged);
  EXPECT_LE(solver.residual(f.phi).max_violation, opts.epsilon);
}

TEST(Residual, PerturbedVertexIsDetected) {
  const Mesh m = structured_square(16);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  auto f = solver.solve({Site{pt(0, 0), 0.0}});
  const Index v = 8 * 17 + 8;
  f.phi(v) += 1.0;
  const auto rep = solver.residual(f.phi);
  EXPECT_GE(rep.per_vertex(v), 1.0 - 1e-4);
}

TEST(Residual, UnreachedFieldIsLarge) {
  const Mesh m = structured_square(4);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  VectorXd phi = VectorXd::Constant(m.n_vertices(), kInf);
  phi(0) = 0.0;
  EXPECT_GT(solver.residual(phi).max_violation, 1e6);
}

TEST(Solve, NonConvergenceIsReported) {
  const Mesh m = structured_square(10);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  const auto f = solver.solve({Site{pt(0, 0), 0.0}}, EikonalOptions{1e-4, 2, 0});
  EXPECT_FALSE(f.converged);
  EXPECT_EQ(f.iterations, 2);
}

TEST(Solve, ThreeDimensionalCube) {
  const Mesh m = structured_cube(6);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(3, 3)));
  VectorXd x0 = VectorXd::Zero(3);
  const auto f = solver.solve({Site{x0, 0.0}});
  ASSERT_TRUE(f.converged);
  EXPECT_LE(max_error_vs(m, f.phi, [](const VectorXd& x) { return x.norm(); }), 2.0 / 6.0);
}

TEST(Solve, DeterministicAcrossThreadCounts) {
  const Mesh m = structured_square(24);
  EikonalSolver solver(m, MetricField::constant(m, MatrixXd::Identity(2, 2)));
  const SiteSet sites{Site{pt(0.1, 0.7), 0.0}, Site{pt(0.8, 0.3), 2.0}};
  set_threads(1);
  const auto a = solver.solve(sites);
  set_threads(4);
  const auto b = solver.solve(sites);
  set_threads(1);
  EXPECT_EQ(a.phi, b.phi);
}
