#include "eikinv/ecg.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace eikinv;
namespace tsup = eikinv::testing;

namespace {

/// Random operator with zero row sums.
LeadFieldOperator random_operator(Index leads, Index verts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LeadFieldOperator op;
  op.B.resize(leads, verts);
  for (Index l = 0; l < leads; ++l)
    for (Index v = 0; v < verts; ++v) op.B(l, v) = tsup::uniform(rng, -1.0, 1.0);
  op.B.colwise() -= op.B.rowwise().mean();
  for (Index l = 0; l < leads; ++l) op.names.push_back("L" + std::to_string(l));
  return op;
}

VectorXd random_phi(Index n, std::uint64_t seed, double lo = 5.0, double hi = 30.0) {
  std::mt19937_64 rng(seed);
  VectorXd phi(n);
  for (Index v = 0; v < n; ++v) phi(v) = tsup::uniform(rng, lo, hi);
  return phi;
}

}  // namespace

TEST(Template, ValuesAtReferencePoints) {
  ApTemplate tpl;
  EXPECT_DOUBLE_EQ(template_value(0.0, tpl), -27.5);
  EXPECT_NEAR(template_value(-50.0, tpl), -85.0, 1e-12);
  EXPECT_NEAR(template_value(50.0, tpl), 30.0, 1e-12);
  tpl.convention = TemplateConvention::printed;
  EXPECT_DOUBLE_EQ(template_value(0.0, tpl), -85.0);
  EXPECT_NEAR(template_value(50.0, tpl) - template_value(-50.0, tpl), 115.0, 1e-12);
}

TEST(Template, ConventionsDifferByConstant) {
  ApTemplate a, b;
  b.convention = TemplateConvention::printed;
  for (double xi = -5.0; xi <= 5.0; xi += 0.37)
    EXPECT_NEAR(template_value(xi, a) - template_value(xi, b), 57.5, 1e-12);
}

TEST(Template, DerivativeMatchesFiniteDifference) {
  for (double tau : {0.5, 1.0, 3.0}) {
    ApTemplate tpl;
    tpl.tau = tau;
    for (double xi = -4.0; xi <= 4.0; xi += 0.25) {
      const double h = 1e-6;
      const double fd = (template_value(xi + h, tpl) - template_value(xi - h, tpl)) / (2 * h);
      EXPECT_NEAR(template_derivative(xi, tpl), fd, 1e-6 * std::max(1.0, std::abs(fd))) << "tau " << tau << " xi " << xi;
    }
  }
  EXPECT_EQ(template_derivative(1e6, ApTemplate{}), 0.0);
}

TEST(Template, RejectsBadParameters) {
  ApTemplate tpl;
  tpl.K1 = -90.0;
  EXPECT_THROW(tpl.validate(), ArgumentError);
  tpl = ApTemplate{};
  tpl.tau = 0.0;
  EXPECT_THROW(tpl.validate(), ArgumentError);
  EXPECT_THROW(template_convention_from_string("other"), ArgumentError);
}

TEST(TimeGridTest, WindowMustBeWholeSteps) {
  const TimeGrid g = TimeGrid::window(0.0, 100.0, 0.5);
  EXPECT_EQ(g.n, 201);
  EXPECT_DOUBLE_EQ(g.t_end(), 100.0);
  EXPECT_THROW(TimeGrid::window(0.0, 100.2, 0.5), ArgumentError);
  EXPECT_THROW(TimeGrid::window(10.0, 0.0, 0.5), ArgumentError);
  const VectorXd w = trapezoid_weights(g);
  EXPECT_NEAR(w.sum(), 100.0, 1e-12);
}

TEST(ForwardEcg, ConstantActivationGivesZeroTrace) {
  const LeadFieldOperator op = random_operator(5, 40, 1);
  const EcgTrace e = forward_ecg(VectorXd::Constant(40, 12.0), op, ApTemplate{}, TimeGrid::window(0, 50, 0.5));
  EXPECT_LE(e.values.cwiseAbs().maxCoeff(), 1e-11);
}

TEST(ForwardEcg, UnreachedVertexIsRejected) {
  const LeadFieldOperator op = random_operator(2, 4, 2);
  VectorXd phi = VectorXd::Constant(4, 3.0);
  phi(2) = kInf;
  EXPECT_THROW(forward_ecg(phi, op, ApTemplate{}, TimeGrid::window(0, 10, 0.5)), NumericalError);
  EXPECT_THROW(forward_ecg(VectorXd::Zero(3), op, ApTemplate{}, TimeGrid::window(0, 10, 0.5)), ArgumentError);
}

TEST(ForwardEcg, TimeShiftEquivariance) {
  const LeadFieldOperator op = random_operator(4, 30, 3);
  const VectorXd phi = random_phi(30, 4);
  const double s = 7.5;  // whole number of steps
  const EcgTrace a = forward_ecg(phi, op, ApTemplate{}, TimeGrid::window(0, 60, 0.5));
  const EcgTrace b = forward_ecg(phi.array() + s, op, ApTemplate{}, TimeGrid::window(s, 60 + s, 0.5));
  EXPECT_LE((a.values - b.values).cwiseAbs().maxCoeff(), 1e-10 * a.values.cwiseAbs().maxCoeff());
}

TEST(ForwardEcg, ConventionDoesNotChangeLeadVoltages) {
  const LeadFieldOperator op = random_operator(3, 25, 5);
  const VectorXd phi = random_phi(25, 6);
  ApTemplate printed;
  printed.convention = TemplateConvention::printed;
  const TimeGrid g = TimeGrid::window(0, 40, 0.5);
  const EcgTrace a = forward_ecg(phi, op, ApTemplate{}, g), b = forward_ecg(phi, op, printed, g);
  EXPECT_LE((a.values - b.values).cwiseAbs().maxCoeff(), 1e-10 * a.values.cwiseAbs().maxCoeff());
}

TEST(Loss, ConstantOffsetGivesSquare) {
  const LeadFieldOperator op = random_operator(3, 20, 7);
  const EcgTrace sim = forward_ecg(random_phi(20, 8), op, ApTemplate{}, TimeGrid::window(0, 40, 0.5));
  EcgTrace target = sim;
  target.values.array() += 0.3;
  EXPECT_NEAR(ecg_loss(sim, target), 0.09, 1e-14);
  EXPECT_EQ(ecg_loss(sim, sim), 0.0);
}

TEST(Loss, ConvergesToContinuousIntegral) {
  const LeadFieldOperator op = random_operator(3, 20, 9);
  const VectorXd phi = random_phi(20, 10), phi2 = random_phi(20, 11);
  ApTemplate tpl;
  // continuous loss by a fine midpoint rule on the analytic traces
  const double T0 = 0.0, T1 = 40.0;
  const Index n_fine = 200000;
  double riemann = 0.0;
  for (Index k = 0; k < n_fine; ++k) {
    const double t = T0 + (k + 0.5) * (T1 - T0) / n_fine;
    VectorXd u(20), u2(20);
    for (Index v = 0; v < 20; ++v) {
      u(v) = template_value(t - phi(v), tpl);
      u2(v) = template_value(t - phi2(v), tpl);
    }
    riemann += (op.B * (u - u2)).squaredNorm() * (T1 - T0) / n_fine;
  }
  riemann /= 3.0 * (T1 - T0);
  const TimeGrid g = TimeGrid::window(T0, T1, 0.05);
  const double trap = ecg_loss(forward_ecg(phi, op, tpl, g), forward_ecg(phi2, op, tpl, g));
  EXPECT_NEAR(trap, riemann, 1e-3 * riemann);
}

TEST(Loss, BackwardMatchesFiniteDifference) {
  const LeadFieldOperator op = random_operator(4, 15, 12);
  const VectorXd phi = random_phi(15, 13);
  const TimeGrid g = TimeGrid::window(0, 40, 0.5);
  ApTemplate tpl;
  tpl.tau = 2.0;
  const EcgTrace target = forward_ecg(random_phi(15, 14), op, tpl, g);
  const EcgTrace sim = forward_ecg(phi, op, tpl, g);
  const VectorXd grad = ecg_loss_backward(sim, target, op, tpl, phi);
  for (Index v = 0; v < phi.size(); ++v) {
    const double h = 1e-5;
    VectorXd p = phi, m = phi;
    p(v) += h;
    m(v) -= h;
    const double fd =
        (ecg_loss(forward_ecg(p, op, tpl, g), target) - ecg_loss(forward_ecg(m, op, tpl, g), target)) / (2 * h);
    EXPECT_NEAR(grad(v), fd, 1e-6 * std::max(1.0, grad.cwiseAbs().maxCoeff())) << "vertex " << v;
  }
}

TEST(Loss, IncompatibleTracesAreRejected) {
  const LeadFieldOperator op = random_operator(2, 5, 15);
  const VectorXd phi = random_phi(5, 16);
  const EcgTrace a = forward_ecg(phi, op, ApTemplate{}, TimeGrid::window(0, 10, 0.5));
  const EcgTrace b = forward_ecg(phi, op, ApTemplate{}, TimeGrid::window(0, 10, 0.25));
  EXPECT_THROW(ecg_loss(a, b), ArgumentError);
}

TEST(Resample, LinearSignalIsReproduced) {
  EcgTrace tr;
  tr.grid = TimeGrid::window(0, 20, 1.0);
  tr.names = {"A", "B"};
  tr.values.resize(2, tr.grid.n);
  for (Index k = 0; k < tr.grid.n; ++k) {
    tr.values(0, k) = 2.0 * tr.grid.time(k) - 3.0;
    tr.values(1, k) = -0.5 * tr.grid.time(k);
  }
  const EcgTrace r = resample(tr, TimeGrid::window(2.5, 17.5, 0.25));
  for (Index k = 0; k < r.grid.n; ++k) {
    EXPECT_NEAR(r.values(0, k), 2.0 * r.grid.time(k) - 3.0, 1e-12);
    EXPECT_NEAR(r.values(1, k), -0.5 * r.grid.time(k), 1e-12);
  }
  const EcgTrace same = resample(tr, tr.grid);
  EXPECT_EQ(same.values, tr.values);
  EXPECT_THROW(resample(tr, TimeGrid::window(-1, 10, 0.5)), ArgumentError);
}
