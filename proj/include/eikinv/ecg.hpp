#pragma once

// Travelling-wave ECG: V(t) = B U(t - phi) with a tanh upstroke template, the
// trapezoidal least-squares loss against a target and its derivative in phi.

#include "eikinv/common.hpp"
#include "eikinv/leadfield.hpp"
#include "eikinv/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace eikinv {

/// printed:  U = K0 + (K1 - K0)/2 tanh(2 xi / tau), ranging over K0 -+ (K1 - K0)/2.
/// midpoint: U = K0 + (K1 - K0)/2 (1 + tanh(2 xi / tau)), ranging over [K0, K1].
/// Both differ by a constant, which B annihilates, so lead voltages agree.
enum class TemplateConvention { printed, midpoint };

inline const char* to_string(TemplateConvention c) {
  return c == TemplateConvention::printed ? "printed" : "midpoint";
}

inline TemplateConvention template_convention_from_string(const std::string& s) {
  if (s == "printed") return TemplateConvention::printed;
  if (s == "midpoint") return TemplateConvention::midpoint;
  throw ArgumentError("unknown template convention '" + s + "' (expected printed|midpoint)");
}

struct ApTemplate {
  double K0 = -85.0;  // mV
  double K1 = 30.0;   // mV
  double tau = 1.0;   // ms
  TemplateConvention convention = TemplateConvention::midpoint;

  void validate() const {
    if (!(K1 > K0)) throw ArgumentError("template requires K1 > K0");
    if (!(tau > 0.0)) throw ArgumentError("template requires tau > 0");
  }
};

inline double template_value(double xi, const ApTemplate& tpl) {
  const double half = 0.5 * (tpl.K1 - tpl.K0);
  const double th = std::tanh(2.0 * xi / tpl.tau);
  return tpl.convention == TemplateConvention::printed ? tpl.K0 + half * th : tpl.K0 + half * (1.0 + th);
}

/// dU/dxi = (K1 - K0)/tau sech^2(2 xi / tau), for either convention.
inline double template_derivative(double xi, const ApTemplate& tpl) {
  const double c = std::cosh(2.0 * xi / tpl.tau);
  if (!std::isfinite(c)) return 0.0;
  return (tpl.K1 - tpl.K0) / tpl.tau / (c * c);
}

/// Uniform sample times t_k = t_start + k dt, k < n.
struct TimeGrid {
  double t_start = 0.0;  // ms
  double dt = 0.5;       // ms
  Index n = 0;

  double time(Index k) const { return t_start + static_cast<double>(k) * dt; }
  double t_end() const { return time(n - 1); }
  double length() const { return static_cast<double>(n - 1) * dt; }

  /// Grid covering [t0, t1]; the window length must be a whole number of steps.
  static TimeGrid window(double t0, double t1, double dt) {
    if (!(dt > 0.0)) throw ArgumentError("time step must be positive");
    if (!(t1 > t0)) throw ArgumentError("time window must have t1 > t0");
    const double steps = (t1 - t0) / dt;
    const double rounded = std::round(steps);
    if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps))
      throw ArgumentError("time window length is not a multiple of dt");
    return TimeGrid{t0, dt, static_cast<Index>(rounded) + 1};
  }

  bool same_as(const TimeGrid& o) const {
    const double tol = 1e-9 * std::max(1.0, std::abs(dt));
    return n == o.n && std::abs(t_start - o.t_start) <= tol && std::abs(dt - o.dt) <= tol;
  }
};

/// Trapezoid weights of the grid (dt inside, dt/2 at both ends).
inline VectorXd trapezoid_weights(const TimeGrid& grid) {
  VectorXd w = VectorXd::Constant(grid.n, grid.dt);
  if (grid.n > 0) {
    w(0) *= 0.5;
    w(grid.n - 1) *= 0.5;
  }
  return w;
}

struct EcgTrace {
  TimeGrid grid;
  std::vector<std::string> names;
  MatrixXd values;  // leads x samples (mV)

  Index n_leads() const { return values.rows(); }
};

inline void check_reached(const VectorXd& phi) {
  std::vector<Index> bad;
  for (Index v = 0; v < phi.size(); ++v)
    if (!std::isfinite(phi(v))) bad.push_back(v);
  if (bad.empty()) return;
  std::string msg = "activation field has " + std::to_string(bad.size()) + " unreached vertices:";
  for (std::size_t k = 0; k < std::min<std::size_t>(bad.size(), 20); ++k) msg += " " + std::to_string(bad[k]);
  if (bad.size() > 20) msg += " ...";
  throw NumericalError(msg);
}

/// Nodal template values U(t_k - phi_v), one column per sample.
inline MatrixXd template_matrix(const VectorXd& phi, const ApTemplate& tpl, const TimeGrid& grid) {
  MatrixXd U(phi.size(), grid.n);
  parallel_for(grid.n, [&](Index k) {
    const double t = grid.time(k);
    for (Index v = 0; v < phi.size(); ++v) U(v, k) = template_value(t - phi(v), tpl);
  });
  return U;
}

inline EcgTrace forward_ecg(const VectorXd& phi, const LeadFieldOperator& op, const ApTemplate& tpl,
                            const TimeGrid& grid) {
  tpl.validate();
  if (grid.n < 1) throw ArgumentError("empty time grid");
  if (phi.size() != op.n_vertices())
    throw ArgumentError("activation field has " + std::to_string(phi.size()) + " vertices, operator expects " +
                        std::to_string(op.n_vertices()));
  check_reached(phi);
  EcgTrace out;
  out.grid = grid;
  out.names = op.names;
  out.values = op.B * template_matrix(phi, tpl, grid);
  return out;
}

inline void check_compatible(const EcgTrace& a, const EcgTrace& b) {
  if (!a.grid.same_as(b.grid)) throw ArgumentError("ECG traces live on different time grids (resample first)");
  if (a.n_leads() != b.n_leads())
    throw ArgumentError("ECG traces have " + std::to_string(a.n_leads()) + " and " + std::to_string(b.n_leads()) +
                        " leads");
  if (a.grid.n < 2) throw ArgumentError("loss needs at least two time samples");
}

/// (1 / (N |T|)) sum over leads of the trapezoidal integral of (sim - target)^2, in mV^2.
inline double ecg_loss(const EcgTrace& sim, const EcgTrace& target) {
  check_compatible(sim, target);
  const VectorXd w = trapezoid_weights(sim.grid);
  const MatrixXd r = sim.values - target.values;
  double total = 0.0;
  for (Index l = 0; l < r.rows(); ++l)
    for (Index k = 0; k < r.cols(); ++k) total += w(k) * r(l, k) * r(l, k);
  return total / (static_cast<double>(sim.n_leads()) * sim.grid.length());
}

/// dLoss/dphi_v = sum_k w_k 2/(N |T|) (-U'(t_k - phi_v)) (B^T (sim - target))(v, k).
inline VectorXd ecg_loss_backward(const EcgTrace& sim, const EcgTrace& target, const LeadFieldOperator& op,
                                  const ApTemplate& tpl, const VectorXd& phi) {
  check_compatible(sim, target);
  if (phi.size() != op.n_vertices()) throw ArgumentError("activation field does not match the operator");
  check_reached(phi);
  const VectorXd w = trapezoid_weights(sim.grid);
  const double scale = 2.0 / (static_cast<double>(sim.n_leads()) * sim.grid.length());
  const MatrixXd BtR = op.B.transpose() * (sim.values - target.values);  // n_v x n_t
  VectorXd grad(phi.size());
  parallel_for(phi.size(), [&](Index v) {
    double acc = 0.0;
    for (Index k = 0; k < sim.grid.n; ++k)
      acc += w(k) * (-template_derivative(sim.grid.time(k) - phi(v), tpl)) * BtR(v, k);
    grad(v) = scale * acc;
  });
  return grad;
}

/// Linear interpolation of every lead onto `grid`, which must lie within the trace's span.
inline EcgTrace resample(const EcgTrace& trace, const TimeGrid& grid) {
  if (trace.grid.n < 2) throw ArgumentError("cannot resample a trace with fewer than two samples");
  const double lo = trace.grid.t_start, hi = trace.grid.t_end();
  const double tol = 1e-9 * std::max(1.0, trace.grid.dt);
  if (grid.t_start < lo - tol || grid.t_end() > hi + tol)
    throw ArgumentError("resample target grid extends outside the trace's time span");
  EcgTrace out;
  out.grid = grid;
  out.names = trace.names;
  out.values.resize(trace.n_leads(), grid.n);
  for (Index k = 0; k < grid.n; ++k) {
    const double s = std::clamp((grid.time(k) - lo) / trace.grid.dt, 0.0, static_cast<double>(trace.grid.n - 1));
    const auto i = std::min<Index>(static_cast<Index>(std::floor(s)), trace.grid.n - 2);
    const double f = s - static_cast<double>(i);
    out.values.col(k) = (1.0 - f) * trace.values.col(i) + f * trace.values.col(i + 1);
  }
  return out;
}

}  // namespace eikinv
