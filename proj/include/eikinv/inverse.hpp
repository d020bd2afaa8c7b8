#pragma once

// Gradient-based recovery of activation sites from ECG traces: each epoch runs
// eikonal solve -> ECG -> loss -> reverse pass -> ADAM step -> position constraint.

#include "eikinv/adjoint.hpp"
#include "eikinv/common.hpp"
#include "eikinv/ecg.hpp"
#include "eikinv/eikonal.hpp"
#include "eikinv/leadfield.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace eikinv {

struct AdamOptions {
  double lr = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Optional per-group learning rates; NaN means "use lr".
  double lr_position = std::numeric_limits<double>::quiet_NaN();  // mm per step
  double lr_time = std::numeric_limits<double>::quiet_NaN();      // ms per step
};

struct AdamState {
  VectorXd m;
  VectorXd v;
  Index step = 0;

  explicit AdamState(Index n = 0) : m(VectorXd::Zero(n)), v(VectorXd::Zero(n)) {}
};

/// Bias-corrected ADAM with a per-parameter learning rate.
inline void adam_step(AdamState& s, VectorXd& params, const VectorXd& grads, const VectorXd& lr,
                      const AdamOptions& o) {
  if (params.size() != grads.size() || s.m.size() != params.size() || lr.size() != params.size())
    throw ArgumentError("adam_step: size mismatch");
  ++s.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.step));
  for (Index k = 0; k < params.size(); ++k) {
    s.m(k) = o.beta1 * s.m(k) + (1.0 - o.beta1) * grads(k);
    s.v(k) = o.beta2 * s.v(k) + (1.0 - o.beta2) * grads(k) * grads(k);
    const double mhat = s.m(k) / c1;
    const double vhat = s.v(k) / c2;
    params(k) -= lr(k) * mhat / (std::sqrt(vhat) + o.epsilon);
  }
}

inline void adam_step(AdamState& s, VectorXd& params, const VectorXd& grads, const AdamOptions& o) {
  adam_step(s, params, grads, VectorXd::Constant(params.size(), o.lr), o);
}

/// Portable uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct InitOptions {
  Index K = 8;
  SiteMode mode = SiteMode::volume;
  double t_init = 0.0;  // ms
  std::uint64_t seed = 42;
};

namespace detail {

/// Index drawn with probability proportional to `weights`.
inline std::size_t weighted_pick(const std::vector<double>& cumulative, std::mt19937_64& rng) {
  const double u = uniform01(rng) * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

/// Uniform point of the simplex spanned by the columns of `verts` (flat Dirichlet weights).
inline VectorXd uniform_in_simplex(const MatrixXd& verts, std::mt19937_64& rng) {
  VectorXd w(verts.cols());
  for (Index k = 0; k < w.size(); ++k) w(k) = -std::log1p(-uniform01(rng));
  w /= w.sum();
  return verts * w;
}

}  // namespace detail

/// Random sites: volume-weighted over elements, or area-weighted over boundary facets.
inline SiteSet init_sites(const Mesh& mesh, const InitOptions& opts) {
  if (opts.K < 1) throw ArgumentError("init_sites: K must be >= 1");
  std::mt19937_64 rng(opts.seed);
  const int d = mesh.dim;
  std::vector<MatrixXd> cells;
  std::vector<double> cumulative;
  double acc = 0.0;
  if (opts.mode == SiteMode::volume) {
    for (Index j = 0; j < mesh.n_elements(); ++j) {
      cells.push_back(mesh.element_vertices(j));
      acc += simplex_volume(cells.back());
      cumulative.push_back(acc);
    }
  } else {
    const PointLocator loc(mesh);
    for (const auto& bf : loc.boundary()) {
      MatrixXd verts(d, d);
      int col = 0;
      for (int n = 0; n <= d; ++n)
        if (n != bf.local_opposite) verts.col(col++) = mesh.vertices.col(mesh.elements(n, bf.element));
      MatrixXd E(d, d - 1);
      for (int c = 1; c < d; ++c) E.col(c - 1) = verts.col(c) - verts.col(0);
      acc += std::sqrt((E.transpose() * E).determinant()) / factorial(d - 1);
      cells.push_back(verts);
      cumulative.push_back(acc);
    }
  }
  SiteSet out;
  for (Index k = 0; k < opts.K; ++k) {
    const std::size_t c = detail::weighted_pick(cumulative, rng);
    out.push_back(Site{detail::uniform_in_simplex(cells[c], rng), opts.t_init, opts.mode});
  }
  return out;
}

inline VectorXd pack_sites(const SiteSet& sites) {
  if (sites.empty()) return {};
  const auto d = sites.front().x.size();
  VectorXd p(static_cast<Index>(sites.size()) * (d + 1));
  for (std::size_t i = 0; i < sites.size(); ++i) {
    p.segment(static_cast<Index>(i) * (d + 1), d) = sites[i].x;
    p(static_cast<Index>(i) * (d + 1) + d) = sites[i].t;
  }
  return p;
}

inline void unpack_sites(const VectorXd& p, SiteSet& sites) {
  const auto d = sites.front().x.size();
  for (std::size_t i = 0; i < sites.size(); ++i) {
    sites[i].x = p.segment(static_cast<Index>(i) * (d + 1), d);
    sites[i].t = p(static_cast<Index>(i) * (d + 1) + d);
  }
}

/// Everything one forward/backward evaluation produces.
struct Evaluation {
  ActivationField field;
  SolverTape tape;
  EcgTrace ecg;
  double loss = 0.0;
  Gradient gradient;  // filled when requested
};

inline Evaluation evaluate(const EikonalSolver& solver, const LeadFieldOperator& op, const ApTemplate& tpl,
                           const EcgTrace& target, const SiteSet& sites, const EikonalOptions& eik,
                           bool with_gradient) {
  Evaluation e;
  e.field = solver.solve(sites, eik, &e.tape);
  if (!e.field.converged)
    throw NumericalError("eikonal solve did not converge after " + std::to_string(e.field.iterations) +
                         " iterations (last max decrease " + std::to_string(e.field.last_max_decrease) + " ms)");
  e.ecg = forward_ecg(e.field.phi, op, tpl, target.grid);
  e.loss = ecg_loss(e.ecg, target);
  if (with_gradient) {
    const VectorXd seed = ecg_loss_backward(e.ecg, target, op, tpl, e.field.phi);
    e.gradient = backward(solver, e.field, e.tape, sites.size(), seed);
  }
  return e;
}

struct FitConfig {
  Index epochs = 400;
  AdamOptions adam;
  EikonalOptions eikonal;
  bool record_trajectories = false;
  bool early_stop = false;  // stop when loss improves by < tol over `window` epochs
  double early_stop_tol = 1e-6;
  Index early_stop_window = 20;
  std::function<void(Index epoch, double loss, Index active)> on_epoch;
};

struct RunReport {
  std::vector<double> loss;          // per epoch, before that epoch's update
  std::vector<Index> active;         // per epoch
  std::vector<VectorXd> trajectory;  // parameters at the start of every epoch, then final
  double initial_loss = 0.0;
  double final_loss = 0.0;  // loss of the returned sites
  Index final_active = 0;
  Index epochs_run = 0;
  bool early_stopped = false;
  bool aborted = false;
  Index abort_epoch = -1;
  std::string message;
  Index dropped_edges = 0;   // summed over epochs
  double wall_clock_s = 0.0;
};

struct FitResult {
  SiteSet sites;
  RunReport report;
  VectorXd phi;  // activation of the returned sites
  std::vector<bool> active;
};

/// Moves x back into the feasible set of its mode. Returns x unchanged when feasible.
inline VectorXd constrain_position(const EikonalSolver& solver, const Site& s) {
  if (s.mode == SiteMode::surface) return solver.locator().project_to_boundary(s.x).point;
  const PointLocation loc = solver.locator().locate(s.x);
  return loc.inside ? s.x : loc.point;
}

inline FitResult fit(const EikonalSolver& solver, const LeadFieldOperator& op, const ApTemplate& tpl,
                     const EcgTrace& target, const SiteSet& init, const FitConfig& cfg) {
  if (init.empty()) throw ArgumentError("fit: empty initial site set");
  if (op.n_vertices() != solver.mesh().n_vertices())
    throw ArgumentError("fit: lead-field operator does not match the heart mesh");
  const auto start = std::chrono::steady_clock::now();
  const int d = solver.mesh().dim;
  FitResult res;
  RunReport& rep = res.report;
  res.sites = init;
  for (Site& s : res.sites) s.x = constrain_position(solver, s);

  VectorXd params = pack_sites(res.sites);
  VectorXd lr(params.size());
  const double lr_x = std::isnan(cfg.adam.lr_position) ? cfg.adam.lr : cfg.adam.lr_position;
  const double lr_t = std::isnan(cfg.adam.lr_time) ? cfg.adam.lr : cfg.adam.lr_time;
  for (Index k = 0; k < params.size(); ++k) lr(k) = (k % (d + 1) == d) ? lr_t : lr_x;
  AdamState adam(params.size());

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    Evaluation e;
    try {
      e = evaluate(solver, op, tpl, target, res.sites, cfg.eikonal, true);
    } catch (const NumericalError& err) {
      rep.aborted = true;
      rep.abort_epoch = epoch;
      rep.message = "epoch " + std::to_string(epoch) + ": " + err.what();
      break;
    }
    const VectorXd grad = e.gradient.flatten();
    if (!std::isfinite(e.loss) || !grad.allFinite()) {
      rep.aborted = true;
      rep.abort_epoch = epoch;
      rep.message = "epoch " + std::to_string(epoch) + ": non-finite loss or gradient";
      break;
    }
    if (cfg.record_trajectories) rep.trajectory.push_back(params);
    rep.loss.push_back(e.loss);
    const Index n_active = e.tape.active_sites(res.sites.size());
    rep.active.push_back(n_active);
    rep.dropped_edges += e.gradient.dropped_edges;
    rep.epochs_run = epoch + 1;
    if (cfg.on_epoch) cfg.on_epoch(epoch, e.loss, n_active);

    const VectorXd before = params;
    adam_step(adam, params, grad, lr, cfg.adam);
    unpack_sites(params, res.sites);
    for (std::size_t i = 0; i < res.sites.size(); ++i) {
      const Index off = static_cast<Index>(i) * (d + 1);
      // Untouched sites keep their exact bits; re-projecting them could move them by an ulp.
      if (params.segment(off, d) == before.segment(off, d)) continue;
      res.sites[i].x = constrain_position(solver, res.sites[i]);
      params.segment(off, d) = res.sites[i].x;
    }

    if (cfg.early_stop && static_cast<Index>(rep.loss.size()) > cfg.early_stop_window) {
      const std::size_t n = rep.loss.size();
      if (rep.loss[n - 1 - static_cast<std::size_t>(cfg.early_stop_window)] - rep.loss[n - 1] < cfg.early_stop_tol) {
        rep.early_stopped = true;
        break;
      }
    }
  }
  if (cfg.record_trajectories) rep.trajectory.push_back(params);
  if (!rep.loss.empty()) rep.initial_loss = rep.loss.front();

  if (!rep.aborted) {
    try {
      const Evaluation fin = evaluate(solver, op, tpl, target, res.sites, cfg.eikonal, false);
      rep.final_loss = fin.loss;
      const auto counts = fin.tape.seed_vertex_counts(res.sites.size());
      for (Index c : counts) res.active.push_back(c > 0);
      rep.final_active = fin.tape.active_sites(res.sites.size());
      res.phi = fin.field.phi;
    } catch (const NumericalError& err) {
      rep.aborted = true;
      rep.abort_epoch = rep.epochs_run;
      rep.message = std::string("final evaluation: ") + err.what();
    }
  }
  rep.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

/// Root mean square difference over vertices.
inline double activation_rmse(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0) throw ArgumentError("activation_rmse: size mismatch");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace eikinv
