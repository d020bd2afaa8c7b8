#pragma once

// Reverse pass over the converged argmin DAG. Each vertex hands its cotangent
// to the vertices of its winning face, weighted by the face's barycentric
// minimizer; seed vertices turn the cotangent into site derivatives through
// phi = t + ||v - x||_D. The dependence of the minimizer on the sites is not
// differentiated (first variation of the geodesic length vanishes).

#include "eikinv/common.hpp"
#include "eikinv/eikonal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

namespace eikinv {

struct Gradient {
  std::vector<VectorXd> dx;  // ms/mm per site
  std::vector<double> dt;    // dimensionless per site
  std::vector<bool> active;
  Index dropped_edges = 0;   // winner edges skipped to break cycles

  VectorXd flatten() const {
    if (dx.empty()) return {};
    const auto d = dx.front().size();
    VectorXd out(static_cast<Index>(dx.size()) * (d + 1));
    for (std::size_t i = 0; i < dx.size(); ++i) {
      out.segment(static_cast<Index>(i) * (d + 1), d) = dx[i];
      out(static_cast<Index>(i) * (d + 1) + d) = dt[i];
    }
    return out;
  }
};

/// Derivative of t + ||v - x||_D with respect to x. Zero at v == x.
inline VectorXd seed_position_derivative(const MatrixXd& D, const VectorXd& v, const VectorXd& x) {
  const VectorXd diff = v - x;
  const double norm = metric_norm(D, diff);
  if (norm < 1e-14) return VectorXd::Zero(v.size());
  return -(D * diff) / norm;
}

struct BackwardOptions {
  bool strict = false;  // throw on winner cycles instead of dropping edges
};

inline Gradient backward(const EikonalSolver& solver, const ActivationField& field,
                         const SolverTape& tape, std::size_t n_sites, const VectorXd& cotangent,
                         const BackwardOptions& opts = {}) {
  const Mesh& mesh = solver.mesh();
  const int d = mesh.dim;
  const Index n_v = mesh.n_vertices();
  if (cotangent.size() != n_v) throw ArgumentError("backward: cotangent size mismatch");
  if (tape.source.size() != static_cast<std::size_t>(n_v))
    throw ArgumentError("backward: tape does not match the mesh");

  Gradient g;
  g.dx.assign(n_sites, VectorXd::Zero(d));
  g.dt.assign(n_sites, 0.0);
  const auto counts = tape.seed_vertex_counts(n_sites);
  for (Index c : counts) g.active.push_back(c > 0);

  // Reverse topological order of the winner graph, highest (phi, id) first among
  // ready vertices. On obtuse elements a winner may lean on a vertex with larger
  // phi, so plain phi order is not enough. If only cycles remain, the highest
  // remaining vertex is forced and cotangent arriving at it later is dropped.
  auto winner_vertex = [&](std::size_t vu, int n) {
    const auto f = static_cast<std::size_t>(tape.winner_face[vu]);
    return solver.faces().face_vertices[f * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)];
  };
  auto weight = [&](std::size_t vu, int n) {
    return tape.alpha[vu * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)];
  };
  auto has_edges = [&](Index v) {
    return std::isfinite(field.phi(v)) && tape.source[static_cast<std::size_t>(v)] == VertexSource::face;
  };
  std::vector<Index> indegree(static_cast<std::size_t>(n_v), 0);
  for (Index v = 0; v < n_v; ++v) {
    if (!has_edges(v)) continue;
    for (int n = 0; n < d; ++n)
      if (weight(static_cast<std::size_t>(v), n) != 0.0)
        ++indegree[static_cast<std::size_t>(winner_vertex(static_cast<std::size_t>(v), n))];
  }
  auto before = [&](Index a, Index b) {  // true when a is processed after b
    if (field.phi(a) != field.phi(b)) return field.phi(a) < field.phi(b);
    return a < b;
  };
  std::priority_queue<Index, std::vector<Index>, decltype(before)> ready(before);
  std::vector<Index> remaining;  // sorted by processing priority, for forced picks
  for (Index v = 0; v < n_v; ++v) {
    if (!std::isfinite(field.phi(v))) continue;
    remaining.push_back(v);
    if (indegree[static_cast<std::size_t>(v)] == 0) ready.push(v);
  }
  std::sort(remaining.begin(), remaining.end(), [&](Index a, Index b) { return before(b, a); });
  std::size_t next_forced = 0;

  VectorXd adj = cotangent;
  std::vector<char> done(static_cast<std::size_t>(n_v), 0);
  std::vector<Index> offending;
  for (std::size_t processed = 0; processed < remaining.size(); ++processed) {
    Index v = -1;
    while (!ready.empty() && done[static_cast<std::size_t>(ready.top())]) ready.pop();
    if (!ready.empty()) {
      v = ready.top();
      ready.pop();
    } else {
      while (done[static_cast<std::size_t>(remaining[next_forced])]) ++next_forced;
      v = remaining[next_forced];
      offending.push_back(v);
    }
    const auto vu = static_cast<std::size_t>(v);
    done[vu] = 1;
    const double c = adj(v);
    if (tape.source[vu] == VertexSource::face) {
      for (int n = 0; n < d; ++n) {
        const double a = weight(vu, n);
        if (a == 0.0) continue;
        const auto u = static_cast<std::size_t>(winner_vertex(vu, n));
        if (done[u]) {
          ++g.dropped_edges;
          continue;
        }
        adj(static_cast<Index>(u)) += a * c;
        if (--indegree[u] == 0) ready.push(static_cast<Index>(u));
      }
    } else if (tape.source[vu] == VertexSource::seed && c != 0.0) {
      const auto i = static_cast<std::size_t>(tape.seed_site[vu]);
      g.dt[i] += c;
      const MatrixXd& D = solver.metric()[tape.seed_element[i]];
      g.dx[i] += c * seed_position_derivative(D, mesh.vertices.col(v), tape.seed_point[i]);
    }
  }
  if (opts.strict && g.dropped_edges > 0) {
    std::string msg = "backward: cycle in tape through vertices";
    for (std::size_t k = 0; k < std::min<std::size_t>(offending.size(), 10); ++k)
      msg += " " + std::to_string(offending[k]);
    throw NumericalError(msg);
  }
  return g;
}

/// Scalar loss of the activation field; writes dLoss/dphi when `grad` is non-null.
using FieldLoss = std::function<double(const VectorXd& phi, VectorXd* grad)>;

/// 1/2 sum_v w_v (phi_v - ref_v)^2 over reached vertices.
inline FieldLoss quadratic_field_loss(VectorXd reference, VectorXd weights) {
  return [ref = std::move(reference), w = std::move(weights)](const VectorXd& phi, VectorXd* grad) {
    double total = 0.0;
    if (grad) *grad = VectorXd::Zero(phi.size());
    for (Index v = 0; v < phi.size(); ++v) {
      if (!std::isfinite(phi(v))) continue;
      const double r = phi(v) - ref(v);
      total += 0.5 * w(v) * r * r;
      if (grad) (*grad)(v) = w(v) * r;
    }
    return total;
  };
}

struct GradcheckOptions {
  double step_x = 1e-3;  // mm
  double step_t = 1e-3;  // ms
  double floor = 1e-8;
  // The reverse pass relies on exact local minimizers (the minimizer's own
  // derivative is dropped), so the check runs the local solver well past the default.
  EikonalOptions eikonal{1e-10, 0, 500};
};

struct GradcheckEntry {
  std::size_t site = 0;
  int parameter = 0;  // 0..d-1 position, d timing
  double analytic = 0.0;
  double finite_difference = 0.0;
  bool switched = false;  // the +/- solves changed some argmin
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error_x = 0.0;  // per-site vector error, excluding switched steps
  double max_rel_error_t = 0.0;
  Index switched_steps = 0;
  Index dropped_edges = 0;
};

inline bool same_argmin(const SolverTape& a, const SolverTape& b) {
  return a.source == b.source && a.winner_face == b.winner_face && a.seed_site == b.seed_site &&
         a.seed_element == b.seed_element;
}

/// Compares backward() with central finite differences of the full forward solve.
/// Position errors use the per-site vector norm: ||g - fd|| / max(||fd||, floor).
inline GradcheckReport gradcheck(const EikonalSolver& solver, const SiteSet& sites,
                                 const FieldLoss& loss, const GradcheckOptions& opts = {}) {
  const int d = solver.mesh().dim;
  SolverTape base_tape;
  const ActivationField base = solver.solve(sites, opts.eikonal, &base_tape);
  if (!base.converged) throw NumericalError("gradcheck: forward solve did not converge");
  VectorXd seed_grad;
  loss(base.phi, &seed_grad);
  const Gradient g = backward(solver, base, base_tape, sites.size(), seed_grad);

  GradcheckReport rep;
  rep.dropped_edges = g.dropped_edges;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    VectorXd fd_x(d);
    bool any_switch_x = false;
    for (int p = 0; p <= d; ++p) {
      const double h = p < d ? opts.step_x : opts.step_t;
      auto eval = [&](double sign, SolverTape& tape) {
        SiteSet s = sites;
        if (p < d)
          s[i].x(p) += sign * h;
        else
          s[i].t += sign * h;
        const ActivationField f = solver.solve(s, opts.eikonal, &tape);
        if (!f.converged) throw NumericalError("gradcheck: perturbed solve did not converge");
        return loss(f.phi, nullptr);
      };
      SolverTape tp, tm;
      const double lp = eval(+1.0, tp);
      const double lm = eval(-1.0, tm);
      GradcheckEntry e;
      e.site = i;
      e.parameter = p;
      e.analytic = p < d ? g.dx[i](p) : g.dt[i];
      e.finite_difference = (lp - lm) / (2.0 * h);
      e.switched = !same_argmin(tp, base_tape) || !same_argmin(tm, base_tape);
      rep.switched_steps += e.switched ? 1 : 0;
      rep.entries.push_back(e);
      if (p < d) {
        fd_x(p) = e.finite_difference;
        any_switch_x = any_switch_x || e.switched;
      } else if (!e.switched) {
        const double rel = std::abs(e.analytic - e.finite_difference) /
                           std::max(std::abs(e.finite_difference), opts.floor);
        rep.max_rel_error_t = std::max(rep.max_rel_error_t, rel);
      }
    }
    if (!any_switch_x) {
      const double rel = (g.dx[i] - fd_x).norm() / std::max(fd_x.norm(), opts.floor);
      rep.max_rel_error_x = std::max(rep.max_rel_error_x, rel);
    }
  }
  return rep;
}

}  // namespace eikinv
