#pragma once

// Global Hopf-Lax iteration: every sweep solves the local problem on each
// active face in parallel and lowers each vertex to the smallest candidate of
// the faces opposite to it. The argmin that produced each vertex value is
// recorded for the reverse pass.

#include "eikinv/common.hpp"
#include "eikinv/mesh.hpp"
#include "eikinv/parallel.hpp"
#include "eikinv/simplex_opt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace eikinv {

enum class SiteMode { volume, surface };

inline const char* to_string(SiteMode m) { return m == SiteMode::volume ? "volume" : "surface"; }

inline SiteMode site_mode_from_string(const std::string& s) {
  if (s == "volume") return SiteMode::volume;
  if (s == "surface") return SiteMode::surface;
  throw ArgumentError("unknown site mode '" + s + "' (expected volume|surface)");
}

/// An activation site: location x (mm), onset t (ms), and how x is constrained.
struct Site {
  VectorXd x;
  double t = 0.0;
  SiteMode mode = SiteMode::volume;
};

using SiteSet = std::vector<Site>;

struct ActivationField {
  VectorXd phi;
  bool converged = false;
  Index iterations = 0;
  double last_max_decrease = kInf;
  Index local_solves = 0;
};

enum class VertexSource : std::uint8_t { unreached, seed, face };

/// Argmin record of the converged field.
struct SolverTape {
  int dim = 0;
  std::vector<VertexSource> source;
  std::vector<int> seed_site;     // per vertex, owning site when source == seed
  std::vector<Index> winner_face; // per vertex, when source == face
  std::vector<double> alpha;      // d per vertex
  std::vector<double> face_phi;   // d per vertex: Phi used by the winning solve (sentinel for +inf)
  // per site
  std::vector<Index> seed_element;
  std::vector<VectorXd> seed_point;  // location actually used (after projection)
  std::vector<double> seed_time;

  /// Number of vertices each site's seed won.
  std::vector<Index> seed_vertex_counts(std::size_t n_sites) const {
    std::vector<Index> counts(n_sites, 0);
    for (std::size_t v = 0; v < source.size(); ++v)
      if (source[v] == VertexSource::seed) ++counts[static_cast<std::size_t>(seed_site[v])];
    return counts;
  }

  Index active_sites(std::size_t n_sites) const {
    Index n = 0;
    for (Index c : seed_vertex_counts(n_sites)) n += c > 0 ? 1 : 0;
    return n;
  }
};

struct EikonalOptions {
  double epsilon = 1e-4;  // ms
  Index max_iters = 0;    // 0: number of vertices
  int n_f = 0;            // 0: default_iterations over the face table
};

struct SeedResult {
  VectorXd phi;
  std::vector<int> owner;  // per vertex, -1 when not seeded
  std::vector<Index> element;
  std::vector<VectorXd> point;
};

struct ResidualReport {
  double max_violation = -kInf;
  Index vertex = -1;
  VectorXd per_vertex;
};

/// Reusable solver owning one mesh and metric. Precomputation happens once.
class EikonalSolver {
public:
  /// Sentinel weight above which an update that leans on an unreached vertex is discarded.
  static constexpr double kSentinelTolerance = 1e-6;

  EikonalSolver(Mesh mesh, MetricField metric, const PrecomputeOptions& pre = {})
      : mesh_(std::make_shared<const Mesh>(std::move(mesh))),
        metric_(std::make_shared<const MetricField>(std::move(metric))),
        faces_(precompute_faces(*mesh_, *metric_, pre)),
        vertex_faces_(vertex_faces(*mesh_)), locator_(*mesh_) {
    default_n_f_ = default_iterations(std::max(faces_.max_lipschitz, 1e-300),
                                      std::sqrt(2.0), 1e-3);
  }

  EikonalSolver(Mesh mesh, MetricField metric, FaceTable faces)
      : mesh_(std::make_shared<const Mesh>(std::move(mesh))),
        metric_(std::make_shared<const MetricField>(std::move(metric))),
        faces_(std::move(faces)), vertex_faces_(vertex_faces(*mesh_)), locator_(*mesh_) {
    validate_metric(*mesh_, *metric_);
    if (faces_.n_faces != mesh_->n_elements() * (mesh_->dim + 1))
      throw ArgumentError("face table does not match the mesh");
    default_n_f_ = default_iterations(std::max(faces_.max_lipschitz, 1e-300),
                                      std::sqrt(2.0), 1e-3);
  }

  const Mesh& mesh() const { return *mesh_; }
  const MetricField& metric() const { return *metric_; }
  const FaceTable& faces() const { return faces_; }
  const PointLocator& locator() const { return locator_; }
  int default_n_f() const { return default_n_f_; }

  /// Location used for a site: surface sites go to the nearest boundary point,
  /// volume sites outside the mesh to the nearest mesh point.
  PointLocation place(const Site& s) const {
    if (s.mode == SiteMode::surface) return locator_.project_to_boundary(s.x);
    return locator_.locate(s.x);
  }

  SeedResult seed(const SiteSet& sites) const {
    if (sites.empty()) throw ArgumentError("seed: empty site set");
    const Mesh& m = *mesh_;
    SeedResult r;
    r.phi = VectorXd::Constant(m.n_vertices(), kInf);
    r.owner.assign(static_cast<std::size_t>(m.n_vertices()), -1);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (sites[i].x.size() != m.dim) throw ArgumentError("site has wrong dimension");
      if (!sites[i].x.allFinite() || !std::isfinite(sites[i].t))
        throw NumericalError("site " + std::to_string(i) + " has non-finite parameters");
      const PointLocation loc = place(sites[i]);
      r.element.push_back(loc.element);
      r.point.push_back(loc.point);
      const MatrixXd& D = (*metric_)[loc.element];
      for (int n = 0; n <= m.dim; ++n) {
        const int v = m.elements(n, loc.element);
        const double val = sites[i].t + metric_norm(D, m.vertices.col(v) - loc.point);
        if (val < r.phi(v)) {
          r.phi(v) = val;
          r.owner[static_cast<std::size_t>(v)] = static_cast<int>(i);
        }
      }
    }
    return r;
  }

  ActivationField solve(const SiteSet& sites, const EikonalOptions& opts = {},
                        SolverTape* tape = nullptr) const {
    if (!(opts.epsilon > 0.0)) throw ArgumentError("solve: epsilon must be positive");
    switch (mesh_->dim) {
      case 2: return solve_impl<2>(sites, opts, tape);
      case 3: return solve_impl<3>(sites, opts, tape);
      default: return solve_impl<Eigen::Dynamic>(sites, opts, tape);
    }
  }

  /// One full sweep of local updates from `phi`; per-vertex phi - min candidate.
  ResidualReport residual(const VectorXd& phi, int n_f = 0) const {
    const int nf = n_f > 0 ? n_f : default_n_f_;
    std::vector<double> cand(static_cast<std::size_t>(faces_.n_faces));
    std::vector<char> all_active(static_cast<std::size_t>(faces_.n_faces), 1);
    std::vector<double> scratch_alpha(static_cast<std::size_t>(faces_.n_faces * faces_.dim));
    std::vector<double> scratch_phi(scratch_alpha.size());
    switch (mesh_->dim) {
      case 2: sweep<2>(phi, all_active, nf, cand, scratch_alpha, scratch_phi); break;
      case 3: sweep<3>(phi, all_active, nf, cand, scratch_alpha, scratch_phi); break;
      default: sweep<Eigen::Dynamic>(phi, all_active, nf, cand, scratch_alpha, scratch_phi);
    }
    ResidualReport rep;
    rep.per_vertex = VectorXd::Constant(phi.size(), -kInf);
    for (Index v = 0; v < phi.size(); ++v) {
      double best = kInf;
      for (Index k = vertex_faces_.offsets[static_cast<std::size_t>(v)];
           k < vertex_faces_.offsets[static_cast<std::size_t>(v) + 1]; ++k)
        best = std::min(best, cand[static_cast<std::size_t>(vertex_faces_.faces[static_cast<std::size_t>(k)])]);
      if (std::isinf(phi(v)) && std::isinf(best)) continue;
      const double viol = phi(v) - best;
      rep.per_vertex(v) = viol;
      if (viol > rep.max_violation) {
        rep.max_violation = viol;
        rep.vertex = v;
      }
    }
    return rep;
  }

private:
  template <int Dim>
  void sweep(const VectorXd& phi, const std::vector<char>& active, int n_f,
             std::vector<double>& cand, std::vector<double>& cand_alpha,
             std::vector<double>& cand_phi) const {
    using Mat = Eigen::Matrix<double, Dim, Dim>;
    using Vec = Eigen::Matrix<double, Dim, 1>;
    const int d = faces_.dim;
    parallel_for(faces_.n_faces, [&](Index f) {
      const auto fu = static_cast<std::size_t>(f);
      if (!active[fu]) {
        cand[fu] = kInf;
        return;
      }
      Vec face_phi(d);
      bool any_finite = false;
      for (int n = 0; n < d; ++n) {
        face_phi[n] = phi(faces_.face_vertices[fu * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)]);
        any_finite = any_finite || std::isfinite(face_phi[n]);
      }
      if (!any_finite) {
        cand[fu] = kInf;
        return;
      }
      const Eigen::Map<const Mat> A(faces_.A.data() + f * d * d, d, d);
      const auto sol = solve_local_t<Dim>(A, faces_.lipschitz[fu], face_phi, n_f);
      if (sol.sentinel_weight > kSentinelTolerance) {
        cand[fu] = kInf;
        return;
      }
      cand[fu] = sol.value;
      double lowest = kInf;
      for (int n = 0; n < d; ++n) lowest = std::min(lowest, face_phi[n]);
      for (int n = 0; n < d; ++n) {
        cand_alpha[fu * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)] = sol.alpha[n];
        // record what the solve used: unreached entries carry the sentinel
        cand_phi[fu * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)] =
            std::isfinite(face_phi[n]) ? face_phi[n] : lowest + kUnreachedSentinel;
      }
    });
  }

  template <int Dim>
  ActivationField solve_impl(const SiteSet& sites, const EikonalOptions& opts,
                             SolverTape* tape) const {
    const Mesh& m = *mesh_;
    const int d = m.dim;
    const Index n_v = m.n_vertices();
    const Index n_e = m.n_elements();
    const auto nf_count = static_cast<std::size_t>(faces_.n_faces);
    const int n_f = opts.n_f > 0 ? opts.n_f : default_n_f_;
    const Index max_iters = opts.max_iters > 0 ? opts.max_iters : n_v;

    const SeedResult seeded = seed(sites);
    ActivationField field;
    field.phi = seeded.phi;

    std::vector<VertexSource> source(static_cast<std::size_t>(n_v), VertexSource::unreached);
    std::vector<Index> winner(static_cast<std::size_t>(n_v), -1);
    std::vector<double> win_alpha(static_cast<std::size_t>(n_v * d), 0.0);
    std::vector<double> win_phi(static_cast<std::size_t>(n_v * d), 0.0);
    std::vector<char> decreased(static_cast<std::size_t>(n_v), 0);
    for (Index v = 0; v < n_v; ++v)
      if (seeded.owner[static_cast<std::size_t>(v)] >= 0) {
        source[static_cast<std::size_t>(v)] = VertexSource::seed;
        decreased[static_cast<std::size_t>(v)] = 1;
      }

    std::vector<double> cand(nf_count, kInf);
    std::vector<double> cand_alpha(nf_count * static_cast<std::size_t>(d), 0.0);
    std::vector<double> cand_phi(nf_count * static_cast<std::size_t>(d), 0.0);
    std::vector<char> active(nf_count, 0);
    std::vector<double> decrease(static_cast<std::size_t>(n_v), 0.0);

    for (Index it = 1; it <= max_iters; ++it) {
      // A face is active when any vertex of its element dropped by >= epsilon last sweep.
      Index n_active = 0;
      for (Index j = 0; j < n_e; ++j) {
        bool any = false;
        for (int n = 0; n <= d; ++n) any = any || decreased[static_cast<std::size_t>(m.elements(n, j))];
        for (int i = 0; i <= d; ++i) active[static_cast<std::size_t>(j * (d + 1) + i)] = any;
        n_active += any ? d + 1 : 0;
      }
      field.local_solves += n_active;
      sweep<Dim>(field.phi, active, n_f, cand, cand_alpha, cand_phi);

      parallel_for(n_v, [&](Index v) {
        const auto vu = static_cast<std::size_t>(v);
        double best = kInf;
        Index best_face = -1;
        for (Index k = vertex_faces_.offsets[vu]; k < vertex_faces_.offsets[vu + 1]; ++k) {
          const Index f = vertex_faces_.faces[static_cast<std::size_t>(k)];
          if (cand[static_cast<std::size_t>(f)] < best) {
            best = cand[static_cast<std::size_t>(f)];
            best_face = f;
          }
        }
        decrease[vu] = 0.0;
        if (best < field.phi(v)) {
          decrease[vu] = field.phi(v) - best;
          field.phi(v) = best;
          source[vu] = VertexSource::face;
          winner[vu] = best_face;
          const auto fu = static_cast<std::size_t>(best_face);
          for (int n = 0; n < d; ++n) {
            win_alpha[vu * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)] =
                cand_alpha[fu * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)];
            win_phi[vu * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)] =
                cand_phi[fu * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)];
          }
        }
        decreased[vu] = decrease[vu] >= opts.epsilon;
      });

      double max_dec = 0.0;
      for (double x : decrease) max_dec = std::max(max_dec, x);
      field.iterations = it;
      field.last_max_decrease = max_dec;
      if (max_dec < opts.epsilon) {
        field.converged = true;
        break;
      }
    }

    if (tape) {
      tape->dim = d;
      tape->source = std::move(source);
      tape->seed_site.assign(static_cast<std::size_t>(n_v), -1);
      for (Index v = 0; v < n_v; ++v)
        if (tape->source[static_cast<std::size_t>(v)] == VertexSource::seed)
          tape->seed_site[static_cast<std::size_t>(v)] = seeded.owner[static_cast<std::size_t>(v)];
      tape->winner_face = std::move(winner);
      tape->alpha = std::move(win_alpha);
      tape->face_phi = std::move(win_phi);
      tape->seed_element = seeded.element;
      tape->seed_point = seeded.point;
      tape->seed_time.clear();
      for (const auto& s : sites) tape->seed_time.push_back(s.t);
    }
    return field;
  }

  std::shared_ptr<const Mesh> mesh_;
  std::shared_ptr<const MetricField> metric_;
  FaceTable faces_;
  VertexFaces vertex_faces_;
  PointLocator locator_;
  int default_n_f_ = 50;
};

/// Free-function form: precomputes faces, solves once.
inline ActivationField solve_eikonal(const Mesh& mesh, const MetricField& metric,
                                     const SiteSet& sites, const EikonalOptions& opts = {},
                                     SolverTape* tape = nullptr) {
  EikonalSolver solver(mesh, metric);
  return solver.solve(sites, opts, tape);
}

/// Winning-face vertices that carry weight > 1e-6 but are not strictly earlier.
inline Index count_causality_violations(const EikonalSolver& solver, const ActivationField& field,
                                        const SolverTape& tape) {
  const int d = tape.dim;
  Index count = 0;
  for (std::size_t v = 0; v < tape.source.size(); ++v) {
    if (tape.source[v] != VertexSource::face) continue;
    const auto f = static_cast<std::size_t>(tape.winner_face[v]);
    for (int n = 0; n < d; ++n) {
      if (tape.alpha[v * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)] <= 1e-6) continue;
      const int u = solver.faces().face_vertices[f * static_cast<std::size_t>(d) + static_cast<std::size_t>(n)];
      if (field.phi(u) >= field.phi(static_cast<Index>(v)) + 1e-9) ++count;
    }
  }
  return count;
}

}  // namespace eikinv
