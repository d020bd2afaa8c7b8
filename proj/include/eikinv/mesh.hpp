#pragma once

#include "eikinv/common.hpp"
#include "eikinv/parallel.hpp"
#include "eikinv/simplex_opt.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace eikinv {

using ElementMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

/// Simplicial triangulation. Vertices are stored column-wise (dim x n_v),
/// elements column-wise as (dim+1) x n_e vertex indices. Coordinates in mm.
struct Mesh {
  int dim = 0;
  MatrixXd vertices;
  ElementMatrix elements;
  std::vector<int> labels;  // optional per-element region tags

  Index n_vertices() const { return vertices.cols(); }
  Index n_elements() const { return elements.cols(); }
  VectorXd vertex(Index v) const { return vertices.col(v); }

  MatrixXd element_vertices(Index j) const {
    MatrixXd out(dim, dim + 1);
    for (int n = 0; n <= dim; ++n) out.col(n) = vertices.col(elements(n, j));
    return out;
  }
};

/// Piecewise-constant s.p.d. metric, one d x d tensor per element
/// (squared slowness, (ms/mm)^2).
struct MetricField {
  std::vector<MatrixXd> tensors;

  static MetricField constant(const Mesh& mesh, const MatrixXd& D) {
    return MetricField{std::vector<MatrixXd>(static_cast<std::size_t>(mesh.n_elements()), D)};
  }
  const MatrixXd& operator[](Index j) const { return tensors[static_cast<std::size_t>(j)]; }
  Index size() const { return static_cast<Index>(tensors.size()); }
};

inline double factorial(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

inline double simplex_volume(const MatrixXd& verts) {
  const auto d = verts.rows();
  MatrixXd edges(d, d);
  for (Index n = 0; n < d; ++n) edges.col(n) = verts.col(n + 1) - verts.col(0);
  return std::abs(edges.determinant()) / factorial(static_cast<int>(d));
}

inline double element_volume(const Mesh& mesh, Index j) {
  return simplex_volume(mesh.element_vertices(j));
}

inline double longest_edge(const MatrixXd& verts) {
  double best = 0.0;
  for (Index a = 0; a < verts.cols(); ++a)
    for (Index b = a + 1; b < verts.cols(); ++b)
      best = std::max(best, (verts.col(a) - verts.col(b)).norm());
  return best;
}

/// Checks every structural invariant; throws MeshError naming the first offender.
inline void validate_mesh(const Mesh& mesh) {
  if (mesh.dim < 2) throw MeshError("mesh dimension must be >= 2, got " + std::to_string(mesh.dim));
  if (mesh.vertices.rows() != mesh.dim)
    throw MeshError("vertex coordinates must have dimension " + std::to_string(mesh.dim));
  if (mesh.elements.rows() != mesh.dim + 1)
    throw MeshError("elements must have " + std::to_string(mesh.dim + 1) + " vertices");
  if (mesh.n_elements() == 0) throw MeshError("mesh has no elements");
  if (!mesh.labels.empty() && static_cast<Index>(mesh.labels.size()) != mesh.n_elements())
    throw MeshError("labels must have one entry per element");
  for (Index j = 0; j < mesh.n_elements(); ++j) {
    for (int n = 0; n <= mesh.dim; ++n) {
      const int v = mesh.elements(n, j);
      if (v < 0 || v >= mesh.n_vertices())
        throw MeshError("element " + std::to_string(j) + " references vertex " + std::to_string(v) +
                        " out of range [0, " + std::to_string(mesh.n_vertices()) + ")");
      for (int m = 0; m < n; ++m)
        if (mesh.elements(m, j) == v)
          throw MeshError("element " + std::to_string(j) + " repeats vertex " + std::to_string(v));
    }
    const MatrixXd verts = mesh.element_vertices(j);
    const double vol = simplex_volume(verts);
    if (!(vol >= 1e-12 * std::pow(longest_edge(verts), mesh.dim)))
      throw MeshError("element " + std::to_string(j) + " is degenerate (volume " +
                      std::to_string(vol) + ")");
  }
}

inline void validate_metric(const Mesh& mesh, const MetricField& metric) {
  if (metric.size() != mesh.n_elements())
    throw MeshError("metric has " + std::to_string(metric.size()) + " tensors for " +
                    std::to_string(mesh.n_elements()) + " elements");
  for (Index j = 0; j < metric.size(); ++j) {
    const MatrixXd& D = metric[j];
    if (D.rows() != mesh.dim || D.cols() != mesh.dim)
      throw MeshError("metric tensor of element " + std::to_string(j) + " has wrong shape");
    if (!D.isApprox(D.transpose(), 1e-12) || !D.allFinite())
      throw MeshError("metric tensor of element " + std::to_string(j) + " is not symmetric");
    Eigen::LLT<MatrixXd> llt(D);
    if (llt.info() != Eigen::Success)
      throw MeshError("metric tensor of element " + std::to_string(j) + " is not positive definite");
  }
}

inline double mesh_diameter(const Mesh& mesh) {
  const VectorXd lo = mesh.vertices.rowwise().minCoeff();
  const VectorXd hi = mesh.vertices.rowwise().maxCoeff();
  return (hi - lo).norm();
}

/// Symmetric principal square root via eigendecomposition.
inline MatrixXd spd_sqrt(const MatrixXd& D) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(D);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0)
    throw MeshError("tensor is not symmetric positive definite");
  return eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------
// Per-face precomputation
// ---------------------------------------------------------------------------

/// One (element, opposite vertex) pair with everything the local solve needs.
struct FacePrecomp {
  MatrixXd A;
  double lipschitz = 0.0;
  double h_lower = 0.0;
  std::vector<int> face_vertices;
  int opposite = -1;
};

/// Struct-of-arrays storage for all (d+1) n_e faces. Face id f = j (d+1) + i,
/// where i is the local index of the opposite vertex in element j; the face
/// vertices keep the element's vertex order with i removed.
struct FaceTable {
  int dim = 0;
  Index n_faces = 0;
  std::vector<double> A;  // d*d per face, column-major
  std::vector<double> lipschitz;
  std::vector<double> h_lower;
  std::vector<int> face_vertices;  // d per face
  std::vector<int> opposite;
  double max_lipschitz = 0.0;
  Index large_lipschitz_count = 0;  // faces with L > 1e6

  Index element_of(Index f) const { return f / (dim + 1); }

  Eigen::Map<const MatrixXd> A_of(Index f) const {
    return Eigen::Map<const MatrixXd>(A.data() + f * dim * dim, dim, dim);
  }

  FacePrecomp face(Index f) const {
    FacePrecomp out;
    out.A = A_of(f);
    out.lipschitz = lipschitz[static_cast<std::size_t>(f)];
    out.h_lower = h_lower[static_cast<std::size_t>(f)];
    out.face_vertices.assign(face_vertices.begin() + f * dim, face_vertices.begin() + (f + 1) * dim);
    out.opposite = opposite[static_cast<std::size_t>(f)];
    return out;
  }
};

/// Lipschitz bound of grad ||A a|| given a lower bound h_lower of ||A a|| on the simplex:
/// ||A^T A|| / h (1 + ||A|| / h).
inline double lipschitz_bound(double sigma_max, double h_lower) {
  return sigma_max * sigma_max / h_lower * (1.0 + sigma_max / h_lower);
}

struct PrecomputeOptions {
  /// Re-estimate h_lower as h(alpha*)/1.1 with alpha* from the local solver at Phi = 0.
  bool tighten = true;
};

/// Face geometry for one face: A = D^{1/2} [v_1 - v_i, ..., v_d - v_i], analytic bounds,
/// then optional tightening.
inline FacePrecomp precompute_face(const MatrixXd& sqrtD, const MatrixXd& verts, int local_opposite,
                                   bool tighten) {
  const auto d = static_cast<int>(verts.rows());
  MatrixXd edges(d, d);
  int col = 0;
  for (int n = 0; n <= d; ++n) {
    if (n == local_opposite) continue;
    edges.col(col++) = verts.col(n) - verts.col(local_opposite);
  }
  FacePrecomp fp;
  fp.A = sqrtD * edges;
  Eigen::JacobiSVD<MatrixXd> svd(fp.A);
  const double sigma_max = svd.singularValues()(0);
  const double sigma_min = svd.singularValues()(d - 1);
  fp.h_lower = sigma_min / (d * std::sqrt(static_cast<double>(d)));
  fp.lipschitz = lipschitz_bound(sigma_max, fp.h_lower);
  if (tighten) {
    // 1% of the analytic lower bound; alpha_0 - alpha* is at most 1 in norm.
    const long k = fista_iteration_bound(fp.lipschitz, 1.0, 0.01 * fp.h_lower);
    const int iters = static_cast<int>(std::clamp(k, 50L, 5000L));
    const auto sol = solve_local(fp.A, fp.lipschitz, VectorXd::Zero(d), iters);
    fp.h_lower = (fp.A * sol.alpha).norm() / 1.1;
    fp.lipschitz = lipschitz_bound(sigma_max, fp.h_lower);
  }
  return fp;
}

inline FaceTable precompute_faces(const Mesh& mesh, const MetricField& metric,
                                  const PrecomputeOptions& opts = {}) {
  validate_metric(mesh, metric);
  const int d = mesh.dim;
  const Index n_e = mesh.n_elements();
  FaceTable t;
  t.dim = d;
  t.n_faces = n_e * (d + 1);
  const auto nf = static_cast<std::size_t>(t.n_faces);
  t.A.resize(nf * static_cast<std::size_t>(d * d));
  t.lipschitz.resize(nf);
  t.h_lower.resize(nf);
  t.face_vertices.resize(nf * static_cast<std::size_t>(d));
  t.opposite.resize(nf);

  parallel_for(n_e, [&](Index j) {
    const MatrixXd sqrtD = spd_sqrt(metric[j]);
    const MatrixXd verts = mesh.element_vertices(j);
    for (int i = 0; i <= d; ++i) {
      const Index f = j * (d + 1) + i;
      const FacePrecomp fp = precompute_face(sqrtD, verts, i, opts.tighten);
      std::copy(fp.A.data(), fp.A.data() + d * d, t.A.begin() + f * d * d);
      t.lipschitz[static_cast<std::size_t>(f)] = fp.lipschitz;
      t.h_lower[static_cast<std::size_t>(f)] = fp.h_lower;
      int col = 0;
      for (int n = 0; n <= d; ++n)
        if (n != i) t.face_vertices[static_cast<std::size_t>(f * d + col++)] = mesh.elements(n, j);
      t.opposite[static_cast<std::size_t>(f)] = mesh.elements(i, j);
    }
  });

  for (double L : t.lipschitz) {
    t.max_lipschitz = std::max(t.max_lipschitz, L);
    if (L > 1e6) ++t.large_lipschitz_count;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Point location
// ---------------------------------------------------------------------------

/// Closest point of a simplex (columns of `verts`, k+1 points in R^d, k <= d) to x,
/// by enumerating every face and keeping the best feasible affine projection.
/// Returns barycentric weights over the columns of `verts`.
inline VectorXd closest_point_barycentric(const MatrixXd& verts, const VectorXd& x) {
  const auto m = static_cast<int>(verts.cols());
  VectorXd best_bary = VectorXd::Zero(m);
  double best_dist = kInf;
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    std::vector<int> idx;
    for (int n = 0; n < m; ++n)
      if (mask & (1u << n)) idx.push_back(n);
    const auto k = static_cast<int>(idx.size());
    VectorXd mu(k);
    if (k == 1) {
      mu(0) = 1.0;
    } else {
      MatrixXd E(verts.rows(), k - 1);
      for (int c = 1; c < k; ++c) E.col(c - 1) = verts.col(idx[c]) - verts.col(idx[0]);
      const VectorXd rhs = x - verts.col(idx[0]);
      const VectorXd coef = E.colPivHouseholderQr().solve(rhs);
      mu(0) = 1.0 - coef.sum();
      mu.tail(k - 1) = coef;
      if (mu.minCoeff() < -1e-12) continue;
      mu = mu.cwiseMax(0.0);
      mu /= mu.sum();
    }
    VectorXd p = VectorXd::Zero(verts.rows());
    for (int c = 0; c < k; ++c) p += mu(c) * verts.col(idx[c]);
    const double dist = (p - x).norm();
    if (dist < best_dist) {
      best_dist = dist;
      best_bary.setZero();
      for (int c = 0; c < k; ++c) best_bary(idx[c]) = mu(c);
    }
  }
  return best_bary;
}

struct PointLocation {
  Index element = -1;
  VectorXd barycentric;  // d+1 weights over the element's vertices
  VectorXd point;        // the located point (equals the query when inside)
  bool inside = false;
  double distance = 0.0;  // from query to point
};

/// A (d-1)-facet that belongs to exactly one element.
struct BoundaryFacet {
  Index element;
  int local_opposite;
};

/// Brute-force point locator with per-element affine maps and bounding spheres.
class PointLocator {
public:
  static constexpr double kInsideTol = 1e-9;

  explicit PointLocator(const Mesh& mesh) : mesh_(&mesh) {
    const int d = mesh.dim;
    const Index n_e = mesh.n_elements();
    inverse_.resize(static_cast<std::size_t>(n_e));
    centers_.resize(d, n_e);
    radii_.resize(n_e);
    for (Index j = 0; j < n_e; ++j) {
      const MatrixXd verts = mesh.element_vertices(j);
      MatrixXd T(d, d);
      for (int n = 0; n < d; ++n) T.col(n) = verts.col(n + 1) - verts.col(0);
      inverse_[static_cast<std::size_t>(j)] = T.inverse();
      centers_.col(j) = verts.rowwise().mean();
      double r = 0.0;
      for (int n = 0; n <= d; ++n) r = std::max(r, (verts.col(n) - centers_.col(j)).norm());
      radii_(j) = r;
    }
    build_boundary();
  }

  const std::vector<BoundaryFacet>& boundary() const { return boundary_; }

  VectorXd barycentric(Index j, const VectorXd& x) const {
    const int d = mesh_->dim;
    const VectorXd local =
        inverse_[static_cast<std::size_t>(j)] * (x - mesh_->vertices.col(mesh_->elements(0, j)));
    VectorXd bary(d + 1);
    bary(0) = 1.0 - local.sum();
    bary.tail(d) = local;
    return bary;
  }

  /// Containing element (lowest id among those within tolerance) or the closest mesh point.
  PointLocation locate(const VectorXd& x) const {
    if (x.size() != mesh_->dim) throw ArgumentError("locate_point: point has wrong dimension");
    for (Index j = 0; j < mesh_->n_elements(); ++j) {
      if ((x - centers_.col(j)).norm() > radii_(j) * (1.0 + 1e-9) + 1e-12) continue;
      VectorXd bary = barycentric(j, x);
      if (bary.minCoeff() >= -kInsideTol) {
        PointLocation loc;
        loc.element = j;
        loc.barycentric = bary;
        loc.point = x;
        loc.inside = true;
        return loc;
      }
    }
    return closest_over_elements(x);
  }

  /// Closest point on the boundary; the element is the facet's owner.
  PointLocation project_to_boundary(const VectorXd& x) const {
    PointLocation best;
    best.distance = kInf;
    const int d = mesh_->dim;
    for (const auto& bf : boundary_) {
      const Index j = bf.element;
      if ((x - centers_.col(j)).norm() - radii_(j) > best.distance) continue;
      MatrixXd verts(d, d);
      int col = 0;
      for (int n = 0; n <= d; ++n)
        if (n != bf.local_opposite) verts.col(col++) = mesh_->vertices.col(mesh_->elements(n, j));
      const VectorXd mu = closest_point_barycentric(verts, x);
      const VectorXd p = verts * mu;
      const double dist = (p - x).norm();
      if (dist < best.distance) {
        best.distance = dist;
        best.element = j;
        best.point = p;
        best.barycentric = VectorXd::Zero(d + 1);
        col = 0;
        for (int n = 0; n <= d; ++n)
          if (n != bf.local_opposite) best.barycentric(n) = mu(col++);
      }
    }
    best.inside = best.distance == 0.0;
    return best;
  }

  double distance_to_boundary(const VectorXd& x) const { return project_to_boundary(x).distance; }

private:
  PointLocation closest_over_elements(const VectorXd& x) const {
    PointLocation best;
    best.distance = kInf;
    for (Index j = 0; j < mesh_->n_elements(); ++j) {
      if ((x - centers_.col(j)).norm() - radii_(j) > best.distance) continue;
      const MatrixXd verts = mesh_->element_vertices(j);
      const VectorXd bary = closest_point_barycentric(verts, x);
      const VectorXd p = verts * bary;
      const double dist = (p - x).norm();
      if (dist < best.distance) {
        best.distance = dist;
        best.element = j;
        best.barycentric = bary;
        best.point = p;
      }
    }
    best.inside = false;
    return best;
  }

  void build_boundary() {
    const int d = mesh_->dim;
    std::map<std::vector<int>, std::pair<int, BoundaryFacet>> count;
    for (Index j = 0; j < mesh_->n_elements(); ++j) {
      for (int i = 0; i <= d; ++i) {
        std::vector<int> key;
        for (int n = 0; n <= d; ++n)
          if (n != i) key.push_back(mesh_->elements(n, j));
        std::sort(key.begin(), key.end());
        auto [it, inserted] = count.try_emplace(key, 0, BoundaryFacet{j, i});
        ++it->second.first;
      }
    }
    for (const auto& [key, entry] : count)
      if (entry.first == 1) boundary_.push_back(entry.second);
    std::sort(boundary_.begin(), boundary_.end(), [](const BoundaryFacet& a, const BoundaryFacet& b) {
      return a.element != b.element ? a.element < b.element : a.local_opposite < b.local_opposite;
    });
  }

  const Mesh* mesh_;
  std::vector<MatrixXd> inverse_;
  MatrixXd centers_;
  VectorXd radii_;
  std::vector<BoundaryFacet> boundary_;
};

inline PointLocation locate_point(const Mesh& mesh, const VectorXd& x) {
  return PointLocator(mesh).locate(x);
}

/// For each vertex, the ids of faces whose opposite vertex it is, ascending.
struct VertexFaces {
  std::vector<Index> offsets;
  std::vector<Index> faces;
};

inline VertexFaces vertex_faces(const Mesh& mesh) {
  const int d = mesh.dim;
  VertexFaces vf;
  vf.offsets.assign(static_cast<std::size_t>(mesh.n_vertices()) + 1, 0);
  for (Index j = 0; j < mesh.n_elements(); ++j)
    for (int i = 0; i <= d; ++i) ++vf.offsets[static_cast<std::size_t>(mesh.elements(i, j)) + 1];
  std::partial_sum(vf.offsets.begin(), vf.offsets.end(), vf.offsets.begin());
  vf.faces.resize(static_cast<std::size_t>(vf.offsets.back()));
  std::vector<Index> fill(vf.offsets.begin(), vf.offsets.end() - 1);
  for (Index j = 0; j < mesh.n_elements(); ++j)
    for (int i = 0; i <= d; ++i)
      vf.faces[static_cast<std::size_t>(fill[static_cast<std::size_t>(mesh.elements(i, j))]++)] =
          j * (d + 1) + i;
  return vf;
}

/// Sub-mesh of the elements with the given label; `vertex_map` receives the parent
/// index of every sub-mesh vertex (ascending parent order).
inline Mesh extract_submesh(const Mesh& mesh, int label, std::vector<int>* vertex_map = nullptr,
                            std::vector<Index>* element_map = nullptr) {
  if (mesh.labels.empty()) throw MeshError("mesh has no element labels");
  std::vector<int> keep;
  for (Index j = 0; j < mesh.n_elements(); ++j)
    if (mesh.labels[static_cast<std::size_t>(j)] == label) keep.push_back(static_cast<int>(j));
  if (keep.empty()) throw MeshError("no elements carry label " + std::to_string(label));
  std::vector<int> used(static_cast<std::size_t>(mesh.n_vertices()), -1);
  for (int j : keep)
    for (int n = 0; n <= mesh.dim; ++n) used[static_cast<std::size_t>(mesh.elements(n, j))] = 0;
  std::vector<int> parent;
  for (Index v = 0; v < mesh.n_vertices(); ++v)
    if (used[static_cast<std::size_t>(v)] == 0) {
      used[static_cast<std::size_t>(v)] = static_cast<int>(parent.size());
      parent.push_back(static_cast<int>(v));
    }
  Mesh sub;
  sub.dim = mesh.dim;
  sub.vertices.resize(mesh.dim, static_cast<Index>(parent.size()));
  for (std::size_t v = 0; v < parent.size(); ++v)
    sub.vertices.col(static_cast<Index>(v)) = mesh.vertices.col(parent[v]);
  sub.elements.resize(mesh.dim + 1, static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k)
    for (int n = 0; n <= mesh.dim; ++n)
      sub.elements(n, static_cast<Index>(k)) =
          used[static_cast<std::size_t>(mesh.elements(n, keep[k]))];
  sub.labels.assign(keep.size(), label);
  if (vertex_map) *vertex_map = parent;
  if (element_map) element_map->assign(keep.begin(), keep.end());
  return sub;
}

}  // namespace eikinv
