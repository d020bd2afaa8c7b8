#pragma once

// Lead fields on a heart-torso mesh and the discrete ECG operator B.
//
// Each lead field solves the pure-Neumann problem -div((G_i + G_e) grad Z) = 0
// with boundary flux -grad Z . n = delta_lead - mean over WCT electrodes of delta,
// discretized with P1 elements and nodal point loads at snapped electrode vertices.
// B[l, n] = sum over heart elements of the integral of <G_i grad Z_l, grad lambda_n>,
// so V_l(t) = (B U(t - phi))_l.

#include "eikinv/common.hpp"
#include "eikinv/mesh.hpp"
#include "eikinv/parallel.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>
#include <vector>

namespace eikinv {

/// Gradients of the P1 hat functions of one simplex, one column per local vertex.
inline MatrixXd p1_gradients(const MatrixXd& verts) {
  const auto d = static_cast<int>(verts.rows());
  MatrixXd T(d, d);
  for (int n = 0; n < d; ++n) T.col(n) = verts.col(n + 1) - verts.col(0);
  const MatrixXd Tinv_t = T.inverse().transpose();
  MatrixXd G(d, d + 1);
  G.rightCols(d) = Tinv_t;
  G.col(0) = -Tinv_t.rowwise().sum();
  return G;
}

/// Symmetric d-simplex rule exact for polynomials of degree 2: d+1 points with
/// barycentric coordinates (a, b, ..., b) permuted, equal weights 1/(d+1).
struct SimplexQuadrature {
  MatrixXd points;   // (d+1) x (d+1) barycentric coordinates, one column per point
  VectorXd weights;  // fractions of the element volume

  static SimplexQuadrature degree2(int d) {
    const double b = (d + 2 - std::sqrt(d + 2.0)) / ((d + 1.0) * (d + 2.0));
    const double a = 1.0 - d * b;
    SimplexQuadrature q;
    q.points = MatrixXd::Constant(d + 1, d + 1, b);
    q.points.diagonal().setConstant(a);
    q.weights = VectorXd::Constant(d + 1, 1.0 / (d + 1));
    return q;
  }
};

struct TorsoModel {
  Mesh mesh;                             // labels required
  std::vector<MatrixXd> bulk;            // G_i + G_e per element (S/m)
  std::vector<MatrixXd> intracellular;   // G_i per element; read on heart elements only
  int heart_label = 1;
  std::vector<VectorXd> electrodes;      // positions (mm), snapped to boundary vertices
  std::vector<std::string> electrode_names;
  std::vector<int> wct;                  // electrode indices forming the central terminal
  std::vector<int> leads;                // electrode indices, one lead each
};

struct ElectrodeSnap {
  int vertex = -1;
  double distance = 0.0;  // mm
};

/// Lead-field values at every torso vertex, one column per lead.
struct LeadFields {
  MatrixXd Z;
  std::vector<std::string> names;
  std::vector<ElectrodeSnap> snaps;  // per electrode
  double max_relative_residual = 0.0;
};

struct LeadFieldOperator {
  MatrixXd B;  // N x n_heart
  std::vector<std::string> names;
  std::vector<int> heart_vertices;  // torso vertex of each column, when known
  Index n_leads() const { return B.rows(); }
  Index n_vertices() const { return B.cols(); }
};

inline std::vector<int> boundary_vertices(const Mesh& mesh) {
  PointLocator loc(mesh);
  std::vector<char> on(static_cast<std::size_t>(mesh.n_vertices()), 0);
  for (const auto& bf : loc.boundary())
    for (int n = 0; n <= mesh.dim; ++n)
      if (n != bf.local_opposite) on[static_cast<std::size_t>(mesh.elements(n, bf.element))] = 1;
  std::vector<int> out;
  for (Index v = 0; v < mesh.n_vertices(); ++v)
    if (on[static_cast<std::size_t>(v)]) out.push_back(static_cast<int>(v));
  return out;
}

/// Nearest boundary vertex for each electrode (lowest id on ties).
inline std::vector<ElectrodeSnap> snap_electrodes(const Mesh& mesh, const std::vector<VectorXd>& positions) {
  const std::vector<int> bverts = boundary_vertices(mesh);
  if (bverts.empty()) throw MeshError("mesh has no boundary");
  std::vector<ElectrodeSnap> out;
  for (const VectorXd& x : positions) {
    if (x.size() != mesh.dim) throw ArgumentError("electrode position has wrong dimension");
    ElectrodeSnap best;
    best.distance = kInf;
    for (int v : bverts) {
      const double dist = (mesh.vertices.col(v) - x).norm();
      if (dist < best.distance) best = ElectrodeSnap{v, dist};
    }
    out.push_back(best);
  }
  return out;
}

inline void check_connected(const Mesh& mesh) {
  const Index n_v = mesh.n_vertices();
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n_v));
  for (Index j = 0; j < mesh.n_elements(); ++j)
    for (int a = 0; a <= mesh.dim; ++a)
      for (int b = 0; b <= mesh.dim; ++b)
        if (a != b) adj[static_cast<std::size_t>(mesh.elements(a, j))].push_back(mesh.elements(b, j));
  std::vector<char> seen(static_cast<std::size_t>(n_v), 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  Index count = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int u : adj[static_cast<std::size_t>(v)])
      if (!seen[static_cast<std::size_t>(u)]) {
        seen[static_cast<std::size_t>(u)] = 1;
        ++count;
        q.push(u);
      }
  }
  if (count != n_v)
    throw NumericalError("lead field system is singular beyond constants: mesh has " +
                         std::to_string(n_v - count) + " vertices not connected to vertex 0");
}

/// P1 stiffness matrix of -div(G grad .) with one conductivity tensor per element.
inline Eigen::SparseMatrix<double> assemble_stiffness(const Mesh& mesh, const std::vector<MatrixXd>& conductivity) {
  if (static_cast<Index>(conductivity.size()) != mesh.n_elements())
    throw ArgumentError("one conductivity tensor per element required");
  const int d = mesh.dim;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(mesh.n_elements() * (d + 1) * (d + 1)));
  for (Index j = 0; j < mesh.n_elements(); ++j) {
    const MatrixXd verts = mesh.element_vertices(j);
    const MatrixXd G = p1_gradients(verts);
    const MatrixXd Ke = simplex_volume(verts) * G.transpose() * conductivity[static_cast<std::size_t>(j)] * G;
    for (int a = 0; a <= d; ++a)
      for (int b = 0; b <= d; ++b) trip.emplace_back(mesh.elements(a, j), mesh.elements(b, j), Ke(a, b));
  }
  Eigen::SparseMatrix<double> K(mesh.n_vertices(), mesh.n_vertices());
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

/// Nodal load of one lead: -1 at the lead electrode, +1/|W| at each WCT electrode.
/// Sums to zero, as the pure-Neumann problem requires.
inline VectorXd lead_load(Index n_v, int lead_vertex, const std::vector<int>& wct_vertices) {
  if (wct_vertices.empty()) throw ArgumentError("central terminal needs at least one electrode");
  VectorXd f = VectorXd::Zero(n_v);
  f(lead_vertex) -= 1.0;
  for (int w : wct_vertices) f(w) += 1.0 / static_cast<double>(wct_vertices.size());
  return f;
}

inline void validate_torso(const TorsoModel& m) {
  validate_mesh(m.mesh);
  const auto n_e = static_cast<std::size_t>(m.mesh.n_elements());
  if (m.mesh.labels.size() != n_e) throw MeshError("torso mesh needs one label per element");
  if (m.bulk.size() != n_e || m.intracellular.size() != n_e)
    throw MeshError("torso model needs bulk and intracellular conductivity per element");
  bool any_heart = false;
  for (std::size_t j = 0; j < n_e; ++j) {
    if (Eigen::LLT<MatrixXd>(m.bulk[j]).info() != Eigen::Success || !m.bulk[j].isApprox(m.bulk[j].transpose()))
      throw MeshError("bulk conductivity of element " + std::to_string(j) + " is not s.p.d.");
    if (m.mesh.labels[j] == m.heart_label) {
      any_heart = true;
      if (Eigen::LLT<MatrixXd>(m.intracellular[j]).info() != Eigen::Success)
        throw MeshError("intracellular conductivity of element " + std::to_string(j) + " is not s.p.d.");
    }
  }
  if (!any_heart) throw MeshError("no element carries the heart label " + std::to_string(m.heart_label));
  if (m.electrode_names.size() != m.electrodes.size()) throw ArgumentError("one name per electrode required");
  if (m.wct.empty()) throw ArgumentError("central terminal needs at least one electrode");
  for (int e : m.wct)
    if (e < 0 || e >= static_cast<int>(m.electrodes.size())) throw ArgumentError("WCT electrode index out of range");
  for (int e : m.leads)
    if (e < 0 || e >= static_cast<int>(m.electrodes.size())) throw ArgumentError("lead electrode index out of range");
}

/// Solves every lead of the model with one factorization. The pure-Neumann
/// nullspace is removed by pinning vertex 0, then each field is shifted to zero mean.
inline LeadFields solve_lead_fields(const TorsoModel& model) {
  validate_torso(model);
  const Mesh& mesh = model.mesh;
  check_connected(mesh);
  const Index n_v = mesh.n_vertices();
  const Eigen::SparseMatrix<double> K = assemble_stiffness(mesh, model.bulk);

  std::vector<Eigen::Triplet<double>> trip;
  for (Index c = 0; c < K.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(K, c); it; ++it)
      if (it.row() > 0 && it.col() > 0) trip.emplace_back(it.row() - 1, it.col() - 1, it.value());
  Eigen::SparseMatrix<double> Kr(n_v - 1, n_v - 1);
  Kr.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(Kr);
  if (ldlt.info() != Eigen::Success) throw NumericalError("lead field factorization failed");

  LeadFields out;
  out.snaps = snap_electrodes(mesh, model.electrodes);
  std::vector<int> wct_vertices;
  for (int e : model.wct) wct_vertices.push_back(out.snaps[static_cast<std::size_t>(e)].vertex);
  const auto n_leads = static_cast<Index>(model.leads.size());
  out.Z.resize(n_v, n_leads);
  std::vector<double> residual(model.leads.size(), 0.0);
  parallel_for(n_leads, [&](Index l) {
    const int lead_vertex = out.snaps[static_cast<std::size_t>(model.leads[static_cast<std::size_t>(l)])].vertex;
    const VectorXd f = lead_load(n_v, lead_vertex, wct_vertices);
    VectorXd z = VectorXd::Zero(n_v);
    z.tail(n_v - 1) = ldlt.solve(f.tail(n_v - 1));
    // Iterative refinement keeps the residual at round-off on large meshes.
    for (int pass = 0; pass < 2; ++pass) {
      const VectorXd r = f - K * z;
      z.tail(n_v - 1) += ldlt.solve(r.tail(n_v - 1));
    }
    z.array() -= z.mean();
    residual[static_cast<std::size_t>(l)] = (K * z - f).norm() / f.norm();
    out.Z.col(l) = z;
  });
  for (std::size_t l = 0; l < model.leads.size(); ++l) {
    const std::string& name = model.electrode_names[static_cast<std::size_t>(model.leads[l])];
    out.max_relative_residual = std::max(out.max_relative_residual, residual[l]);
    if (!(residual[l] <= 1e-10))
      throw NumericalError("lead field " + name + ": relative residual " + std::to_string(residual[l]) +
                           " exceeds 1e-10");
    out.names.push_back(name);
  }
  return out;
}

/// B for a heart mesh with lead fields given at its vertices (rows of Z_heart).
inline LeadFieldOperator assemble_ecg_operator(const Mesh& heart, const std::vector<MatrixXd>& intracellular,
                                               const MatrixXd& Z_heart, std::vector<std::string> names) {
  if (static_cast<Index>(intracellular.size()) != heart.n_elements())
    throw ArgumentError("one intracellular tensor per heart element required");
  if (Z_heart.rows() != heart.n_vertices()) throw ArgumentError("lead fields do not match the heart mesh");
  if (static_cast<Index>(names.size()) != Z_heart.cols()) throw ArgumentError("one name per lead required");
  const int d = heart.dim;
  const Index N = Z_heart.cols();
  const SimplexQuadrature quad = SimplexQuadrature::degree2(d);
  LeadFieldOperator op;
  op.names = std::move(names);
  op.B = MatrixXd::Zero(N, heart.n_vertices());
  for (Index j = 0; j < heart.n_elements(); ++j) {
    const MatrixXd verts = heart.element_vertices(j);
    const MatrixXd G = p1_gradients(verts);
    const double vol = simplex_volume(verts);
    MatrixXd Zloc(d + 1, N);
    for (int a = 0; a <= d; ++a) Zloc.row(a) = Z_heart.row(heart.elements(a, j));
    const MatrixXd gradZ = G * Zloc;  // d x N, constant on the element
    const MatrixXd& Gi = intracellular[static_cast<std::size_t>(j)];
    // Both gradients are element-constant, so every quadrature point sees the same
    // integrand; the rule is still applied to keep the assembly rule explicit.
    MatrixXd Be = MatrixXd::Zero(N, d + 1);
    for (Index q = 0; q < quad.weights.size(); ++q)
      Be += quad.weights(q) * vol * (Gi * gradZ).transpose() * G;
    for (int a = 0; a <= d; ++a) op.B.col(heart.elements(a, j)) += Be.col(a);
  }
  return op;
}

/// B over the heart elements of a torso model; columns follow the heart sub-mesh
/// vertex order (ascending torso vertex id).
inline LeadFieldOperator assemble_ecg_operator(const TorsoModel& model, const LeadFields& fields) {
  std::vector<int> vmap;
  std::vector<Index> emap;
  const Mesh heart = extract_submesh(model.mesh, model.heart_label, &vmap, &emap);
  std::vector<MatrixXd> Gi;
  for (Index j : emap) Gi.push_back(model.intracellular[static_cast<std::size_t>(j)]);
  MatrixXd Zh(heart.n_vertices(), fields.Z.cols());
  for (std::size_t v = 0; v < vmap.size(); ++v) Zh.row(static_cast<Index>(v)) = fields.Z.row(vmap[v]);
  LeadFieldOperator op = assemble_ecg_operator(heart, Gi, Zh, fields.names);
  op.heart_vertices = vmap;
  return op;
}

/// Largest |B 1| relative to the row's absolute sum.
inline double constant_annihilation_error(const LeadFieldOperator& op) {
  double worst = 0.0;
  for (Index l = 0; l < op.B.rows(); ++l) {
    const double scale = op.B.row(l).cwiseAbs().sum();
    if (scale > 0.0) worst = std::max(worst, std::abs(op.B.row(l).sum()) / scale);
  }
  return worst;
}

}  // namespace eikinv
