#include "eikinv/io.hpp"
#include "eikinv/leadfield.hpp"
#include "eikinv/synth2d.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace eikinv;
namespace fs = std::filesystem;
namespace tsup = eikinv::testing;

namespace {

VectorXd pt(double x, double y) {
  VectorXd v(2);
  v << x, y;
  return v;
}

/// Homogeneous unit disk, heart = elements with centroid radius < 0.5, electrodes on the rim.
TorsoModel disk_model(int rings, const std::vector<VectorXd>& electrodes, std::vector<int> wct, std::vector<int> leads) {
  TorsoModel t;
  t.mesh = tsup::disk_mesh(rings);
  for (Index j = 0; j < t.mesh.n_elements(); ++j) {
    const double r = t.mesh.element_vertices(j).rowwise().mean().norm();
    t.mesh.labels.push_back(r < 0.5 ? 1 : 0);
    t.bulk.push_back(MatrixXd::Identity(2, 2));
    t.intracellular.push_back(r < 0.5 ? MatrixXd(0.3 * MatrixXd::Identity(2, 2)) : MatrixXd(MatrixXd::Zero(2, 2)));
  }
  t.electrodes = electrodes;
  for (std::size_t e = 0; e < electrodes.size(); ++e) t.electrode_names.push_back("E" + std::to_string(e + 1));
  t.wct = std::move(wct);
  t.leads = std::move(leads);
  return t;
}

}  // namespace

TEST(LeadLoad, SumsToZero) {
  for (int n_w = 1; n_w <= 5; ++n_w) {
    std::vector<int> w;
    for (int k = 0; k < n_w; ++k) w.push_back(k + 1);
    const VectorXd f = lead_load(10, 0, w);
    EXPECT_NEAR(f.sum(), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(f(0), -1.0);
  }
}

TEST(Stiffness, SymmetricAndAnnihilatesConstants) {
  const Mesh m = tsup::jittered_square(6, 0.3, 1);
  std::mt19937_64 rng(2);
  std::vector<MatrixXd> g;
  for (Index j = 0; j < m.n_elements(); ++j) g.push_back(tsup::random_spd(2, rng));
  const Eigen::SparseMatrix<double> K = assemble_stiffness(m, g);
  const MatrixXd Kd(K);
  EXPECT_LE((Kd - Kd.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((Kd * VectorXd::Ones(m.n_vertices())).cwiseAbs().maxCoeff(), 1e-12);
  // positive on the zero-mean subspace: every eigenvalue but one is > 0
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(Kd);
  EXPECT_NEAR(es.eigenvalues()(0), 0.0, 1e-10);
  EXPECT_GT(es.eigenvalues()(1), 1e-6);
}

TEST(LeadField, DiskMirrorAntisymmetry) {
  const TorsoModel t = disk_model(12, {pt(1, 0), pt(-1, 0)}, {1}, {0});
  const LeadFields lf = solve_lead_fields(t);
  ASSERT_LE(lf.snaps[0].distance, 1e-12);
  ASSERT_LE(lf.snaps[1].distance, 1e-12);
  const VectorXd z = lf.Z.col(0);
  double worst = 0.0;
  for (Index v = 0; v < t.mesh.n_vertices(); ++v) {
    const Index w = tsup::nearest_vertex(t.mesh, -t.mesh.vertex(v));
    ASSERT_LE((t.mesh.vertex(w) + t.mesh.vertex(v)).norm(), 1e-12);
    worst = std::max(worst, std::abs(z(v) + z(w)));
  }
  EXPECT_LE(worst, 1e-6 * z.cwiseAbs().maxCoeff());
  EXPECT_LE(lf.max_relative_residual, 1e-10);
  EXPECT_NEAR(z.mean(), 0.0, 1e-12);
}

TEST(LeadField, SwappingLeadAndCentralTerminalNegates) {
  const TorsoModel a = disk_model(8, {pt(1, 0), pt(0, 1)}, {1}, {0});
  const TorsoModel b = disk_model(8, {pt(1, 0), pt(0, 1)}, {0}, {1});
  const VectorXd za = solve_lead_fields(a).Z.col(0), zb = solve_lead_fields(b).Z.col(0);
  EXPECT_LE((za + zb).cwiseAbs().maxCoeff(), 1e-10 * za.cwiseAbs().maxCoeff());
}

TEST(LeadField, DisconnectedMeshIsRejected) {
  Mesh m = tsup::rect_mesh(2, 2);
  const Mesh other = tsup::rect_mesh(1, 1, 1.0);
  const Index nv = m.n_vertices(), ne = m.n_elements();
  m.vertices.conservativeResize(2, nv + other.n_vertices());
  for (Index v = 0; v < other.n_vertices(); ++v) m.vertices.col(nv + v) = other.vertex(v) + pt(10, 0);
  m.elements.conservativeResize(3, ne + other.n_elements());
  for (Index e = 0; e < other.n_elements(); ++e) m.elements.col(ne + e) = other.elements.col(e).array() + static_cast<int>(nv);
  TorsoModel t;
  t.mesh = m;
  t.mesh.labels.assign(static_cast<std::size_t>(m.n_elements()), 1);
  t.bulk.assign(static_cast<std::size_t>(m.n_elements()), MatrixXd::Identity(2, 2));
  t.intracellular = t.bulk;
  t.electrodes = {pt(0, 0), pt(2, 2)};
  t.electrode_names = {"A", "B"};
  t.wct = {1};
  t.leads = {0};
  EXPECT_THROW(solve_lead_fields(t), NumericalError);
}

TEST(EcgOperator, OneTriangleHandAssembly) {
  Mesh heart;
  heart.dim = 2;
  heart.vertices.resize(2, 3);
  heart.vertices << 0, 2, 0, 0, 0, 1;
  heart.elements.resize(3, 1);
  heart.elements << 0, 1, 2;
  MatrixXd Z(3, 1);
  Z << 1, 3, -2;  // Z = 1 + x - 3y, grad (1, -3); hat gradients (-1/2,-1), (1/2,0), (0,1); area 1
  const LeadFieldOperator op = assemble_ecg_operator(heart, {MatrixXd::Identity(2, 2)}, Z, {"L"});
  EXPECT_NEAR(op.B(0, 0), 2.5, 1e-12);
  EXPECT_NEAR(op.B(0, 1), 0.5, 1e-12);
  EXPECT_NEAR(op.B(0, 2), -3.0, 1e-12);
  EXPECT_NEAR(op.B.row(0).sum(), 0.0, 1e-12);
}

TEST(EcgOperator, QuadratureIsExactForDegreeTwo) {
  for (int d = 2; d <= 3; ++d) {
    const SimplexQuadrature q = SimplexQuadrature::degree2(d);
    EXPECT_NEAR(q.weights.sum(), 1.0, 1e-15);
    // mean of lambda_0^2 over the simplex is 2 / ((d+1)(d+2)); of lambda_0 lambda_1 it is 1 / ((d+1)(d+2))
    double sq = 0.0, mixed = 0.0;
    for (Index p = 0; p < q.weights.size(); ++p) {
      sq += q.weights(p) * q.points(0, p) * q.points(0, p);
      mixed += q.weights(p) * q.points(0, p) * q.points(1, p);
    }
    EXPECT_NEAR(sq, 2.0 / ((d + 1.0) * (d + 2.0)), 1e-15);
    EXPECT_NEAR(mixed, 1.0 / ((d + 1.0) * (d + 2.0)), 1e-15);
  }
}

TEST(EcgOperator, LinearInIntracellularConductivity) {
  const TorsoModel t = disk_model(8, {pt(1, 0), pt(0, 1), pt(-1, 0)}, {2}, {0, 1});
  const LeadFields lf = solve_lead_fields(t);
  TorsoModel t2 = t;
  for (auto& g : t2.intracellular) g *= 2.0;
  const LeadFieldOperator a = assemble_ecg_operator(t, lf), b = assemble_ecg_operator(t2, lf);
  EXPECT_LE((b.B - 2.0 * a.B).cwiseAbs().maxCoeff(), 1e-14 * a.B.cwiseAbs().maxCoeff());
  EXPECT_LE(constant_annihilation_error(a), 1e-8);
}

TEST(EcgOperator, SynthTorsoAnnihilatesConstantsAndSnapsExactly) {
  Synth2dOptions o;
  const TorsoSetup s = make_torso_setup(o, 1.8);
  const LeadFields lf = solve_lead_fields(s.model);
  const LeadFieldOperator op = assemble_ecg_operator(s.model, lf);
  EXPECT_EQ(op.n_leads(), 7);
  EXPECT_EQ(op.n_vertices(), s.heart.n_vertices());
  EXPECT_LE(constant_annihilation_error(op), 1e-8);
  for (const auto& snap : lf.snaps) EXPECT_LE(snap.distance, 1e-9);
}

TEST(EcgOperator, RefinementConsistency) {
  // Smooth transmembrane pattern V(x, y) = 20 x / r_epi; B V must agree within 5%
  // between the torso mesh and its refinement (all electrodes share the same positions).
  Synth2dOptions o;
  std::vector<VectorXd> volts;
  for (double h : {0.9, 0.45}) {
    const TorsoSetup s = make_torso_setup(o, h);
    const LeadFields lf = solve_lead_fields(s.model);
    const LeadFieldOperator op = assemble_ecg_operator(s.model, lf);
    VectorXd V(s.heart.n_vertices());
    for (Index v = 0; v < V.size(); ++v) V(v) = 20.0 * s.heart.vertex(v)(0) / o.r_epi;
    volts.push_back(op.B * V);
  }
  EXPECT_LE((volts[0] - volts[1]).cwiseAbs().maxCoeff(), 0.05 * volts[1].cwiseAbs().maxCoeff())
      << volts[0].transpose() << "\n" << volts[1].transpose();
}

TEST(LeadFieldImport, FiveHundredVertexStandIn) {
  // Externally computed lead fields for a 500-vertex heart arrive as CSV; the
  // imported operator must equal the one assembled from the in-memory fields.
  const Mesh heart = tsup::rect_mesh(19, 24, 0.5);
  ASSERT_EQ(heart.n_vertices(), 500);
  MatrixXd Z(500, 3);
  for (Index v = 0; v < 500; ++v) {
    const double x = heart.vertex(v)(0), y = heart.vertex(v)(1);
    Z(v, 0) = std::sin(0.3 * x) + 0.1 * y;
    Z(v, 1) = std::exp(-0.05 * (x * x + y * y)) / 3.0;
    Z(v, 2) = x * y / 7.0;
  }
  const fs::path dir = fs::temp_directory_path() / "eikinv_test_leadfield";
  fs::create_directories(dir);
  std::string csv = "vertex_id,V1,V2,V3\n";
  for (Index v = 0; v < 500; ++v)
    csv += std::to_string(v) + "," + format_double(Z(v, 0)) + "," + format_double(Z(v, 1)) + "," + format_double(Z(v, 2)) + "\n";
  write_text((dir / "z.csv").string(), csv);

  const ImportedLeadFields imp = load_lead_field_csv((dir / "z.csv").string());
  EXPECT_EQ(imp.names, (std::vector<std::string>{"V1", "V2", "V3"}));
  EXPECT_EQ(imp.Z, Z);
  const std::vector<MatrixXd> gi(static_cast<std::size_t>(heart.n_elements()), 0.17 * MatrixXd::Identity(2, 2));
  const LeadFieldOperator direct = assemble_ecg_operator(heart, gi, Z, {"V1", "V2", "V3"});
  const LeadFieldOperator imported = assemble_ecg_operator(heart, gi, imp.Z, imp.names);
  EXPECT_EQ(direct.B, imported.B);

  save_operator((dir / "op.bin").string(), imported);
  const LeadFieldOperator back = load_operator((dir / "op.bin").string());
  EXPECT_EQ(back.B, imported.B);
  EXPECT_EQ(back.names, imported.names);
  EXPECT_EQ(fs::file_size(dir / "op.bin"), std::string(R"({"leads":3,"names":["V1","V2","V3"],"vertices":500})").size() + 1 + 3 * 500 * 8);
}

TEST(LeadFieldImport, RejectsMisorderedIdsAndTruncatedBinary) {
  const fs::path dir = fs::temp_directory_path() / "eikinv_test_leadfield";
  fs::create_directories(dir);
  write_text((dir / "bad.csv").string(), "vertex_id,V1\n0,1\n2,3\n");
  EXPECT_THROW(load_lead_field_csv((dir / "bad.csv").string()), ParseError);
  write_text((dir / "short.bin").string(), "{\"leads\":1,\"vertices\":4,\"names\":[\"A\"]}\n12345678");
  EXPECT_THROW(load_operator((dir / "short.bin").string()), ParseError);
}
