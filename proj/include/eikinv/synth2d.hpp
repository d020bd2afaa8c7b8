#pragma once

// Idealized 2-D heart-torso twin: circular torso with an annular left ventricle
// around a blood pool, two elliptic lungs, 8 surface electrodes, planted
// ground-truth activation sites and a target ECG from a finer, perturbed model.

#include "eikinv/common.hpp"
#include "eikinv/ecg.hpp"
#include "eikinv/eikonal.hpp"
#include "eikinv/inverse.hpp"
#include "eikinv/leadfield.hpp"
#include "eikinv/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace eikinv {

enum RegionLabel : int { kTorso = 0, kHeart = 1, kBlood = 2, kLung = 3 };

struct Synth2dOptions {
  // geometry (mm)
  double resolution = 0.9;         // edge length in and near the ventricle
  double target_resolution = 0.45;  // edge length of the model generating the target
  double r_endo = 19.0;
  double r_epi = 31.0;
  double r_torso = 60.0;
  double lung_center = 46.0;  // lungs centred at (+-lung_center, 0)
  double lung_semi_x = 9.0;
  double lung_semi_y = 20.0;
  double grading = 0.15;  // growth of the edge length per mm away from the ventricle
  double h_max = 8.0;
  // conductivities (S/m)
  double sigma_torso = 0.22;
  double sigma_lung = 0.05;
  double sigma_blood = 0.7;
  double gi_fiber = 0.17, gi_cross = 0.019;
  double ge_fiber = 0.62, ge_cross = 0.24;
  // conduction velocities (mm/ms); fibres run circumferentially
  double v_fiber = 0.6, v_cross = 0.4;
  // twin
  double perturbation = 0.2;  // target torso/lung/blood conductivities scaled by 1 + p u, u in [-1, 1]
  Index n_truth = 4;
  double t_min = 2.5, t_max = 10.0;  // ms
  Index n_init = 8;
  double dt = 0.5;              // ms
  double window_margin = 20.0;  // ms after the last ground-truth activation
  std::uint64_t seed = 42;
  ApTemplate tpl;
};

/// Mesh plus torso data of one resolution.
struct TorsoSetup {
  TorsoModel model;
  Mesh heart;
  MetricField heart_metric;
  std::vector<int> heart_vertex_map;
};

struct Synth2dCase {
  TorsoSetup coarse;
  LeadFields fields;
  LeadFieldOperator op;
  SiteSet truth;
  SiteSet init;
  VectorXd truth_phi;  // ground truth on the coarse heart mesh
  EcgTrace target;
  // target model facts
  Index target_heart_vertices = 0;
  Index target_vertices = 0;
  double scale_torso = 1.0, scale_lung = 1.0, scale_blood = 1.0;
};

namespace detail {

inline double ring_spacing(const Synth2dOptions& o, double h, double r) {
  double dist = 0.0;
  if (r < o.r_endo) dist = o.r_endo - r;
  if (r > o.r_epi) dist = r - o.r_epi;
  return std::min(o.h_max, h + o.grading * dist);
}

inline MatrixXd circumferential_tensor(const VectorXd& c, double along, double across) {
  const double th = std::atan2(c(1), c(0));
  VectorXd f(2);
  f << -std::sin(th), std::cos(th);
  const MatrixXd ff = f * f.transpose();
  return along * ff + across * (MatrixXd::Identity(2, 2) - ff);
}

}  // namespace detail

/// Concentric-ring triangulation. Ring radii follow the graded spacing; rings
/// land exactly on r_endo, r_epi and r_torso, and the outer ring holds a
/// multiple of 8 vertices starting at angle 0 so electrodes sit on vertices.
/// Labels: heart between the r_endo and r_epi rings, blood inside, lungs by
/// element centroid, torso elsewhere.
inline Mesh ring_torso_mesh(const Synth2dOptions& o, double h) {
  if (!(h > 0.0)) throw ArgumentError("synth2d: resolution must be positive");
  if (!(0.0 < o.r_endo && o.r_endo < o.r_epi && o.r_epi < o.r_torso))
    throw ArgumentError("synth2d: need 0 < r_endo < r_epi < r_torso");
  if (o.lung_center - o.lung_semi_x <= o.r_epi + h || o.lung_center + o.lung_semi_x >= o.r_torso - h ||
      o.lung_semi_y >= o.r_torso - h)
    throw ArgumentError("synth2d: lungs must lie between the ventricle and the torso surface");
  if (!(o.grading >= 0.0) || !(o.h_max >= h)) throw ArgumentError("synth2d: invalid grading");

  // radii, inside out
  std::vector<double> inner;
  for (double r = o.r_endo - detail::ring_spacing(o, h, o.r_endo); r > 0.5 * detail::ring_spacing(o, h, r);
       r -= detail::ring_spacing(o, h, r))
    inner.push_back(r);
  std::reverse(inner.begin(), inner.end());
  const int wall_layers = std::max(2, static_cast<int>(std::lround((o.r_epi - o.r_endo) / h)));
  std::vector<double> outer;
  for (double r = o.r_epi + detail::ring_spacing(o, h, o.r_epi); r < o.r_torso - 0.5 * detail::ring_spacing(o, h, r);
       r += detail::ring_spacing(o, h, r))
    outer.push_back(r);
  outer.push_back(o.r_torso);
  const double stretch = (o.r_torso - o.r_epi) / (outer.back() - o.r_epi);
  for (double& r : outer) r = o.r_epi + (r - o.r_epi) * stretch;
  outer.back() = o.r_torso;

  std::vector<double> radii = inner;
  const std::size_t endo_ring = radii.size();
  for (int k = 0; k <= wall_layers; ++k)
    radii.push_back(o.r_endo + (o.r_epi - o.r_endo) * static_cast<double>(k) / wall_layers);
  const std::size_t epi_ring = radii.size() - 1;
  radii.insert(radii.end(), outer.begin(), outer.end());

  Mesh m;
  m.dim = 2;
  std::vector<std::array<double, 2>> pts{{0.0, 0.0}};
  std::vector<int> first, count;
  std::vector<double> offset;
  for (std::size_t k = 0; k < radii.size(); ++k) {
    const double r = radii[k];
    int n = std::max(6, static_cast<int>(std::lround(2.0 * std::numbers::pi * r / detail::ring_spacing(o, h, r))));
    double off = (k % 2 == 0) ? 0.0 : 0.5;
    if (k + 1 == radii.size()) {
      n = 8 * std::max(1, static_cast<int>(std::lround(n / 8.0)));
      off = 0.0;
    }
    first.push_back(static_cast<int>(pts.size()));
    count.push_back(n);
    offset.push_back(off);
    for (int i = 0; i < n; ++i) {
      const double th = 2.0 * std::numbers::pi * (i + off) / n;
      pts.push_back({r * std::cos(th), r * std::sin(th)});
    }
  }
  m.vertices.resize(2, static_cast<Index>(pts.size()));
  for (std::size_t v = 0; v < pts.size(); ++v) m.vertices.col(static_cast<Index>(v)) << pts[v][0], pts[v][1];

  std::vector<std::array<int, 3>> tris;
  std::vector<int> layer;  // ring index of the inner ring of each triangle, -1 for the centre fan
  auto add = [&](int a, int b, int c, int lay) {
    const VectorXd pa = m.vertices.col(a), pb = m.vertices.col(b), pc = m.vertices.col(c);
    const double det = (pb(0) - pa(0)) * (pc(1) - pa(1)) - (pb(1) - pa(1)) * (pc(0) - pa(0));
    if (det < 0) std::swap(b, c);
    tris.push_back({a, b, c});
    layer.push_back(lay);
  };
  for (int i = 0; i < count[0]; ++i) add(0, first[0] + i, first[0] + (i + 1) % count[0], -1);
  for (std::size_t k = 0; k + 1 < radii.size(); ++k) {
    const int na = count[k], nb = count[k + 1];
    auto ang_a = [&](int i) { return (i + offset[k]) / na; };
    auto ang_b = [&](int j) { return (j + offset[k + 1]) / nb; };
    auto va = [&](int i) { return first[k] + i % na; };
    auto vb = [&](int j) { return first[k + 1] + j % nb; };
    int i = 0, j = 0;
    while (i < na || j < nb) {
      const bool advance_a = j == nb || (i < na && ang_a(i + 1) < ang_b(j + 1));
      if (advance_a) {
        add(va(i), va(i + 1), vb(j), static_cast<int>(k));
        ++i;
      } else {
        add(va(i), vb(j + 1), vb(j), static_cast<int>(k));
        ++j;
      }
    }
  }
  m.elements.resize(3, static_cast<Index>(tris.size()));
  m.labels.resize(tris.size());
  for (std::size_t e = 0; e < tris.size(); ++e) {
    m.elements.col(static_cast<Index>(e)) << tris[e][0], tris[e][1], tris[e][2];
    const int lay = layer[e];
    int label = kTorso;
    if (lay < static_cast<int>(endo_ring)) {
      label = kBlood;
    } else if (lay < static_cast<int>(epi_ring)) {
      label = kHeart;
    } else {
      const VectorXd c = m.element_vertices(static_cast<Index>(e)).rowwise().mean();
      const double ex = (std::abs(c(0)) - o.lung_center) / o.lung_semi_x, ey = c(1) / o.lung_semi_y;
      if (ex * ex + ey * ey < 1.0) label = kLung;
    }
    m.labels[e] = label;
  }
  validate_mesh(m);
  return m;
}

struct ConductivityScales {
  double torso = 1.0, lung = 1.0, blood = 1.0;
};

/// Torso model, heart sub-mesh and heart metric at one resolution.
inline TorsoSetup make_torso_setup(const Synth2dOptions& o, double h, const ConductivityScales& s = {}) {
  TorsoSetup out;
  TorsoModel& tm = out.model;
  tm.mesh = ring_torso_mesh(o, h);
  tm.heart_label = kHeart;
  const MatrixXd I = MatrixXd::Identity(2, 2);
  for (Index j = 0; j < tm.mesh.n_elements(); ++j) {
    const VectorXd c = tm.mesh.element_vertices(j).rowwise().mean();
    switch (tm.mesh.labels[static_cast<std::size_t>(j)]) {
      case kHeart: {
        const MatrixXd gi = detail::circumferential_tensor(c, o.gi_fiber, o.gi_cross);
        tm.intracellular.push_back(gi);
        tm.bulk.push_back(gi + detail::circumferential_tensor(c, o.ge_fiber, o.ge_cross));
        break;
      }
      case kBlood:
        tm.intracellular.push_back(MatrixXd::Zero(2, 2));
        tm.bulk.push_back(o.sigma_blood * s.blood * I);
        break;
      case kLung:
        tm.intracellular.push_back(MatrixXd::Zero(2, 2));
        tm.bulk.push_back(o.sigma_lung * s.lung * I);
        break;
      default:
        tm.intracellular.push_back(MatrixXd::Zero(2, 2));
        tm.bulk.push_back(o.sigma_torso * s.torso * I);
    }
  }
  for (int k = 0; k < 8; ++k) {
    const double th = k * std::numbers::pi / 4.0;
    VectorXd x(2);
    x << o.r_torso * std::cos(th), o.r_torso * std::sin(th);
    tm.electrodes.push_back(x);
    tm.electrode_names.push_back("E" + std::to_string(k + 1));
  }
  // E2 (45 deg) and E4 (135 deg) play the arms; every other electrode plus E2 is a lead.
  tm.wct = {1, 3};
  tm.leads = {0, 1, 2, 4, 5, 6, 7};

  std::vector<Index> emap;
  out.heart = extract_submesh(tm.mesh, kHeart, &out.heart_vertex_map, &emap);
  for (Index j = 0; j < out.heart.n_elements(); ++j) {
    const VectorXd c = out.heart.element_vertices(j).rowwise().mean();
    out.heart_metric.tensors.push_back(
        detail::circumferential_tensor(c, 1.0 / (o.v_fiber * o.v_fiber), 1.0 / (o.v_cross * o.v_cross)));
  }
  return out;
}

/// Ground-truth sites: area-uniform in the upper half of the ventricular wall,
/// kept 10% of the wall thickness away from both walls; onsets uniform in [t_min, t_max].
inline SiteSet synth2d_truth_sites(const Synth2dOptions& o, std::mt19937_64& rng) {
  const double margin = 0.1 * (o.r_epi - o.r_endo);
  const double r0 = o.r_endo + margin, r1 = o.r_epi - margin;
  SiteSet out;
  for (Index k = 0; k < o.n_truth; ++k) {
    const double r = std::sqrt(r0 * r0 + uniform01(rng) * (r1 * r1 - r0 * r0));
    const double th = std::numbers::pi * uniform01(rng);
    const double t = o.t_min + (o.t_max - o.t_min) * uniform01(rng);
    VectorXd x(2);
    x << r * std::cos(th), r * std::sin(th);
    out.push_back(Site{x, t, SiteMode::volume});
  }
  return out;
}

/// Initial guess: n_init sites evenly spaced on the mid-wall circle, all at t = 0.
inline SiteSet synth2d_initial_sites(const Synth2dOptions& o) {
  SiteSet out;
  const double r = 0.5 * (o.r_endo + o.r_epi);
  for (Index k = 0; k < o.n_init; ++k) {
    const double th = 2.0 * std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(o.n_init);
    VectorXd x(2);
    x << r * std::cos(th), r * std::sin(th);
    out.push_back(Site{x, 0.0, SiteMode::volume});
  }
  return out;
}

inline Synth2dCase make_synth2d(const Synth2dOptions& o, const EikonalOptions& eik = {}) {
  o.tpl.validate();
  if (o.n_truth < 1 || o.n_init < 1) throw ArgumentError("synth2d: need at least one site");
  if (!(o.perturbation >= 0.0 && o.perturbation < 1.0)) throw ArgumentError("synth2d: perturbation must be in [0, 1)");
  std::mt19937_64 rng(o.seed);
  Synth2dCase c;
  c.truth = synth2d_truth_sites(o, rng);
  c.init = synth2d_initial_sites(o);
  c.scale_torso = 1.0 + o.perturbation * (2.0 * uniform01(rng) - 1.0);
  c.scale_lung = 1.0 + o.perturbation * (2.0 * uniform01(rng) - 1.0);
  c.scale_blood = 1.0 + o.perturbation * (2.0 * uniform01(rng) - 1.0);

  c.coarse = make_torso_setup(o, o.resolution);
  c.fields = solve_lead_fields(c.coarse.model);
  c.op = assemble_ecg_operator(c.coarse.model, c.fields);
  const EikonalSolver coarse_solver(c.coarse.heart, c.coarse.heart_metric);
  const ActivationField truth = coarse_solver.solve(c.truth, eik);
  if (!truth.converged) throw NumericalError("synth2d: ground-truth solve on the inversion mesh did not converge");
  c.truth_phi = truth.phi;

  // Target model: its own mesh and perturbed conductivities unless it is the inverse-crime setting.
  const bool same_model = o.target_resolution == o.resolution && o.perturbation == 0.0;
  const TorsoSetup target_setup =
      same_model ? c.coarse
                 : make_torso_setup(o, o.target_resolution, {c.scale_torso, c.scale_lung, c.scale_blood});
  c.target_heart_vertices = target_setup.heart.n_vertices();
  c.target_vertices = target_setup.model.mesh.n_vertices();
  VectorXd target_phi = c.truth_phi;
  LeadFieldOperator target_op = c.op;
  if (!same_model) {
    const LeadFields tf = solve_lead_fields(target_setup.model);
    target_op = assemble_ecg_operator(target_setup.model, tf);
    const EikonalSolver fine(target_setup.heart, target_setup.heart_metric);
    const ActivationField f = fine.solve(c.truth, eik);
    if (!f.converged) throw NumericalError("synth2d: ground-truth solve on the target mesh did not converge");
    target_phi = f.phi;
  }
  const double t_end = std::ceil((target_phi.maxCoeff() + o.window_margin) / o.dt) * o.dt;
  c.target = forward_ecg(target_phi, target_op, o.tpl, TimeGrid::window(0.0, t_end, o.dt));
  return c;
}

}  // namespace eikinv
