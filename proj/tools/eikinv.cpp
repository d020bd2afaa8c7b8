// eikinv: forward eikonal solves, ECG simulation, lead fields, the synthetic
// 2-D torso case, gradient checks and inverse fitting, all file-driven.
//
// Exit codes: 0 success, 1 usage or IO error, 2 numerical failure.

#include "eikinv/adjoint.hpp"
#include "eikinv/ecg.hpp"
#include "eikinv/eikonal.hpp"
#include "eikinv/inverse.hpp"
#include "eikinv/io.hpp"
#include "eikinv/leadfield.hpp"
#include "eikinv/parallel.hpp"
#include "eikinv/svg.hpp"
#include "eikinv/synth2d.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <thread>

using namespace eikinv;
namespace fs = std::filesystem;

namespace {

struct Common {
  int threads = 0;
  std::uint64_t seed = 42;
  bool seed_given = false;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c, bool with_seed) {
  sub->add_option("--threads", c.threads, "Worker threads (0: all hardware threads; 1 is the reproducibility reference)")
      ->check(CLI::NonNegativeNumber);
  if (with_seed)
    sub->add_option_function<std::uint64_t>(
        "--seed", [&c](const std::uint64_t& s) { c.seed = s; c.seed_given = true; },
        "RNG seed for every random choice of the command (default 42)");
  sub->add_flag("--quiet", c.quiet, "Only print errors");
}

void log(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << "\n";
}

void wrote(const Common& c, const std::string& path) { log(c, "wrote " + path); }

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ArgumentError(std::string("missing ") + what);
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " '" + path + "' does not exist");
}

void require_output(const std::string& path) {
  const fs::path p(path);
  const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
  if (!fs::is_directory(dir)) throw IoError("output directory '" + dir.string() + "' does not exist");
}

void prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void apply_threads(const Common& c) {
  const int n = c.threads > 0 ? c.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  set_threads(n);
}

struct MeshInput {
  std::string mesh, metric;
};

void add_mesh_options(CLI::App* sub, MeshInput& m) {
  sub->add_option("--mesh", m.mesh, "Mesh JSON (coordinates in mm; may carry the metric inline)")->required();
  sub->add_option("--metric", m.metric,
                  "Metric JSON {\"metric\": [...]}, upper-triangular squared slowness per element in (ms/mm)^2; "
                  "overrides an inline metric");
}

std::pair<Mesh, MetricField> load_mesh_and_metric(const MeshInput& in) {
  MeshBundle b = load_mesh_bundle(in.mesh);
  if (!in.metric.empty()) return {b.mesh, load_metric(in.metric, b.mesh)};
  if (!b.metric) throw ArgumentError("mesh '" + in.mesh + "' has no inline metric and --metric was not given");
  return {std::move(b.mesh), std::move(*b.metric)};
}

void add_template_options(CLI::App* sub, ApTemplate& tpl, std::string& convention) {
  sub->add_option("--K0", tpl.K0, "Resting transmembrane potential of the template (mV)")->capture_default_str();
  sub->add_option("--K1", tpl.K1, "Peak transmembrane potential of the template (mV)")->capture_default_str();
  sub->add_option("--tau", tpl.tau, "Upstroke width of the template (ms)")->capture_default_str();
  sub->add_option("--template-convention", convention,
                  "printed: K0 + (K1-K0)/2 tanh(2xi/tau); midpoint: K0 + (K1-K0)/2 (1 + tanh(2xi/tau))")
      ->check(CLI::IsMember({"printed", "midpoint"}))
      ->capture_default_str();
}

// ---- forward ------------------------------------------------------------

struct ForwardArgs {
  Common common;
  MeshInput mesh;
  std::string sites, out, diagnostics, mode = "volume";
  double epsilon = 1e-4;
  int n_f = 0;
  Index max_iters = 0;
};

int run_forward(const ForwardArgs& a) {
  require_file(a.mesh.mesh, "mesh file");
  if (!a.mesh.metric.empty()) require_file(a.mesh.metric, "metric file");
  require_file(a.sites, "sites file");
  require_output(a.out);
  const std::string diag = a.diagnostics.empty() ? a.out + ".json" : a.diagnostics;
  require_output(diag);
  apply_threads(a.common);

  auto [mesh, metric] = load_mesh_and_metric(a.mesh);
  const SiteSet sites = load_sites(a.sites, site_mode_from_string(a.mode));
  for (const Site& s : sites)
    if (s.x.size() != mesh.dim) throw ArgumentError("site dimension does not match the mesh");
  const EikonalSolver solver(std::move(mesh), std::move(metric));
  const EikonalOptions eik{a.epsilon, a.max_iters, a.n_f};
  const ActivationField f = solver.solve(sites, eik);
  write_text(a.out, activation_csv(f.phi));
  wrote(a.common, a.out);
  write_json(diag, activation_diagnostics(f, eik, a.n_f > 0 ? a.n_f : solver.default_n_f()));
  wrote(a.common, diag);
  if (!f.converged) {
    std::cerr << "error: eikonal solve did not converge after " << f.iterations << " iterations\n";
    return 2;
  }
  return 0;
}

// ---- ecg ----------------------------------------------------------------

struct EcgArgs {
  Common common;
  std::string leadfield, activation, out, target, plot, convention = "midpoint";
  std::vector<double> window;
  double dt = 0.5;
  ApTemplate tpl;
};

int run_ecg(EcgArgs a) {
  require_file(a.leadfield, "lead-field file");
  require_file(a.activation, "activation file");
  if (!a.target.empty()) require_file(a.target, "target ECG file");
  require_output(a.out);
  if (!a.plot.empty()) require_output(a.plot);
  apply_threads(a.common);
  a.tpl.convention = template_convention_from_string(a.convention);

  const LeadFieldOperator op = load_operator(a.leadfield);
  const VectorXd phi = load_activation(a.activation);
  TimeGrid grid;
  if (!a.window.empty()) {
    grid = TimeGrid::window(a.window[0], a.window[1], a.dt);
  } else {
    check_reached(phi);
    grid = TimeGrid::window(0.0, std::max(a.dt, std::ceil((phi.maxCoeff() + 20.0) / a.dt) * a.dt), a.dt);
  }
  const EcgTrace tr = forward_ecg(phi, op, a.tpl, grid);
  save_ecg(a.out, tr);
  wrote(a.common, a.out);
  if (!a.target.empty()) {
    const EcgTrace target = resample(load_ecg(a.target), grid);
    log(a.common, "loss " + format_double(ecg_loss(tr, target)) + " mV^2");
    if (!a.plot.empty()) write_text(a.plot, svg::ecg_overlay(tr, "simulated", &target, "target"));
  } else if (!a.plot.empty()) {
    write_text(a.plot, svg::ecg_overlay(tr, "simulated"));
  }
  if (!a.plot.empty()) wrote(a.common, a.plot);
  return 0;
}

// ---- leadfield ----------------------------------------------------------

struct LeadfieldArgs {
  Common common;
  std::string torso, out, z_out, heart_out;
  std::string z_csv, heart_mesh, intracellular;
  double sigma_i = -1.0;
};

int run_leadfield(const LeadfieldArgs& a) {
  const bool from_torso = !a.torso.empty();
  if (from_torso == !a.z_csv.empty()) throw ArgumentError("give exactly one of --torso or --z-csv");
  require_output(a.out);
  if (from_torso) {
    require_file(a.torso, "torso file");
    if (!a.z_out.empty()) require_output(a.z_out);
    if (!a.heart_out.empty()) require_output(a.heart_out);
    apply_threads(a.common);
    const TorsoModel model = load_torso(a.torso);
    const LeadFields lf = solve_lead_fields(model);
    const LeadFieldOperator op = assemble_ecg_operator(model, lf);
    for (std::size_t e = 0; e < lf.snaps.size(); ++e)
      log(a.common, "electrode " + model.electrode_names[e] + " -> vertex " + std::to_string(lf.snaps[e].vertex) +
                        " (snap distance " + format_double(lf.snaps[e].distance) + " mm)");
    log(a.common, "max relative residual " + format_double(lf.max_relative_residual));
    save_operator(a.out, op);
    wrote(a.common, a.out);
    if (!a.z_out.empty()) {
      std::string s = "vertex_id";
      for (const auto& n : lf.names) s += "," + n;
      s += "\n";
      for (Index v = 0; v < lf.Z.rows(); ++v) {
        s += std::to_string(v);
        for (Index l = 0; l < lf.Z.cols(); ++l) s += "," + format_double(lf.Z(v, l));
        s += "\n";
      }
      write_text(a.z_out, s);
      wrote(a.common, a.z_out);
    }
    if (!a.heart_out.empty()) {
      save_mesh(a.heart_out, extract_submesh(model.mesh, model.heart_label));
      wrote(a.common, a.heart_out);
    }
    return 0;
  }
  require_file(a.z_csv, "lead-field CSV");
  require_file(a.heart_mesh, "heart mesh file");
  if (!a.intracellular.empty()) require_file(a.intracellular, "intracellular conductivity file");
  if (a.intracellular.empty() == !(a.sigma_i > 0.0))
    throw ArgumentError("give exactly one of --intracellular or --sigma-i (> 0)");
  apply_threads(a.common);
  const Mesh heart = load_mesh(a.heart_mesh);
  const ImportedLeadFields z = load_lead_field_csv(a.z_csv);
  if (z.Z.rows() != heart.n_vertices())
    throw ArgumentError("lead-field CSV has " + std::to_string(z.Z.rows()) + " rows, heart mesh has " +
                        std::to_string(heart.n_vertices()) + " vertices");
  const std::vector<MatrixXd> gi =
      a.intracellular.empty()
          ? std::vector<MatrixXd>(static_cast<std::size_t>(heart.n_elements()),
                                  a.sigma_i * MatrixXd::Identity(heart.dim, heart.dim))
          : load_tensor_field(a.intracellular, "intracellular", heart.dim);
  const LeadFieldOperator op = assemble_ecg_operator(heart, gi, z.Z, z.names);
  save_operator(a.out, op);
  wrote(a.common, a.out);
  return 0;
}

// ---- synth2d ------------------------------------------------------------

struct Synth2dArgs {
  Common common;
  std::string out_dir;
  Synth2dOptions o;
  std::string convention = "midpoint";
  bool plot = false;
};

int run_synth2d(Synth2dArgs a) {
  prepare_dir(a.out_dir);
  apply_threads(a.common);
  a.o.tpl.convention = template_convention_from_string(a.convention);
  a.o.seed = a.common.seed;
  const Synth2dCase c = make_synth2d(a.o);
  const std::string heart = join(a.out_dir, "heart.json"), torso = join(a.out_dir, "torso.json"),
                    lf = join(a.out_dir, "leadfield.bin"), truth = join(a.out_dir, "truth_sites.csv"),
                    init = join(a.out_dir, "init_sites.csv"), truth_act = join(a.out_dir, "truth_activation.csv"),
                    target = join(a.out_dir, "target_ecg.csv"), config = join(a.out_dir, "config.json"),
                    summary = join(a.out_dir, "summary.json");
  save_mesh(heart, c.coarse.heart, &c.coarse.heart_metric);
  wrote(a.common, heart);
  save_torso(torso, c.coarse.model);
  wrote(a.common, torso);
  save_operator(lf, c.op);
  wrote(a.common, lf);
  save_sites(truth, c.truth);
  wrote(a.common, truth);
  save_sites(init, c.init);
  wrote(a.common, init);
  write_text(truth_act, activation_csv(c.truth_phi));
  wrote(a.common, truth_act);
  save_ecg(target, c.target);
  wrote(a.common, target);

  RunConfig rc;
  rc.mesh = "heart.json";
  rc.leadfield = "leadfield.bin";
  rc.target_ecg = "target_ecg.csv";
  rc.init_sites = "init_sites.csv";
  rc.dt = a.o.dt;
  rc.sites.K = a.o.n_init;
  rc.sites.seed = a.common.seed;
  rc.tpl = a.o.tpl;
  write_json(config, run_config_to_json(rc));
  wrote(a.common, config);

  Json snaps = Json::array();
  for (const auto& s : c.fields.snaps) snaps.push_back(s.distance);
  const Json sj{{"seed", a.common.seed},
                {"torso_vertices", c.coarse.model.mesh.n_vertices()},
                {"torso_elements", c.coarse.model.mesh.n_elements()},
                {"heart_vertices", c.coarse.heart.n_vertices()},
                {"heart_elements", c.coarse.heart.n_elements()},
                {"target_heart_vertices", c.target_heart_vertices},
                {"target_vertices", c.target_vertices},
                {"leads", c.op.names},
                {"electrode_snap_distance_mm", snaps},
                {"max_relative_residual", c.fields.max_relative_residual},
                {"conductivity_scale", {{"torso", c.scale_torso}, {"lung", c.scale_lung}, {"blood", c.scale_blood}}},
                {"window_ms", {c.target.grid.t_start, c.target.grid.t_end()}},
                {"dt_ms", c.target.grid.dt}};
  write_json(summary, sj);
  wrote(a.common, summary);
  if (a.plot) {
    const std::string p = join(a.out_dir, "target_ecg.svg");
    write_text(p, svg::ecg_overlay(c.target, "target"));
    wrote(a.common, p);
  }
  return 0;
}

// ---- gradcheck ----------------------------------------------------------

struct GradcheckArgs {
  Common common;
  MeshInput mesh;
  std::string sites, out, reference, leadfield, target, convention = "midpoint", mode = "volume";
  ApTemplate tpl;
  GradcheckOptions g;
  double tol_t = 1e-5, tol_x = 5e-2;
};

int run_gradcheck(GradcheckArgs a) {
  require_file(a.mesh.mesh, "mesh file");
  if (!a.mesh.metric.empty()) require_file(a.mesh.metric, "metric file");
  require_file(a.sites, "sites file");
  if (!a.reference.empty()) require_file(a.reference, "reference activation file");
  if (a.leadfield.empty() != a.target.empty()) throw ArgumentError("--leadfield and --target go together");
  if (!a.leadfield.empty()) {
    require_file(a.leadfield, "lead-field file");
    require_file(a.target, "target ECG file");
  }
  if (!a.out.empty()) require_output(a.out);
  apply_threads(a.common);
  a.tpl.convention = template_convention_from_string(a.convention);

  auto [mesh, metric] = load_mesh_and_metric(a.mesh);
  const SiteSet sites = load_sites(a.sites, site_mode_from_string(a.mode));
  const EikonalSolver solver(std::move(mesh), std::move(metric));
  const Index n_v = solver.mesh().n_vertices();
  FieldLoss loss;
  std::string loss_name;
  if (!a.leadfield.empty()) {
    auto op = std::make_shared<LeadFieldOperator>(load_operator(a.leadfield));
    if (op->n_vertices() != n_v) throw ArgumentError("lead-field operator does not match the mesh");
    auto target = std::make_shared<EcgTrace>(load_ecg(a.target));
    const ApTemplate tpl = a.tpl;
    loss = [op, target, tpl](const VectorXd& phi, VectorXd* grad) {
      const EcgTrace sim = forward_ecg(phi, *op, tpl, target->grid);
      if (grad) *grad = ecg_loss_backward(sim, *target, *op, tpl, phi);
      return ecg_loss(sim, *target);
    };
    loss_name = "ecg";
  } else {
    VectorXd ref = VectorXd::Zero(n_v);
    if (!a.reference.empty()) {
      ref = load_activation(a.reference);
      if (ref.size() != n_v) throw ArgumentError("reference activation does not match the mesh");
    }
    std::mt19937_64 rng(a.common.seed);
    VectorXd w(n_v);
    for (Index v = 0; v < n_v; ++v) w(v) = 0.5 + uniform01(rng);
    loss = quadratic_field_loss(ref, w);
    loss_name = "weighted_quadratic";
  }
  const GradcheckReport rep = gradcheck(solver, sites, loss, a.g);
  Json entries = Json::array();
  for (const auto& e : rep.entries)
    entries.push_back({{"site", e.site},
                       {"parameter", e.parameter < solver.mesh().dim ? std::string(kCoordinateNames[e.parameter]) : "t"},
                       {"analytic", e.analytic},
                       {"finite_difference", e.finite_difference},
                       {"argmin_switch", e.switched}});
  const bool ok = rep.max_rel_error_t <= a.tol_t && rep.max_rel_error_x <= a.tol_x;
  const Json j{{"loss", loss_name},
               {"seed", a.common.seed},
               {"step_x_mm", a.g.step_x},
               {"step_t_ms", a.g.step_t},
               {"n_f", a.g.eikonal.n_f},
               {"epsilon_ms", a.g.eikonal.epsilon},
               {"max_rel_error_t", rep.max_rel_error_t},
               {"max_rel_error_x", rep.max_rel_error_x},
               {"tol_t", a.tol_t},
               {"tol_x", a.tol_x},
               {"switched_steps", rep.switched_steps},
               {"dropped_edges", rep.dropped_edges},
               {"pass", ok},
               {"entries", entries}};
  if (!a.out.empty()) {
    write_json(a.out, j);
    wrote(a.common, a.out);
  }
  log(a.common, "max relative error t " + format_double(rep.max_rel_error_t) + ", x " +
                    format_double(rep.max_rel_error_x) + ", switched steps " + std::to_string(rep.switched_steps));
  if (!ok) {
    std::cerr << "error: gradient check above tolerance\n";
    return 2;
  }
  return 0;
}

// ---- fit ----------------------------------------------------------------

struct FitArgs {
  Common common;
  std::string config, out_dir, truth;
  std::optional<Index> epochs;
  std::optional<double> lr;
  bool plot = false, wall_clock = false, trajectory = false, progress = false;
};

int run_fit(const FitArgs& a) {
  require_file(a.config, "config file");
  RunConfig rc = load_run_config(a.config);
  if (a.epochs) rc.epochs = *a.epochs;
  if (a.lr) rc.adam.lr = *a.lr;
  if (a.common.seed_given) rc.sites.seed = a.common.seed;
  require_file(rc.mesh, "mesh file");
  if (!rc.metric.empty()) require_file(rc.metric, "metric file");
  require_file(rc.leadfield, "lead-field file");
  require_file(rc.target_ecg, "target ECG file");
  if (!rc.init_sites.empty()) require_file(rc.init_sites, "initial sites file");
  if (!a.truth.empty()) require_file(a.truth, "truth activation file");
  prepare_dir(a.out_dir);
  apply_threads(a.common);

  auto [mesh, metric] = load_mesh_and_metric({rc.mesh, rc.metric});
  const LeadFieldOperator op = load_operator(rc.leadfield);
  if (op.n_vertices() != mesh.n_vertices())
    throw ArgumentError("lead-field operator has " + std::to_string(op.n_vertices()) + " columns, mesh has " +
                        std::to_string(mesh.n_vertices()) + " vertices");
  const EcgTrace raw = load_ecg(rc.target_ecg);
  if (raw.n_leads() != op.n_leads()) throw ArgumentError("target ECG and lead-field operator have different leads");
  const double t0 = rc.window ? (*rc.window)[0] : raw.grid.t_start;
  const double t1 = rc.window ? (*rc.window)[1]
                              : raw.grid.t_start + std::floor(raw.grid.length() / rc.dt + 1e-9) * rc.dt;
  const EcgTrace target = resample(raw, TimeGrid::window(t0, t1, rc.dt));

  SiteSet init;
  if (!rc.init_sites.empty()) {
    init = load_sites(rc.init_sites, rc.sites.mode);
    for (Site& s : init) s.mode = rc.sites.mode;
  } else {
    init = init_sites(mesh, rc.sites);
  }
  for (const Site& s : init)
    if (s.x.size() != mesh.dim) throw ArgumentError("site dimension does not match the mesh");
  const EikonalSolver solver(std::move(mesh), std::move(metric));

  FitConfig cfg;
  cfg.epochs = rc.epochs;
  cfg.adam = rc.adam;
  cfg.eikonal = rc.eikonal;
  cfg.record_trajectories = a.trajectory;
  if (a.progress && !a.common.quiet)
    cfg.on_epoch = [](Index e, double l, Index act) {
      std::cerr << "epoch " << e << " loss " << format_double(l) << " active " << act << "\n";
    };
  const FitResult r = fit(solver, op, rc.tpl, target, init, cfg);

  Json rep = run_report_json(r, a.wall_clock, a.trajectory);
  rep["config"] = run_config_to_json(rc);
  if (!a.truth.empty() && r.phi.size() > 0) {
    const VectorXd truth = load_activation(a.truth);
    if (truth.size() != r.phi.size()) throw ArgumentError("truth activation does not match the mesh");
    rep["activation_rmse_ms"] = activation_rmse(r.phi, truth);
  }
  const std::string report = join(a.out_dir, "report.json"), sites = join(a.out_dir, "final_sites.csv");
  write_json(report, rep);
  wrote(a.common, report);
  save_sites(sites, r.sites, r.active.empty() ? nullptr : &r.active);
  wrote(a.common, sites);
  if (r.phi.size() > 0) {
    const std::string act = join(a.out_dir, "activation.csv"), ecg = join(a.out_dir, "fitted_ecg.csv");
    write_text(act, activation_csv(r.phi));
    wrote(a.common, act);
    const EcgTrace sim = forward_ecg(r.phi, op, rc.tpl, target.grid);
    save_ecg(ecg, sim);
    wrote(a.common, ecg);
    if (a.plot) {
      const std::string p = join(a.out_dir, "ecg.svg");
      write_text(p, svg::ecg_overlay(sim, "fitted", &target, "target"));
      wrote(a.common, p);
    }
  }
  if (a.plot) {
    const std::string p = join(a.out_dir, "loss.svg");
    write_text(p, svg::loss_curve(r.report.loss));
    wrote(a.common, p);
  }
  log(a.common, "initial loss " + format_double(r.report.initial_loss) + ", final loss " +
                    format_double(r.report.final_loss) + ", active sites " + std::to_string(r.report.final_active));
  if (r.report.aborted) {
    std::cerr << "error: fit aborted: " << r.report.message << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eikinv: differentiable anisotropic eikonal solver, lead-field ECG model and activation-site fitting"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", "eikinv 1.0");

  ForwardArgs fa;
  auto* fwd = app.add_subcommand("forward", "Solve the eikonal equation for a site set; writes activation CSV + diagnostics JSON");
  add_mesh_options(fwd, fa.mesh);
  fwd->add_option("--sites", fa.sites, "Sites CSV with columns x,y[,z] (mm), t (ms), optional mode")->required();
  fwd->add_option("--out", fa.out, "Activation CSV output (vertex_id, phi_ms)")->required();
  fwd->add_option("--diagnostics", fa.diagnostics, "Convergence diagnostics JSON (default: <out>.json)");
  fwd->add_option("--site-mode", fa.mode, "Constraint for sites without a mode column")
      ->check(CLI::IsMember({"volume", "surface"}))->capture_default_str();
  fwd->add_option("--epsilon", fa.epsilon, "Convergence threshold on the per-sweep decrease (ms)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  fwd->add_option("--n-f", fa.n_f, "FISTA iterations per local solve (0: derived from the Lipschitz bound)")
      ->check(CLI::NonNegativeNumber)->capture_default_str();
  fwd->add_option("--max-iters", fa.max_iters, "Maximum global sweeps (0: number of vertices)")
      ->check(CLI::NonNegativeNumber)->capture_default_str();
  add_common(fwd, fa.common, false);

  EcgArgs ea;
  auto* ecg = app.add_subcommand("ecg", "Simulate lead voltages from an activation field; writes ECG CSV");
  ecg->add_option("--leadfield", ea.leadfield, "Lead-field operator (binary, from `leadfield`)")->required();
  ecg->add_option("--activation", ea.activation, "Activation CSV (vertex_id, phi_ms)")->required();
  ecg->add_option("--out", ea.out, "ECG CSV output (time_ms, one column per lead in mV)")->required();
  ecg->add_option("--window", ea.window, "Time window t_start t_end (ms; default [0, max phi + 20])")->expected(2);
  ecg->add_option("--dt", ea.dt, "Sample spacing (ms)")->check(CLI::PositiveNumber)->capture_default_str();
  ecg->add_option("--target", ea.target, "Target ECG CSV; prints the loss (mV^2) and is overlaid in the plot");
  ecg->add_option("--plot", ea.plot, "Write an SVG of the traces to this path");
  add_template_options(ecg, ea.tpl, ea.convention);
  add_common(ecg, ea.common, false);

  LeadfieldArgs la;
  auto* lfc = app.add_subcommand("leadfield", "Compute lead fields and the ECG operator B; writes the binary operator");
  lfc->add_option("--torso", la.torso, "Torso JSON (mesh, labels, conductivities in S/m, electrodes in mm)");
  lfc->add_option("--out", la.out, "Binary lead-field operator output")->required();
  lfc->add_option("--z-out", la.z_out, "With --torso: nodal lead fields on all torso vertices as CSV");
  lfc->add_option("--heart-out", la.heart_out, "With --torso: heart sub-mesh JSON matching the operator's columns");
  lfc->add_option("--z-csv", la.z_csv, "Import precomputed nodal lead fields (CSV, one column per lead) on a heart mesh");
  lfc->add_option("--heart-mesh", la.heart_mesh, "With --z-csv: heart mesh JSON (mm)");
  lfc->add_option("--intracellular", la.intracellular,
                  "With --z-csv: per-element intracellular conductivity JSON {\"intracellular\": [...]} (S/m)");
  lfc->add_option("--sigma-i", la.sigma_i, "With --z-csv: isotropic intracellular conductivity (S/m)");
  add_common(lfc, la.common, false);

  Synth2dArgs sa;
  auto* syn = app.add_subcommand("synth2d", "Generate the idealized 2-D torso twin (mesh, lead fields, truth, target ECG)");
  syn->add_option("--out-dir", sa.out_dir, "Output directory (created if missing)")->required();
  syn->add_option("--resolution", sa.o.resolution, "Edge length of the inversion model in the ventricle (mm)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  syn->add_option("--target-resolution", sa.o.target_resolution, "Edge length of the target-generating model (mm)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  syn->add_option("--perturbation", sa.o.perturbation,
                  "Relative conductivity perturbation of the target model (0 with equal resolutions: inverse crime)")
      ->check(CLI::Range(0.0, 0.999))->capture_default_str();
  syn->add_option("--r-endo", sa.o.r_endo, "Endocardial radius (mm)")->capture_default_str();
  syn->add_option("--r-epi", sa.o.r_epi, "Epicardial radius (mm)")->capture_default_str();
  syn->add_option("--r-torso", sa.o.r_torso, "Torso radius (mm)")->capture_default_str();
  syn->add_option("--lung-center", sa.o.lung_center, "Lung centre distance from the axis (mm)")->capture_default_str();
  syn->add_option("--lung-semi-x", sa.o.lung_semi_x, "Lung semi-axis along x (mm)")->capture_default_str();
  syn->add_option("--lung-semi-y", sa.o.lung_semi_y, "Lung semi-axis along y (mm)")->capture_default_str();
  syn->add_option("--sigma-torso", sa.o.sigma_torso, "Torso conductivity (S/m)")->capture_default_str();
  syn->add_option("--sigma-lung", sa.o.sigma_lung, "Lung conductivity (S/m)")->capture_default_str();
  syn->add_option("--sigma-blood", sa.o.sigma_blood, "Blood-pool conductivity (S/m)")->capture_default_str();
  syn->add_option("--v-fiber", sa.o.v_fiber, "Conduction velocity along fibres (mm/ms)")->capture_default_str();
  syn->add_option("--v-cross", sa.o.v_cross, "Conduction velocity across fibres (mm/ms)")->capture_default_str();
  syn->add_option("--n-truth", sa.o.n_truth, "Number of ground-truth sites")->check(CLI::PositiveNumber)->capture_default_str();
  syn->add_option("--n-init", sa.o.n_init, "Number of initial sites for fitting")->check(CLI::PositiveNumber)->capture_default_str();
  syn->add_option("--dt", sa.o.dt, "ECG sample spacing (ms)")->check(CLI::PositiveNumber)->capture_default_str();
  syn->add_option("--window-margin", sa.o.window_margin, "Window extension after the last activation (ms)")->capture_default_str();
  syn->add_flag("--plot", sa.plot, "Also write target_ecg.svg");
  add_template_options(syn, sa.o.tpl, sa.convention);
  add_common(syn, sa.common, true);

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Compare adjoint gradients with central finite differences");
  add_mesh_options(gc, ga.mesh);
  gc->add_option("--sites", ga.sites, "Sites CSV with columns x,y[,z] (mm), t (ms)")->required();
  gc->add_option("--site-mode", ga.mode, "Constraint for sites without a mode column")
      ->check(CLI::IsMember({"volume", "surface"}))->capture_default_str();
  gc->add_option("--out", ga.out, "Report JSON output");
  gc->add_option("--reference", ga.reference,
                 "Reference activation CSV for the weighted quadratic loss (default: zero; weights drawn from --seed)");
  gc->add_option("--leadfield", ga.leadfield, "Use the ECG loss with this lead-field operator (needs --target)");
  gc->add_option("--target", ga.target, "Target ECG CSV for the ECG loss");
  gc->add_option("--step-x", ga.g.step_x, "Finite-difference step on positions (mm)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--step-t", ga.g.step_t, "Finite-difference step on onset times (ms)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--epsilon", ga.g.eikonal.epsilon, "Convergence threshold of every solve (ms)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--n-f", ga.g.eikonal.n_f, "FISTA iterations per local solve (0: derived default)")
      ->check(CLI::NonNegativeNumber)->capture_default_str();
  gc->add_option("--tol-t", ga.tol_t, "Pass threshold on the onset-time relative error")->capture_default_str();
  gc->add_option("--tol-x", ga.tol_x, "Pass threshold on the position relative error")->capture_default_str();
  add_template_options(gc, ga.tpl, ga.convention);
  add_common(gc, ga.common, true);

  FitArgs fta;
  auto* ft = app.add_subcommand("fit", "Fit activation sites to a target ECG with ADAM");
  ft->add_option("--config", fta.config, "Run configuration JSON (paths relative to its directory)")->required();
  ft->add_option("--out-dir", fta.out_dir, "Output directory: report.json, final_sites.csv, activation.csv, fitted_ecg.csv")
      ->required();
  ft->add_option("--epochs", fta.epochs, "Override the number of epochs");
  ft->add_option("--lr", fta.lr, "Override the ADAM learning rate (mm or ms per step)");
  ft->add_option("--truth", fta.truth, "Ground-truth activation CSV; the report then includes activation_rmse_ms");
  ft->add_flag("--plot", fta.plot, "Also write loss.svg and ecg.svg");
  ft->add_flag("--wall-clock", fta.wall_clock, "Record wall-clock seconds in the report (breaks byte-identical reruns)");
  ft->add_flag("--trajectory", fta.trajectory, "Record the parameter vector of every epoch in the report");
  ft->add_flag("--progress", fta.progress, "Print loss and active sites every epoch");
  add_common(ft, fta.common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (fwd->parsed()) return run_forward(fa);
    if (ecg->parsed()) return run_ecg(ea);
    if (lfc->parsed()) return run_leadfield(la);
    if (syn->parsed()) return run_synth2d(sa);
    if (gc->parsed()) return run_gradcheck(ga);
    if (ft->parsed()) return run_fit(fta);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
