// End-to-end checks of the eikinv executable through its files and exit codes.

#include "eikinv/io.hpp"
#include "eikinv/meshgen.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

using namespace eikinv;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "eikinv_test_cli";

int run(const std::string& args, const std::string& log = "") {
  std::string cmd = std::string(EIKINV_CLI) + " " + args;
  cmd += log.empty() ? " >/dev/null 2>&1" : " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string dir(const std::string& name) {
  const fs::path p = kRoot / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

/// Unit square at n cells, identity metric inline, and a corner site.
void unit_square_fixture(const std::string& d, int n) {
  const Mesh m = structured_square(n);
  const MetricField metric = MetricField::constant(m, MatrixXd::Identity(2, 2));
  save_mesh(d + "/mesh.json", m, &metric);
  write_text(d + "/sites.csv", "x,y,t\n0,0,0\n");
}

}  // namespace

TEST(Cli, ForwardMatchesEuclideanOracle) {
  const std::string d = dir("forward");
  unit_square_fixture(d, 20);
  ASSERT_EQ(run("forward --mesh " + d + "/mesh.json --sites " + d + "/sites.csv --out " + d + "/phi.csv --quiet"), 0);
  const VectorXd phi = load_activation(d + "/phi.csv");
  const Mesh m = load_mesh(d + "/mesh.json");
  double err = 0.0;
  for (Index v = 0; v < m.n_vertices(); ++v) err = std::max(err, std::abs(phi(v) - m.vertex(v).norm()));
  EXPECT_LE(err, 2 * 0.05);
  const Json diag = read_json(d + "/phi.csv.json");
  EXPECT_TRUE(diag.at("converged").get<bool>());
  EXPECT_EQ(diag.at("unreached").get<int>(), 0);
}

TEST(Cli, MissingMetricIsUsageErrorNamingThePath) {
  const std::string d = dir("missing");
  unit_square_fixture(d, 4);
  const std::string log = d + "/log.txt";
  EXPECT_EQ(run("forward --mesh " + d + "/mesh.json --metric " + d + "/nope.json --sites " + d + "/sites.csv --out " + d +
                    "/phi.csv",
                log),
            1);
  EXPECT_NE(read_text(log).find(d + "/nope.json"), std::string::npos) << read_text(log);
  EXPECT_FALSE(fs::exists(d + "/phi.csv"));
}

TEST(Cli, EpsilonRefinementAgrees) {
  const std::string d = dir("epsilon");
  unit_square_fixture(d, 16);
  const std::string base = "forward --mesh " + d + "/mesh.json --sites " + d + "/sites.csv --quiet";
  ASSERT_EQ(run(base + " --epsilon 1e-4 --out " + d + "/a.csv"), 0);
  ASSERT_EQ(run(base + " --epsilon 1e-6 --out " + d + "/b.csv"), 0);
  const VectorXd a = load_activation(d + "/a.csv"), b = load_activation(d + "/b.csv");
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Cli, NonConvergenceExitsTwo) {
  const std::string d = dir("noconv");
  unit_square_fixture(d, 16);
  EXPECT_EQ(run("forward --mesh " + d + "/mesh.json --sites " + d + "/sites.csv --out " + d +
                "/phi.csv --max-iters 2 --quiet"),
            2);
}

TEST(Cli, EcgOfConstantActivationIsZero) {
  const std::string d = dir("ecg");
  LeadFieldOperator op;
  op.B.resize(3, 6);
  op.B << 1, -2, 3, 0, -1, -1,  //
      0.5, 0.5, -1, 2, -1, -1,  //
      -3, 1, 1, 1, 0, 0;
  op.names = {"A", "B", "C"};
  save_operator(d + "/op.bin", op);
  write_text(d + "/phi.csv", activation_csv(VectorXd::Constant(6, 7.5)));
  ASSERT_EQ(run("ecg --leadfield " + d + "/op.bin --activation " + d + "/phi.csv --out " + d + "/ecg.csv --quiet"), 0);
  const EcgTrace e = load_ecg(d + "/ecg.csv");
  EXPECT_EQ(e.names, op.names);
  EXPECT_EQ(e.grid.t_start, 0.0);
  EXPECT_GE(e.grid.t_end(), 27.5);
  EXPECT_LE(e.values.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cli, GradcheckOnTinyFixture) {
  const std::string d = dir("gradcheck");
  const Mesh m = structured_square(8, 10.0);
  MatrixXd D(2, 2);
  D << 2.0, 0.3, 0.3, 1.0;
  const MetricField metric = MetricField::constant(m, D);
  save_mesh(d + "/mesh.json", m, &metric);
  write_text(d + "/sites.csv", "x,y,t\n2.3,3.1,0\n7.7,2.8,1.5\n5.2,8.1,0.5\n");
  ASSERT_EQ(run("gradcheck --mesh " + d + "/mesh.json --sites " + d + "/sites.csv --out " + d + "/gc.json --quiet"), 0);
  const Json r = read_json(d + "/gc.json");
  EXPECT_LE(r.at("max_rel_error_t").get<double>(), 1e-5);
  EXPECT_LE(r.at("max_rel_error_x").get<double>(), 5e-2);
}

TEST(Cli, HelpDocumentsUnits) {
  const std::string d = dir("help");
  const std::vector<std::pair<std::string, std::vector<std::string>>> expect{
      {"forward", {"--epsilon", "(ms)", "(mm)"}},
      {"ecg", {"--dt", "--window", "(ms)"}},
      {"leadfield", {"--torso", "--z-csv", "(S/m)"}},
      {"synth2d", {"--resolution", "--perturbation", "(mm)", "(S/m)", "(mm/ms)"}},
      {"gradcheck", {"--step-x", "--step-t", "(mm)", "(ms)"}},
      {"fit", {"--config", "--epochs", "--lr", "--seed"}}};
  for (const auto& [cmd, words] : expect) {
    const std::string log = d + "/" + cmd + ".txt";
    ASSERT_EQ(run(cmd + " --help", log), 0) << cmd;
    const std::string text = read_text(log);
    for (const std::string& w : words) EXPECT_NE(text.find(w), std::string::npos) << cmd << " lacks " << w;
  }
}

TEST(Cli, UnknownSubcommandIsUsageError) { EXPECT_EQ(run("nonsense"), 1); }

TEST(Cli, RerunsAreByteIdentical) {
  const std::string d = dir("rerun");
  unit_square_fixture(d, 12);
  for (const char* tag : {"a", "b"}) {
    const std::string t = tag;
    ASSERT_EQ(run("forward --mesh " + d + "/mesh.json --sites " + d + "/sites.csv --out " + d + "/phi_" + t +
                  ".csv --quiet --threads 1"),
              0);
    ASSERT_EQ(run("synth2d --out-dir " + d + "/s_" + t + " --resolution 1.8 --target-resolution 1.2 --seed 5 --quiet"),
              0);
  }
  EXPECT_EQ(read_text(d + "/phi_a.csv"), read_text(d + "/phi_b.csv"));
  EXPECT_EQ(read_text(d + "/phi_a.csv.json"), read_text(d + "/phi_b.csv.json"));
  for (const char* f : {"heart.json", "torso.json", "truth_sites.csv", "init_sites.csv", "target_ecg.csv",
                        "config.json", "summary.json", "truth_activation.csv"})
    EXPECT_EQ(read_text(d + "/s_a/" + f), read_text(d + "/s_b/" + f)) << f;
  EXPECT_EQ(read_text(d + "/s_a/leadfield.bin"), read_text(d + "/s_b/leadfield.bin"));
}

TEST(Cli, ShortFitOnSynthOutputs) {
  const std::string d = dir("fit");
  ASSERT_EQ(run("synth2d --out-dir " + d + "/s --resolution 1.8 --target-resolution 1.2 --quiet"), 0);
  ASSERT_EQ(run("fit --config " + d + "/s/config.json --out-dir " + d + "/out --epochs 5 --truth " + d +
                "/s/truth_activation.csv --plot --quiet"),
            0);
  const Json r = read_json(d + "/out/report.json");
  EXPECT_EQ(r.at("loss").size(), 5u);
  EXPECT_EQ(r.at("epochs_run").get<int>(), 5);
  EXPECT_FALSE(r.contains("wall_clock_s"));
  EXPECT_TRUE(r.contains("activation_rmse_ms"));
  EXPECT_EQ(load_sites(d + "/out/final_sites.csv").size(), 8u);
  EXPECT_TRUE(fs::exists(d + "/out/loss.svg"));
  EXPECT_TRUE(fs::exists(d + "/out/ecg.svg"));
}
