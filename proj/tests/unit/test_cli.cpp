#include "cli.hpp"

#include "lipcde/config.hpp"
#include "lipcde/csv_io.hpp"
#include "lipcde/run_io.hpp"

#include <json.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace lipcde;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const fs::path kTiny = fs::path(LIPCDE_SOURCE_DIR) / "configs" / "tiny.json";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("lipcde_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // tiny.json with `patch` merged in, written next to the outputs.
  std::string config(const json& patch = json::object(), const std::string& name = "cfg.json") {
    json j = json::parse(io::read_file(kTiny));
    j.merge_patch(patch);
    std::ofstream(dir_ / name) << j.dump(2);
    return (dir_ / name).string();
  }

  fs::path dir_;
};

std::size_t data_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) ++n;
  return n - 1;
}

}  // namespace

TEST_F(CliTest, SimulateWritesFilesAndRoundTrips) {
  const auto cfg_path = config();
  const auto out = dir_ / "sim";
  const auto r = run_cli({"simulate", "--config", cfg_path, "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"factual.csv", "counterfactual.csv", "observed_m15.csv", "manifest.json", "config.effective.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  const auto cfg = config::load_config(cfg_path);
  const auto factual = sim::simulate_factual(cfg.sim);
  std::size_t rows = 0, observed = 0;
  for (const auto& rec : factual) rows += static_cast<std::size_t>(rec.length());
  EXPECT_EQ(data_lines(out / "factual.csv"), rows);
  EXPECT_EQ(io::read_csv(out / "factual.csv").records, factual);
  EXPECT_EQ(io::read_csv(out / "counterfactual.csv").records, sim::simulate_counterfactual(cfg.sim));
  for (const auto& rec : sim::apply_missingness(factual, 0.15, cfg.eval.missingness_seed))
    observed += static_cast<std::size_t>(rec.n_observed());
  EXPECT_EQ(data_lines(out / "observed_m15.csv"), observed);

  const json manifest = json::parse(io::read_file(out / "manifest.json"));
  EXPECT_EQ(manifest["config_hash"], io::sha256_hex(cfg.canonical));
  EXPECT_EQ(manifest["command"], "simulate");
}

TEST_F(CliTest, InvalidConfigLeavesNoFiles) {
  const auto out = dir_ / "bad";
  const auto r = run_cli({"simulate", "--config", config({{"sim", {{"gamma_deg", 1.5}}}}), "--out", out.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  EXPECT_NE(r.err.find("gamma_deg"), std::string::npos);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli({"simulate", "--config", (dir_ / "absent.json").string()}).code, 3);
  EXPECT_EQ(run_cli({"simulate", "--config", config({{"sim", {{"colour", 1}}}})}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate", "--config", config()}).code, 2);
  EXPECT_EQ(run_cli({"train", "--config", config(), "--variants", "bogus"}).code, 2);
  EXPECT_EQ(run_cli({"train", "--config", config(), "--seeds", "1", "2", "--out", (dir_ / "t").string()}).code, 2);
  EXPECT_EQ(run_cli({"plot", "--config", config(), "--out", (dir_ / "nothing").string()}).code, 3);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST_F(CliTest, NoOverwriteWithoutForce) {
  const auto cfg = config();
  const auto out = (dir_ / "sim").string();
  ASSERT_EQ(run_cli({"simulate", "--config", cfg, "--out", out}).code, 0);
  const auto again = run_cli({"simulate", "--config", cfg, "--out", out});
  EXPECT_EQ(again.code, 3);
  EXPECT_NE(again.err.find("exists"), std::string::npos);
  EXPECT_EQ(run_cli({"simulate", "--config", cfg, "--out", out, "--force"}).code, 0);
}

TEST_F(CliTest, TrainIsByteDeterministicAndEvaluateAgrees) {
  const auto cfg = config();
  const auto a = dir_ / "a", b = dir_ / "b";
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--out", a.string()}).code, 0);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--out", b.string()}).code, 0);
  for (const char* f : {"metrics.json", "losses.csv", "model.json", "manifest.json", "config.effective.json"})
    EXPECT_TRUE(fs::exists(a / f)) << f;
  EXPECT_EQ(io::read_file(a / "metrics.json"), io::read_file(b / "metrics.json"));
  EXPECT_EQ(io::read_file(a / "losses.csv"), io::read_file(b / "losses.csv"));
  EXPECT_EQ(io::read_file(a / "model.json"), io::read_file(b / "model.json"));

  const json m = json::parse(io::read_file(a / "metrics.json"));
  for (const char* key : {"run_id", "variant", "seed", "rmse", "rmse_pct", "covsim", "cf_rmse", "wallclock_seconds"})
    EXPECT_TRUE(m.contains(key)) << key;
  EXPECT_EQ(data_lines(a / "losses.csv"), 2u);

  const auto e = dir_ / "eval";
  const auto r = run_cli({"evaluate", "--config", cfg, "--model", a.string(), "--out", e.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json em = json::parse(io::read_file(e / "metrics.json"));
  EXPECT_EQ(em["rmse"], m["rmse"]);
  EXPECT_EQ(em["covsim"], m["covsim"]);
}

TEST_F(CliTest, TrainOnIngestedCsvWithoutZ) {
  const auto sim_dir = dir_ / "sim";
  ASSERT_EQ(run_cli({"simulate", "--config", config(), "--out", sim_dir.string()}).code, 0);
  // Drop the z column.
  std::ifstream in(sim_dir / "factual.csv");
  std::ofstream out(dir_ / "noz.csv");
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
    f.erase(f.end() - 2);
    for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << f[i];
    out << "\n";
  }
  out.close();
  const auto cfg = config({{"data", {{"factual_csv", "noz.csv"}}}});
  const auto r = run_cli({"train", "--config", cfg, "--out", (dir_ / "t").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("CovSim disabled"), std::string::npos);
  const json m = json::parse(io::read_file(dir_ / "t" / "metrics.json"));
  EXPECT_TRUE(m["covsim"].is_null());
  EXPECT_TRUE(m["cf_rmse"].is_null());
}

TEST_F(CliTest, AblateSingleRow) {
  const auto cfg = config({{"eval", {{"missing_rates", {0.0}}}}});
  const auto out = dir_ / "abl";
  const auto r = run_cli({"ablate", "--config", cfg, "--seeds", "1", "--variants", "full", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(data_lines(out / "comparison.csv"), 1u);
  EXPECT_TRUE(fs::exists(out / "full_s1_m00" / "metrics.json"));
}

TEST_F(CliTest, AblateThreadCountDoesNotChangeResults) {
  const auto cfg = config();
  const std::vector<std::string> common{"--seeds", "1", "2", "--variants", "full", "conf_baseline", "--config", cfg};
  auto args = [&](const fs::path& out) {
    std::vector<std::string> a{"ablate", "--out", out.string()};
    a.insert(a.end(), common.begin(), common.end());
    return a;
  };
  ::setenv("LIPCDE_THREADS", "1", 1);
  ASSERT_EQ(run_cli(args(dir_ / "one")).code, 0);
  ::setenv("LIPCDE_THREADS", "3", 1);
  ASSERT_EQ(run_cli(args(dir_ / "three")).code, 0);
  ::setenv("LIPCDE_THREADS", "zero", 1);
  EXPECT_EQ(run_cli(args(dir_ / "bad")).code, 2);
  ::unsetenv("LIPCDE_THREADS");
  const std::string one = io::read_file(dir_ / "one" / "comparison.csv");
  EXPECT_EQ(one, io::read_file(dir_ / "three" / "comparison.csv"));
  EXPECT_EQ(data_lines(dir_ / "one" / "comparison.csv"), 8u);  // 2 variants x 2 seeds x 2 rates
  EXPECT_NE(one.find("conf_baseline,2,0.15,"), std::string::npos);
}

TEST_F(CliTest, GradcheckOnTinyConfig) {
  const auto r = run_cli({"gradcheck", "--config", kTiny.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("max_relative_error="), std::string::npos);
}

TEST_F(CliTest, SweepAndPlot) {
  const auto cfg = config({{"train", {{"epochs", 1}}}});
  const auto out = dir_ / "sweep";
  const auto r = run_cli({"evaluate", "--sweep", "--config", cfg, "--seeds", "1", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(out / "sweep.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "gamma,variant,n_seeds,rmse,rmse_pct,cf_rmse,covsim");
  std::vector<std::string> gammas;
  while (std::getline(in, line))
    if (!line.empty()) gammas.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(gammas, (std::vector<std::string>{"0", "0.2", "0.4", "0.6", "0.8"}));

  ASSERT_EQ(run_cli({"plot", "--config", cfg, "--out", out.string()}).code, 0);
  const std::string svg = io::read_file(out / "rmse_vs_gamma.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_EQ(run_cli({"plot", "--config", cfg, "--out", out.string()}).code, 3);
  EXPECT_EQ(run_cli({"plot", "--config", cfg, "--out", out.string(), "--force"}).code, 0);
}

// Parameters of order 1e200 overflow once squared inside the solver.
TEST_F(CliTest, DivergentTrainingExitsFour) {
  const auto cfg = config({{"train", {{"learning_rate", 1e200}, {"epochs", 3}}}});
  const auto r = run_cli({"train", "--config", cfg, "--out", (dir_ / "t").string()});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("numerical error"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("batch "), std::string::npos) << r.err;
}
