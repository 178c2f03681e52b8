#include "cli.hpp"

#include "lipcde/csv_io.hpp"
#include "lipcde/errors.hpp"
#include "lipcde/experiment.hpp"
#include "lipcde/run_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace lipcde::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> variants;
  bool force = false;
  bool sweep = false;
  std::string model_dir;
};

std::string rate_tag(double rate) {
  std::ostringstream s;
  s << "m" << std::setw(2) << std::setfill('0') << std::llround(rate * 100.0);
  return s.str();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

fs::path default_out(const config::ExperimentConfig& cfg, const std::string& command) {
  return cfg.output_dir / cfg.run_id / command;
}

fs::path out_dir(const Options& o, const config::ExperimentConfig& cfg) {
  return o.out_dir.empty() ? default_out(cfg, o.command) : fs::path(o.out_dir);
}

std::vector<std::uint64_t> seeds_of(const Options& o, const config::ExperimentConfig& cfg) {
  return o.seeds.empty() ? cfg.seeds : o.seeds;
}

std::vector<model::Variant> variants_of(const Options& o, const std::vector<std::string>& fallback) {
  std::vector<model::Variant> out;
  for (const auto& v : o.variants.empty() ? fallback : o.variants) {
    try {
      out.push_back(model::parse_variant(v));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--variants: ") + e.what());
    }
  }
  return out;
}

io::Manifest start_manifest(const std::string& command, const config::ExperimentConfig& cfg,
                            const std::vector<std::uint64_t>& seeds) {
  io::Manifest m;
  m.command = command;
  m.config_hash = io::sha256_hex(cfg.canonical);
  m.code_version = io::code_version();
  m.seeds = seeds;
  m.started_at = io::utc_timestamp();
  return m;
}

void finish_manifest(io::Manifest m, const fs::path& dir) {
  m.finished_at = io::utc_timestamp();
  io::write_file_atomic(dir / "manifest.json", io::manifest_json(m));
}

int cmd_simulate(const Options& o, const config::ExperimentConfig& cfg, std::ostream& out) {
  if (cfg.data.factual_csv) throw ConfigError("simulate: the configuration names input data; remove the data section");
  const fs::path dir = out_dir(o, cfg);
  io::Manifest m = start_manifest("simulate", cfg, {cfg.sim.seed});
  // Generate everything before touching the file system.
  const sim::Dataset factual = sim::simulate_factual(cfg.sim);
  const sim::Dataset counterfactual = sim::simulate_counterfactual(cfg.sim);
  io::prepare_run_dir(dir, o.force);
  io::write_csv(dir / "factual.csv", factual);
  io::write_csv(dir / "counterfactual.csv", counterfactual);
  m.files = {"factual.csv", "counterfactual.csv"};
  for (double rate : cfg.eval.missing_rates) {
    if (rate == 0.0) continue;
    const auto masked = sim::apply_missingness(factual, rate, cfg.eval.missingness_seed);
    const std::string name = "observed_" + rate_tag(rate) + ".csv";
    io::write_csv(dir / name, masked, {.observed_only = true});
    m.files.push_back(name);
  }
  io::write_file_atomic(dir / "config.effective.json", config::dump_effective(cfg));
  m.files.push_back("config.effective.json");
  m.files.push_back("manifest.json");
  finish_manifest(m, dir);
  std::size_t rows = 0;
  for (const auto& r : factual) rows += static_cast<std::size_t>(r.length());
  out << "simulate: " << factual.size() << " patients, " << rows << " rows -> " << dir.string() << "\n";
  return kOk;
}

void write_job(const fs::path& dir, const experiment::JobResult& r, bool with_model) {
  io::write_file_atomic(dir / "metrics.json", io::metrics_json(r.report));
  io::write_file_atomic(dir / "losses.csv", io::losses_csv(r.trained.history));
  if (with_model) {
    io::write_file_atomic(dir / "model.json", io::model_json(*r.trained.model, r.trained.standardizer, r.trained.split,
                                                             r.report.seed));
  }
}

void warn_all(const experiment::DataBundle& data, std::ostream& err) {
  for (const auto& w : data.warnings) err << "warning: " << w << "\n";
}

int cmd_train(const Options& o, const config::ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto seeds = seeds_of(o, cfg);
  const auto variants = variants_of(o, {"full"});
  if (seeds.size() != 1 || variants.size() != 1) throw ConfigError("train: expects one seed and one variant (use ablate for more)");
  const fs::path dir = out_dir(o, cfg);
  io::Manifest m = start_manifest("train", cfg, seeds);
  const auto data = experiment::load_or_simulate(cfg);
  warn_all(data, err);
  io::prepare_run_dir(dir, o.force);
  const double rate = cfg.eval.missing_rates.front();
  const auto res = experiment::run_job(cfg, data, {variants.front(), seeds.front(), rate}, cfg.run_id);
  m.files = {"manifest.json", "metrics.json", "losses.csv", "model.json", "config.effective.json"};
  io::write_file_atomic(dir / "config.effective.json", config::dump_effective(cfg));
  finish_manifest(m, dir);
  write_job(dir, res, true);
  out << "train: variant=" << res.report.variant << " seed=" << res.report.seed << " rmse=" << fmt(res.report.rmse)
      << " rmse_pct=" << fmt(res.report.rmse_pct) << " -> " << dir.string() << "\n";
  return kOk;
}

int cmd_evaluate_model(const Options& o, const config::ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path model_dir = o.model_dir.empty() ? default_out(cfg, "train") : fs::path(o.model_dir);
  auto loaded = io::load_model(model_dir / "model.json", cfg.model);
  const auto data = experiment::load_or_simulate(cfg);
  warn_all(data, err);
  for (std::size_t i : loaded.split.test)
    if (i >= data.factual.size()) throw IoError("evaluate: model split does not match the configured data");
  const fs::path dir = out_dir(o, cfg);
  io::Manifest m = start_manifest("evaluate", cfg, {loaded.seed});
  io::prepare_run_dir(dir, o.force);
  auto report = experiment::evaluate_model(cfg, data, *loaded.model, loaded.standardizer, loaded.split.test,
                                           cfg.eval.missing_rates.front());
  report.run_id = cfg.run_id;
  report.seed = loaded.seed;
  m.files = {"manifest.json", "metrics.json"};
  finish_manifest(m, dir);
  io::write_file_atomic(dir / "metrics.json", io::metrics_json(report));
  out << "evaluate: rmse=" << fmt(report.rmse) << " rmse_pct=" << fmt(report.rmse_pct) << " -> " << dir.string() << "\n";
  return kOk;
}

// Runs jobs on up to thread_budget() threads; results keep job order.
template <typename Job, typename Fn>
auto run_parallel(const std::vector<Job>& jobs, Fn&& fn) {
  using Result = decltype(fn(jobs.front()));
  std::vector<std::optional<Result>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        results[i] = fn(jobs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(thread_budget()), jobs.size());
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<Result> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

int cmd_sweep(const Options& o, const config::ExperimentConfig& cfg, std::ostream& out) {
  if (cfg.data.factual_csv) throw ConfigError("evaluate --sweep simulates its data; remove the data section");
  if (cfg.eval.gamma_sweep.empty()) throw ConfigError("eval.gamma_sweep: no values");
  const auto seeds = seeds_of(o, cfg);
  const auto variants = variants_of(o, {"full"});
  const fs::path dir = out_dir(o, cfg);
  io::Manifest m = start_manifest("evaluate", cfg, seeds);
  io::prepare_run_dir(dir, o.force);

  struct Job {
    double gamma;
    model::Variant variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double g : cfg.eval.gamma_sweep)
    for (auto v : variants)
      for (auto s : seeds) jobs.push_back({g, v, s});
  std::map<double, experiment::DataBundle> data;
  for (double g : cfg.eval.gamma_sweep) {
    config::ExperimentConfig c = cfg;
    c.sim.gamma_deg = g;
    c.sim.gamma_treat.reset();
    c.sim.gamma_outcome.reset();
    data[g] = experiment::load_or_simulate(c);
  }
  const double rate = cfg.eval.missing_rates.front();
  auto reports = run_parallel(jobs, [&](const Job& j) {
    return experiment::run_job(cfg, data.at(j.gamma), {j.variant, j.seed, rate}, cfg.run_id).report;
  });

  std::ostringstream csv;
  csv << "gamma,variant,n_seeds,rmse,rmse_pct,cf_rmse,covsim\n";
  std::size_t k = 0;
  for (double g : cfg.eval.gamma_sweep) {
    for (auto v : variants) {
      double rm = 0, pct = 0, cf = 0, cov = 0;
      int n_cf = 0, n_cov = 0;
      for (std::size_t s = 0; s < seeds.size(); ++s, ++k) {
        const auto& r = reports[k];
        rm += r.rmse;
        pct += r.rmse_pct;
        if (r.cf_rmse) cf += *r.cf_rmse, ++n_cf;
        if (r.covsim) cov += *r.covsim, ++n_cov;
      }
      const double n = static_cast<double>(seeds.size());
      csv << fmt(g) << ',' << model::to_string(v) << ',' << seeds.size() << ',' << fmt(rm / n) << ',' << fmt(pct / n)
          << ',' << (n_cf ? fmt(cf / n_cf) : "") << ',' << (n_cov ? fmt(cov / n_cov) : "") << '\n';
    }
  }
  m.files = {"manifest.json", "sweep.csv"};
  finish_manifest(m, dir);
  io::write_file_atomic(dir / "sweep.csv", csv.str());
  out << csv.str();
  return kOk;
}

int cmd_ablate(const Options& o, const config::ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto seeds = seeds_of(o, cfg);
  const auto variants = variants_of(o, cfg.eval.variants);
  const fs::path dir = out_dir(o, cfg);
  io::Manifest m = start_manifest("ablate", cfg, seeds);
  const auto data = experiment::load_or_simulate(cfg);
  warn_all(data, err);
  io::prepare_run_dir(dir, o.force);

  std::vector<experiment::JobSpec> jobs;
  for (auto v : variants)
    for (auto s : seeds)
      for (double r : cfg.eval.missing_rates) jobs.push_back({v, s, r});
  auto name = [](const experiment::JobSpec& j) {
    return model::to_string(j.variant) + "_s" + std::to_string(j.seed) + "_" + rate_tag(j.missing_rate);
  };
  auto reports = run_parallel(jobs, [&](const experiment::JobSpec& j) {
    const std::string job_name = name(j);
    auto res = experiment::run_job(cfg, data, j, cfg.run_id + "/" + job_name);
    fs::create_directories(dir / job_name);
    write_job(dir / job_name, res, false);
    return res.report;
  });

  std::ostringstream csv;
  csv << "variant,seed,missing_rate,rmse,rmse_pct,covsim,cf_rmse\n";
  m.files = {"manifest.json", "comparison.csv"};
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& r = reports[i];
    csv << r.variant << ',' << r.seed << ',' << fmt(r.missing_rate) << ',' << fmt(r.rmse) << ',' << fmt(r.rmse_pct)
        << ',' << fmt(r.covsim) << ',' << fmt(r.cf_rmse) << '\n';
    m.files.push_back(name(jobs[i]) + "/metrics.json");
    m.files.push_back(name(jobs[i]) + "/losses.csv");
  }
  finish_manifest(m, dir);
  io::write_file_atomic(dir / "comparison.csv", csv.str());
  out << csv.str();
  return kOk;
}

sim::TrajectoryRecord head_rows(const sim::TrajectoryRecord& r, Eigen::Index n) {
  sim::TrajectoryRecord o = r;
  n = std::min(n, r.length());
  o.times.resize(static_cast<std::size_t>(n));
  o.covariates = r.covariates.topRows(n);
  o.treatments = r.treatments.topRows(n);
  o.outcome = r.outcome.head(n);
  if (r.true_confounder) o.true_confounder = r.true_confounder->head(n);
  o.observed.resize(static_cast<std::size_t>(n));
  return o;
}

int cmd_gradcheck(const Options& o, const config::ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  constexpr double kTolerance = 1e-3;
  const auto seeds = seeds_of(o, cfg);
  const auto variants = variants_of(o, {"full"});
  sim::SimConfig sc = cfg.sim;
  sc.n_patients = 3;
  sim::Dataset data;
  for (const auto& r : sim::simulate_factual(sc)) data.push_back(head_rows(r, 5));
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto s = model::Standardizer::fit(data, all);
  const auto patients = model::prepare(data, all, s);
  ad::Vector w(static_cast<Eigen::Index>(patients.size()));
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 0.5 + 0.5 * static_cast<double>(i);
  double worst = 0.0;
  for (auto v : variants) {
    model::LipCdeModel m(v, data.front().covariates.cols(), data.front().treatments.cols(), cfg.model, seeds.front());
    const auto res = metrics::gradient_check(m, patients, w);
    out << "gradcheck: variant=" << model::to_string(v) << " entries=" << res.entries_checked
        << " max_relative_error=" << std::scientific << std::setprecision(3) << res.max_relative_error
        << std::defaultfloat << " worst=" << res.worst_parameter << "\n";
    worst = std::max(worst, res.max_relative_error);
  }
  if (worst > kTolerance) {
    err << "error: max relative gradient error " << worst << " exceeds " << kTolerance << "\n";
    return kNumericalError;
  }
  return kOk;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  return f;
}

int cmd_plot(const Options& o, const config::ExperimentConfig& cfg, std::ostream& out) {
  const fs::path dir = o.out_dir.empty() ? default_out(cfg, "evaluate") : fs::path(o.out_dir);
  const fs::path target = dir / "rmse_vs_gamma.svg";
  if (fs::exists(target) && !o.force) throw IoError("'" + target.string() + "' exists; pass --force to overwrite");
  std::istringstream in(io::read_file(dir / "sweep.csv"));
  std::string line;
  std::getline(in, line);
  if (line.rfind("gamma,variant,", 0) != 0) throw IoError("sweep.csv: unexpected header");
  std::map<std::string, io::PlotSeries> series;
  std::vector<std::string> order;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() < 4) throw IoError("sweep.csv: short row");
    auto [it, fresh] = series.try_emplace(f[1]);
    if (fresh) {
      it->second.label = f[1];
      order.push_back(f[1]);
    }
    try {
      it->second.x.push_back(std::stod(f[0]));
      it->second.y.push_back(std::stod(f[3]));
    } catch (const std::exception&) {
      throw IoError("sweep.csv: malformed number");
    }
  }
  std::vector<io::PlotSeries> ordered;
  for (const auto& k : order) ordered.push_back(series[k]);
  io::write_file_atomic(target, io::line_plot_svg(ordered, "Factual RMSE vs confounding degree", "confounding degree",
                                                  "RMSE"));
  out << "plot: " << target.string() << "\n";
  return kOk;
}

int dispatch(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = config::load_config(o.config_path);
  if (o.command == "simulate") return cmd_simulate(o, cfg, out);
  if (o.command == "train") return cmd_train(o, cfg, out, err);
  if (o.command == "evaluate") return o.sweep ? cmd_sweep(o, cfg, out) : cmd_evaluate_model(o, cfg, out, err);
  if (o.command == "ablate") return cmd_ablate(o, cfg, out, err);
  if (o.command == "gradcheck") return cmd_gradcheck(o, cfg, out, err);
  if (o.command == "plot") return cmd_plot(o, cfg, out);
  throw ConfigError("unknown command '" + o.command + "'");
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int thread_budget() {
  const char* env = std::getenv("LIPCDE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("LIPCDE_THREADS must be a positive integer");
  return static_cast<int>(std::min<long>(v, 256));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Treatment-effect estimation with Lipschitz-bounded neural CDEs", "lipcde"};
  app.require_subcommand(1, 1);
  const std::map<std::string, std::string> commands{
      {"simulate", "Generate factual, counterfactual and missingness CSV files"},
      {"train", "Train one variant on one seed"},
      {"evaluate", "Score a trained model, or run the confounding sweep with --sweep"},
      {"ablate", "Train every variant x seed x missing rate and tabulate"},
      {"gradcheck", "Compare analytic and finite-difference gradients"},
      {"plot", "Render RMSE vs confounding degree from sweep.csv as SVG"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "Experiment configuration (JSON)")->required();
    sub->add_option("--out", o.out_dir, "Output directory");
    sub->add_option("--seeds", o.seeds, "Seeds (default: train.seeds)");
    sub->add_option("--variants", o.variants, "Variants (full wo_hc wo_lip wo_high wo_low conf_baseline oracle_conf)");
    sub->add_flag("--force", o.force, "Overwrite an existing output directory");
    if (name == "evaluate") {
      sub->add_flag("--sweep", o.sweep, "Train and score across eval.gamma_sweep");
      sub->add_option("--model", o.model_dir, "Directory holding model.json");
    }
    sub->callback([&o, name = name] { o.command = name; });
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kConfigError;
  }
  try {
    return dispatch(o, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << one_line(e.what()) << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    err << "io error: " << one_line(e.what()) << "\n";
    return kIoError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << one_line(e.what()) << "\n";
    return kNumericalError;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << one_line(e.what()) << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kFailure;
  }
}

}  // namespace lipcde::cli
