#include "lipcde/experiment.hpp"

#include "lipcde/csv_io.hpp"

#include <chrono>

namespace lipcde::experiment {

DataBundle load_or_simulate(const config::ExperimentConfig& cfg) {
  DataBundle out;
  if (cfg.data.factual_csv) {
    auto f = io::read_csv(*cfg.data.factual_csv);
    out.factual = std::move(f.records);
    out.warnings = std::move(f.warnings);
    if (cfg.data.counterfactual_csv) {
      auto c = io::read_csv(*cfg.data.counterfactual_csv);
      out.counterfactual = std::move(c.records);
    }
  } else {
    out.factual = sim::simulate_factual(cfg.sim);
    out.counterfactual = sim::simulate_counterfactual(cfg.sim);
  }
  return out;
}

metrics::MetricsReport evaluate_model(const config::ExperimentConfig& cfg, const DataBundle& data,
                                      model::LipCdeModel& model, const model::Standardizer& s,
                                      const std::vector<std::size_t>& test, double missing_rate) {
  const sim::Dataset factual = missing_rate > 0.0
                                   ? sim::apply_missingness(data.factual, missing_rate, cfg.eval.missingness_seed)
                                   : data.factual;
  metrics::MetricsReport r;
  r.variant = model::to_string(model.variant());
  r.missing_rate = missing_rate;
  const auto sc = metrics::score_factual(model, s, factual, test);
  r.rmse = metrics::rmse(sc.prediction, sc.truth);
  r.rmse_pct = metrics::rmse_pct(r.rmse, sc.truth);
  r.covsim = metrics::model_covsim(model, s, factual, test);
  if (data.counterfactual && cfg.eval.counterfactual) {
    r.cf_rmse = metrics::evaluate_counterfactual(model, s, factual, *data.counterfactual, test);
  }
  return r;
}

JobResult run_job(const config::ExperimentConfig& cfg, const DataBundle& data, const JobSpec& job,
                  const std::string& run_id) {
  const auto t0 = std::chrono::steady_clock::now();
  const sim::Dataset factual = job.missing_rate > 0.0
                                   ? sim::apply_missingness(data.factual, job.missing_rate, cfg.eval.missingness_seed)
                                   : data.factual;
  train::TrainConfig tc = cfg.train;
  tc.seed = job.seed;
  JobResult res;
  res.trained = train::train(factual, job.variant, cfg.model, tc);
  res.report = evaluate_model(cfg, data, *res.trained.model, res.trained.standardizer, res.trained.split.test,
                              job.missing_rate);
  res.report.run_id = run_id;
  res.report.seed = job.seed;
  res.report.best_epoch = res.trained.best_epoch;
  res.report.weights = res.trained.weights;
  if (cfg.eval.record_wallclock) {
    res.report.wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return res;
}

}  // namespace lipcde::experiment
