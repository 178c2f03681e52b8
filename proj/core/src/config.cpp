#include "lipcde/config.hpp"

#include "lipcde/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace lipcde::config {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and remembers which keys were
// consumed so that leftovers can be reported.
class Section {
 public:
  Section(const json& root, std::string path) : path_(std::move(path)) {
    if (root.is_null()) {
      obj_ = json::object();
    } else if (!root.is_object()) {
      throw ConfigError(path_ + ": expected an object");
    } else {
      obj_ = root;
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  json sub(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? json() : *it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path_ + "." + it.key() + "'");
    }
  }

  const std::string& path() const { return path_; }

 private:
  json obj_;
  std::string path_;
  std::set<std::string> seen_;
};

cde::Solver parse_solver(const std::string& s) {
  if (s == "rk4") return cde::Solver::kRk4;
  if (s == "euler") return cde::Solver::kEuler;
  throw ConfigError("cde.solver: expected 'euler' or 'rk4', got '" + s + "'");
}

cde::Interp parse_interp(const std::string& s) {
  if (s == "linear") return cde::Interp::kLinear;
  if (s == "cubic") return cde::Interp::kCubic;
  throw ConfigError("cde.interp: expected 'linear' or 'cubic', got '" + s + "'");
}

std::string solver_name(cde::Solver s) { return s == cde::Solver::kRk4 ? "rk4" : "euler"; }
std::string interp_name(cde::Interp i) { return i == cde::Interp::kLinear ? "linear" : "cubic"; }

template <typename F>
void wrap(const std::string& where, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (run_id.empty()) throw ConfigError("run_id: must not be empty");
  if (run_id.find('/') != std::string::npos) throw ConfigError("run_id: must not contain '/'");
  wrap("sim", [&] { sim.validate(); });
  wrap("model", [&] { model.validate(); });
  wrap("train", [&] { train.validate(); });
  if (seeds.empty()) throw ConfigError("train.seeds: at least one seed required");
  if (eval.missing_rates.empty()) throw ConfigError("eval.missing_rates: at least one rate required");
  for (double r : eval.missing_rates)
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("eval.missing_rates: rates must lie in [0, 1)");
  for (double g : eval.gamma_sweep)
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("eval.gamma_sweep: values must lie in [0, 1]");
  for (const auto& v : eval.variants) wrap("eval.variants", [&] { model::parse_variant(v); });
  if (data.counterfactual_csv && !data.factual_csv) throw ConfigError("data.counterfactual_csv requires data.factual_csv");
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");

  ExperimentConfig cfg;
  cfg.canonical = root.dump();
  Section top(root, "config");
  top.get("run_id", cfg.run_id);
  std::string out_dir = cfg.output_dir.string();
  top.get("output_dir", out_dir);
  cfg.output_dir = out_dir;

  {
    Section s(top.sub("sim"), "sim");
    auto& c = cfg.sim;
    s.get("n_patients", c.n_patients);
    s.get("t_min", c.t_min);
    s.get("t_max", c.t_max);
    s.get("k_covariates", c.k_covariates);
    s.get("n_treatments", c.n_treatments);
    s.get("order_p", c.order_p);
    s.get("gamma_deg", c.gamma_deg);
    s.get_optional("gamma_treat", c.gamma_treat);
    s.get_optional("gamma_outcome", c.gamma_outcome);
    s.get("lambda_treat", c.lambda_treat);
    s.get("noise_eta_sd", c.noise_eta_sd);
    s.get("noise_eps_sd", c.noise_eps_sd);
    s.get("init_sd", c.init_sd);
    s.get("seed", c.seed);
    s.finish();
  }
  {
    Section s(top.sub("spectral"), "spectral");
    auto& b = cfg.model.boundary;
    s.get_optional("cutoff_d0", b.cutoff_d0);
    s.get("conv_kernel", b.conv_kernel);
    s.get("rnn_hidden", b.rnn_hidden);
    s.get("z_dim", b.z_dim);
    s.get("projection_iters", cfg.model.projection_iters);
    s.finish();
  }
  {
    Section s(top.sub("cde"), "cde");
    auto& c = cfg.model.cde;
    s.get("latent_dim", c.latent_dim);
    std::string solver = solver_name(c.solver), interp = interp_name(c.interp);
    s.get("solver", solver);
    s.get("interp", interp);
    c.solver = parse_solver(solver);
    c.interp = parse_interp(interp);
    s.get_optional("step", c.step);
    s.get("beta_a", c.beta_a);
    s.get("beta_w", c.beta_w);
    s.get("gamma_a_shift", c.gamma_a_shift);
    s.get("gamma_w_shift", c.gamma_w_shift);
    s.finish();
  }
  {
    Section s(top.sub("outcome"), "outcome");
    std::vector<int> widths{cfg.model.decoder.hidden1, cfg.model.decoder.hidden2};
    s.get("decoder_hidden", widths);
    if (widths.size() != 2) throw ConfigError("outcome.decoder_hidden: expected two widths");
    cfg.model.decoder.hidden1 = widths[0];
    cfg.model.decoder.hidden2 = widths[1];
    auto& p = cfg.model.propensity;
    s.get("propensity_hidden", p.hidden);
    s.get("prob_clamp", p.clamp);
    std::string agg = p.aggregation == outcome::WeightAggregation::kMean ? "mean" : "product";
    s.get("weight_aggregation", agg);
    if (agg == "mean") {
      p.aggregation = outcome::WeightAggregation::kMean;
    } else if (agg == "product") {
      p.aggregation = outcome::WeightAggregation::kProduct;
    } else {
      throw ConfigError("outcome.weight_aggregation: expected 'mean' or 'product', got '" + agg + "'");
    }
    std::vector<double> clip{p.lower_percentile, p.upper_percentile};
    s.get("clip_percentiles", clip);
    if (clip.size() != 2) throw ConfigError("outcome.clip_percentiles: expected [lower, upper]");
    p.lower_percentile = clip[0];
    p.upper_percentile = clip[1];
    s.finish();
  }
  {
    Section s(top.sub("loss"), "loss");
    s.get("final_only", cfg.train.final_only);
    s.finish();
  }
  {
    Section s(top.sub("train"), "train");
    auto& t = cfg.train;
    s.get("learning_rate", t.learning_rate);
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("iters_per_batch", t.iters_per_batch);
    s.get("normalize_weights", t.normalize_weights);
    std::vector<double> split{t.split.train, t.split.validation, t.split.test};
    s.get("split", split);
    if (split.size() != 3) throw ConfigError("train.split: expected [train, validation, test]");
    t.split = {split[0], split[1], split[2]};
    s.get("seeds", cfg.seeds);
    s.finish();
  }
  {
    Section s(top.sub("eval"), "eval");
    auto& e = cfg.eval;
    s.get("missing_rates", e.missing_rates);
    s.get("gamma_sweep", e.gamma_sweep);
    s.get("variants", e.variants);
    s.get("counterfactual", e.counterfactual);
    s.get("record_wallclock", e.record_wallclock);
    s.get("missingness_seed", e.missingness_seed);
    s.finish();
  }
  {
    Section s(top.sub("data"), "data");
    std::optional<std::string> f, c;
    s.get_optional("factual_csv", f);
    s.get_optional("counterfactual_csv", c);
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    if (f) cfg.data.factual_csv = resolve(*f);
    if (c) cfg.data.counterfactual_csv = resolve(*c);
    s.finish();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

std::string dump_effective(const ExperimentConfig& cfg) {
  json j;
  j["run_id"] = cfg.run_id;
  j["output_dir"] = cfg.output_dir.string();
  const auto& s = cfg.sim;
  j["sim"] = {{"n_patients", s.n_patients},       {"t_min", s.t_min},
              {"t_max", s.t_max},                 {"k_covariates", s.k_covariates},
              {"n_treatments", s.n_treatments},   {"order_p", s.order_p},
              {"gamma_deg", s.gamma_deg},         {"gamma_treat", s.gamma_a()},
              {"gamma_outcome", s.gamma_y()},     {"lambda_treat", s.lambda_treat},
              {"noise_eta_sd", s.noise_eta_sd},   {"noise_eps_sd", s.noise_eps_sd},
              {"init_sd", s.init_sd},             {"seed", s.seed}};
  const auto& b = cfg.model.boundary;
  j["spectral"] = {{"cutoff_d0", b.cutoff_d0 ? json(*b.cutoff_d0) : json()},
                   {"conv_kernel", b.conv_kernel},
                   {"rnn_hidden", b.rnn_hidden},
                   {"z_dim", b.z_dim},
                   {"projection_iters", cfg.model.projection_iters}};
  const auto& c = cfg.model.cde;
  j["cde"] = {{"latent_dim", c.latent_dim},     {"solver", solver_name(c.solver)},
              {"step", c.step ? json(*c.step) : json()},
              {"interp", interp_name(c.interp)}, {"beta_a", c.beta_a},
              {"beta_w", c.beta_w},              {"gamma_a_shift", c.gamma_a_shift},
              {"gamma_w_shift", c.gamma_w_shift}};
  const auto& p = cfg.model.propensity;
  j["outcome"] = {{"decoder_hidden", {cfg.model.decoder.hidden1, cfg.model.decoder.hidden2}},
                  {"propensity_hidden", p.hidden},
                  {"prob_clamp", p.clamp},
                  {"weight_aggregation", p.aggregation == outcome::WeightAggregation::kMean ? "mean" : "product"},
                  {"clip_percentiles", {p.lower_percentile, p.upper_percentile}}};
  j["loss"] = {{"final_only", cfg.train.final_only}};
  const auto& t = cfg.train;
  j["train"] = {{"learning_rate", t.learning_rate},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"iters_per_batch", t.iters_per_batch},
                {"normalize_weights", t.normalize_weights},
                {"split", {t.split.train, t.split.validation, t.split.test}},
                {"seeds", cfg.seeds}};
  const auto& e = cfg.eval;
  j["eval"] = {{"missing_rates", e.missing_rates},   {"gamma_sweep", e.gamma_sweep},
               {"variants", e.variants},             {"counterfactual", e.counterfactual},
               {"record_wallclock", e.record_wallclock}, {"missingness_seed", e.missingness_seed}};
  json d = json::object();
  if (cfg.data.factual_csv) d["factual_csv"] = cfg.data.factual_csv->string();
  if (cfg.data.counterfactual_csv) d["counterfactual_csv"] = cfg.data.counterfactual_csv->string();
  j["data"] = d;
  return j.dump(2);
}

}  // namespace lipcde::config
