#include "lipcde/run_io.hpp"

#include "lipcde/errors.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifndef LIPCDE_VERSION
#define LIPCDE_VERSION "0.0.0"
#endif

namespace lipcde::io {

using nlohmann::json;
namespace fs = std::filesystem;

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void prepare_run_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!force) throw IoError("run directory '" + dir.string() + "' exists; pass --force to overwrite");
    fs::remove_all(dir, ec);
    if (ec) throw IoError("cannot remove '" + dir.string() + "': " + ec.message());
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

std::string code_version() { return LIPCDE_VERSION; }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string manifest_json(const Manifest& m) {
  json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["code_version"] = m.code_version;
  j["seeds"] = m.seeds;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["files"] = m.files;
  return j.dump(2) + "\n";
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(); }

json matrix_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.size(); ++i) data.push_back(m.data()[i]);
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw IoError("model: matrix size mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
  return m;
}

}  // namespace

std::string metrics_json(const metrics::MetricsReport& r) {
  json j;
  j["run_id"] = r.run_id;
  j["variant"] = r.variant;
  j["seed"] = r.seed;
  j["missing_rate"] = r.missing_rate;
  j["rmse"] = r.rmse;
  j["rmse_pct"] = r.rmse_pct;
  j["covsim"] = optional_number(r.covsim);
  j["cf_rmse"] = optional_number(r.cf_rmse);
  j["wallclock_seconds"] = optional_number(r.wallclock_seconds);
  j["best_epoch"] = r.best_epoch;
  j["weights"] = {{"mean_step_weight", r.weights.mean_step_weight},
                  {"min_patient_weight", r.weights.min_patient_weight},
                  {"max_patient_weight", r.weights.max_patient_weight},
                  {"effective_sample_size", r.weights.effective_sample_size}};
  return j.dump(2) + "\n";
}

std::string losses_csv(const std::vector<train::EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,validation_loss,propensity_nll\n";
  for (const auto& e : history) {
    out << e.epoch << ',' << json(e.train_loss).dump() << ',' << json(e.validation_loss).dump() << ','
        << json(e.propensity_nll).dump() << '\n';
  }
  return out.str();
}

std::string model_json(model::LipCdeModel& m, const model::Standardizer& s, const train::DataSplit& split,
                       std::uint64_t seed) {
  json j;
  j["variant"] = model::to_string(m.variant());
  j["seed"] = seed;
  j["x_dim"] = m.x_dim();
  j["a_dim"] = m.a_dim();
  j["standardizer"] = {{"x_mean", matrix_json(s.x_mean)}, {"x_sd", matrix_json(s.x_sd)}, {"y_mean", s.y_mean},
                       {"y_sd", s.y_sd},                  {"z_mean", s.z_mean},           {"z_sd", s.z_sd}};
  j["split"] = {{"train", split.train}, {"validation", split.validation}, {"test", split.test}};
  json params = json::object();
  const nn::ParameterList all = m.all_parameters();
  for (const ad::Parameter* p : all.items()) params[p->name] = matrix_json(p->value);
  j["parameters"] = params;
  return j.dump() + "\n";
}

LoadedModel load_model(const fs::path& path, const model::ModelConfig& cfg) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError("model file '" + path.string() + "' is not valid JSON");
  }
  try {
    LoadedModel out;
    out.seed = j.at("seed").get<std::uint64_t>();
    const auto variant = model::parse_variant(j.at("variant").get<std::string>());
    out.model = std::make_unique<model::LipCdeModel>(variant, j.at("x_dim").get<Eigen::Index>(),
                                                     j.at("a_dim").get<Eigen::Index>(), cfg, out.seed);
    const auto& st = j.at("standardizer");
    out.standardizer.x_mean = matrix_from_json(st.at("x_mean")).col(0);
    out.standardizer.x_sd = matrix_from_json(st.at("x_sd")).col(0);
    out.standardizer.y_mean = st.at("y_mean").get<double>();
    out.standardizer.y_sd = st.at("y_sd").get<double>();
    out.standardizer.z_mean = st.at("z_mean").get<double>();
    out.standardizer.z_sd = st.at("z_sd").get<double>();
    out.split.train = j.at("split").at("train").get<std::vector<std::size_t>>();
    out.split.validation = j.at("split").at("validation").get<std::vector<std::size_t>>();
    out.split.test = j.at("split").at("test").get<std::vector<std::size_t>>();
    const auto& params = j.at("parameters");
    const nn::ParameterList all = out.model->all_parameters();
    for (ad::Parameter* p : all.items()) {
      Eigen::MatrixXd v = matrix_from_json(params.at(p->name));
      if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
        throw IoError("model: parameter '" + p->name + "' has a different shape than the configuration implies");
      }
      p->value = std::move(v);
    }
    return out;
  } catch (const json::exception& e) {
    throw IoError("model file '" + path.string() + "' is malformed: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError("model file '" + path.string() + "': " + e.what());
  }
}

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string line_plot_svg(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label) {
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 40, B = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot: x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) throw std::invalid_argument("plot: no points");
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << std::setprecision(2) << xv
      << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << std::setprecision(3) << yv
      << "</text>\n" << std::setprecision(2);
    o << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
      << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << escape_xml(x_label)
    << "</text>\n";
  o << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape_xml(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* c = colors[s % std::size(colors)];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) o << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    o << "\"/>\n";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      o << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\"" << py(series[s].y[i]) << "\" r=\"3\" fill=\"" << c
        << "\"/>\n";
    }
    const double ly = T + 10 + 18.0 * static_cast<double>(s);
    o << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\">" << escape_xml(series[s].label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace lipcde::io
