#include "lipcde/csv_io.hpp"

#include "lipcde/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace lipcde::io {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) throw IoError(where + ": cannot parse number '" + s + "'");
  if (!std::isfinite(v)) throw IoError(where + ": non-finite value");
  return v;
}

bool all_have_confounder(const sim::Dataset& data) {
  for (const auto& r : data)
    if (!r.true_confounder) return false;
  return !data.empty();
}

}  // namespace

void write_csv(std::ostream& out, const sim::Dataset& data, const CsvOptions& opts) {
  if (data.empty()) throw IoError("write_csv: empty dataset");
  const Eigen::Index k = data.front().covariates.cols();
  const Eigen::Index j = data.front().treatments.cols();
  const bool with_z = opts.include_confounder && all_have_confounder(data);
  out << "patient_id,t";
  for (Eigen::Index i = 0; i < k; ++i) out << ",x_" << i;
  for (Eigen::Index i = 0; i < j; ++i) out << ",a_" << i;
  out << ",y";
  if (with_z) out << ",z";
  out << ",observed\n";
  for (const auto& r : data) {
    if (r.patient_id.find_first_of(",\n\r\"") != std::string::npos) {
      throw IoError("write_csv: patient id '" + r.patient_id + "' contains a delimiter");
    }
    if (r.covariates.cols() != k || r.treatments.cols() != j) throw IoError("write_csv: inconsistent dimensions");
    for (Eigen::Index t = 0; t < r.length(); ++t) {
      const bool obs = r.observed[static_cast<std::size_t>(t)] != 0;
      if (opts.observed_only && !obs) continue;
      out << r.patient_id << ',' << format_double(r.times[static_cast<std::size_t>(t)]);
      for (Eigen::Index i = 0; i < k; ++i) out << ',' << format_double(r.covariates(t, i));
      for (Eigen::Index i = 0; i < j; ++i) out << ',' << (r.treatments(t, i) != 0.0 ? '1' : '0');
      out << ',' << format_double(r.outcome(t));
      if (with_z) out << ',' << format_double((*r.true_confounder)(t));
      out << ',' << (obs ? '1' : '0') << '\n';
    }
  }
}

void write_csv(const std::filesystem::path& path, const sim::Dataset& data, const CsvOptions& opts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_csv(out, data, opts);
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

IngestResult read_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw IoError(source + ": empty file");
  const auto header = split_line(line);
  if (header.size() < 3 || header[0] != "patient_id" || header[1] != "t") {
    throw IoError(source + ": header must start with patient_id,t");
  }
  std::vector<std::size_t> x_cols, a_cols;
  std::optional<std::size_t> y_col, z_col, obs_col;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "x_" + std::to_string(x_cols.size())) {
      x_cols.push_back(c);
    } else if (h == "a_" + std::to_string(a_cols.size())) {
      a_cols.push_back(c);
    } else if (h == "y" && !y_col) {
      y_col = c;
    } else if (h == "z" && !z_col) {
      z_col = c;
    } else if (h == "observed" && !obs_col) {
      obs_col = c;
    } else {
      throw IoError(source + ": unexpected column '" + h + "'");
    }
  }
  if (x_cols.empty() || a_cols.empty() || !y_col) throw IoError(source + ": need x_0.., a_0.. and y columns");

  struct Rows {
    std::vector<double> t, y, z;
    std::vector<std::vector<double>> x, a;
    std::vector<std::uint8_t> obs;
  };
  std::vector<std::string> order;
  std::map<std::string, Rows> by_patient;
  std::set<std::pair<std::string, double>> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto f = split_line(line);
    if (f.size() != header.size()) throw IoError(where + ": expected " + std::to_string(header.size()) + " fields");
    const std::string& pid = f[0];
    if (pid.empty()) throw IoError(where + ": empty patient_id");
    auto field = [&](std::size_t c) { return parse_double(f[c], where + " (patient '" + pid + "', column " + header[c] + ")"); };
    const double t = field(1);
    if (!seen.emplace(pid, t).second) {
      throw IoError(where + ": duplicate row for patient '" + pid + "' at t=" + f[1]);
    }
    auto [it, inserted] = by_patient.try_emplace(pid);
    if (inserted) order.push_back(pid);
    Rows& r = it->second;
    if (!r.t.empty() && !(t > r.t.back())) {
      throw IoError(where + ": timestamps of patient '" + pid + "' are not strictly increasing");
    }
    r.t.push_back(t);
    std::vector<double> x, a;
    for (auto c : x_cols) x.push_back(field(c));
    for (auto c : a_cols) {
      const double v = field(c);
      if (v != 0.0 && v != 1.0) throw IoError(where + ": treatment value '" + f[c] + "' is not binary");
      a.push_back(v);
    }
    r.x.push_back(std::move(x));
    r.a.push_back(std::move(a));
    r.y.push_back(field(*y_col));
    if (z_col) r.z.push_back(field(*z_col));
    if (obs_col) {
      const std::string& o = f[*obs_col];
      if (o != "0" && o != "1") throw IoError(where + ": observed flag must be 0 or 1");
      r.obs.push_back(o == "1" ? 1 : 0);
    } else {
      r.obs.push_back(1);
    }
  }
  if (order.empty()) throw IoError(source + ": no data rows");

  IngestResult res;
  if (!z_col) res.warnings.push_back(source + ": no z column; true confounders absent, CovSim disabled");
  const auto k = static_cast<Eigen::Index>(x_cols.size());
  const auto j = static_cast<Eigen::Index>(a_cols.size());
  for (const auto& pid : order) {
    Rows& r = by_patient[pid];
    sim::TrajectoryRecord rec;
    rec.patient_id = pid;
    const auto n = static_cast<Eigen::Index>(r.t.size());
    rec.times = r.t;
    rec.covariates.resize(n, k);
    rec.treatments.resize(n, j);
    rec.outcome.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      for (Eigen::Index c = 0; c < k; ++c) rec.covariates(i, c) = r.x[u][static_cast<std::size_t>(c)];
      for (Eigen::Index c = 0; c < j; ++c) rec.treatments(i, c) = r.a[u][static_cast<std::size_t>(c)];
      rec.outcome(i) = r.y[u];
    }
    if (z_col) rec.true_confounder = Eigen::Map<Eigen::VectorXd>(r.z.data(), n);
    rec.observed = r.obs;
    res.records.push_back(std::move(rec));
  }
  return res;
}

IngestResult read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  return read_csv(in, path.string());
}

}  // namespace lipcde::io
