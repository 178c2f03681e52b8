#pragma once

// Run-directory artefacts: manifest, metrics.json, losses.csv, model.json
// and SVG line plots.

#include "lipcde/config.hpp"
#include "lipcde/metrics.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace lipcde::io {

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(const std::string& data);

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// Creates `dir`.  An existing directory is an IoError unless `force`, in
/// which case it is removed first.
void prepare_run_dir(const std::filesystem::path& dir, bool force);

struct Manifest {
  std::string command;
  std::string config_hash;
  std::string code_version;
  std::vector<std::uint64_t> seeds;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> files;
};

std::string code_version();
/// Current UTC time, ISO 8601.
std::string utc_timestamp();
std::string manifest_json(const Manifest& m);

std::string metrics_json(const metrics::MetricsReport& r);
std::string losses_csv(const std::vector<train::EpochRecord>& history);

/// Everything needed to rebuild a trained model.
std::string model_json(model::LipCdeModel& model, const model::Standardizer& s, const train::DataSplit& split,
                       std::uint64_t seed);

struct LoadedModel {
  std::unique_ptr<model::LipCdeModel> model;
  model::Standardizer standardizer;
  train::DataSplit split;
  std::uint64_t seed = 0;
};

/// Rebuilds a model saved by model_json under the given configuration.
/// IoError if the file is malformed or does not match the configuration.
LoadedModel load_model(const std::filesystem::path& path, const model::ModelConfig& cfg);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Standalone SVG line chart.
std::string line_plot_svg(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label);

}  // namespace lipcde::io
