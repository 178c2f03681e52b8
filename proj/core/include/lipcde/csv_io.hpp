#pragma once

// Long-format CSV: one row per (patient, time) with columns
//   patient_id, t, x_0..x_{k-1}, a_0..a_{J-1}, y, [z], observed
// Reals are written in shortest round-trip form, so export followed by
// ingest reproduces the dataset exactly.

#include "lipcde/sim.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lipcde::io {

struct CsvOptions {
  /// Skip rows whose observed flag is 0.
  bool observed_only = false;
  /// Write the z column when every record carries a true confounder.
  bool include_confounder = true;
};

void write_csv(std::ostream& out, const sim::Dataset& data, const CsvOptions& opts = {});
void write_csv(const std::filesystem::path& path, const sim::Dataset& data, const CsvOptions& opts = {});

struct IngestResult {
  sim::Dataset records;
  std::vector<std::string> warnings;
};

/// Parses the long format.  Records keep the order in which patients first
/// appear.  A missing `observed` column means every row is observed; a
/// missing `z` column leaves true_confounder empty and adds a warning.
/// Throws IoError on malformed content (bad header, duplicate
/// (patient_id, t), non-increasing time within a patient, non-binary
/// treatment, non-finite value).
IngestResult read_csv(std::istream& in, const std::string& source = "<stream>");
IngestResult read_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace lipcde::io
