#pragma once

// End-to-end model: boundary branch -> history embedding -> CDE -> LSTM
// decoder, plus the ablation and baseline wirings.

#include "lipcde/cde.hpp"
#include "lipcde/outcome.hpp"
#include "lipcde/sim.hpp"
#include "lipcde/spectral.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lipcde::model {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using ad::Vector;

enum class Variant { kFull, kWoHc, kWoLip, kWoHigh, kWoLow, kConfBaseline, kOracleConf };

std::string to_string(Variant v);
/// Accepts the tags full, wo_hc, wo_lip, wo_high, wo_low, conf_baseline,
/// oracle_conf; throws std::invalid_argument otherwise.
Variant parse_variant(const std::string& tag);
const std::vector<Variant>& all_variants();

struct ModelConfig {
  spectral::BoundaryConfig boundary;
  cde::CdeConfig cde;
  outcome::DecoderConfig decoder;
  outcome::PropensityConfig propensity;
  /// Minimum power iterations per projection (warm-started).
  int projection_iters = 1;
  /// Evaluate the boundary branch and multiply its output by zero in the
  /// wo_hc variant instead of skipping it.  Used to check the wiring.
  bool wo_hc_compute_zeroed = false;

  void validate() const;
};

/// Per-feature affine scaling fitted on training patients.
struct Standardizer {
  Vector x_mean, x_sd;
  double y_mean = 0.0, y_sd = 1.0;
  double z_mean = 0.0, z_sd = 1.0;

  static Standardizer fit(const sim::Dataset& data, const std::vector<std::size_t>& indices);
};

/// Observed rows of one trajectory in model units.
struct PreparedPatient {
  std::string patient_id;
  std::vector<double> times;
  Matrix covariates;  // n x k, standardised
  Matrix treatments;  // n x J
  Vector outcome;     // standardised
  std::optional<Vector> confounder;  // standardised true Z
  Matrix history;     // [covariates | treatments]
  std::vector<Eigen::Index> source_rows;  // row index in the full record
  Eigen::Index full_length = 0;

  Eigen::Index length() const { return covariates.rows(); }
};

PreparedPatient prepare(const sim::TrajectoryRecord& rec, const Standardizer& s);
std::vector<PreparedPatient> prepare(const sim::Dataset& data, const std::vector<std::size_t>& indices,
                                     const Standardizer& s);

class LipCdeModel {
 public:
  LipCdeModel(Variant variant, Eigen::Index x_dim, Eigen::Index a_dim, const ModelConfig& cfg, std::uint64_t seed);
  LipCdeModel(const LipCdeModel&) = delete;
  LipCdeModel& operator=(const LipCdeModel&) = delete;

  struct Output {
    std::vector<Var> y_hat;  // one 1x1 per observed row
    std::vector<Var> z_hat;  // inferred (or oracle / zero) confounder per row
    std::vector<Var> latent; // CDE states (empty for conf_baseline)
  };

  Output forward(Tape& tape, const PreparedPatient& patient);
  /// Predictions in model (standardised) units.
  Vector predict(const PreparedPatient& patient);
  /// Inferred confounders, (n x z_dim); requires a boundary-branch variant.
  Matrix infer_confounders(const PreparedPatient& patient);

  /// Parameters trained by the outcome loss (those the variant uses).
  nn::ParameterList outcome_parameters();
  nn::ParameterList propensity_parameters();
  /// Every parameter, in a fixed order (serialisation).
  nn::ParameterList all_parameters();

  /// Post-optimizer hook: spectral projection unless the variant is wo_lip.
  void after_step();

  Variant variant() const { return variant_; }
  const ModelConfig& config() const { return cfg_; }
  bool uses_boundary() const;
  bool uses_cde() const { return variant_ != Variant::kConfBaseline; }
  Eigen::Index x_dim() const { return x_dim_; }
  Eigen::Index a_dim() const { return a_dim_; }

  spectral::BoundaryBranch& boundary() { return boundary_; }
  cde::HistoryEmbedding& embedding() { return embed_; }
  cde::LipschitzRnnField& field() { return field_; }
  outcome::OutcomeDecoder& decoder() { return decoder_; }
  outcome::PropensityNetwork& propensity() { return propensity_; }

 private:
  Var confounder_at(Tape& tape, const PreparedPatient& p, Eigen::Index row);

  Variant variant_;
  ModelConfig cfg_;
  Eigen::Index x_dim_, a_dim_;
  spectral::BoundaryBranch boundary_;
  cde::HistoryEmbedding embed_;
  cde::LipschitzRnnField field_;
  outcome::OutcomeDecoder decoder_;
  outcome::PropensityNetwork propensity_;
};

}  // namespace lipcde::model
