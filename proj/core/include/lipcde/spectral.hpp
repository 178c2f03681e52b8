#pragma once

// Hidden-confounder boundary branch.
//
// The history sequence is moved to the frequency domain (bins sorted so the
// zero frequency sits at the centre), split by complementary Gaussian
// low/high-pass responses, convolved along the frequency axis, brought back
// to the time domain, encoded by a recurrent layer and mapped to inferred
// confounders by a linear head whose spectral norm is kept <= 1.

#include "lipcde/autodiff.hpp"
#include "lipcde/nn.hpp"

#include <complex>
#include <optional>
#include <vector>

namespace lipcde::spectral {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using ad::Vector;

enum class FilterKind { kLow, kHigh };

/// Gaussian response at frequency distance d: low = exp(-d^2 / (2 d0^2)),
/// high = 1 - low.
double gaussian_filter_response(double d, double d0, FilterKind kind);

struct FilterSpec {
  double cutoff_d0 = 1.0;
  int num_bins = 8;

  /// D_0 = num_bins / 8 unless an explicit cutoff is given.
  static FilterSpec for_length(int num_bins, std::optional<double> cutoff = std::nullopt);
  void validate() const;
};

/// Signed frequency index of centred bin c for a transform of length n.
int centered_frequency(int bin, int n);

struct SpectralSplit {
  Eigen::MatrixXcd high;  // bins x channels, centred ordering
  Eigen::MatrixXcd low;
};

/// Per-channel DFT along the rows of `sequence` (length == spec.num_bins),
/// centred, then weighted by the Gaussian high/low responses.
SpectralSplit spectral_split(const Matrix& sequence, const FilterSpec& spec);

/// Real part of the inverse DFT of a centred spectrum.
Matrix inverse_transform(const Eigen::MatrixXcd& centered);

/// Largest singular value by power iteration on W^T W.  `iters` is the
/// minimum number of iterations; iteration continues until the estimate
/// settles to relative change 1e-14.  `warm` (if non-null) supplies and
/// receives the right singular vector estimate.
double spectral_norm_estimate(const Matrix& weight, int iters, Vector* warm = nullptr);

/// W / max(1, sigma_hat).
Matrix spectral_norm_project(const Matrix& weight, int iters);

/// Linear map z = W h + b with W projected onto the spectral-norm ball.
struct LipschitzLinear {
  ad::Parameter weight;
  ad::Parameter bias;
  Vector power_iter_vec;
  double target_bound = 1.0;

  LipschitzLinear() = default;
  LipschitzLinear(std::string name, Eigen::Index in, Eigen::Index out, nn::Rng& rng);

  /// Rescales the weight so its spectral norm is at most target_bound.
  void project(int iters = 1);
  Var forward(Tape& tape, const Var& h);
  Vector apply(const Vector& h) const { return weight.value * h + bias.value.col(0); }
  void collect(nn::ParameterList& list) {
    list.add(weight);
    list.add(bias);
  }
};

struct BoundaryConfig {
  /// Absolute cutoff; defaults to num_bins / 8 per transform.
  std::optional<double> cutoff_d0;
  int conv_kernel = 3;
  int rnn_hidden = 32;
  int z_dim = 1;
  bool use_high = true;
  bool use_low = true;
};

struct BoundaryBranchOutput {
  std::vector<Var> z_hat;  // one z_dim column per time step
  Var encoder_state;       // final recurrent state
};

/// Boundary branch parameters and forward pass.
class BoundaryBranch {
 public:
  BoundaryBranch() = default;
  BoundaryBranch(Eigen::Index input_dim, const BoundaryConfig& cfg, nn::Rng& rng);

  /// history: (length x input_dim), index-regular rows.
  BoundaryBranchOutput forward(Tape& tape, const Var& history);
  /// Inferred confounder at the last row only.
  Var last(Tape& tape, const Var& history);

  /// Frequency-domain stage: F^{-1}(Conv_h(G_h F h) + Conv_l(G_l F h)).
  Var filtered_sequence(Tape& tape, const Var& history);

  void collect(nn::ParameterList& list);
  void project(int iters = 1) { head_.project(iters); }

  const BoundaryConfig& config() const { return cfg_; }
  Eigen::Index input_dim() const { return input_dim_; }
  nn::Conv1d& conv_high() { return conv_high_; }
  nn::Conv1d& conv_low() { return conv_low_; }
  nn::ElmanRnn& rnn() { return rnn_; }
  LipschitzLinear& head() { return head_; }

 private:
  std::vector<Var> encode(Tape& tape, const Var& history);

  BoundaryConfig cfg_;
  Eigen::Index input_dim_ = 0;
  nn::Conv1d conv_high_;
  nn::Conv1d conv_low_;
  nn::ElmanRnn rnn_;
  LipschitzLinear head_;
};

}  // namespace lipcde::spectral
