#include "lipcde/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace lipcde::spectral {

double gaussian_filter_response(double d, double d0, FilterKind kind) {
  if (!(d0 > 0.0)) throw std::invalid_argument("gaussian_filter_response: cutoff must be positive");
  const double low = std::exp(-(d * d) / (2.0 * d0 * d0));
  return kind == FilterKind::kLow ? low : 1.0 - low;
}

FilterSpec FilterSpec::for_length(int num_bins, std::optional<double> cutoff) {
  FilterSpec s;
  s.num_bins = num_bins;
  s.cutoff_d0 = cutoff.value_or(static_cast<double>(num_bins) / 8.0);
  return s;
}

void FilterSpec::validate() const {
  if (!(cutoff_d0 > 0.0)) throw std::invalid_argument("FilterSpec: cutoff_d0 must be positive");
  if (num_bins < 2) throw std::invalid_argument("FilterSpec: num_bins must be >= 2");
}

int centered_frequency(int bin, int n) { return bin - n / 2; }

SpectralSplit spectral_split(const Matrix& sequence, const FilterSpec& spec) {
  spec.validate();
  const int n = static_cast<int>(sequence.rows());
  if (n != spec.num_bins) throw std::invalid_argument("spectral_split: sequence length must equal num_bins");
  if (!sequence.allFinite()) throw std::invalid_argument("spectral_split: non-finite input");

  Eigen::FFT<double> fft;
  SpectralSplit out;
  out.high.resize(n, sequence.cols());
  out.low.resize(n, sequence.cols());
  std::vector<std::complex<double>> in(static_cast<std::size_t>(n)), freq;
  for (Eigen::Index ch = 0; ch < sequence.cols(); ++ch) {
    for (int t = 0; t < n; ++t) in[static_cast<std::size_t>(t)] = sequence(t, ch);
    fft.fwd(freq, in);
    for (int c = 0; c < n; ++c) {
      const int f = centered_frequency(c, n);
      const auto& v = freq[static_cast<std::size_t>(((f % n) + n) % n)];
      const double d = std::abs(f);
      out.low(c, ch) = v * gaussian_filter_response(d, spec.cutoff_d0, FilterKind::kLow);
      out.high(c, ch) = v * gaussian_filter_response(d, spec.cutoff_d0, FilterKind::kHigh);
    }
  }
  return out;
}

Matrix inverse_transform(const Eigen::MatrixXcd& centered) {
  const int n = static_cast<int>(centered.rows());
  if (n < 1) throw std::invalid_argument("inverse_transform: empty spectrum");
  Eigen::FFT<double> fft;
  Matrix out(n, centered.cols());
  std::vector<std::complex<double>> freq(static_cast<std::size_t>(n)), time;
  for (Eigen::Index ch = 0; ch < centered.cols(); ++ch) {
    for (int c = 0; c < n; ++c) {
      const int f = centered_frequency(c, n);
      freq[static_cast<std::size_t>(((f % n) + n) % n)] = centered(c, ch);
    }
    fft.inv(time, freq);
    for (int t = 0; t < n; ++t) out(t, ch) = time[static_cast<std::size_t>(t)].real();
  }
  return out;
}

double spectral_norm_estimate(const Matrix& weight, int iters, Vector* warm) {
  if (weight.size() == 0) throw std::invalid_argument("spectral_norm_estimate: empty matrix");
  if (iters < 1) throw std::invalid_argument("spectral_norm_estimate: iters must be >= 1");
  Vector v;
  if (warm != nullptr && warm->size() == weight.cols() && warm->norm() > 0.0) {
    v = warm->normalized();
  } else {
    // Deterministic start with no special alignment to coordinate axes.
    v.resize(weight.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.5 * std::sin(1.7 * static_cast<double>(i) + 0.3);
    v.normalize();
  }
  constexpr int kMaxIters = 50000;
  double sigma = 0.0;
  for (int it = 0; it < kMaxIters; ++it) {
    const Vector u = weight * v;
    const double un = u.norm();
    if (un == 0.0) {
      sigma = 0.0;
      break;
    }
    Vector w = weight.transpose() * (u / un);
    const double next = w.norm();
    if (next == 0.0) {
      sigma = 0.0;
      break;
    }
    v = w / next;
    const bool settled = it + 1 >= iters && std::abs(next - sigma) <= 1e-14 * next;
    sigma = next;
    if (settled) break;
  }
  if (warm != nullptr) *warm = v;
  return sigma;
}

Matrix spectral_norm_project(const Matrix& weight, int iters) {
  const double sigma = spectral_norm_estimate(weight, iters);
  return weight / std::max(1.0, sigma);
}

LipschitzLinear::LipschitzLinear(std::string name, Eigen::Index in, Eigen::Index out, nn::Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = ad::Parameter(name + ".weight", nn::uniform_init(out, in, bound, rng));
  bias = ad::Parameter(name + ".bias", nn::uniform_init(out, 1, bound, rng));
}

void LipschitzLinear::project(int iters) {
  const double sigma = spectral_norm_estimate(weight.value, iters, &power_iter_vec);
  if (sigma > target_bound) weight.value *= target_bound / sigma;
}

Var LipschitzLinear::forward(Tape& tape, const Var& h) {
  if (h.rows() != weight.value.cols()) throw std::invalid_argument("LipschitzLinear: input dimension mismatch");
  return ad::add(ad::matmul(tape.param(weight), h), tape.param(bias));
}

namespace {

// DFT matrices for the centred ordering.  Row c, column t holds
// cos / sin of 2 pi f_c t / n, pre-multiplied by the Gaussian responses.
struct SpectralOperators {
  Matrix high_re, high_im;  // G_h C, -G_h S
  Matrix low_re, low_im;    // G_l C, -G_l S
  Matrix inv_re, inv_im;    // C^T / n, -S^T / n
};

std::shared_ptr<const SpectralOperators> operators_for(int n, double d0) {
  thread_local std::map<std::pair<int, double>, std::shared_ptr<const SpectralOperators>> cache;
  const auto key = std::make_pair(n, d0);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  Matrix c(n, n), s(n, n);
  Vector gl(n), gh(n);
  for (int bin = 0; bin < n; ++bin) {
    const int f = centered_frequency(bin, n);
    gl(bin) = gaussian_filter_response(std::abs(f), d0, FilterKind::kLow);
    gh(bin) = gaussian_filter_response(std::abs(f), d0, FilterKind::kHigh);
    for (int t = 0; t < n; ++t) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(f) * t / n;
      c(bin, t) = std::cos(theta);
      s(bin, t) = std::sin(theta);
    }
  }
  auto ops = std::make_shared<SpectralOperators>();
  ops->high_re = gh.asDiagonal() * c;
  ops->high_im = -(gh.asDiagonal() * s);
  ops->low_re = gl.asDiagonal() * c;
  ops->low_im = -(gl.asDiagonal() * s);
  ops->inv_re = c.transpose() / n;
  ops->inv_im = -s.transpose() / n;
  cache.emplace(key, ops);
  return ops;
}

}  // namespace

BoundaryBranch::BoundaryBranch(Eigen::Index input_dim, const BoundaryConfig& cfg, nn::Rng& rng)
    : cfg_(cfg), input_dim_(input_dim) {
  if (input_dim < 1 || cfg.rnn_hidden < 1 || cfg.z_dim < 1) throw std::invalid_argument("BoundaryBranch: invalid dimensions");
  if (cfg.cutoff_d0 && !(*cfg.cutoff_d0 > 0.0)) throw std::invalid_argument("BoundaryBranch: cutoff_d0 must be positive");
  conv_high_ = nn::Conv1d("boundary.conv_high", 2 * input_dim, cfg.conv_kernel, rng);
  conv_low_ = nn::Conv1d("boundary.conv_low", 2 * input_dim, cfg.conv_kernel, rng);
  rnn_ = nn::ElmanRnn("boundary.rnn", input_dim, cfg.rnn_hidden, rng);
  head_ = LipschitzLinear("boundary.head", cfg.rnn_hidden, cfg.z_dim, rng);
}

void BoundaryBranch::collect(nn::ParameterList& list) {
  conv_high_.collect(list);
  conv_low_.collect(list);
  rnn_.collect(list);
  head_.collect(list);
}

Var BoundaryBranch::filtered_sequence(Tape& tape, const Var& history) {
  if (history.cols() != input_dim_) throw std::invalid_argument("BoundaryBranch: history has wrong channel count");
  const int n = static_cast<int>(history.rows());
  if (n < 1) throw std::invalid_argument("BoundaryBranch: empty history");
  const double d0 = cfg_.cutoff_d0.value_or(static_cast<double>(n) / 8.0);
  const auto ops = operators_for(n, d0);

  Var spectrum;
  if (cfg_.use_high) {
    Var hi = ad::concat_cols({ad::matmul(ops->high_re, history), ad::matmul(ops->high_im, history)});
    spectrum = conv_high_.forward(tape, hi);
  }
  if (cfg_.use_low) {
    Var lo = ad::concat_cols({ad::matmul(ops->low_re, history), ad::matmul(ops->low_im, history)});
    Var conv = conv_low_.forward(tape, lo);
    spectrum = spectrum.valid() ? ad::add(spectrum, conv) : conv;
  }
  if (!spectrum.valid()) return tape.constant(Matrix::Zero(n, input_dim_));
  const Eigen::Index d = input_dim_;
  return ad::add(ad::matmul(ops->inv_re, ad::slice_cols(spectrum, 0, d)),
                 ad::matmul(ops->inv_im, ad::slice_cols(spectrum, d, d)));
}

std::vector<Var> BoundaryBranch::encode(Tape& tape, const Var& history) {
  Var rows_t = ad::transpose(filtered_sequence(tape, history));
  std::vector<Var> states;
  states.reserve(static_cast<std::size_t>(rows_t.cols()));
  Var h = tape.constant(Matrix::Zero(cfg_.rnn_hidden, 1));
  for (Eigen::Index t = 0; t < rows_t.cols(); ++t) {
    h = rnn_.step(tape, ad::slice_cols(rows_t, t, 1), h);
    states.push_back(h);
  }
  return states;
}

BoundaryBranchOutput BoundaryBranch::forward(Tape& tape, const Var& history) {
  BoundaryBranchOutput out;
  const auto states = encode(tape, history);
  out.z_hat.reserve(states.size());
  for (const Var& h : states) out.z_hat.push_back(head_.forward(tape, h));
  out.encoder_state = states.back();
  return out;
}

Var BoundaryBranch::last(Tape& tape, const Var& history) {
  return head_.forward(tape, encode(tape, history).back());
}

}  // namespace lipcde::spectral
