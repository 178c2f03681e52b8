#include "lipcde/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace lipcde::nn {

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  // Fill in a fixed row-major order so initialisation does not depend on
  // Eigen's storage layout.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

Eigen::Index ParameterList::total_size() const {
  Eigen::Index n = 0;
  for (const Parameter* p : params_) n += p->size();
  return n;
}

std::vector<Matrix> ParameterList::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const Parameter* p : params_) out.push_back(p->value);
  return out;
}

void ParameterList::restore(const std::vector<Matrix>& values) const {
  if (values.size() != params_.size()) throw std::invalid_argument("ParameterList::restore: size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i]->value = values[i];
}

Linear::Linear(std::string name, Eigen::Index in, Eigen::Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Parameter(name + ".weight", uniform_init(out, in, bound, rng));
  bias = Parameter(name + ".bias", uniform_init(out, 1, bound, rng));
}

Var Linear::forward(Tape& tape, const Var& x) {
  if (x.rows() != in_dim()) throw std::invalid_argument("Linear: input dimension mismatch for " + weight.name);
  return ad::add(ad::matmul(tape.param(weight), x), tape.param(bias));
}

ElmanRnn::ElmanRnn(std::string name, Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih = Parameter(name + ".w_ih", uniform_init(hidden, in, bound, rng));
  w_hh = Parameter(name + ".w_hh", uniform_init(hidden, hidden, bound, rng));
  bias = Parameter(name + ".bias", uniform_init(hidden, 1, bound, rng));
}

Var ElmanRnn::step(Tape& tape, const Var& x, const Var& h) {
  if (x.rows() != in_dim() || h.rows() != hidden_dim()) {
    throw std::invalid_argument("ElmanRnn: dimension mismatch for " + w_ih.name);
  }
  Var pre = ad::add(ad::add(ad::matmul(tape.param(w_ih), x), ad::matmul(tape.param(w_hh), h)), tape.param(bias));
  return ad::tanh(pre);
}

LstmCell::LstmCell(std::string name, Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih = Parameter(name + ".w_ih", uniform_init(4 * hidden, in, bound, rng));
  w_hh = Parameter(name + ".w_hh", uniform_init(4 * hidden, hidden, bound, rng));
  bias = Parameter(name + ".bias", uniform_init(4 * hidden, 1, bound, rng));
}

LstmCell::State LstmCell::initial(Tape& tape) const {
  const Eigen::Index h = hidden_dim();
  return {tape.constant(Matrix::Zero(h, 1)), tape.constant(Matrix::Zero(h, 1))};
}

LstmCell::State LstmCell::step(Tape& tape, const Var& x, const State& s) {
  if (x.rows() != in_dim()) throw std::invalid_argument("LstmCell: input dimension mismatch for " + w_ih.name);
  const Eigen::Index h = hidden_dim();
  Var gates = ad::add(ad::add(ad::matmul(tape.param(w_ih), x), ad::matmul(tape.param(w_hh), s.h)), tape.param(bias));
  Var i = ad::sigmoid(ad::slice_rows(gates, 0, h));
  Var f = ad::sigmoid(ad::slice_rows(gates, h, h));
  Var g = ad::tanh(ad::slice_rows(gates, 2 * h, h));
  Var o = ad::sigmoid(ad::slice_rows(gates, 3 * h, h));
  Var c = ad::add(ad::mul(f, s.c), ad::mul(i, g));
  Var hn = ad::mul(o, ad::tanh(c));
  return {hn, c};
}

Conv1d::Conv1d(std::string name, Eigen::Index channels, int kernel_size, Rng& rng) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("Conv1d: kernel size must be odd");
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels * kernel_size));
  for (int k = 0; k < kernel_size; ++k) {
    taps.emplace_back(name + ".tap" + std::to_string(k), uniform_init(channels, channels, bound, rng));
  }
}

Var Conv1d::forward(Tape& tape, const Var& x) {
  if (taps.empty()) throw std::invalid_argument("Conv1d: no taps");
  if (x.cols() != taps.front().value.rows()) throw std::invalid_argument("Conv1d: channel mismatch");
  const int half = kernel_size() / 2;
  Var out;
  for (int k = 0; k < kernel_size(); ++k) {
    // tap k reads in[r + k - half]: shift rows down by (half - k).
    Var shifted = (k == half) ? x : ad::shift_rows(x, half - k);
    Var term = ad::matmul(shifted, tape.param(taps[static_cast<std::size_t>(k)]));
    out = out.valid() ? ad::add(out, term) : term;
  }
  return out;
}

Adam::Adam(ParameterList params, Options opts) : params_(std::move(params)), opts_(opts) {
  for (const Parameter* p : params_.items()) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_count_));
  const auto& ps = params_.items();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter& p = *ps[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) continue;
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * p.grad;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= opts_.learning_rate * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.epsilon);
  }
}

}  // namespace lipcde::nn
