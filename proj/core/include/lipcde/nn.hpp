#pragma once

// Small neural building blocks on top of the autodiff tape.  All layers act
// on column vectors (one time step of one trajectory) except Conv1d, which
// convolves along the rows of a (length x channels) matrix.

#include "lipcde/autodiff.hpp"

#include <random>
#include <utility>
#include <vector>

namespace lipcde::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;
using ad::Vector;

using Rng = std::mt19937_64;

/// Uniform(-bound, bound) initialisation.
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);

/// Collects non-owning pointers to the trainable tensors of a model.
class ParameterList {
 public:
  void add(Parameter& p) { params_.push_back(&p); }
  void append(const ParameterList& other) {
    params_.insert(params_.end(), other.params_.begin(), other.params_.end());
  }
  const std::vector<Parameter*>& items() const { return params_; }
  void zero_grad() const {
    for (Parameter* p : params_) p->zero_grad();
  }
  Eigen::Index total_size() const;

  /// Flattened copy of all parameter values (used for snapshots).
  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values) const;

 private:
  std::vector<Parameter*> params_;
};

struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(std::string name, Eigen::Index in, Eigen::Index out, Rng& rng);

  Var forward(Tape& tape, const Var& x);
  void collect(ParameterList& list) {
    list.add(weight);
    list.add(bias);
  }
  Eigen::Index in_dim() const { return weight.value.cols(); }
  Eigen::Index out_dim() const { return weight.value.rows(); }
};

/// h' = tanh(W_ih x + W_hh h + b)
struct ElmanRnn {
  Parameter w_ih;
  Parameter w_hh;
  Parameter bias;

  ElmanRnn() = default;
  ElmanRnn(std::string name, Eigen::Index in, Eigen::Index hidden, Rng& rng);

  Var step(Tape& tape, const Var& x, const Var& h);
  Eigen::Index hidden_dim() const { return w_hh.value.rows(); }
  Eigen::Index in_dim() const { return w_ih.value.cols(); }
  void collect(ParameterList& list) {
    list.add(w_ih);
    list.add(w_hh);
    list.add(bias);
  }
};

/// Standard LSTM cell, gate order (input, forget, cell, output).
struct LstmCell {
  Parameter w_ih;
  Parameter w_hh;
  Parameter bias;

  struct State {
    Var h;
    Var c;
  };

  LstmCell() = default;
  LstmCell(std::string name, Eigen::Index in, Eigen::Index hidden, Rng& rng);

  State initial(Tape& tape) const;
  State step(Tape& tape, const Var& x, const State& s);
  Eigen::Index hidden_dim() const { return w_hh.value.cols(); }
  Eigen::Index in_dim() const { return w_ih.value.cols(); }
  void collect(ParameterList& list) {
    list.add(w_ih);
    list.add(w_hh);
    list.add(bias);
  }
};

/// Channel-preserving 1-D convolution along rows with zero padding and an
/// odd kernel size.  out[r] = sum_k in[r + k - half] * W_k.
struct Conv1d {
  std::vector<Parameter> taps;

  Conv1d() = default;
  Conv1d(std::string name, Eigen::Index channels, int kernel_size, Rng& rng);

  Var forward(Tape& tape, const Var& x);
  int kernel_size() const { return static_cast<int>(taps.size()); }
  void collect(ParameterList& list) {
    for (Parameter& p : taps) list.add(p);
  }
};

/// Adam with bias correction.
class Adam {
 public:
  struct Options {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(ParameterList params, Options opts);

  void step();
  const Options& options() const { return opts_; }

 private:
  ParameterList params_;
  Options opts_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long step_count_ = 0;
};

}  // namespace lipcde::nn
