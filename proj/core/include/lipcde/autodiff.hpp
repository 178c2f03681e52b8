#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation applied to Var handles.  Values are stored
// as column-major double matrices; gradients are accumulated lazily during
// Tape::backward.  Parameters live outside the tape and receive their
// gradients when the tape is rewound.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace lipcde::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Trainable tensor with an accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// With recording disabled no backward closures are stored and every
  /// parameter enters as a constant (inference mode).
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Matrix value);
  Var constant(double value);
  Var param(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and propagates; loss must be 1x1.  Parameter
  /// gradients are accumulated (not overwritten).
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

  // Used by operation implementations.
  using Backward = std::function<void(Tape&, int self)>;
  Var push(Matrix value, bool requires_grad, Backward backward);
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient buffer of a node, zero-initialised on first access.
  Matrix& grad(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool grad_ready = false;
    Backward backward;
    Parameter* parameter = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
  bool recording_;
};

// Elementwise and linear-algebra operations.  Shapes follow Eigen
// conventions; mismatches throw std::invalid_argument.
Var matmul(const Var& a, const Var& b);
Var matmul(const Matrix& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_constant(const Var& a, const Matrix& c);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var transpose(const Var& a);
/// Scales row i of `a` by weights[i].
Var scale_rows(const Var& a, const Vector& weights);
/// Shifts rows by `offset` (row r of the result is row r - offset of `a`),
/// filling vacated rows with zeros.
Var shift_rows(const Var& a, int offset);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// Sum over entries of max(x,0) - x*t + log(1 + exp(-|x|)).
Var bce_with_logits(const Var& logits, const Matrix& targets);
/// (1-beta)(M + M^T) + beta(M - M^T) - gamma I for square M.
Var hidden_matrix(const Var& m, double beta, double gamma);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace lipcde::ad
