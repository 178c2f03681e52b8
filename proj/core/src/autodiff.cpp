#include "lipcde/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace lipcde::ad {

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("autodiff: operation on an empty Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw std::invalid_argument("autodiff: operands belong to different tapes");
  return t;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op + " (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

}  // namespace

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw std::invalid_argument("autodiff: value of an empty Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = recording_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_ready) {
    n.grad.setZero(n.value.rows(), n.value.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::constant(double value) { return push(Matrix::Constant(1, 1, value), false, nullptr); }

Var Tape::param(Parameter& p) {
  if (!recording_) return constant(p.value);
  auto it = param_ids_.find(&p);
  if (it != param_ids_.end()) return Var(this, it->second);
  Var v = push(p.value, true, nullptr);
  nodes_.back().parameter = &p;
  param_ids_.emplace(&p, v.id());
  return v;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::invalid_argument("autodiff: loss belongs to another tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("autodiff: loss must be scalar");
  if (!loss.requires_grad()) return;
  grad(loss.id())(0, 0) += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.grad_ready) continue;
    if (n.parameter != nullptr) {
      if (n.parameter->grad.rows() != n.value.rows() || n.parameter->grad.cols() != n.value.cols()) {
        n.parameter->zero_grad();
      }
      n.parameter->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("autodiff: inner dimension mismatch in matmul");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() * b.value(), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var matmul(const Matrix& a, const Var& b) {
  Tape& t = tape_of(b);
  if (a.cols() != b.rows()) throw std::invalid_argument("autodiff: inner dimension mismatch in matmul");
  const int ib = b.id();
  // The constant is captured by value; callers pass small fixed matrices.
  return t.push(a * b.value(), b.requires_grad(), [ib, a](Tape& tp, int self) {
    tp.grad(ib).noalias() += a.transpose() * tp.grad(self);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) tp.grad(ib) += g;
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) tp.grad(ib) -= g;
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                [ia, ib](Tape& tp, int self) {
                  const Matrix& g = tp.grad(self);
                  if (tp.requires_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
                  if (tp.requires_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
                });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value() * s, a.requires_grad(), [ia, s](Tape& tp, int self) { tp.grad(ia) += s * tp.grad(self); });
}

Var add_constant(const Var& a, const Matrix& c) {
  Tape& t = tape_of(a);
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw std::invalid_argument("autodiff: shape mismatch in add_constant");
  const int ia = a.id();
  return t.push(a.value() + c, a.requires_grad(), [ia](Tape& tp, int self) { tp.grad(ia) += tp.grad(self); });
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().array().tanh().matrix(), a.requires_grad(), [ia](Tape& tp, int self) {
    const auto y = tp.value(self).array();
    tp.grad(ia).array() += tp.grad(self).array() * (1.0 - y.square());
  });
}

Var sigmoid(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return t.push(std::move(v), a.requires_grad(), [ia](Tape& tp, int self) {
    const auto y = tp.value(self).array();
    tp.grad(ia).array() += tp.grad(self).array() * y * (1.0 - y);
  });
}

Var square(const Var& a) { return mul(a, a); }

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(Matrix::Constant(1, 1, a.value().sum()), a.requires_grad(),
                [ia](Tape& tp, int self) { tp.grad(ia).array() += tp.grad(self)(0, 0); });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().transpose(), a.requires_grad(),
                [ia](Tape& tp, int self) { tp.grad(ia) += tp.grad(self).transpose(); });
}

Var scale_rows(const Var& a, const Vector& weights) {
  Tape& t = tape_of(a);
  if (weights.size() != a.rows()) throw std::invalid_argument("autodiff: scale_rows weight length mismatch");
  const int ia = a.id();
  return t.push(weights.asDiagonal() * a.value(), a.requires_grad(), [ia, weights](Tape& tp, int self) {
    tp.grad(ia) += weights.asDiagonal() * tp.grad(self);
  });
}

Var shift_rows(const Var& a, int offset) {
  Tape& t = tape_of(a);
  const Eigen::Index n = a.rows();
  Matrix v = Matrix::Zero(n, a.cols());
  const Eigen::Index len = n - std::abs(offset);
  if (len > 0) {
    if (offset >= 0) v.bottomRows(len) = a.value().topRows(len);
    else v.topRows(len) = a.value().bottomRows(len);
  }
  const int ia = a.id();
  return t.push(std::move(v), a.requires_grad(), [ia, offset, len](Tape& tp, int self) {
    if (len <= 0) return;
    const Matrix& g = tp.grad(self);
    if (offset >= 0) tp.grad(ia).topRows(len) += g.bottomRows(len);
    else tp.grad(ia).bottomRows(len) += g.topRows(len);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat_rows of nothing");
  Tape& t = tape_of(parts.front());
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("autodiff: operands belong to different tapes");
    if (p.cols() != cols) throw std::invalid_argument("autodiff: column mismatch in concat_rows");
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Matrix v(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  layout.reserve(parts.size());
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    layout.emplace_back(p.id(), r);
    r += p.rows();
  }
  return t.push(std::move(v), rg, [layout = std::move(layout)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    for (const auto& [id, start] : layout) {
      if (tp.requires_grad(id)) tp.grad(id) += g.middleRows(start, tp.value(id).rows());
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat_cols of nothing");
  Tape& t = tape_of(parts.front());
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("autodiff: operands belong to different tapes");
    if (p.rows() != rows) throw std::invalid_argument("autodiff: row mismatch in concat_cols");
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Matrix v(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  layout.reserve(parts.size());
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.id(), c);
    c += p.cols();
  }
  return t.push(std::move(v), rg, [layout = std::move(layout)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    for (const auto& [id, start] : layout) {
      if (tp.requires_grad(id)) tp.grad(id) += g.middleCols(start, tp.value(id).cols());
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::invalid_argument("autodiff: slice_rows out of range");
  const int ia = a.id();
  return t.push(a.value().middleRows(start, count), a.requires_grad(), [ia, start, count](Tape& tp, int self) {
    tp.grad(ia).middleRows(start, count) += tp.grad(self);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("autodiff: slice_cols out of range");
  const int ia = a.id();
  return t.push(a.value().middleCols(start, count), a.requires_grad(), [ia, start, count](Tape& tp, int self) {
    tp.grad(ia).middleCols(start, count) += tp.grad(self);
  });
}

Var bce_with_logits(const Var& logits, const Matrix& targets) {
  Tape& t = tape_of(logits);
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw std::invalid_argument("autodiff: shape mismatch in bce_with_logits");
  }
  const Matrix& x = logits.value();
  const double loss = (x.array().max(0.0) - x.array() * targets.array() + (-x.array().abs()).exp().log1p()).sum();
  const int il = logits.id();
  return t.push(Matrix::Constant(1, 1, loss), logits.requires_grad(), [il, targets](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    const Matrix p = tp.value(il).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    tp.grad(il) += g * (p - targets);
  });
}

Var hidden_matrix(const Var& m, double beta, double gamma) {
  Tape& t = tape_of(m);
  if (m.rows() != m.cols()) throw std::invalid_argument("hidden_matrix: matrix must be square");
  const Matrix& mv = m.value();
  // (1-b)(M+M^T) + b(M-M^T) = M + (1-2b) M^T
  const double c = 1.0 - 2.0 * beta;
  Matrix v = mv + c * mv.transpose();
  v.diagonal().array() -= gamma;
  const int im = m.id();
  return t.push(std::move(v), m.requires_grad(), [im, c](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad(im) += g + c * g.transpose();
  });
}

}  // namespace lipcde::ad
