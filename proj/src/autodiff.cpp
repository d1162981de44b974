#include "lrc/autodiff.hpp"

#include <cmath>

#include "lrc/errors.hpp"

namespace lrc::ad {

const Matrix& Var::value() const { return tape->value(id); }
const Matrix& Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Matrix value, std::vector<int> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_requires_grad(Var leaf, bool on) {
  if (!nodes_.at(leaf.id).leaf) throw InvalidArgument("requires_grad can only be set on leaves");
  nodes_[leaf.id].requires_grad = on;
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.resize(0, 0);
}

void Tape::accumulate(int id, const Matrix& g) {
  if (!needs_[id]) return;
  Matrix& dst = nodes_[id].grad;
  if (dst.size() == 0) {
    dst = g;
  } else {
    dst += g;
  }
}

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  needs_.assign(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.leaf) {
      needs_[i] = n.requires_grad;
    } else {
      for (int in : n.inputs) needs_[i] |= needs_[in];
    }
  }
  int top = -1;
  for (const auto& [v, g] : seeds) {
    if (g.rows() != v.value().rows() || g.cols() != v.value().cols())
      throw InvalidArgument("seed shape does not match node");
    accumulate(v.id, g);
    top = std::max(top, v.id);
  }
  for (int i = top; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.leaf || !needs_[i] || n.grad.size() == 0) continue;
    n.backward(*this, i);
  }
}

void Tape::backward(Var root, double seed) {
  const std::pair<Var, Matrix> s{root, Matrix::Constant(root.value().rows(), root.value().cols(), seed)};
  backward(std::span(&s, 1));
}

// ---------------------------------------------------------------------------

namespace {

// c[i, :] += sum_k a[i, k] b[k, :], k ascending. P is the compile-time row
// width of b and c, 0 for runtime widths.
template <int P>
void nn_kernel(const double* __restrict A, const double* __restrict B, double* __restrict C,
               Eigen::Index n, Eigen::Index m, Eigen::Index p) {
  const Eigen::Index w = P > 0 ? P : p;
  for (Eigen::Index i = 0; i < n; ++i) {
    double* __restrict ci = C + i * w;
    const double* __restrict ai = A + i * m;
    for (Eigen::Index k = 0; k < m; ++k) {
      const double aik = ai[k];
      const double* __restrict bk = B + k * w;
      for (Eigen::Index j = 0; j < w; ++j) ci[j] = std::fma(aik, bk[j], ci[j]);
    }
  }
}

// c[i, :] += sum_r a[r, i] b[r, :], r ascending.
template <int P>
void tn_kernel(const double* __restrict A, const double* __restrict B, double* __restrict C,
               Eigen::Index n, Eigen::Index m, Eigen::Index p) {
  const Eigen::Index w = P > 0 ? P : p;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double* __restrict br = B + r * w;
    const double* __restrict ar = A + r * m;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double ari = ar[i];
      double* __restrict ci = C + i * w;
      for (Eigen::Index j = 0; j < w; ++j) ci[j] = std::fma(ari, br[j], ci[j]);
    }
  }
}

#define LRC_DISPATCH(kernel)                                                              \
  void kernel##_any(const double* A, const double* B, double* C, Eigen::Index n,          \
                    Eigen::Index m, Eigen::Index p) {                                     \
    switch (p) {                                                                          \
      case 1: kernel<1>(A, B, C, n, m, p); break;                                         \
      case 2: kernel<2>(A, B, C, n, m, p); break;                                         \
      case 4: kernel<4>(A, B, C, n, m, p); break;                                         \
      case 8: kernel<8>(A, B, C, n, m, p); break;                                         \
      case 16: kernel<16>(A, B, C, n, m, p); break;                                       \
      case 32: kernel<32>(A, B, C, n, m, p); break;                                       \
      case 64: kernel<64>(A, B, C, n, m, p); break;                                       \
      default: kernel<0>(A, B, C, n, m, p); break;                                        \
    }                                                                                     \
  }

LRC_DISPATCH(nn_kernel)
LRC_DISPATCH(tn_kernel)
#undef LRC_DISPATCH

}  // namespace

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  const Eigen::Index n = a.rows(), m = a.cols(), p = b.cols();
  if (b.rows() != m) throw InvalidArgument("matmul shape mismatch");
  c.setZero(n, p);
  nn_kernel_any(a.data(), b.data(), c.data(), n, m, p);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  if (b.cols() != a.cols()) throw InvalidArgument("matmul shape mismatch");
  const Matrix bt = b.transpose();
  gemm_nn(a, bt, c);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  const Eigen::Index n = a.rows(), m = a.cols(), p = b.cols();
  if (b.rows() != n) throw InvalidArgument("matmul shape mismatch");
  c.setZero(m, p);
  tn_kernel_any(a.data(), b.data(), c.data(), n, m, p);
}

namespace {

void check_same_shape(Var a, Var b) {
  if (a.tape != b.tape) throw InvalidArgument("operands live on different tapes");
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols())
    throw InvalidArgument("operand shapes differ");
}

}  // namespace

Var matmul(Var a, Var b) {
  Matrix c;
  gemm_nn(a.value(), b.value(), c);
  return a.tape->push(std::move(c), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix tmp;
    if (t.needs(a)) {
      gemm_nt(g, t.value(b), tmp);
      t.accumulate(a, tmp);
    }
    if (t.needs(b)) {
      gemm_tn(t.value(a), g, tmp);
      t.accumulate(b, tmp);
    }
  });
}

Var add_row(Var a, Var row) {
  if (row.value().rows() != 1 || row.value().cols() != a.value().cols())
    throw InvalidArgument("bias shape mismatch");
  Matrix c = a.value();
  c.rowwise() += row.value().row(0);
  return a.tape->push(std::move(c), {a.id, row.id}, [a = a.id, r = row.id](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(a, g);
    if (t.needs(r)) t.accumulate(r, g.colwise().sum());
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b);
  return a.tape->push(a.value() + b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    t.accumulate(a, t.grad(self));
    t.accumulate(b, t.grad(self));
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b);
  return a.tape->push(a.value() - b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    t.accumulate(a, t.grad(self));
    if (t.needs(b)) t.accumulate(b, -t.grad(self));
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b);
  Matrix c = a.value().cwiseProduct(b.value());
  return a.tape->push(std::move(c), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var scale(Var a, double s) {
  return a.tape->push(s * a.value(), {a.id},
                      [a = a.id, s](Tape& t, int self) { t.accumulate(a, s * t.grad(self)); });
}

Var tanh(Var a) {
  // tanh(x) = 1 - 2 / (exp(2x) + 1); Eigen vectorizes exp but not tanh for doubles.
  const auto x = a.value().array().min(40.0).max(-40.0);
  Matrix y = (1.0 - 2.0 / ((2.0 * x).exp() + 1.0)).matrix();
  return a.tape->push(std::move(y), {a.id}, [a = a.id](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(a, (t.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Var relu(Var a) {
  Matrix y = a.value().cwiseMax(0.0);
  return a.tape->push(std::move(y), {a.id}, [a = a.id](Tape& t, int self) {
    const Matrix& x = t.value(a);
    t.accumulate(a, (x.array() > 0.0).select(t.grad(self), 0.0).matrix());
  });
}

Var one_minus_sq(Var a) {
  Matrix y = (1.0 - a.value().array().square()).matrix();
  return a.tape->push(std::move(y), {a.id}, [a = a.id](Tape& t, int self) {
    t.accumulate(a, (-2.0 * t.grad(self).array() * t.value(a).array()).matrix());
  });
}

Var mul_const(Var a, Matrix m) {
  if (m.rows() != a.value().rows() || m.cols() != a.value().cols())
    throw InvalidArgument("constant shape mismatch");
  Matrix y = a.value().cwiseProduct(m);
  return a.tape->push(std::move(y), {a.id}, [a = a.id, m = std::move(m)](Tape& t, int self) {
    t.accumulate(a, t.grad(self).cwiseProduct(m));
  });
}

Var mul_col(Var a, Var c) {
  if (c.value().cols() != 1 || c.value().rows() != a.value().rows())
    throw InvalidArgument("column factor shape mismatch");
  Matrix y = c.value().col(0).asDiagonal() * a.value();
  return a.tape->push(std::move(y), {a.id, c.id}, [a = a.id, c = c.id](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs(a)) t.accumulate(a, t.value(c).col(0).asDiagonal() * g);
    if (t.needs(c)) t.accumulate(c, g.cwiseProduct(t.value(a)).rowwise().sum());
  });
}

Var mul_rows(Var a, std::vector<double> c) {
  if (static_cast<Eigen::Index>(c.size()) != a.value().rows())
    throw InvalidArgument("row scale length mismatch");
  const Eigen::Map<const Eigen::VectorXd> cv(c.data(), static_cast<Eigen::Index>(c.size()));
  Matrix y = cv.asDiagonal() * a.value();
  return a.tape->push(std::move(y), {a.id}, [a = a.id, c = std::move(c)](Tape& t, int self) {
    const Eigen::Map<const Eigen::VectorXd> cv(c.data(), static_cast<Eigen::Index>(c.size()));
    t.accumulate(a, cv.asDiagonal() * t.grad(self));
  });
}

Var segment_sum(Var a, std::vector<int> first, std::vector<int> second, int rows) {
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(first.size()) != x.rows() ||
      static_cast<Eigen::Index>(second.size()) != x.rows())
    throw InvalidArgument("segment index length mismatch");
  for (std::size_t p = 0; p < first.size(); ++p)
    if (first[p] < 0 || first[p] >= rows || second[p] >= rows)
      throw InvalidArgument("segment index out of range");
  Matrix y = Matrix::Zero(rows, x.cols());
  for (Eigen::Index p = 0; p < x.rows(); ++p) {
    y.row(first[p]) += x.row(p);
    if (second[p] >= 0) y.row(second[p]) += x.row(p);
  }
  return a.tape->push(std::move(y), {a.id},
                      [a = a.id, first = std::move(first), second = std::move(second)](Tape& t, int self) {
                        const Matrix& g = t.grad(self);
                        Matrix out(static_cast<Eigen::Index>(first.size()), g.cols());
                        for (std::size_t p = 0; p < first.size(); ++p) {
                          out.row(p) = g.row(first[p]);
                          if (second[p] >= 0) out.row(p) += g.row(second[p]);
                        }
                        t.accumulate(a, out);
                      });
}

Var concat_cols(Var a, Var b) {
  if (a.value().rows() != b.value().rows()) throw InvalidArgument("concat row mismatch");
  const Eigen::Index ca = a.value().cols();
  Matrix y(a.value().rows(), ca + b.value().cols());
  y << a.value(), b.value();
  return a.tape->push(std::move(y), {a.id, b.id}, [a = a.id, b = b.id, ca](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs(a)) t.accumulate(a, g.leftCols(ca));
    if (t.needs(b)) t.accumulate(b, g.rightCols(g.cols() - ca));
  });
}

Var slice_cols(Var a, int begin, int count) {
  const Matrix& x = a.value();
  if (begin < 0 || count < 0 || begin + count > x.cols()) throw InvalidArgument("slice out of range");
  Matrix y = x.middleCols(begin, count);
  return a.tape->push(std::move(y), {a.id}, [a = a.id, begin, count](Tape& t, int self) {
    Matrix g = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
    g.middleCols(begin, count) = t.grad(self);
    t.accumulate(a, g);
  });
}

Var sum(Var a) {
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return a.tape->push(std::move(y), {a.id}, [a = a.id](Tape& t, int self) {
    const Matrix& x = t.value(a);
    t.accumulate(a, Matrix::Constant(x.rows(), x.cols(), t.grad(self)(0, 0)));
  });
}

Var affine_cols(Var a, std::vector<double> shift, std::vector<double> factor) {
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(shift.size()) != x.cols() ||
      static_cast<Eigen::Index>(factor.size()) != x.cols())
    throw InvalidArgument("affine column count mismatch");
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index c = 0; c < x.cols(); ++c) y(i, c) = (x(i, c) - shift[c]) * factor[c];
  return a.tape->push(std::move(y), {a.id}, [a = a.id, factor = std::move(factor)](Tape& t, int self) {
    Matrix g = t.grad(self);
    for (Eigen::Index c = 0; c < g.cols(); ++c) g.col(c) *= factor[c];
    t.accumulate(a, g);
  });
}

}  // namespace lrc::ad
