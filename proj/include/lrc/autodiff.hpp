#pragma once

#include <functional>
#include <span>
#include <vector>

#include "lrc/domain.hpp"

namespace lrc::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr; }
  const Matrix& value() const;
  /// Accumulated adjoint; zero-sized until something flows into it.
  const Matrix& grad() const;
};

/// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
/// order, so the tape is already topologically sorted.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var leaf(Matrix value, bool requires_grad);
  Var constant(Matrix value) { return leaf(std::move(value), false); }
  /// Appends an op node; `backward` pushes the node's adjoint into `inputs`.
  Var push(Matrix value, std::vector<int> inputs, Backward backward);

  void set_requires_grad(Var leaf, bool on);
  bool requires_grad(Var leaf) const { return nodes_[leaf.id].requires_grad; }

  /// Clears every adjoint (values are kept).
  void zero_grad();
  /// Seeds the given nodes and propagates adjoints back to the leaves that
  /// require them. May be called repeatedly after zero_grad.
  void backward(std::span<const std::pair<Var, Matrix>> seeds);
  void backward(Var root, double seed = 1.0);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  /// True during backward when node `id` leads to a leaf that requires grad.
  bool needs(int id) const { return needs_[id] != 0; }
  /// Adds g into the adjoint of node `id` if it needs one.
  void accumulate(int id, const Matrix& g);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    Backward backward;
    bool leaf = false;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<char> needs_;
};

// Dense products with a fixed summation order (k ascending), so that zero
// rows or columns appended to an operand leave the result bit-identical.
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c);  // c = a b
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);  // c = a b^T
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c);  // c = a^T b

Var matmul(Var a, Var b);
/// a + row broadcast over rows; `row` is 1 x cols.
Var add_row(Var a, Var row);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var tanh(Var a);
Var relu(Var a);
/// 1 - a^2 elementwise.
Var one_minus_sq(Var a);
/// Elementwise product with a constant matrix of the same shape.
Var mul_const(Var a, Matrix m);
/// Row i scaled by the node c[i, 0]; c is rows x 1.
Var mul_col(Var a, Var c);
/// Row i scaled by the constant c[i].
Var mul_rows(Var a, std::vector<double> c);
/// out[first[p]] += a[p] and, if second[p] >= 0, out[second[p]] += a[p].
Var segment_sum(Var a, std::vector<int> first, std::vector<int> second, int rows);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, int begin, int count);
/// Sum of all entries as a 1 x 1 node.
Var sum(Var a);
/// (a - shift) * factor column-wise, shift and factor constant.
Var affine_cols(Var a, std::vector<double> shift, std::vector<double> factor);

}  // namespace lrc::ad
