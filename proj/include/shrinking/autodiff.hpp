#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "shrinking/matrix.hpp"

namespace shrinking {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode recording of matrix-valued primitive operations.
///
/// Every op appends one node holding its forward value and a closure that
/// pushes the node's gradient into its inputs. Parameters are registered by
/// address, so the gradient for a given weight matrix can be looked up after
/// `backward` without any bookkeeping on the caller side. A tape is
/// single-threaded; independent tapes can run concurrently over shared
/// read-only parameters.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);

  /// Registers `param` as a differentiable leaf. Registering the same matrix
  /// twice returns the same node.
  Var parameter(const Matrix& param);

  /// Appends an op node. `inputs` decide whether the node requires a gradient.
  Var record(Matrix value, std::span<const std::size_t> inputs, BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator of a node, allocated on first access.
  Matrix& grad_buffer(std::size_t id);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape backward. `loss` must be a
  /// 1x1 node of this tape. Previous gradients are discarded.
  void backward(Var loss);

  /// Gradient of the last backward() w.r.t. a node; zeros if it was never reached.
  Matrix grad(Var v) const;

  /// Gradient w.r.t. a registered parameter; exact zeros when unused.
  Matrix grad_of(const Matrix& param) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, std::size_t> params_;
};

/// Differentiable primitives. Shapes are checked eagerly and violations throw
/// ConfigError. Reductions over rows (segment_sum, column_mean) accumulate rows
/// in lexicographic order of their values, which makes the result bitwise
/// independent of the input row order.
namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
/// a * s for a 1x1 node s.
Var scale(Var a, Var s);
/// Adds a 1 x cols row to every row of `a`.
Var add_row(Var a, Var row);
/// Multiplies every row of `a` elementwise by a 1 x cols row.
Var mul_row(Var a, Var row);
/// Divides row r of `a` by the scalar col(r, 0).
Var div_col(Var a, Var col);
/// x * w^T + b for x: n x in, w: out x in, b: 1 x out.
Var linear(Var x, Var w, Var b);

Var relu(Var a);
Var sigmoid(Var a);
Var one_minus(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

/// Values with |v| < eps are replaced by copysign(eps, v) (zero maps to +eps);
/// the gradient is zero where the clamp is active.
Var clamp_magnitude(Var a, double eps);

Var gather_rows(Var a, std::span<const std::size_t> rows);
/// Right-pads every row with zeros up to `cols` columns.
Var pad_cols(Var a, std::size_t cols);
Var concat_rows(std::span<const Var> parts);
/// Row r of the result is sum of rows i with segment[i] == r.
Var segment_sum(Var a, std::span<const std::size_t> segment, std::size_t segments);
/// 1 x cols mean of all rows.
Var column_mean(Var a);
/// Channel-wise maximum per segment. `argmax` (segments x cols) receives the
/// winning row per entry, ties to the lowest row index. When `frozen` is
/// non-null those indices are used instead of searching.
Var segment_max(Var a, std::span<const std::size_t> segment, std::size_t segments,
                std::vector<std::size_t>* argmax, const std::vector<std::size_t>* frozen = nullptr);
/// Row r of `kernels` (n x rows_out*x.cols) is read as a rows_out x x.cols
/// row-major matrix and applied to row r of x; the result is n x rows_out.
Var kernel_apply(Var kernels, Var x, std::size_t rows_out);

Var pick(Var a, std::size_t r, std::size_t c);
Var sum_all(Var a);
Var mean_all(Var a);

}  // namespace ad

/// Rows of `m` ordered lexicographically by value, ties by index.
std::vector<std::size_t> canonical_row_order(const Matrix& m);

}  // namespace shrinking
