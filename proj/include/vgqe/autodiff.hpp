#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vgqe/tensor.hpp"

namespace vgqe::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const;
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records one forward pass and replays it backward.
///
/// Nodes are appended in evaluation order, so the record list is topological by
/// construction. A tape supports exactly one backward() call; build a new tape for
/// the next forward pass. Leaves created with parameter() write their gradient into
/// the bound Tensor's grad buffer, accumulating across tapes until zeroed.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  Var parameter(Tensor& param);

  /// Appends an op result. The backward closure is kept only when some input
  /// requires grad; it receives the tape and the output node id.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  void backward(const Var& root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated (zeroed) on first access.
  std::span<double> grad(std::size_t id);
  std::span<const double> grad(const Var& v);

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t record_count() const { return record_count_; }
  std::size_t visited_records() const { return visited_records_; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Tensor* bound = nullptr;
    BackwardFn backward;
    std::vector<double> grad;
  };

  std::deque<Node> nodes_;
  std::size_t record_count_ = 0;
  std::size_t visited_records_ = 0;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Elementwise. `b` may match `a` exactly, be a single value, or match the
// trailing dimensions of `a` (row broadcast along the leading dimension).

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add(const Var& a, double b);
Var scale(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);

enum class Elementwise { add, sub, mul };
Var elementwise(Elementwise op, const Var& a, const Var& b);

// ---------------------------------------------------------------------------
// Linear algebra

/// [m x n] * [n x p] -> [m x p]
Var matmul(const Var& a, const Var& b);
/// Batched product: [B x m x n] * [B x n x p] -> [B x m x p]
Var bmm(const Var& a, const Var& b);

// ---------------------------------------------------------------------------
// Reductions and normalizations

enum class Reduce { sum, max, mean };

/// Reduces `axis` away. Max routes the gradient to the first maximizer only.
Var reduce(Reduce op, const Var& x, std::size_t axis);
/// Sum of every element, as a rank-0 tensor.
Var sum_all(const Var& x);
/// Softmax over the last axis with max subtraction.
Var softmax(const Var& x);
/// Scales each row (last axis) to unit L2 norm; eps guards the zero row.
Var l2_normalize(const Var& x, double eps = 1e-12);
/// Mean over rows of -log softmax(logits)[target]; logits are [n x A].
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets);

// ---------------------------------------------------------------------------
// Shape plumbing

Var reshape(const Var& x, Shape shape);
/// Columns [begin, end) of the last axis.
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
/// [n x d] -> [n*times x d], every row repeated `times` times consecutively.
Var repeat_rows(const Var& x, std::size_t times);
/// Rows `indices` of a [r x d] matrix, in order.
Var gather_rows(const Var& x, std::span<const std::size_t> indices);

}  // namespace vgqe::ad
