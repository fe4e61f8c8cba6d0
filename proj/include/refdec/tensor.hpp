// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace refdec {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

inline constexpr int kNoNode = -1;

// Dense row-major tensor of doubles. A tensor optionally carries a handle
// (tape_id, node) into the tape that produced it; untracked tensors act as
// constants when fed into tape ops.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  int node = kNoNode;
  std::uint64_t tape_id = 0;

  Tensor() = default;
  explicit Tensor(Shape s);  // zero-filled
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor from_vector(std::vector<double> v);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool tracked() const { return node != kNoNode; }
  bool all_finite() const;

  // Value of a single-element tensor.
  double item() const;
};

// Gradients per tape node, produced by Tape::backward. Nodes the loss never
// reached hold zeros of the node's shape.
class Tape;
class Gradients {
 public:
  const std::vector<double>& at(const Tensor& t) const;
  const std::vector<double>& at_node(int node) const;

 private:
  friend class Tape;
  std::vector<std::vector<double>> by_node_;
};

// Reverse-mode gradient tape over tensor ops. Recording order is a valid
// evaluation order, and backward walks it in reverse. A tape and the tensors
// it produced are confined to one thread; independent tapes may run in
// parallel.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers values as a differentiable leaf (parameters enter here).
  Tensor leaf(const Tensor& t);

  // c[m x n] = a[m x k] * b[k x n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  // y[m] = w[m x k] * x[k]
  Tensor matvec(const Tensor& w, const Tensor& x);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double s);

  Tensor tanh(const Tensor& x);
  Tensor sigmoid(const Tensor& x);

  // Max-subtracted softmax over a vector.
  Tensor softmax(const Tensor& x);
  // log(sum(exp(x))) over a vector, computed via the max trick.
  Tensor logsumexp(const Tensor& x);

  Tensor concat(std::span<const Tensor> parts);
  Tensor slice(const Tensor& x, std::size_t offset, std::size_t len);
  Tensor sum(const Tensor& x);
  Tensor pick(const Tensor& x, std::size_t index);
  // Column `col` of an [R x C] matrix; the gradient lands in that column.
  Tensor column(const Tensor& m, std::size_t col);
  // sum_i weights[i] * values[i], values sharing one vector shape.
  Tensor weighted_sum(const Tensor& weights, std::span<const Tensor> values);

  // Accumulates gradients for everything reachable from a scalar loss.
  Gradients backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

 private:
  struct Node;
  using PullFn = std::function<void(Tape&, const Node&,
                                    const std::vector<double>& out_adj)>;
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<int> args;
    PullFn pull;  // null for leaves and constants
  };

  // Node id for t on this tape, registering untracked tensors as constants.
  int ensure(const Tensor& t);
  int push(Tensor& out, std::vector<int> args, PullFn pull);
  const std::vector<double>& val(int node) const { return nodes_[node].value; }
  std::vector<double>& adj(int node) { return adjoints_[node]; }

  std::uint64_t id_ = 0;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> adjoints_;
};

// Compares an analytic gradient against central finite differences
// (f(p+eps) - f(p-eps)) / (2 eps), coordinate by coordinate. `eval` must
// recompute the (deterministic) objective from the current contents of the
// parameter storage; `analytic` is aligned with `params`. The evaluations
// return long double because the difference quotient divides their rounding
// error by 2 eps; an extended-precision objective keeps that noise well
// under the tolerances this checker is used with (see reference_eval.hpp).
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  bool finite = true;  // false if any probe produced a non-finite value
  std::string note;
};

GradCheckReport grad_check(
    const std::function<long double()>& eval,
    std::span<const std::pair<std::string, Tensor*>> params,
    const std::vector<std::vector<double>>& analytic, double eps);

}  // namespace refdec
