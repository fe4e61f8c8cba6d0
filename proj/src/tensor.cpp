// SPDX-License-Identifier: Apache-2.0
#include "refdec/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

#include "refdec/error.hpp"
#include "refdec/kernels.hpp"

namespace refdec {

namespace {

std::atomic<std::uint64_t> g_next_tape_id{1};

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
}

void check_vector(const Tensor& t, const char* op) {
  if (t.rank() != 1) {
    throw DimensionError(std::string(op) + ": expected a vector, got shape " +
                         shape_str(t.shape));
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), 0.0) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive");
  }
}

Tensor::Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive");
  }
  if (shape_size(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::from_vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() requires a single-element tensor, got " +
                        shape_str(shape));
  }
  return data[0];
}

const std::vector<double>& Gradients::at(const Tensor& t) const {
  if (!t.tracked()) throw ContractError("gradient of an untracked tensor");
  return at_node(t.node);
}

const std::vector<double>& Gradients::at_node(int node) const {
  if (node < 0 || static_cast<std::size_t>(node) >= by_node_.size()) {
    throw ContractError("gradient node id out of range");
  }
  return by_node_[static_cast<std::size_t>(node)];
}

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

int Tape::ensure(const Tensor& t) {
  if (t.tracked()) {
    if (t.tape_id != id_) {
      throw ContractError("tensor belongs to a different tape");
    }
    return t.node;
  }
  Node n;
  n.shape = t.shape;
  n.value = t.data;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

int Tape::push(Tensor& out, std::vector<int> args, PullFn pull) {
  Node n;
  n.shape = out.shape;
  n.value = out.data;
  n.args = std::move(args);
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  out.node = id;
  out.tape_id = id_;
  return id;
}

Tensor Tape::leaf(const Tensor& t) {
  Tensor out = t;
  out.node = kNoNode;
  out.tape_id = 0;
  const int id = ensure(out);
  out.node = id;
  out.tape_id = id_;
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) +
                         " and " + shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  const int ia = ensure(a), ib = ensure(b);
  Tensor out({m, n});
  kernels::matmul(a.data.data(), b.data.data(), out.data.data(), m, k, n);
  push(out, {ia, ib},
       [m, k, n](Tape& t, const Node& self, const std::vector<double>& oa) {
         const auto& av = t.val(self.args[0]);
         const auto& bv = t.val(self.args[1]);
         kernels::matmul_abt_acc(oa.data(), bv.data(),
                                 t.adj(self.args[0]).data(), m, n, k);
         kernels::matmul_atb_acc(av.data(), oa.data(),
                                 t.adj(self.args[1]).data(), m, k, n);
       });
  return out;
}

Tensor Tape::matvec(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || x.rank() != 1 || w.shape[1] != x.shape[0]) {
    throw DimensionError("matvec: incompatible shapes " + shape_str(w.shape) +
                         " and " + shape_str(x.shape));
  }
  const std::size_t m = w.shape[0], k = w.shape[1];
  const int iw = ensure(w), ix = ensure(x);
  Tensor out({m});
  kernels::matvec(w.data.data(), x.data.data(), out.data.data(), m, k);
  push(out, {iw, ix},
       [m, k](Tape& t, const Node& self, const std::vector<double>& oa) {
         const auto& wv = t.val(self.args[0]);
         const auto& xv = t.val(self.args[1]);
         kernels::outer_acc(oa.data(), xv.data(), t.adj(self.args[0]).data(),
                            m, k);
         kernels::matvec_t_acc(wv.data(), oa.data(), t.adj(self.args[1]).data(),
                               m, k);
       });
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const int ia = ensure(a), ib = ensure(b);
  Tensor out(a.shape);
  kernels::vadd(a.data.data(), b.data.data(), out.data.data(), out.size());
  push(out, {ia, ib},
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         kernels::axpy(1.0, oa.data(), t.adj(self.args[0]).data(), oa.size());
         kernels::axpy(1.0, oa.data(), t.adj(self.args[1]).data(), oa.size());
       });
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const int ia = ensure(a), ib = ensure(b);
  Tensor out(a.shape);
  kernels::vsub(a.data.data(), b.data.data(), out.data.data(), out.size());
  push(out, {ia, ib},
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         kernels::axpy(1.0, oa.data(), t.adj(self.args[0]).data(), oa.size());
         kernels::axpy(-1.0, oa.data(), t.adj(self.args[1]).data(), oa.size());
       });
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const int ia = ensure(a), ib = ensure(b);
  Tensor out(a.shape);
  kernels::vmul(a.data.data(), b.data.data(), out.data.data(), out.size());
  push(out, {ia, ib},
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         const auto& av = t.val(self.args[0]);
         const auto& bv = t.val(self.args[1]);
         auto& da = t.adj(self.args[0]);
         auto& db = t.adj(self.args[1]);
         for (std::size_t i = 0; i < oa.size(); ++i) {
           da[i] += bv[i] * oa[i];
           db[i] += av[i] * oa[i];
         }
       });
  return out;
}

Tensor Tape::scale(const Tensor& a, double s) {
  const int ia = ensure(a);
  Tensor out(a.shape);
  kernels::vscale(a.data.data(), s, out.data.data(), out.size());
  push(out, {ia},
       [s](Tape& t, const Node& self, const std::vector<double>& oa) {
         kernels::axpy(s, oa.data(), t.adj(self.args[0]).data(), oa.size());
       });
  return out;
}

Tensor Tape::tanh(const Tensor& x) {
  const int ix = ensure(x);
  Tensor out(x.shape);
  kernels::vtanh(x.data.data(), out.data.data(), out.size());
  push(out, {ix},
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         auto& dx = t.adj(self.args[0]);
         for (std::size_t i = 0; i < oa.size(); ++i) {
           dx[i] += (1.0 - self.value[i] * self.value[i]) * oa[i];
         }
       });
  return out;
}

Tensor Tape::sigmoid(const Tensor& x) {
  const int ix = ensure(x);
  Tensor out(x.shape);
  kernels::vsigmoid(x.data.data(), out.data.data(), out.size());
  push(out, {ix},
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         auto& dx = t.adj(self.args[0]);
         for (std::size_t i = 0; i < oa.size(); ++i) {
           dx[i] += self.value[i] * (1.0 - self.value[i]) * oa[i];
         }
       });
  return out;
}

Tensor Tape::softmax(const Tensor& x) {
  check_vector(x, "softmax");
  if (x.size() == 0) throw DomainError("softmax: empty input");
  const int ix = ensure(x);
  Tensor out(x.shape);
  const double mx = *std::max_element(x.data.begin(), x.data.end());
  double denom = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.data[i] = std::exp(x.data[i] - mx);
    denom += out.data[i];
  }
  for (double& v : out.data) v /= denom;
  push(out, {ix},
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         auto& dx = t.adj(self.args[0]);
         double dot = 0.0;
         for (std::size_t i = 0; i < oa.size(); ++i)
           dot += oa[i] * self.value[i];
         for (std::size_t i = 0; i < oa.size(); ++i)
           dx[i] += self.value[i] * (oa[i] - dot);
       });
  return out;
}

Tensor Tape::logsumexp(const Tensor& x) {
  check_vector(x, "logsumexp");
  if (x.size() == 0) throw DomainError("logsumexp: empty input");
  const int ix = ensure(x);
  const double mx = *std::max_element(x.data.begin(), x.data.end());
  double denom = 0.0;
  for (double v : x.data) denom += std::exp(v - mx);
  Tensor out = Tensor::scalar(mx + std::log(denom));
  push(out, {ix},
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         const auto& xv = t.val(self.args[0]);
         auto& dx = t.adj(self.args[0]);
         const double lse = self.value[0];
         for (std::size_t i = 0; i < xv.size(); ++i) {
           dx[i] += std::exp(xv[i] - lse) * oa[0];
         }
       });
  return out;
}

Tensor Tape::concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DomainError("concat: no parts");
  std::vector<int> args;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    check_vector(p, "concat");
    args.push_back(ensure(p));
    total += p.size();
  }
  Tensor out({total});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
    off += p.size();
  }
  push(out, std::move(args),
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         std::size_t off = 0;
         for (int arg : self.args) {
           auto& da = t.adj(arg);
           for (std::size_t i = 0; i < da.size(); ++i) da[i] += oa[off + i];
           off += da.size();
         }
       });
  return out;
}

Tensor Tape::slice(const Tensor& x, std::size_t offset, std::size_t len) {
  check_vector(x, "slice");
  if (offset + len > x.size() || len == 0) {
    throw ContractError("slice: range [" + std::to_string(offset) + ", " +
                        std::to_string(offset + len) + ") out of bounds for " +
                        shape_str(x.shape));
  }
  const int ix = ensure(x);
  Tensor out({len}, std::vector<double>(x.data.begin() + offset,
                                        x.data.begin() + offset + len));
  push(out, {ix},
       [offset](Tape& t, const Node& self, const std::vector<double>& oa) {
         auto& dx = t.adj(self.args[0]);
         for (std::size_t i = 0; i < oa.size(); ++i) dx[offset + i] += oa[i];
       });
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  const int ix = ensure(x);
  double s = 0.0;
  for (double v : x.data) s += v;
  Tensor out = Tensor::scalar(s);
  push(out, {ix},
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         auto& dx = t.adj(self.args[0]);
         for (double& v : dx) v += oa[0];
       });
  return out;
}

Tensor Tape::pick(const Tensor& x, std::size_t index) {
  check_vector(x, "pick");
  if (index >= x.size()) {
    throw IndexError("pick: index " + std::to_string(index) +
                     " out of range for " + shape_str(x.shape));
  }
  const int ix = ensure(x);
  Tensor out = Tensor::scalar(x.data[index]);
  push(out, {ix},
       [index](Tape& t, const Node& self, const std::vector<double>& oa) {
         t.adj(self.args[0])[index] += oa[0];
       });
  return out;
}

Tensor Tape::column(const Tensor& m, std::size_t col) {
  if (m.rank() != 2) {
    throw DimensionError("column: expected a matrix, got " +
                         shape_str(m.shape));
  }
  const std::size_t rows = m.shape[0], cols = m.shape[1];
  if (col >= cols) {
    throw IndexError("column: index " + std::to_string(col) +
                     " out of range for " + shape_str(m.shape));
  }
  const int im = ensure(m);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) out.data[r] = m.data[r * cols + col];
  push(out, {im},
       [col, cols](Tape& t, const Node& self, const std::vector<double>& oa) {
         auto& dm = t.adj(self.args[0]);
         for (std::size_t r = 0; r < oa.size(); ++r) {
           dm[r * cols + col] += oa[r];
         }
       });
  return out;
}

Tensor Tape::weighted_sum(const Tensor& weights,
                          std::span<const Tensor> values) {
  check_vector(weights, "weighted_sum");
  if (values.empty()) throw DomainError("weighted_sum: no values");
  if (weights.size() != values.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(values.size()) +
                         " values");
  }
  std::vector<int> args;
  args.push_back(ensure(weights));
  for (const Tensor& v : values) {
    check_vector(v, "weighted_sum");
    if (v.shape != values.front().shape) {
      throw DimensionError("weighted_sum: value shapes differ");
    }
    args.push_back(ensure(v));
  }
  Tensor out(values.front().shape);
  for (std::size_t i = 0; i < values.size(); ++i) {
    kernels::axpy(weights.data[i], values[i].data.data(), out.data.data(),
                  out.size());
  }
  push(out, std::move(args),
       [](Tape& t, const Node& self, const std::vector<double>& oa) {
         const auto& wv = t.val(self.args[0]);
         auto& dw = t.adj(self.args[0]);
         for (std::size_t i = 0; i + 1 < self.args.size(); ++i) {
           const auto& vi = t.val(self.args[i + 1]);
           double dot = 0.0;
           for (std::size_t j = 0; j < oa.size(); ++j) dot += vi[j] * oa[j];
           dw[i] += dot;
           kernels::axpy(wv[i], oa.data(), t.adj(self.args[i + 1]).data(),
                         oa.size());
         }
       });
  return out;
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " +
                        shape_str(loss.shape));
  }
  if (!loss.tracked() || loss.tape_id != id_) {
    throw ContractError("backward: loss is not recorded on this tape");
  }
  adjoints_.assign(nodes_.size(), {});
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    adjoints_[i].assign(nodes_[i].value.size(), 0.0);
  }
  adjoints_[static_cast<std::size_t>(loss.node)][0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.pull) n.pull(*this, n, adjoints_[i]);
  }
  Gradients g;
  g.by_node_ = std::move(adjoints_);
  adjoints_.clear();
  return g;
}

GradCheckReport grad_check(
    const std::function<long double()>& eval,
    std::span<const std::pair<std::string, Tensor*>> params,
    const std::vector<std::vector<double>>& analytic, double eps) {
  if (eps < 1e-7 || eps > 1e-3) {
    throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  if (analytic.size() != params.size()) {
    throw ContractError("grad_check: analytic gradients misaligned");
  }
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].second;
    if (analytic[p].size() != t.size()) {
      throw ContractError("grad_check: gradient size mismatch for " +
                          params[p].first);
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + eps;
      const long double f_plus = eval();
      t.data[i] = saved - eps;
      const long double f_minus = eval();
      t.data[i] = saved;
      if (!std::isfinite(static_cast<double>(f_plus)) ||
          !std::isfinite(static_cast<double>(f_minus))) {
        report.finite = false;
        report.max_rel_err = std::numeric_limits<double>::infinity();
        report.worst_param = params[p].first;
        report.worst_coord = i;
        report.note = "non-finite objective at " + params[p].first + "[" +
                      std::to_string(i) + "]";
        return report;
      }
      const double numeric =
          static_cast<double>((f_plus - f_minus) / (2.0L * eps));
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) /
                         std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[p].first;
        report.worst_coord = i;
      }
    }
  }
  return report;
}

}  // namespace refdec
