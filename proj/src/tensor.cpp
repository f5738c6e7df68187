#include "mednli/tensor.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mednli/error.h"

namespace mednli {

namespace {

thread_local bool grad_enabled = true;
std::atomic<std::size_t> clamp_counter{0};

constexpr const char* kModule = "tensor";

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void dimension_error(const std::string& what) { throw DimensionError(kModule, what); }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) dimension_error(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    dimension_error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                    shape_string(t.shape()));
  }
}

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(kModule, std::string(op) + ": non-finite input");
  }
}

}  // namespace

class OpAccess {
 public:
  static detail::Node& node(const Tensor& t) { return *t.node_; }
  static const std::shared_ptr<detail::Node>& ptr(const Tensor& t) { return t.node_; }
};

namespace {

detail::Node& node_of(const Tensor& t) { return OpAccess::node(t); }

// Adds to an input's gradient only when that input participates.
struct GradSink {
  detail::Node* node = nullptr;
  explicit GradSink(detail::Node& n) {
    if (n.requires_grad) {
      n.ensure_grad();
      node = &n;
    }
  }
  explicit operator bool() const { return node != nullptr; }
  double& operator[](std::size_t i) { return node->grad[i]; }
};

}  // namespace

Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   std::vector<Tensor> inputs) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = op;
  if (GradMode::is_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(OpAccess::ptr(in));
    }
  }
  return Tensor(std::move(node));
}

namespace {

// Attach a backward closure to an op output if it is part of the record.
template <typename F>
void on_backward(const Tensor& out, F&& fn) {
  auto& n = node_of(out);
  if (n.requires_grad) n.backward = std::forward<F>(fn);
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool GradMode::is_enabled() { return grad_enabled; }
void GradMode::set_enabled(bool enabled) { grad_enabled = enabled; }

NoGradGuard::NoGradGuard() : prev_(GradMode::is_enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(prev_); }

Tensor::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<double>(product(shape), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) dimension_error("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) dimension_error("zero-sized dimension in " + shape_string(shape));
  }
  if (product(shape) != values.size()) {
    dimension_error("shape " + shape_string(shape) + " does not hold " +
                    std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) dimension_error("rows() on " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) dimension_error("cols() on " + shape_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }
double Tensor::operator()(std::size_t i) const { return node_->data.at(i); }
double Tensor::operator()(std::size_t i, std::size_t j) const {
  return node_->data.at(i * cols() + j);
}

double Tensor::item() const {
  if (size() != 1) throw ContractError(kModule, "item() on non-scalar " + shape_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->data.size(), 0.0);
}

const char* Tensor::op_name() const { return node_->op; }

Tensor Tensor::clone() const {
  Tensor copy(node_->shape, node_->data, node_->requires_grad);
  return copy;
}

namespace {

std::vector<detail::Node*> topological_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<std::string> computation_record(const Tensor& root) {
  std::vector<std::string> names;
  for (auto* n : topological_order(root.node_.get())) names.emplace_back(n->op);
  return names;
}

void Tensor::backward() const {
  if (!defined() || size() != 1) {
    throw ContractError(kModule, "backward() requires a scalar loss, got " +
                                     (defined() ? shape_string(shape()) : std::string("undefined")));
  }
  if (!node_->requires_grad) {
    throw ContractError(kModule, "backward() on a tensor that does not require grad");
  }
  auto order = topological_order(node_.get());
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (auto* n : order) {
    if (!n->inputs.empty()) {
      n->backward = nullptr;
      n->inputs.clear();
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Broadcast { none, rows };

Broadcast binary_layout(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined()) throw ContractError(kModule, std::string(op) + ": undefined operand");
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1]) return Broadcast::rows;
  dimension_error(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                  shape_string(b.shape()));
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Dfdx dfdx) {
  if (!a.defined()) throw ContractError(kModule, std::string(op) + ": undefined operand");
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  Tensor result = make_result(a.shape(), std::move(out), op, {a});
  on_backward(result, [dfdx](detail::Node& self) {
    GradSink da(*self.inputs[0]);
    if (!da) return;
    const auto& x = self.inputs[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i] * dfdx(x[i], self.data[i]);
  });
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Broadcast layout = binary_layout(a, b, "add");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.begin(), x.end());
  const std::size_t width = y.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += layout == Broadcast::none ? y[i] : y[i % width];
  Tensor result = make_result(a.shape(), std::move(out), "add", {a, b});
  on_backward(result, [layout, width](detail::Node& self) {
    GradSink da(*self.inputs[0]);
    GradSink db(*self.inputs[1]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (da) da[i] += self.grad[i];
      if (db) db[layout == Broadcast::none ? i : i % width] += self.grad[i];
    }
  });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Broadcast layout = binary_layout(a, b, "mul");
  auto x = a.data();
  auto y = b.data();
  const std::size_t width = y.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] * (layout == Broadcast::none ? y[i] : y[i % width]);
  }
  Tensor result = make_result(a.shape(), std::move(out), "mul", {a, b});
  on_backward(result, [layout, width](detail::Node& self) {
    GradSink da(*self.inputs[0]);
    GradSink db(*self.inputs[1]);
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      std::size_t j = layout == Broadcast::none ? i : i % width;
      if (da) da[i] += self.grad[i] * y[j];
      if (db) db[j] += self.grad[i] * x[i];
    }
  });
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b, double factor) {
  switch (op) {
    case ElementwiseOp::add:
      return add(a, b);
    case ElementwiseOp::mul:
      return mul(a, b);
    case ElementwiseOp::tanh:
      return tanh(a);
    case ElementwiseOp::sigmoid:
      return sigmoid(a);
    case ElementwiseOp::relu:
      return relu(a);
    case ElementwiseOp::scale:
      return scale(a, factor);
  }
  throw ContractError(kModule, "unknown elementwise op");
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t p = a.shape()[0], q = a.shape()[1], r = b.shape()[1];
  if (b.shape()[0] != q) {
    dimension_error("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                    shape_string(b.shape()));
  }
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(p * r, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      const double xij = x[i * q + j];
      const double* yrow = &y[j * r];
      double* orow = &out[i * r];
      for (std::size_t k = 0; k < r; ++k) orow[k] += xij * yrow[k];
    }
  }
  Tensor result = make_result({p, r}, std::move(out), "matmul", {a, b});
  on_backward(result, [p, q, r](detail::Node& self) {
    GradSink da(*self.inputs[0]);
    GradSink db(*self.inputs[1]);
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    const auto& g = self.grad;
    if (da) {
      // dA = dC * B^T
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < r; ++k) acc += g[i * r + k] * y[j * r + k];
          da[i * q + j] += acc;
        }
      }
    }
    if (db) {
      // dB = A^T * dC
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
          const double xij = x[i * q + j];
          for (std::size_t k = 0; k < r; ++k) db[j * r + k] += xij * g[i * r + k];
        }
      }
    }
  });
  return result;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  auto x = a.data();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x[i * m + j];
  }
  Tensor result = make_result({m, n}, std::move(out), "transpose", {a});
  on_backward(result, [n, m](detail::Node& self) {
    GradSink da(*self.inputs[0]);
    if (!da) return;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) da[i * m + j] += self.grad[j * n + i];
    }
  });
  return result;
}

namespace {

// Visits each 1-D slice along `axis` as (offset, stride, length).
template <typename F>
void for_each_slice(const Shape& shape, std::size_t axis, F&& fn) {
  if (shape.size() == 1) {
    fn(std::size_t{0}, std::size_t{1}, shape[0]);
    return;
  }
  const std::size_t rows = shape[0], cols = shape[1];
  if (axis == 1) {
    for (std::size_t i = 0; i < rows; ++i) fn(i * cols, std::size_t{1}, cols);
  } else {
    for (std::size_t j = 0; j < cols; ++j) fn(j, cols, rows);
  }
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (!x.defined()) throw ContractError(kModule, "softmax: undefined operand");
  if (x.rank() > 2) dimension_error("softmax: rank > 2 unsupported, got " + shape_string(x.shape()));
  if (axis >= x.rank()) {
    dimension_error("softmax: axis " + std::to_string(axis) + " out of range for " +
                    shape_string(x.shape()));
  }
  auto in = x.data();
  for (double v : in) {
    if (std::isnan(v)) throw NumericError(kModule, "softmax: NaN input");
  }
  std::vector<double> out(in.size());
  for_each_slice(x.shape(), axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, in[off + k * stride]);
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      double e = std::exp(in[off + k * stride] - mx);
      out[off + k * stride] = e;
      total += e;
    }
    for (std::size_t k = 0; k < len; ++k) out[off + k * stride] /= total;
  });
  Tensor result = make_result(x.shape(), std::move(out), "softmax", {x});
  on_backward(result, [axis](detail::Node& self) {
    GradSink dx(*self.inputs[0]);
    if (!dx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for_each_slice(self.shape, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += g[off + k * stride] * y[off + k * stride];
      for (std::size_t k = 0; k < len; ++k) {
        std::size_t i = off + k * stride;
        dx[i] += y[i] * (g[i] - dot);
      }
    });
  });
  return result;
}

Tensor sum(const Tensor& a) {
  if (!a.defined()) throw ContractError(kModule, "sum: undefined operand");
  auto x = a.data();
  double total = std::accumulate(x.begin(), x.end(), 0.0);
  Tensor result = make_result({1}, {total}, "sum", {a});
  on_backward(result, [](detail::Node& self) {
    GradSink da(*self.inputs[0]);
    if (!da) return;
    for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) da[i] += self.grad[0];
  });
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (gamma.shape() != Shape{cols} || beta.shape() != Shape{cols}) {
    dimension_error("layer_norm: gain/shift " + shape_string(gamma.shape()) + "/" +
                    shape_string(beta.shape()) + " do not match " + shape_string(x.shape()));
  }
  auto in = x.data();
  auto g = gamma.data();
  auto b = beta.data();
  std::vector<double> out(in.size());
  auto normalized = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = &in[i * cols];
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += row[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(cols);
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < cols; ++j) {
      double xhat = (row[j] - mean) * inv;
      (*normalized)[i * cols + j] = xhat;
      out[i * cols + j] = g[j] * xhat + b[j];
    }
  }
  Tensor result = make_result(x.shape(), std::move(out), "layer_norm", {x, gamma, beta});
  on_backward(result, [rows, cols, normalized, inv_std](detail::Node& self) {
    GradSink dx(*self.inputs[0]);
    GradSink dg(*self.inputs[1]);
    GradSink db(*self.inputs[2]);
    const auto& gain = self.inputs[1]->data;
    const auto& dy = self.grad;
    const auto& xhat = *normalized;
    const double n = static_cast<double>(cols);
    for (std::size_t i = 0; i < rows; ++i) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        std::size_t k = i * cols + j;
        if (dg) dg[j] += dy[k] * xhat[k];
        if (db) db[j] += dy[k];
        double dxhat = dy[k] * gain[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat[k];
      }
      if (!dx) continue;
      for (std::size_t j = 0; j < cols; ++j) {
        std::size_t k = i * cols + j;
        double dxhat = dy[k] * gain[j];
        dx[k] += (*inv_std)[i] / n * (n * dxhat - sum_dxhat - xhat[k] * sum_dxhat_xhat);
      }
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Indexing and layout

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "gather_rows");
  if (ids.empty()) dimension_error("gather_rows: empty id list");
  const std::size_t vocab = table.shape()[0], width = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DataError(kModule, "gather_rows: id " + std::to_string(id) + " outside table of " +
                                   std::to_string(vocab) + " rows");
    }
  }
  auto src = table.data();
  std::vector<double> out(ids.size() * width);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(&src[static_cast<std::size_t>(ids[r]) * width], width, &out[r * width]);
  }
  Tensor result = make_result({ids.size(), width}, std::move(out), "gather_rows", {table});
  on_backward(result, [rows = std::vector<int>(ids.begin(), ids.end()), width](detail::Node& self) {
    GradSink dt(*self.inputs[0]);
    if (!dt) return;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::size_t base = static_cast<std::size_t>(rows[r]) * width;
      for (std::size_t j = 0; j < width; ++j) dt[base + j] += self.grad[r * width + j];
    }
  });
  return result;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_rows");
  const std::size_t cols = a.shape()[1];
  if (begin >= end || end > a.shape()[0]) {
    dimension_error("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                    ") invalid for " + shape_string(a.shape()));
  }
  auto x = a.data();
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          x.begin() + static_cast<std::ptrdiff_t>(end * cols));
  Tensor result = make_result({end - begin, cols}, std::move(out), "slice_rows", {a});
  on_backward(result, [offset = begin * cols](detail::Node& self) {
    GradSink da(*self.inputs[0]);
    if (!da) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) da[offset + i] += self.grad[i];
  });
  return result;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_cols");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (begin >= end || end > cols) {
    dimension_error("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                    ") invalid for " + shape_string(a.shape()));
  }
  const std::size_t width = end - begin;
  auto x = a.data();
  std::vector<double> out(rows * width);
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(&x[i * cols + begin], width, &out[i * width]);
  Tensor result = make_result({rows, width}, std::move(out), "slice_cols", {a});
  on_backward(result, [rows, cols, begin, width](detail::Node& self) {
    GradSink da(*self.inputs[0]);
    if (!da) return;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < width; ++j) da[i * cols + begin + j] += self.grad[i * width + j];
    }
  });
  return result;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) dimension_error("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.shape()[1] != cols) {
      dimension_error("concat_rows: column mismatch " + shape_string(parts[0].shape()) + " vs " +
                      shape_string(p.shape()));
    }
    rows += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result = make_result({rows, cols}, std::move(out), "concat_rows",
                              std::vector<Tensor>(parts.begin(), parts.end()));
  on_backward(result, [](detail::Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      GradSink d(*in);
      if (d) {
        for (std::size_t i = 0; i < in->data.size(); ++i) d[i] += self.grad[offset + i];
      }
      offset += in->data.size();
    }
  });
  return result;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) dimension_error("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != rows) {
      dimension_error("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                      shape_string(p.shape()));
    }
    cols += p.shape()[1];
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    auto x = p.data();
    for (std::size_t i = 0; i < rows; ++i) std::copy_n(&x[i * w], w, &out[i * cols + offset]);
    offset += w;
  }
  Tensor result = make_result({rows, cols}, std::move(out), "concat_cols",
                              std::vector<Tensor>(parts.begin(), parts.end()));
  on_backward(result, [rows, cols](detail::Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t w = in->shape[1];
      GradSink d(*in);
      if (d) {
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < w; ++j) d[i * w + j] += self.grad[i * cols + offset + j];
        }
      }
      offset += w;
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Convolution + max-over-time

Tensor conv1d_maxpool(const Tensor& input, std::span<const ConvBank> banks,
                      ConvActivation activation) {
  if (!input.defined()) throw ContractError(kModule, "conv1d_maxpool: undefined input");
  require_rank(input, 2, "conv1d_maxpool");
  const std::size_t channels = input.shape()[0], length = input.shape()[1];
  if (banks.empty()) dimension_error("conv1d_maxpool: no filter banks");
  std::size_t total = 0;
  for (const auto& bank : banks) {
    if (bank.width == 0) dimension_error("conv1d_maxpool: zero filter width");
    if (length < bank.width) {
      throw ContractError(kModule, "conv1d_maxpool: sequence length " + std::to_string(length) +
                                       " shorter than filter width " + std::to_string(bank.width));
    }
    require_rank(bank.weight, 2, "conv1d_maxpool");
    if (bank.weight.shape()[1] != channels * bank.width ||
        bank.bias.shape() != Shape{bank.weight.shape()[0]}) {
      dimension_error("conv1d_maxpool: bank of width " + std::to_string(bank.width) + " has weight " +
                      shape_string(bank.weight.shape()) + " and bias " +
                      shape_string(bank.bias.shape()) + " for " + std::to_string(channels) +
                      " channels");
    }
    total += bank.weight.shape()[0];
  }

  auto x = input.data();
  std::vector<double> out(total);
  // Winning window start and pre-activation per output unit.
  auto argmax = std::make_shared<std::vector<std::size_t>>(total);
  auto winning_z = std::make_shared<std::vector<double>>(total);
  std::vector<Tensor> inputs{input};
  std::size_t unit = 0;
  for (const auto& bank : banks) {
    inputs.push_back(bank.weight);
    inputs.push_back(bank.bias);
    const std::size_t w = bank.width, filters = bank.weight.shape()[0];
    auto weight = bank.weight.data();
    auto bias = bank.bias.data();
    for (std::size_t f = 0; f < filters; ++f, ++unit) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t + w <= length; ++t) {
        double z = bias[f];
        const double* wf = &weight[f * channels * w];
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t o = 0; o < w; ++o) z += wf[c * w + o] * x[c * length + t + o];
        }
        double a = activation == ConvActivation::relu ? std::max(z, 0.0) : z;
        if (a > best) {
          best = a;
          (*argmax)[unit] = t;
          (*winning_z)[unit] = z;
        }
      }
      out[unit] = best;
    }
  }

  std::vector<std::size_t> widths;
  for (const auto& bank : banks) widths.push_back(bank.width);
  Tensor result = make_result({1, total}, std::move(out), "conv1d_maxpool", std::move(inputs));
  on_backward(result, [widths, channels, length, argmax, winning_z,
                       activation](detail::Node& self) {
    GradSink dx(*self.inputs[0]);
    const auto& x = self.inputs[0]->data;
    std::size_t unit = 0;
    for (std::size_t b = 0; b < widths.size(); ++b) {
      detail::Node& wnode = *self.inputs[1 + 2 * b];
      detail::Node& bnode = *self.inputs[2 + 2 * b];
      GradSink dw(wnode);
      GradSink dbias(bnode);
      const std::size_t w = widths[b], filters = wnode.shape[0];
      for (std::size_t f = 0; f < filters; ++f, ++unit) {
        double g = self.grad[unit];
        if (activation == ConvActivation::relu && (*winning_z)[unit] <= 0.0) g = 0.0;
        if (g == 0.0) continue;
        const std::size_t t = (*argmax)[unit];
        if (dbias) dbias[f] += g;
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t o = 0; o < w; ++o) {
            const std::size_t widx = f * channels * w + c * w + o;
            const std::size_t xidx = c * length + t + o;
            if (dw) dw[widx] += g * x[xidx];
            if (dx) dx[xidx] += g * wnode.data[widx];
          }
        }
      }
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Regularization and loss

Tensor dropout(const Tensor& x, double ratio, bool training, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError(kModule, "dropout ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  if (!training || ratio == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - ratio);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    (*mask)[i] = rng.uniform() < ratio ? 0.0 : keep_scale;
    out[i] = in[i] * (*mask)[i];
  }
  Tensor result = make_result(x.shape(), std::move(out), "dropout", {x});
  on_backward(result, [mask](detail::Node& self) {
    GradSink dx(*self.inputs[0]);
    if (!dx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * (*mask)[i];
  });
  return result;
}

Tensor nll_loss(const Tensor& probs, std::span<const int> labels, double eps) {
  require_rank(probs, 2, "nll_loss");
  const std::size_t n = probs.shape()[0], classes = probs.shape()[1];
  if (labels.size() != n) {
    dimension_error("nll_loss: " + std::to_string(labels.size()) + " labels for " +
                    shape_string(probs.shape()));
  }
  auto p = probs.data();
  check_finite(p, "nll_loss");
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError(kModule, "nll_loss: label " + std::to_string(labels[i]) + " out of range");
    }
    double pg = p[i * classes + static_cast<std::size_t>(labels[i])];
    if (pg < eps) {
      clamp_counter.fetch_add(1, std::memory_order_relaxed);
      pg = eps;
    }
    loss -= std::log(pg);
  }
  Tensor result = make_result({1}, {loss}, "nll_loss", {probs});
  on_backward(result, [gold = std::vector<int>(labels.begin(), labels.end()), classes,
                       eps](detail::Node& self) {
    GradSink dp(*self.inputs[0]);
    if (!dp) return;
    const auto& p = self.inputs[0]->data;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      std::size_t k = i * classes + static_cast<std::size_t>(gold[i]);
      if (p[k] >= eps) dp[k] += -self.grad[0] / p[k];
    }
  });
  return result;
}

std::size_t nll_clamp_count() { return clamp_counter.load(std::memory_order_relaxed); }

}  // namespace mednli
