#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mednli/rng.h"

namespace mednli {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

namespace detail {

// One vertex of the computation record. Leaves have no inputs; every op
// output keeps its inputs alive and a closure that pushes its gradient
// back into them.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Thread-local switch: while disabled, ops do not record inputs or
// backward closures.
class GradMode {
 public:
  static bool is_enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major array of doubles with optional gradient state. Copies
// share storage (handle semantics); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double operator()(std::size_t i) const;
  double operator()(std::size_t i, std::size_t j) const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode pass from a scalar. Gradients accumulate into every
  // reachable tensor that requires them; the record is released afterward.
  void backward() const;

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const char* op_name() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, const char*,
                            std::vector<Tensor>);
  friend std::vector<std::string> computation_record(const Tensor&);
  friend class OpAccess;

  std::shared_ptr<detail::Node> node_;
};

// Op names of the record reachable from root, inputs before consumers.
std::vector<std::string> computation_record(const Tensor& root);

enum class ElementwiseOp { add, mul, tanh, sigmoid, relu, scale };

// Binary ops accept equal shapes, or a rank-2 [r x c] left operand with a
// rank-1 [c] right operand broadcast over every row.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b = {}, double factor = 1.0);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& a);

// Row-wise normalization of a [r x c] matrix with learned gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-12);

Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

enum class ConvActivation { relu, identity };

struct ConvBank {
  std::size_t width = 1;
  Tensor weight;  // [filters x (channels * width)], index = channel * width + offset
  Tensor bias;    // [filters]
};

// Convolution over the column (time) axis of a [channels x length] input,
// activation, then max over time. Output is [1 x total filters], banks in
// order.
Tensor conv1d_maxpool(const Tensor& input, std::span<const ConvBank> banks,
                      ConvActivation activation = ConvActivation::relu);

// Inverted dropout; identity when not training or ratio == 0.
Tensor dropout(const Tensor& x, double ratio, bool training, Rng& rng);

// Summed negative log-likelihood of the gold class per row of [N x C].
// Probabilities below eps are clamped and counted.
Tensor nll_loss(const Tensor& probs, std::span<const int> labels, double eps = 1e-12);
std::size_t nll_clamp_count();

}  // namespace mednli
