#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtdqn/error.hpp"
#include "mtdqn/rng.hpp"

namespace mtdqn {

class Tensor;
class Tape;

namespace detail {

struct TensorNode {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data
  bool requires_grad = false;  // leaf parameter flag
  bool needs_grad = false;     // requires_grad, or depends on a node that does
  bool has_grad = false;       // grad holds accumulated values

  std::size_t size() const { return rows * cols; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    has_grad = true;
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

// Dense row-major fp64 matrix with a gradient slot. Copies share the
// underlying node (handle semantics); vectors are 1xN, scalars 1x1.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor full(std::size_t rows, std::size_t cols, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor identity(std::size_t n);
  // Entries i.i.d. uniform(lo, hi) drawn from rng in row-major order.
  static Tensor uniform(std::size_t rows, std::size_t cols, double lo,
                        double hi, Rng& rng);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_ ? node_->rows : 0; }
  std::size_t cols() const { return node_ ? node_->cols : 0; }
  std::size_t size() const { return node_ ? node_->size() : 0; }
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }
  std::string shape_str() const;

  double at(std::size_t r, std::size_t c) const;
  // Value of a 1x1 tensor; ContractError otherwise.
  double item() const;
  std::span<const double> values() const;
  // Mutable view of the raw values (parameter init / optimizer updates only;
  // never mutate mid-graph).
  std::span<double> raw_values();

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return node_ && node_->has_grad; }
  std::span<const double> grad() const;
  std::span<double> raw_grad();
  void zero_grad();

  // Identity comparison (same underlying node).
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  detail::NodePtr node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

// Records the backward closures of differentiable operations executed while
// the tape is the innermost active one on this thread. Construction
// activates, destruction deactivates; one backward pass per tape.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and runs all recorded closures in reverse
  // execution order. loss must be scalar; a spent tape raises StateError.
  void backward(const Tensor& loss);

  std::size_t recorded_ops() const { return entries_.size(); }
  bool spent() const { return spent_; }

  static Tape* active();
  void record(std::function<void()> backward_fn);

 private:
  std::vector<std::function<void()>> entries_;
  bool spent_ = false;
  Tape* previous_ = nullptr;
};

// Suppresses recording within a scope (evaluation-mode forwards).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* saved_;
};

enum class Activation { sigmoid, tanh, relu };
enum class Elementwise { add, sub, mul };

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise ops require equal shapes, except that a 1x1 tensor broadcasts
// against any shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor activation(Activation kind, const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);

// Each row shifted by its max before exponentiation; rows sum to 1.
Tensor rowwise_softmax(const Tensor& x);

// axis 0 stacks rows, axis 1 stacks columns.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);

// axis 0 reduces over rows -> 1xC; axis 1 reduces over columns -> Rx1.
Tensor reduce_mean(const Tensor& x, std::size_t axis);
Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Per-row normalization over columns: gain * (x - mean)/sqrt(var + 1e-5) + bias.
// gain and bias are 1xC; requires C >= 2.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);

// Per-row dot product of equal-shaped matrices -> Rx1.
Tensor rowwise_dot(const Tensor& a, const Tensor& b);

// Multiplies row i of x by factors[i]; factors is Rx1.
Tensor scale_rows(const Tensor& x, const Tensor& factors);

Tensor exp_elem(const Tensor& x);

// Elementwise quotient; shapes must match exactly.
Tensor div_elem(const Tensor& a, const Tensor& b);

// Elementwise maximum; gradient follows the larger input (ties go to a).
Tensor maximum(const Tensor& a, const Tensor& b);

// Adds a 1xC bias row to every row of x.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

// x * mask * factor with mask treated as a constant.
Tensor apply_mask(const Tensor& x, const Tensor& mask, double factor);

// Inverted dropout: keeps entries with probability 1-rate and rescales by
// 1/(1-rate). rate == 0 is the identity.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

namespace detail {

// Hooks for modules that define their own differentiable operations:
// allocate a result whose needs_grad follows the inputs, then record a
// backward closure on the active tape when required.
Tensor op_result(std::size_t rows, std::size_t cols,
                 std::initializer_list<const Tensor*> inputs);
bool op_should_record(const Tensor& result);

}  // namespace detail

}  // namespace mtdqn
