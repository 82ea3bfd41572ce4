#include "mtdqn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

namespace mtdqn {

namespace {

thread_local Tape* g_active_tape = nullptr;

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ValidationError(std::string(what) + ": non-finite value");
    }
  }
}

std::string dims(std::size_t r, std::size_t c) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%zux%zu", r, c);
  return buf;
}

detail::NodePtr make_node(std::size_t rows, std::size_t cols) {
  auto node = std::make_shared<detail::TensorNode>();
  node->rows = rows;
  node->cols = cols;
  node->data.assign(rows * cols, 0.0);
  return node;
}

// Result node of an op: needs_grad propagates from the inputs.
Tensor make_result(std::size_t rows, std::size_t cols,
                   std::initializer_list<const Tensor*> inputs) {
  auto node = make_node(rows, cols);
  for (const Tensor* t : inputs) {
    if (t->node() && t->node()->needs_grad) {
      node->needs_grad = true;
      break;
    }
  }
  return Tensor(std::move(node));
}

bool should_record(const Tensor& result) {
  return g_active_tape != nullptr && result.node()->needs_grad;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": empty tensor");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return Tensor(make_node(rows, cols));
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
  auto node = make_node(rows, cols);
  std::fill(node->data.begin(), node->data.end(), value);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return full(1, 1, value); }

Tensor Tensor::row(std::vector<double> values) {
  check_finite(values, "Tensor::row");
  auto node = std::make_shared<detail::TensorNode>();
  node->rows = 1;
  node->cols = values.size();
  node->data = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw DimensionError("Tensor::matrix: " + std::to_string(values.size()) +
                         " values for shape " + dims(rows, cols));
  }
  check_finite(values, "Tensor::matrix");
  auto node = std::make_shared<detail::TensorNode>();
  node->rows = rows;
  node->cols = cols;
  node->data = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::identity(std::size_t n) {
  auto node = make_node(n, n);
  for (std::size_t i = 0; i < n; ++i) node->data[i * n + i] = 1.0;
  return Tensor(std::move(node));
}

Tensor Tensor::uniform(std::size_t rows, std::size_t cols, double lo,
                       double hi, Rng& rng) {
  auto node = make_node(rows, cols);
  for (double& v : node->data) v = rng.uniform(lo, hi);
  return Tensor(std::move(node));
}

std::string Tensor::shape_str() const { return dims(rows(), cols()); }

double Tensor::at(std::size_t r, std::size_t c) const {
  require_defined(*this, "Tensor::at");
  if (r >= rows() || c >= cols()) {
    throw DimensionError("Tensor::at: index (" + std::to_string(r) + "," +
                         std::to_string(c) + ") out of " + shape_str());
  }
  return node_->data[r * cols() + c];
}

double Tensor::item() const {
  require_defined(*this, "Tensor::item");
  if (size() != 1) {
    throw ContractError("Tensor::item: expected scalar, got " + shape_str());
  }
  return node_->data[0];
}

std::span<const double> Tensor::values() const {
  require_defined(*this, "Tensor::values");
  return node_->data;
}

std::span<double> Tensor::raw_values() {
  require_defined(*this, "Tensor::raw_values");
  return node_->data;
}

Tensor& Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "Tensor::set_requires_grad");
  node_->requires_grad = flag;
  node_->needs_grad = flag;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("Tensor::grad: no gradient accumulated");
  return node_->grad;
}

std::span<double> Tensor::raw_grad() {
  if (!has_grad()) throw StateError("Tensor::raw_grad: no gradient accumulated");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) return;
  node_->grad.assign(node_->data.size(), 0.0);
  node_->has_grad = false;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() {
  previous_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
  if (spent_) throw StateError("Tape::record: tape already consumed by backward");
  entries_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (spent_) throw StateError("Tape::backward: tape already consumed");
  require_defined(loss, "Tape::backward");
  if (loss.size() != 1) {
    throw ContractError("Tape::backward: loss must be scalar, got " +
                        loss.shape_str());
  }
  spent_ = true;
  auto node = loss.node();
  node->ensure_grad();
  node->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

NoGradScope::NoGradScope() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = saved_; }

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() +
                         " x " + b.shape_str());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_result(m, n, {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
    }
  }
  if (should_record(out)) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    Tape::active()->record([an, bn, on, m, k, n] {
      if (!on->has_grad) return;
      const auto& g = on->grad;
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              acc += g[i * n + j] * bn->data[p * n + j];
            an->grad[i * k + p] += acc;
          }
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i)
              acc += an->data[i * k + p] * g[i * n + j];
            bn->grad[p * n + j] += acc;
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = make_result(n, m, {&a});
  auto av = a.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
  if (should_record(out)) {
    auto an = a.node();
    auto on = out.node();
    Tape::active()->record([an, on, m, n] {
      if (!on->has_grad || !an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          an->grad[i * n + j] += on->grad[j * m + i];
    });
  }
  return out;
}

namespace {

// Shared core for add/sub/mul with optional 1x1 broadcast on either side.
Tensor binary_op(Elementwise kind, const Tensor& a, const Tensor& b) {
  require_defined(a, "elementwise");
  require_defined(b, "elementwise");
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (!a_scalar && !b_scalar &&
      (a.rows() != b.rows() || a.cols() != b.cols())) {
    throw DimensionError("elementwise: shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  }
  const Tensor& shaped = a_scalar && !b_scalar ? b : a;
  const std::size_t n = shaped.size();
  Tensor out = make_result(shaped.rows(), shaped.cols(), {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    switch (kind) {
      case Elementwise::add: ov[i] = x + y; break;
      case Elementwise::sub: ov[i] = x - y; break;
      case Elementwise::mul: ov[i] = x * y; break;
    }
  }
  if (should_record(out)) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    Tape::active()->record([kind, an, bn, on, a_scalar, b_scalar, n] {
      if (!on->has_grad) return;
      const auto& g = on->grad;
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double d = g[i];
          if (kind == Elementwise::mul) d *= bn->data[b_scalar ? 0 : i];
          an->grad[a_scalar ? 0 : i] += d;
        }
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double d = g[i];
          switch (kind) {
            case Elementwise::add: break;
            case Elementwise::sub: d = -d; break;
            case Elementwise::mul: d *= an->data[a_scalar ? 0 : i]; break;
          }
          bn->grad[b_scalar ? 0 : i] += d;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(Elementwise::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(Elementwise::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(Elementwise::mul, a, b); }

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b) {
  return binary_op(kind, a, b);
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  Tensor out = make_result(a.rows(), a.cols(), {&a});
  auto av = a.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * factor;
  if (should_record(out)) {
    auto an = a.node();
    auto on = out.node();
    Tape::active()->record([an, on, factor] {
      if (!on->has_grad || !an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += factor * on->grad[i];
    });
  }
  return out;
}

Tensor activation(Activation kind, const Tensor& x) {
  require_defined(x, "activation");
  Tensor out = make_result(x.rows(), x.cols(), {&x});
  auto xv = x.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    switch (kind) {
      case Activation::sigmoid: ov[i] = 1.0 / (1.0 + std::exp(-xv[i])); break;
      case Activation::tanh: ov[i] = std::tanh(xv[i]); break;
      case Activation::relu: ov[i] = xv[i] > 0.0 ? xv[i] : 0.0; break;
    }
  }
  if (should_record(out)) {
    auto xn = x.node();
    auto on = out.node();
    Tape::active()->record([kind, xn, on] {
      if (!on->has_grad || !xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        double d = 0.0;
        const double y = on->data[i];
        switch (kind) {
          case Activation::sigmoid: d = y * (1.0 - y); break;
          case Activation::tanh: d = 1.0 - y * y; break;
          case Activation::relu: d = xn->data[i] > 0.0 ? 1.0 : 0.0; break;
        }
        xn->grad[i] += d * on->grad[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) { return activation(Activation::sigmoid, x); }
Tensor tanh_act(const Tensor& x) { return activation(Activation::tanh, x); }
Tensor relu(const Tensor& x) { return activation(Activation::relu, x); }

Tensor softplus(const Tensor& x) {
  require_defined(x, "softplus");
  Tensor out = make_result(x.rows(), x.cols(), {&x});
  auto xv = x.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    // log(1 + e^x) computed without overflow for large |x|.
    ov[i] = std::max(xv[i], 0.0) + std::log1p(std::exp(-std::abs(xv[i])));
  }
  if (should_record(out)) {
    auto xn = x.node();
    auto on = out.node();
    Tape::active()->record([xn, on] {
      if (!on->has_grad || !xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-xn->data[i]));
        xn->grad[i] += s * on->grad[i];
      }
    });
  }
  return out;
}

Tensor rowwise_softmax(const Tensor& x) {
  require_defined(x, "rowwise_softmax");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = make_result(m, n, {&x});
  auto xv = x.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < m; ++i) {
    double row_max = xv[i * n];
    for (std::size_t j = 1; j < n; ++j) row_max = std::max(row_max, xv[i * n + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(xv[i * n + j] - row_max);
      ov[i * n + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] /= total;
  }
  if (should_record(out)) {
    auto xn = x.node();
    auto on = out.node();
    Tape::active()->record([xn, on, m, n] {
      if (!on->has_grad || !xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          dot += on->grad[i * n + j] * on->data[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          xn->grad[i * n + j] +=
              on->data[i * n + j] * (on->grad[i * n + j] - dot);
      }
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const Tensor& t : parts) require_defined(t, "concat");
  const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    const std::size_t f = axis == 0 ? t.cols() : t.rows();
    if (f != fixed) {
      throw DimensionError("concat: incompatible shapes " +
                           parts[0].shape_str() + " vs " + t.shape_str());
    }
    total += axis == 0 ? t.rows() : t.cols();
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  auto node = make_node(rows, cols);
  for (const Tensor& t : parts) {
    if (t.node()->needs_grad) {
      node->needs_grad = true;
      break;
    }
  }
  Tensor out(std::move(node));
  auto ov = out.raw_values();
  std::size_t offset = 0;
  for (const Tensor& t : parts) {
    auto tv = t.values();
    if (axis == 0) {
      std::copy(tv.begin(), tv.end(), ov.begin() + offset * cols);
      offset += t.rows();
    } else {
      for (std::size_t i = 0; i < t.rows(); ++i)
        std::copy(tv.begin() + i * t.cols(), tv.begin() + (i + 1) * t.cols(),
                  ov.begin() + i * cols + offset);
      offset += t.cols();
    }
  }
  if (should_record(out)) {
    std::vector<detail::NodePtr> inputs;
    inputs.reserve(parts.size());
    for (const Tensor& t : parts) inputs.push_back(t.node());
    auto on = out.node();
    Tape::active()->record([inputs, on, axis, rows, cols] {
      if (!on->has_grad) return;
      std::size_t offset = 0;
      for (const auto& in : inputs) {
        if (axis == 0) {
          if (in->needs_grad) {
            in->ensure_grad();
            for (std::size_t i = 0; i < in->size(); ++i)
              in->grad[i] += on->grad[offset * cols + i];
          }
          offset += in->rows;
        } else {
          if (in->needs_grad) {
            in->ensure_grad();
            for (std::size_t i = 0; i < in->rows; ++i)
              for (std::size_t j = 0; j < in->cols; ++j)
                in->grad[i * in->cols + j] += on->grad[i * cols + offset + j];
          }
          offset += in->cols;
        }
      }
    });
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

namespace {

Tensor reduce_impl(const Tensor& x, std::size_t axis, bool mean) {
  require_defined(x, "reduce");
  if (axis > 1) throw DimensionError("reduce: axis must be 0 or 1");
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t count = axis == 0 ? m : n;
  if (count == 0) throw DegenerateInputError("reduce: empty axis");
  const std::size_t or_ = axis == 0 ? 1 : m;
  const std::size_t oc = axis == 0 ? n : 1;
  Tensor out = make_result(or_, oc, {&x});
  auto xv = x.values();
  auto ov = out.raw_values();
  const double denom = mean ? static_cast<double>(count) : 1.0;
  if (axis == 0) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += xv[i * n + j];
      ov[j] = acc / denom;
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += xv[i * n + j];
      ov[i] = acc / denom;
    }
  }
  if (should_record(out)) {
    auto xn = x.node();
    auto on = out.node();
    const double w = 1.0 / denom;
    Tape::active()->record([xn, on, axis, m, n, w] {
      if (!on->has_grad || !xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          xn->grad[i * n + j] += w * on->grad[axis == 0 ? j : i];
    });
  }
  return out;
}

}  // namespace

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
  return reduce_impl(x, axis, true);
}

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
  return reduce_impl(x, axis, false);
}

Tensor mean_all(const Tensor& x) {
  require_defined(x, "mean_all");
  if (x.size() == 0) throw DegenerateInputError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_all(const Tensor& x) {
  require_defined(x, "sum_all");
  Tensor out = make_result(1, 1, {&x});
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.raw_values()[0] = acc;
  if (should_record(out)) {
    auto xn = x.node();
    auto on = out.node();
    Tape::active()->record([xn, on] {
      if (!on->has_grad || !xn->needs_grad) return;
      xn->ensure_grad();
      for (double& g : xn->grad) g += on->grad[0];
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_defined(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (n < 2) throw DegenerateInputError("layer_norm: needs at least 2 columns");
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 ||
      bias.cols() != n) {
    throw DimensionError("layer_norm: gain/bias must be 1x" +
                         std::to_string(n) + ", got " + gain.shape_str() +
                         " and " + bias.shape_str());
  }
  constexpr double kEps = 1e-5;
  Tensor out = make_result(m, n, {&x, &gain, &bias});
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  auto ov = out.raw_values();
  std::vector<double> means(m), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    means[i] = mu;
    inv_std[i] = 1.0 / std::sqrt(var + kEps);
    for (std::size_t j = 0; j < n; ++j)
      ov[i * n + j] = gv[j] * (xv[i * n + j] - mu) * inv_std[i] + bv[j];
  }
  if (should_record(out)) {
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    auto on = out.node();
    Tape::active()->record([xn, gn, bn, on, m, n, means, inv_std] {
      if (!on->has_grad) return;
      const double nf = static_cast<double>(n);
      for (std::size_t i = 0; i < m; ++i) {
        // xhat_j = (x_j - mu) * inv_std
        // dL/dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double xhat = (xn->data[i * n + j] - means[i]) * inv_std[i];
          const double dxhat = on->grad[i * n + j] * gn->data[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        if (xn->needs_grad) {
          xn->ensure_grad();
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = (xn->data[i * n + j] - means[i]) * inv_std[i];
            const double dxhat = on->grad[i * n + j] * gn->data[j];
            xn->grad[i * n + j] +=
                inv_std[i] * (dxhat - sum_dxhat / nf - xhat * sum_dxhat_xhat / nf);
          }
        }
        if (gn->needs_grad) {
          gn->ensure_grad();
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = (xn->data[i * n + j] - means[i]) * inv_std[i];
            gn->grad[j] += on->grad[i * n + j] * xhat;
          }
        }
        if (bn->needs_grad) {
          bn->ensure_grad();
          for (std::size_t j = 0; j < n; ++j) bn->grad[j] += on->grad[i * n + j];
        }
      }
    });
  }
  return out;
}

namespace {

Tensor slice_impl(const Tensor& x, std::size_t axis, std::size_t a,
                  std::size_t b) {
  require_defined(x, "slice");
  const std::size_t limit = axis == 0 ? x.rows() : x.cols();
  if (a >= b || b > limit) {
    throw DimensionError("slice: range [" + std::to_string(a) + "," +
                         std::to_string(b) + ") invalid for " + x.shape_str());
  }
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t or_ = axis == 0 ? b - a : m;
  const std::size_t oc = axis == 0 ? n : b - a;
  Tensor out = make_result(or_, oc, {&x});
  auto xv = x.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < or_; ++i)
    for (std::size_t j = 0; j < oc; ++j)
      ov[i * oc + j] =
          axis == 0 ? xv[(i + a) * n + j] : xv[i * n + (j + a)];
  if (should_record(out)) {
    auto xn = x.node();
    auto on = out.node();
    Tape::active()->record([xn, on, axis, a, n, or_, oc] {
      if (!on->has_grad || !xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < or_; ++i)
        for (std::size_t j = 0; j < oc; ++j) {
          const std::size_t idx =
              axis == 0 ? (i + a) * n + j : i * n + (j + a);
          xn->grad[idx] += on->grad[i * oc + j];
        }
    });
  }
  return out;
}

}  // namespace

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  return slice_impl(x, 0, r0, r1);
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  return slice_impl(x, 1, c0, c1);
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  require_defined(a, "rowwise_dot");
  require_defined(b, "rowwise_dot");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("rowwise_dot: shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  }
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = make_result(m, 1, {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += av[i * n + j] * bv[i * n + j];
    ov[i] = acc;
  }
  if (should_record(out)) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    Tape::active()->record([an, bn, on, m, n] {
      if (!on->has_grad) return;
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            an->grad[i * n + j] += on->grad[i] * bn->data[i * n + j];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            bn->grad[i * n + j] += on->grad[i] * an->data[i * n + j];
      }
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& factors) {
  require_defined(x, "scale_rows");
  require_defined(factors, "scale_rows");
  if (factors.rows() != x.rows() || factors.cols() != 1) {
    throw DimensionError("scale_rows: factors " + factors.shape_str() +
                         " incompatible with " + x.shape_str());
  }
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = make_result(m, n, {&x, &factors});
  auto xv = x.values();
  auto fv = factors.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] * fv[i];
  if (should_record(out)) {
    auto xn = x.node();
    auto fn = factors.node();
    auto on = out.node();
    Tape::active()->record([xn, fn, on, m, n] {
      if (!on->has_grad) return;
      if (xn->needs_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            xn->grad[i * n + j] += on->grad[i * n + j] * fn->data[i];
      }
      if (fn->needs_grad) {
        fn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j)
            acc += on->grad[i * n + j] * xn->data[i * n + j];
          fn->grad[i] += acc;
        }
      }
    });
  }
  return out;
}

Tensor exp_elem(const Tensor& x) {
  require_defined(x, "exp_elem");
  Tensor out = make_result(x.rows(), x.cols(), {&x});
  auto xv = x.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::exp(xv[i]);
  if (should_record(out)) {
    auto xn = x.node();
    auto on = out.node();
    Tape::active()->record([xn, on] {
      if (!on->has_grad || !xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        xn->grad[i] += on->data[i] * on->grad[i];
    });
  }
  return out;
}

Tensor div_elem(const Tensor& a, const Tensor& b) {
  require_defined(a, "div_elem");
  require_defined(b, "div_elem");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("div_elem: shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  Tensor out = make_result(a.rows(), a.cols(), {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] / bv[i];
  if (should_record(out)) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    Tape::active()->record([an, bn, on] {
      if (!on->has_grad) return;
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += on->grad[i] / bn->data[i];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i)
          bn->grad[i] -= on->grad[i] * an->data[i] / (bn->data[i] * bn->data[i]);
      }
    });
  }
  return out;
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  require_defined(a, "maximum");
  require_defined(b, "maximum");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("maximum: shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  Tensor out = make_result(a.rows(), a.cols(), {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::max(av[i], bv[i]);
  if (should_record(out)) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    Tape::active()->record([an, bn, on] {
      if (!on->has_grad) return;
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const bool from_a = an->data[i] >= bn->data[i];
        if (from_a && an->needs_grad) {
          an->ensure_grad();
          an->grad[i] += on->grad[i];
        } else if (!from_a && bn->needs_grad) {
          bn->ensure_grad();
          bn->grad[i] += on->grad[i];
        }
      }
    });
  }
  return out;
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_rowwise");
  require_defined(bias, "add_rowwise");
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_rowwise: bias " + bias.shape_str() +
                         " incompatible with " + x.shape_str());
  }
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = make_result(m, n, {&x, &bias});
  auto xv = x.values();
  auto bv = bias.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] + bv[j];
  if (should_record(out)) {
    auto xn = x.node();
    auto bn = bias.node();
    auto on = out.node();
    Tape::active()->record([xn, bn, on, m, n] {
      if (!on->has_grad) return;
      if (xn->needs_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < m * n; ++i) xn->grad[i] += on->grad[i];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) bn->grad[j] += on->grad[i * n + j];
      }
    });
  }
  return out;
}

Tensor apply_mask(const Tensor& x, const Tensor& mask, double factor) {
  require_defined(x, "apply_mask");
  require_defined(mask, "apply_mask");
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw DimensionError("apply_mask: mask " + mask.shape_str() +
                         " incompatible with " + x.shape_str());
  }
  Tensor out = make_result(x.rows(), x.cols(), {&x});
  auto xv = x.values();
  auto mv = mask.values();
  auto ov = out.raw_values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] * mv[i] * factor;
  if (should_record(out)) {
    auto xn = x.node();
    auto mn = mask.node();
    auto on = out.node();
    Tape::active()->record([xn, mn, on, factor] {
      if (!on->has_grad || !xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        xn->grad[i] += on->grad[i] * mn->data[i] * factor;
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  require_defined(x, "dropout");
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0, 1), got " +
                      std::to_string(rate));
  }
  if (rate == 0.0) return x;
  Tensor mask = Tensor::zeros(x.rows(), x.cols());
  auto mv = mask.raw_values();
  for (double& v : mv) v = rng.uniform() < rate ? 0.0 : 1.0;
  return apply_mask(x, mask, 1.0 / (1.0 - rate));
}

namespace detail {

Tensor op_result(std::size_t rows, std::size_t cols,
                 std::initializer_list<const Tensor*> inputs) {
  return make_result(rows, cols, inputs);
}

bool op_should_record(const Tensor& result) { return should_record(result); }

}  // namespace detail

}  // namespace mtdqn
