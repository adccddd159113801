#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Ops build new nodes that keep
// their inputs alive; backward() walks the graph reachable from a scalar loss
// in reverse topological order. Nodes that do not (transitively) depend on a
// tensor with requires_grad set carry no graph edges.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "saaa/errors.hpp"
#include "saaa/rng.hpp"

namespace saaa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    for (std::size_t extent : shape) {
      if (extent == 0) throw InvalidShape("tensor extents must be positive, got " + shape_string(shape));
    }
    if (data.size() != shape_size(shape)) {
      throw InvalidShape("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

  static Tensor filled(Shape shape, T value) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  static Tensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }

  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Direct write access for initializers and optimizers. Do not mutate a
  /// tensor that is an input of a graph which has not been differentiated yet.
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (size() != 1) throw InvalidShape("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }

  /// Fresh leaf holding a copy of the values.
  Tensor detach() const { return Tensor(node_->shape, node_->data); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Named trainable parameters, iterated in sorted-name order.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  Tensor<T>& add(const std::string& name, Tensor<T> tensor) {
    if (params_.contains(name)) throw InvalidArgument("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    return params_.emplace(name, std::move(tensor)).first->second;
  }

  bool contains(const std::string& name) const { return params_.contains(name); }

  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("unknown parameter: " + name);
    return it->second;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("unknown parameter: " + name);
    return it->second;
  }

  std::size_t size() const { return params_.size(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }

 private:
  Map params_;
};

template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

namespace detail {

// Dot product with eight independent partial sums so the loop vectorizes.
// The summation order is fixed, so results stay deterministic.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[j + l] * b[j + l];
  T acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; j < n; ++j) acc += a[j] * b[j];
  return acc;
}

// Sum of `terms` taken in ascending order, so it does not depend on the
// order the terms arrived in. Reorders `terms`.
template <typename T>
T sorted_sum(std::vector<T>& terms) {
  std::sort(terms.begin(), terms.end());
  T acc = 0;
  for (T t : terms) acc += t;
  return acc;
}

template <typename T, typename Fn>
Tensor<T> make_op(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs, Fn&& fn) {
  Tensor<T> out(std::move(shape), std::move(data));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& in : inputs) node.parents.push_back(in.node());
    node.backward_fn = std::forward<Fn>(fn);
  }
  return out;
}

template <typename T, typename Fn>
Tensor<T> make_op_n(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs, Fn&& fn) {
  Tensor<T> out(std::move(shape), std::move(data));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& in : inputs) node.parents.push_back(in.node());
    node.backward_fn = std::forward<Fn>(fn);
  }
  return out;
}

/// Splits a shape around `axis` into (outer, extent, inner) for strided loops.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw InvalidArgument("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidShape(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Initialization

/// Uniform Glorot initialization in [-b, b], b = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw InvalidShape("glorot_init: non-positive extent in " + shape_string(shape));
  }
  if (fan_in + fan_out == 0) throw InvalidArgument("glorot_init: fan_in + fan_out must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  std::vector<T> values(shape_size(shape));
  for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(shape, std::move(values));
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

template <typename T>
void matmul_backward(Node<T>& o, std::size_t n, std::size_t k, std::size_t m) {
  auto& pa = *o.parents[0];
  auto& pb = *o.parents[1];
  const T* G = o.grad.data();
  if (pa.requires_grad) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) pa.grad[i * k + p] += dot(G + i * m, pb.data.data() + p * m, m);
  }
  if (pb.requires_grad) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T av = pa.data[i * k + p];
        if (av == T(0)) continue;
        for (std::size_t j = 0; j < m; ++j) pb.grad[p * m + j] += av * G[i * m + j];
      }
  }
}

template <typename T>
void check_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw InvalidShape("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_matmul(a, b);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<T> out(n * m, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T(0)) continue;
      const T* brow = B + p * m;
      T* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return detail::make_op<T>({n, m}, std::move(out), {a, b},
                            [n, k, m](detail::Node<T>& o) { detail::matmul_backward(o, n, k, m); });
}

/// matmul whose inner sums are taken over sorted terms: permuting the shared
/// axis of `a` and `b` together leaves the result bitwise unchanged.
template <typename T>
Tensor<T> sorted_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_matmul(a, b);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<T> out(n * m);
  std::vector<T> terms(k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t p = 0; p < k; ++p) terms[p] = a[i * k + p] * b[p * m + j];
      out[i * m + j] = detail::sorted_sum(terms);
    }
  return detail::make_op<T>({n, m}, std::move(out), {a, b},
                            [n, k, m](detail::Node<T>& o) { detail::matmul_backward(o, n, k, m); });
}

/// y = xW + b. `x` is a vector (k) or a row batch (n, k); W is (k, m); b is (m).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  if (x.rank() < 1 || x.rank() > 2 || W.rank() != 2 || b.rank() != 1) {
    throw InvalidShape("linear: unsupported ranks x" + shape_string(x.shape()) + " W" +
                       shape_string(W.shape()) + " b" + shape_string(b.shape()));
  }
  const bool is_vector = x.rank() == 1;
  const std::size_t n = is_vector ? 1 : x.dim(0);
  const std::size_t k = is_vector ? x.dim(0) : x.dim(1);
  const std::size_t m = W.dim(1);
  if (W.dim(0) != k || b.dim(0) != m) {
    throw InvalidShape("linear: x" + shape_string(x.shape()) + " W" + shape_string(W.shape()) + " b" +
                       shape_string(b.shape()) + " do not conform");
  }
  std::vector<T> out(n * m);
  const T* X = x.data().data();
  const T* Wd = W.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    T* orow = out.data() + i * m;
    std::copy(bd, bd + m, orow);
    for (std::size_t p = 0; p < k; ++p) {
      const T xv = X[i * k + p];
      if (xv == T(0)) continue;
      const T* wrow = Wd + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * wrow[j];
    }
  }
  Shape shape = is_vector ? Shape{m} : Shape{n, m};
  return detail::make_op<T>(std::move(shape), std::move(out), {x, W, b}, [n, k, m](detail::Node<T>& o) {
    auto& px = *o.parents[0];
    auto& pw = *o.parents[1];
    auto& pb = *o.parents[2];
    const T* G = o.grad.data();
    if (px.requires_grad) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) px.grad[i * k + p] += detail::dot(G + i * m, pw.data.data() + p * m, m);
    }
    if (pw.requires_grad) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T xv = px.data[i * k + p];
          if (xv == T(0)) continue;
          T* grow = pw.grad.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) grow[j] += xv * G[i * m + j];
        }
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) pb.grad[j] += G[i * m + j];
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw InvalidShape("transpose: expected rank 2, got " + shape_string(a.shape()));
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<T> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a[i * m + j];
  return detail::make_op<T>({m, n}, std::move(out), {a}, [n, m](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) p.grad[i * m + j] += o.grad[j * n + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw InvalidShape("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return detail::make_op<T>(std::move(shape), std::move(out), {a}, [](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& o) {
    for (auto* p : {o.parents[0].get(), o.parents[1].get()}) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += o.grad[i] * pb.data[i];
      if (pb.requires_grad) pb.grad[i] += o.grad[i] * pa.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [factor](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * factor;
  });
}

/// Sum of equally shaped tensors.
template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw InvalidArgument("add_n: empty list");
  std::vector<T> out(terms[0].size(), T(0));
  for (const auto& t : terms) {
    detail::require_same_shape(terms[0], t, "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t[i];
  }
  return detail::make_op_n<T>(terms[0].shape(), std::move(out), terms, [](detail::Node<T>& o) {
    for (auto& p : o.parents) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
    }
  });
}

enum class Activation { tanh, relu, sigmoid };

namespace detail {
template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace detail

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (kind) {
      case Activation::tanh: out[i] = std::tanh(x[i]); break;
      case Activation::relu: out[i] = x[i] > T(0) ? x[i] : T(0); break;
      case Activation::sigmoid: out[i] = detail::stable_sigmoid(x[i]); break;
    }
  }
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [kind](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T y = o.data[i];
      T d = 0;
      switch (kind) {
        case Activation::tanh: d = T(1) - y * y; break;
        case Activation::relu: d = p.data[i] > T(0) ? T(1) : T(0); break;
        case Activation::sigmoid: d = y * (T(1) - y); break;
      }
      p.grad[i] += o.grad[i] * d;
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return activation(x, Activation::tanh);
}
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Activation::relu);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Activation::sigmoid);
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::make_op<T>({}, {acc}, {x}, [](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (auto& g : p.grad) g += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Column means of an (n, k) matrix.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw InvalidShape("mean_rows: expected rank 2, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), k = x.dim(1);
  std::vector<T> out(k, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[j] += x[i * k + j];
  for (auto& v : out) v /= static_cast<T>(n);
  return detail::make_op<T>({k}, std::move(out), {x}, [n, k](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) p.grad[i * k + j] += o.grad[j] * inv;
  });
}

/// Softmax along `axis`, with the per-slice maximum subtracted first.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto v = detail::axis_view(x.shape(), axis);
  std::vector<T> out(x.size());
  std::vector<T> terms;
  terms.reserve(v.extent);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      T mx = x[base];
      for (std::size_t e = 1; e < v.extent; ++e) mx = std::max(mx, x[base + e * v.inner]);
      T total = 0;
      terms.clear();
      for (std::size_t e = 0; e < v.extent; ++e) {
        const T ev = std::exp(x[base + e * v.inner] - mx);
        out[base + e * v.inner] = ev;
        terms.push_back(ev);
      }
      total = detail::sorted_sum(terms);
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= total;
    }
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [v](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t a = 0; a < v.outer; ++a)
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = a * v.extent * v.inner + in;
        T dot = 0;
        for (std::size_t e = 0; e < v.extent; ++e) dot += o.grad[base + e * v.inner] * o.data[base + e * v.inner];
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t idx = base + e * v.inner;
          p.grad[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
  });
}

/// log(softmax(x)) computed as x - max - log(sum(exp(x - max))).
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto v = detail::axis_view(x.shape(), axis);
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      T mx = x[base];
      for (std::size_t e = 1; e < v.extent; ++e) mx = std::max(mx, x[base + e * v.inner]);
      T total = 0;
      for (std::size_t e = 0; e < v.extent; ++e) total += std::exp(x[base + e * v.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] = x[base + e * v.inner] - lse;
    }
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [v](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t a = 0; a < v.outer; ++a)
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = a * v.extent * v.inner + in;
        T gsum = 0;
        for (std::size_t e = 0; e < v.extent; ++e) gsum += o.grad[base + e * v.inner];
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t idx = base + e * v.inner;
          p.grad[idx] += o.grad[idx] - std::exp(o.data[idx]) * gsum;
        }
      }
  });
}

inline constexpr double kL2Epsilon = 1e-12;

/// Divides every slice along `axis` by max(||slice||_2, epsilon).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, std::size_t axis, double epsilon = kL2Epsilon) {
  if (!(epsilon > 0)) throw InvalidArgument("l2_normalize: epsilon must be positive");
  const auto v = detail::axis_view(x.shape(), axis);
  std::vector<T> out(x.size());
  std::vector<T> denom(v.outer * v.inner);
  std::vector<char> clamped(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      T sq = 0;
      for (std::size_t e = 0; e < v.extent; ++e) sq += x[base + e * v.inner] * x[base + e * v.inner];
      const T norm = std::sqrt(sq);
      const bool clamp = !(norm > static_cast<T>(epsilon));
      const T d = clamp ? static_cast<T>(epsilon) : norm;
      denom[o * v.inner + in] = d;
      clamped[o * v.inner + in] = clamp;
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] = x[base + e * v.inner] / d;
    }
  return detail::make_op<T>(x.shape(), std::move(out), {x},
                            [v, denom = std::move(denom), clamped = std::move(clamped)](detail::Node<T>& o) {
                              auto& p = *o.parents[0];
                              for (std::size_t a = 0; a < v.outer; ++a)
                                for (std::size_t in = 0; in < v.inner; ++in) {
                                  const std::size_t base = a * v.extent * v.inner + in;
                                  const T d = denom[a * v.inner + in];
                                  T dot = 0;
                                  if (!clamped[a * v.inner + in]) {
                                    for (std::size_t e = 0; e < v.extent; ++e)
                                      dot += o.grad[base + e * v.inner] * o.data[base + e * v.inner];
                                  }
                                  for (std::size_t e = 0; e < v.extent; ++e) {
                                    const std::size_t idx = base + e * v.inner;
                                    p.grad[idx] += (o.grad[idx] - o.data[idx] * dot) / d;
                                  }
                                }
                            });
}

/// Inverted dropout. Identity (the same tensor) when not training or rate is 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw InvalidArgument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const T scale_kept = static_cast<T>(1.0 / keep);
  Rng rng(seed);
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = rng.uniform01() < keep ? scale_kept : T(0);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidArgument("concat: empty list");
  if (parts.size() == 1) return parts[0];
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw InvalidArgument("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw InvalidShape("concat: " + shape_string(s) + " incompatible with " + shape_string(first));
    out_shape[axis] += s[axis];
  }
  const auto v = detail::axis_view(out_shape, axis);
  std::vector<std::size_t> offsets;
  std::vector<T> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (const auto& t : parts) {
    offsets.push_back(offset);
    const std::size_t ext = t.dim(axis);
    for (std::size_t o = 0; o < v.outer; ++o) {
      const T* src = t.data().data() + o * ext * v.inner;
      T* dst = out.data() + (o * v.extent + offset) * v.inner;
      std::copy(src, src + ext * v.inner, dst);
    }
    offset += ext;
  }
  return detail::make_op_n<T>(std::move(out_shape), std::move(out), parts,
                              [v, offsets = std::move(offsets)](detail::Node<T>& o) {
                                for (std::size_t k = 0; k < o.parents.size(); ++k) {
                                  auto& p = *o.parents[k];
                                  if (!p.requires_grad) continue;
                                  const std::size_t ext = p.data.size() / (v.outer * v.inner);
                                  for (std::size_t a = 0; a < v.outer; ++a) {
                                    const T* src = o.grad.data() + (a * v.extent + offsets[k]) * v.inner;
                                    T* dst = p.grad.data() + a * ext * v.inner;
                                    for (std::size_t i = 0; i < ext * v.inner; ++i) dst[i] += src[i];
                                  }
                                }
                              });
}

/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto v = detail::axis_view(x.shape(), axis);
  if (begin >= end || end > v.extent) {
    throw InvalidArgument("slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") for " +
                          shape_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t ext = end - begin;
  std::vector<T> out(shape_size(out_shape));
  for (std::size_t o = 0; o < v.outer; ++o) {
    const T* src = x.data().data() + (o * v.extent + begin) * v.inner;
    std::copy(src, src + ext * v.inner, out.data() + o * ext * v.inner);
  }
  return detail::make_op<T>(std::move(out_shape), std::move(out), {x}, [v, begin, ext](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t a = 0; a < v.outer; ++a) {
      const T* src = o.grad.data() + a * ext * v.inner;
      T* dst = p.grad.data() + (a * v.extent + begin) * v.inner;
      for (std::size_t i = 0; i < ext * v.inner; ++i) dst[i] += src[i];
    }
  });
}

/// Repeats a vector (k) into an (n, k) matrix.
template <typename T>
Tensor<T> tile_rows(const Tensor<T>& v, std::size_t n) {
  if (v.rank() != 1) throw InvalidShape("tile_rows: expected a vector, got " + shape_string(v.shape()));
  if (n == 0) throw InvalidShape("tile_rows: zero rows");
  const std::size_t k = v.dim(0);
  std::vector<T> out(n * k);
  for (std::size_t i = 0; i < n; ++i) std::copy(v.data().begin(), v.data().end(), out.begin() + i * k);
  return detail::make_op<T>({n, k}, std::move(out), {v}, [n, k](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) p.grad[j] += o.grad[i * k + j];
  });
}

/// Rows `ids` of a (V, D) table, as a (len(ids), D) matrix.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw InvalidShape("gather_rows: expected rank 2 table");
  if (ids.empty()) throw InvalidArgument("gather_rows: empty id list");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw InvalidArgument("gather_rows: id " + std::to_string(ids[i]) + " out of range");
    }
    const T* src = table.data().data() + static_cast<std::size_t>(ids[i]) * d;
    std::copy(src, src + d, out.begin() + i * d);
  }
  return detail::make_op<T>({ids.size(), d}, std::move(out), {table}, [ids, d](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      T* dst = p.grad.data() + static_cast<std::size_t>(ids[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += o.grad[i * d + j];
    }
  });
}

/// Elements `ids` of a vector.
template <typename T>
Tensor<T> take(const Tensor<T>& x, const std::vector<int>& ids) {
  if (x.rank() != 1) throw InvalidShape("take: expected a vector");
  if (ids.empty()) throw InvalidArgument("take: empty id list");
  std::vector<T> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= x.size()) {
      throw InvalidArgument("take: id " + std::to_string(ids[i]) + " out of range");
    }
    out[i] = x[static_cast<std::size_t>(ids[i])];
  }
  return detail::make_op<T>({ids.size()}, std::move(out), {x}, [ids](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < ids.size(); ++i) p.grad[static_cast<std::size_t>(ids[i])] += o.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Differentiation

namespace detail {

template <typename T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace detail

/// Reverse-mode pass from a single-element loss. Every node on the graph gets a
/// fresh gradient buffer; leaves keep theirs until the next pass.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw InvalidArgument("backward: loss must be a scalar, got shape " +
                          (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  auto order = detail::topological_order(loss.node().get());
  for (auto* node : order) node->grad.assign(node->data.size(), T(0));
  loss.node()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

/// Gradients of `loss` for every parameter of `store` reachable from it.
template <typename T>
GradientMap<T> backward(const Tensor<T>& loss, const ParamStore<T>& store) {
  if (!loss.defined() || loss.size() != 1) {
    throw InvalidArgument("backward: loss must be a scalar");
  }
  for (const auto& [_, p] : store) p.node()->grad.clear();
  backward(loss);
  GradientMap<T> grads;
  for (const auto& [name, p] : store) {
    if (!p.has_grad()) continue;
    grads.emplace(name, Tensor<T>(p.shape(), std::vector<T>(p.grad().begin(), p.grad().end())));
  }
  return grads;
}

}  // namespace saaa
