#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "scrawl/common.hpp"

namespace scrawl {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  if (s.empty()) throw std::invalid_argument("tensor rank must be >= 1");
  std::size_t n = 1;
  for (std::size_t d : s) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive: " + shape_str(s));
    n *= d;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Tensor: dense row-major storage with an optional gradient buffer of the
// same length. Copies share storage (shared_ptr), which is what lets backward
// rules close over their operands cheaply. "Scalar" means shape [1].

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor is float/double only");

 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(shape_numel(shape_), T{})) {
    if (requires_grad) enable_grad();
  }

  static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw std::invalid_argument("from_data: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    if (requires_grad) t.enable_grad();
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (T& v : *t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  // Handles share storage, so accessors hand out mutable views even from a
  // const handle, the same way shared_ptr does. Backward rules rely on this:
  // they capture const copies and still write gradients.
  T* data() const { return data_->data(); }
  std::vector<T>& values() const { return *data_; }

  T& operator[](std::size_t i) const { return (*data_)[i]; }

  T& operator()(std::size_t i, std::size_t j) const { return (*data_)[i * shape_[1] + j]; }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
  }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " elements");
    return (*data_)[0];
  }

  bool requires_grad() const { return grad_ != nullptr; }

  void enable_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T{});
  }

  T* grad() const { return grad_->data(); }
  std::vector<T>& grad_values() const { return *grad_; }

  void zero_grad() const {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T{});
  }

  void fill(T v) { std::fill(data_->begin(), data_->end(), v); }

  // Deep copy of the values; no gradient buffer on the copy.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  // True when both handles refer to the same storage.
  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
};

// ---------------------------------------------------------------------------
// Tape: records one backward rule per produced tensor, in execution order.
// backward() zeroes every recorded output's gradient, seeds the loss with 1,
// and replays the rules in reverse. Leaf gradients (tensors that are inputs
// but never outputs, i.e. parameters) are left untouched by the zeroing pass,
// so repeated backward calls accumulate into them.

template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(Tensor<T> output, std::function<void()> rule) {
    nodes_.push_back(Node{std::move(output), std::move(rule)});
  }

  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw std::invalid_argument("backward: loss does not require grad (was it computed on this tape?)");
    for (auto& node : nodes_) node.output.zero_grad();
    loss.grad()[0] += T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->rule();
  }

  std::size_t node_count() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor<T> output;
    std::function<void()> rule;
  };

  std::vector<Node> nodes_;
  bool recording_;
};

// ---------------------------------------------------------------------------
// Op helpers.

namespace detail {

// Result tensors carry a gradient (and the op records a rule) only while the
// tape is recording and at least one input participates in differentiation.
template <typename T>
bool track(const Tape<T>& tape, bool any_input_grad) {
  return tape.recording() && any_input_grad;
}

template <typename T>
void check_binary_shapes(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape() && b.numel() != 1)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()) + " (b must match a or be a scalar)");
}

// fwd(x) -> y, dfn(x, y) -> dy/dx
template <typename T, typename Fwd, typename Dfn>
Tensor<T> unary_op(Tape<T>& tape, const Tensor<T>& x, Fwd fwd, Dfn dfn) {
  Tensor<T> out(x.shape(), track(tape, x.requires_grad()));
  const T* px = x.data();
  T* po = out.data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  if (out.requires_grad()) {
    tape.record(out, [x, out, dfn]() {
      const T* g = out.grad();
      const T* px = x.data();
      const T* py = out.data();
      T* gx = x.grad();
      const std::size_t n = x.numel();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * dfn(px[i], py[i]);
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops. b must have a's shape or be a scalar (shape [1]).

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_binary_shapes(a, b, "add");
  const bool same = a.shape() == b.shape();
  Tensor<T> out(a.shape(), detail::track(tape, a.requires_grad() || b.requires_grad()));
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::size_t n = a.numel();
  if (same) {
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  } else {
    const T s = pb[0];
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + s;
  }
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, same]() {
      const T* g = out.grad();
      const std::size_t n = out.numel();
      if (a.requires_grad()) {
        T* ga = a.grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad();
        if (same) {
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        } else {
          T acc{};
          for (std::size_t i = 0; i < n; ++i) acc += g[i];
          gb[0] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_binary_shapes(a, b, "sub");
  const bool same = a.shape() == b.shape();
  Tensor<T> out(a.shape(), detail::track(tape, a.requires_grad() || b.requires_grad()));
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::size_t n = a.numel();
  if (same) {
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  } else {
    const T s = pb[0];
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - s;
  }
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, same]() {
      const T* g = out.grad();
      const std::size_t n = out.numel();
      if (a.requires_grad()) {
        T* ga = a.grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad();
        if (same) {
          for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
        } else {
          T acc{};
          for (std::size_t i = 0; i < n; ++i) acc += g[i];
          gb[0] -= acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_binary_shapes(a, b, "mul");
  const bool same = a.shape() == b.shape();
  Tensor<T> out(a.shape(), detail::track(tape, a.requires_grad() || b.requires_grad()));
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::size_t n = a.numel();
  if (same) {
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  } else {
    const T s = pb[0];
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  }
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, same]() {
      const T* g = out.grad();
      const T* pa = a.data();
      const T* pb = b.data();
      const std::size_t n = out.numel();
      if (a.requires_grad()) {
        T* ga = a.grad();
        if (same) {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
        } else {
          const T s = pb[0];
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * s;
        }
      }
      if (b.requires_grad()) {
        T* gb = b.grad();
        if (same) {
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
        } else {
          T acc{};
          for (std::size_t i = 0; i < n; ++i) acc += g[i] * pa[i];
          gb[0] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> div(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_binary_shapes(a, b, "div");
  const bool same = a.shape() == b.shape();
  const T* pb = b.data();
  const std::size_t nb = b.numel();
  for (std::size_t i = 0; i < nb; ++i)
    if (pb[i] == T{}) throw std::invalid_argument("div: division by zero element");
  Tensor<T> out(a.shape(), detail::track(tape, a.requires_grad() || b.requires_grad()));
  const T* pa = a.data();
  T* po = out.data();
  const std::size_t n = a.numel();
  if (same) {
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
  } else {
    const T s = pb[0];
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / s;
  }
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, same]() {
      const T* g = out.grad();
      const T* pa = a.data();
      const T* pb = b.data();
      const std::size_t n = out.numel();
      if (a.requires_grad()) {
        T* ga = a.grad();
        if (same) {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / pb[i];
        } else {
          const T s = pb[0];
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / s;
        }
      }
      if (b.requires_grad()) {
        T* gb = b.grad();
        if (same) {
          for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * pa[i] / (pb[i] * pb[i]);
        } else {
          const T s = pb[0];
          T acc{};
          for (std::size_t i = 0; i < n; ++i) acc += g[i] * pa[i];
          gb[0] -= acc / (s * s);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

template <typename T>
Tensor<T> neg(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary_op(tape, x, [](T v) { return -v; }, [](T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> exp(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary_op(tape, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

// sign(x) * ln(1 + |x|); derivative 1 / (1 + |x|) everywhere (continuous at 0).
template <typename T>
Tensor<T> log1p_signed(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary_op(
      tape, x, [](T v) { return v >= T{} ? std::log1p(v) : -std::log1p(-v); },
      [](T v, T) { return T{1} / (T{1} + std::abs(v)); });
}

// Exact inverse of log1p_signed: sign(x) * (e^|x| - 1); derivative e^|x| = |y| + 1.
template <typename T>
Tensor<T> exp1m_signed(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary_op(
      tape, x, [](T v) { return v >= T{} ? std::expm1(v) : -std::expm1(-v); },
      [](T, T y) { return std::abs(y) + T{1}; });
}

// Subgradient convention: derivative 0 at exactly 0.
template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary_op(
      tape, x, [](T v) { return v > T{} ? v : T{}; },
      [](T v, T) { return v > T{} ? T{1} : T{}; });
}

template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary_op(
      tape, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary_op(
      tape, x,
      [](T v) {
        if (v >= T{}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

// ---------------------------------------------------------------------------
// matmul: [M,K] x [K,N] -> [M,N].

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor<T> out({M, N}, detail::track(tape, a.requires_grad() || b.requires_grad()));
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t i = 0; i < M; ++i) {
    T* orow = po + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = pa[i * K + k];
      const T* brow = pb + k * N;
      for (std::size_t j = 0; j < N; ++j) orow[j] += av * brow[j];
    }
  }
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, M, K, N]() {
      const T* g = out.grad();
      if (a.requires_grad()) {
        // dA[i,k] = sum_j G[i,j] * B[k,j]
        T* ga = a.grad();
        const T* pb = b.data();
        for (std::size_t i = 0; i < M; ++i) {
          const T* grow = g + i * N;
          for (std::size_t k = 0; k < K; ++k) {
            const T* brow = pb + k * N;
            T acc{};
            for (std::size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
            ga[i * K + k] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        // dB[k,j] = sum_i A[i,k] * G[i,j]
        T* gb = b.grad();
        const T* pa = a.data();
        for (std::size_t i = 0; i < M; ++i) {
          const T* grow = g + i * N;
          for (std::size_t k = 0; k < K; ++k) {
            const T av = pa[i * K + k];
            T* gbrow = gb + k * N;
            for (std::size_t j = 0; j < N; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape surgery.

// Swaps the last two axes. Rank 2: plain transpose. Rank 3: per-leading-index
// transpose, e.g. [B,C,L] -> [B,L,C].
template <typename T>
Tensor<T> transpose_last2(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 2 && x.rank() != 3)
    throw std::invalid_argument("transpose_last2: expects rank 2 or 3, got " + shape_str(x.shape()));
  const std::size_t B = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t R = x.dim(x.rank() - 2), C = x.dim(x.rank() - 1);
  Shape out_shape = x.shape();
  std::swap(out_shape[x.rank() - 2], out_shape[x.rank() - 1]);
  Tensor<T> out(std::move(out_shape), detail::track(tape, x.requires_grad()));
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t b = 0; b < B; ++b) {
    const T* xs = px + b * R * C;
    T* os = po + b * R * C;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) os[c * R + r] = xs[r * C + c];
  }
  if (out.requires_grad()) {
    tape.record(out, [x, out, B, R, C]() {
      const T* g = out.grad();
      T* gx = x.grad();
      for (std::size_t b = 0; b < B; ++b) {
        const T* gs = g + b * R * C;
        T* xs = gx + b * R * C;
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < C; ++c) xs[r * C + c] += gs[c * R + r];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch: " + shape_str(x.shape()) +
                                " -> " + shape_str(new_shape));
  Tensor<T> out = Tensor<T>::from_data(std::move(new_shape), x.values(),
                                       detail::track(tape, x.requires_grad()));
  if (out.requires_grad()) {
    tape.record(out, [x, out]() {
      const T* g = out.grad();
      T* gx = x.grad();
      const std::size_t n = x.numel();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

// Picks one step from a [B,T,F] sequence: result [B,F].
template <typename T>
Tensor<T> select_step(Tape<T>& tape, const Tensor<T>& x, std::size_t t) {
  if (x.rank() != 3)
    throw std::invalid_argument("select_step: expects rank 3, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), S = x.dim(1), F = x.dim(2);
  if (t >= S) throw std::invalid_argument("select_step: step " + std::to_string(t) + " out of range");
  Tensor<T> out({B, F}, detail::track(tape, x.requires_grad()));
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t b = 0; b < B; ++b)
    std::copy(px + (b * S + t) * F, px + (b * S + t + 1) * F, po + b * F);
  if (out.requires_grad()) {
    tape.record(out, [x, out, t, B, S, F]() {
      const T* g = out.grad();
      T* gx = x.grad();
      for (std::size_t b = 0; b < B; ++b) {
        T* dst = gx + (b * S + t) * F;
        const T* src = g + b * F;
        for (std::size_t f = 0; f < F; ++f) dst[f] += src[f];
      }
    });
  }
  return out;
}

// Column slice of a [R,C] matrix: columns [start, start+count) -> [R,count].
template <typename T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& x, std::size_t start, std::size_t count) {
  if (x.rank() != 2)
    throw std::invalid_argument("slice_cols: expects rank 2, got " + shape_str(x.shape()));
  const std::size_t R = x.dim(0), C = x.dim(1);
  if (count == 0 || start + count > C)
    throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + "," +
                                std::to_string(start + count) + ") out of " + std::to_string(C));
  Tensor<T> out({R, count}, detail::track(tape, x.requires_grad()));
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t r = 0; r < R; ++r)
    std::copy(px + r * C + start, px + r * C + start + count, po + r * count);
  if (out.requires_grad()) {
    tape.record(out, [x, out, start, count, R, C]() {
      const T* g = out.grad();
      T* gx = x.grad();
      for (std::size_t r = 0; r < R; ++r) {
        T* dst = gx + r * C + start;
        const T* src = g + r * count;
        for (std::size_t j = 0; j < count; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// x[R,C] + bias[C], broadcast over rows.
template <typename T>
Tensor<T> add_rowwise(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() != 2 || bias.rank() != 1)
    throw std::invalid_argument("add_rowwise: expects [R,C] and [C], got " + shape_str(x.shape()) +
                                " and " + shape_str(bias.shape()));
  const std::size_t R = x.dim(0), C = x.dim(1);
  if (bias.dim(0) != C)
    throw std::invalid_argument("add_rowwise: bias length " + std::to_string(bias.dim(0)) +
                                " vs " + std::to_string(C) + " columns");
  Tensor<T> out({R, C}, detail::track(tape, x.requires_grad() || bias.requires_grad()));
  const T* px = x.data();
  const T* pb = bias.data();
  T* po = out.data();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) po[r * C + c] = px[r * C + c] + pb[c];
  if (out.requires_grad()) {
    tape.record(out, [x, bias, out, R, C]() {
      const T* g = out.grad();
      if (x.requires_grad()) {
        T* gx = x.grad();
        const std::size_t n = R * C;
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        T* gb = bias.grad();
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions. Full reductions return shape [1]. Axis reductions drop the axis
// (a rank-1 input reduces to [1]). Ties in max go to the first (lowest index)
// maximal element, and only that slot receives gradient.

template <typename T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& x) {
  const T* px = x.data();
  const std::size_t n = x.numel();
  T acc{};
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  Tensor<T> out = Tensor<T>::from_data({1}, {acc}, detail::track(tape, x.requires_grad()));
  if (out.requires_grad()) {
    tape.record(out, [x, out]() {
      const T g = out.grad()[0];
      T* gx = x.grad();
      const std::size_t n = x.numel();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(Tape<T>& tape, const Tensor<T>& x) {
  const T* px = x.data();
  const std::size_t n = x.numel();
  T acc{};
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  const T scale = T{1} / static_cast<T>(n);
  Tensor<T> out = Tensor<T>::from_data({1}, {acc * scale}, detail::track(tape, x.requires_grad()));
  if (out.requires_grad()) {
    tape.record(out, [x, out, scale]() {
      const T g = out.grad()[0] * scale;
      T* gx = x.grad();
      const std::size_t n = x.numel();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> max_all(Tape<T>& tape, const Tensor<T>& x) {
  const T* px = x.data();
  const std::size_t n = x.numel();
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (px[i] > px[best]) best = i;
  Tensor<T> out = Tensor<T>::from_data({1}, {px[best]}, detail::track(tape, x.requires_grad()));
  if (out.requires_grad()) {
    tape.record(out, [x, out, best]() { x.grad()[best] += out.grad()[0]; });
  }
  return out;
}

namespace detail {

struct AxisDims {
  std::size_t outer, d, inner;
};

template <typename T>
AxisDims axis_dims(const Tensor<T>& x, std::size_t axis, const char* op) {
  if (axis >= x.rank())
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for " + shape_str(x.shape()));
  AxisDims dims{1, x.dim(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) dims.outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) dims.inner *= x.dim(i);
  return dims;
}

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> sum_axis(Tape<T>& tape, const Tensor<T>& x, std::size_t axis) {
  const auto [outer, d, inner] = detail::axis_dims(x, axis, "sum_axis");
  Tensor<T> out(detail::drop_axis(x.shape(), axis), detail::track(tape, x.requires_grad()));
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < d; ++j) {
      const T* src = px + (o * d + j) * inner;
      T* dst = po + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  if (out.requires_grad()) {
    tape.record(out, [x, out, outer = outer, d = d, inner = inner]() {
      const T* g = out.grad();
      T* gx = x.grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < d; ++j) {
          T* dst = gx + (o * d + j) * inner;
          const T* src = g + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_axis(Tape<T>& tape, const Tensor<T>& x, std::size_t axis) {
  const auto dims = detail::axis_dims(x, axis, "mean_axis");
  Tensor<T> out = sum_axis(tape, x, axis);
  // Built on sum + scale so the backward composes for free.
  return mul(tape, out, Tensor<T>::scalar(T{1} / static_cast<T>(dims.d)));
}

template <typename T>
Tensor<T> max_axis(Tape<T>& tape, const Tensor<T>& x, std::size_t axis) {
  const auto [outer, d, inner] = detail::axis_dims(x, axis, "max_axis");
  Tensor<T> out(detail::drop_axis(x.shape(), axis), detail::track(tape, x.requires_grad()));
  auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner);
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = 0;
      T bv = px[(o * d) * inner + i];
      for (std::size_t j = 1; j < d; ++j) {
        const T v = px[(o * d + j) * inner + i];
        if (v > bv) {
          bv = v;
          best = j;
        }
      }
      po[o * inner + i] = bv;
      (*argmax)[o * inner + i] = best;
    }
  if (out.requires_grad()) {
    tape.record(out, [x, out, argmax, outer = outer, d = d, inner = inner]() {
      const T* g = out.grad();
      T* gx = x.grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t j = (*argmax)[o * inner + i];
          gx[(o * d + j) * inner + i] += g[o * inner + i];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv1d: cross-correlation over [B,Ci,L] with kernels [Co,Ci,K] and bias
// [Co]; zero padding on both ends. Output length (L + 2p - K) / stride + 1
// (floor). The padded input is kept alive for the backward pass.

template <typename T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  if (x.rank() != 3 || w.rank() != 3)
    throw std::invalid_argument("conv1d: expects input [B,C,L] and kernel [Co,Ci,K], got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const std::size_t B = x.dim(0), Ci = x.dim(1), L = x.dim(2);
  const std::size_t Co = w.dim(0), K = w.dim(2);
  if (w.dim(1) != Ci)
    throw std::invalid_argument("conv1d: channel mismatch: input has " + std::to_string(Ci) +
                                ", kernel expects " + std::to_string(w.dim(1)));
  if (bias.rank() != 1 || bias.dim(0) != Co)
    throw std::invalid_argument("conv1d: bias shape " + shape_str(bias.shape()) + " for " +
                                std::to_string(Co) + " output channels");
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  const std::size_t Lp = L + 2 * padding;
  if (Lp < K)
    throw std::invalid_argument("conv1d: window larger than padded input (" + std::to_string(K) +
                                " > " + std::to_string(Lp) + ")");
  const std::size_t Lo = (Lp - K) / stride + 1;

  auto xpad = std::make_shared<std::vector<T>>(B * Ci * Lp, T{});
  {
    const T* px = x.data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < Ci; ++c)
        std::copy(px + (b * Ci + c) * L, px + (b * Ci + c + 1) * L,
                  xpad->data() + (b * Ci + c) * Lp + padding);
  }

  Tensor<T> out({B, Co, Lo},
                detail::track(tape, x.requires_grad() || w.requires_grad() || bias.requires_grad()));
  {
    const T* pw = w.data();
    const T* pb = bias.data();
    const T* pp = xpad->data();
    T* po = out.data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t co = 0; co < Co; ++co) {
        T* orow = po + (b * Co + co) * Lo;
        std::fill(orow, orow + Lo, pb[co]);
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          const T* xrow = pp + (b * Ci + ci) * Lp;
          const T* wrow = pw + (co * Ci + ci) * K;
          for (std::size_t k = 0; k < K; ++k) {
            const T wv = wrow[k];
            const T* xk = xrow + k;
            if (stride == 1) {
              for (std::size_t t = 0; t < Lo; ++t) orow[t] += wv * xk[t];
            } else {
              for (std::size_t t = 0; t < Lo; ++t) orow[t] += wv * xk[t * stride];
            }
          }
        }
      }
  }

  if (out.requires_grad()) {
    tape.record(out, [x, w, bias, out, xpad, stride, padding, B, Ci, Co, L, Lp, K, Lo]() {
      const T* g = out.grad();
      if (bias.requires_grad()) {
        T* gb = bias.grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < Co; ++co) {
            const T* grow = g + (b * Co + co) * Lo;
            T acc{};
            for (std::size_t t = 0; t < Lo; ++t) acc += grow[t];
            gb[co] += acc;
          }
      }
      if (w.requires_grad()) {
        T* gw = w.grad();
        const T* pp = xpad->data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < Co; ++co) {
            const T* grow = g + (b * Co + co) * Lo;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const T* xrow = pp + (b * Ci + ci) * Lp;
              T* gwrow = gw + (co * Ci + ci) * K;
              for (std::size_t k = 0; k < K; ++k) {
                const T* xk = xrow + k;
                T acc{};
                if (stride == 1) {
                  for (std::size_t t = 0; t < Lo; ++t) acc += grow[t] * xk[t];
                } else {
                  for (std::size_t t = 0; t < Lo; ++t) acc += grow[t] * xk[t * stride];
                }
                gwrow[k] += acc;
              }
            }
          }
      }
      if (x.requires_grad()) {
        std::vector<T> gpad(B * Ci * Lp, T{});
        const T* pw = w.data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < Co; ++co) {
            const T* grow = g + (b * Co + co) * Lo;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              T* grad_row = gpad.data() + (b * Ci + ci) * Lp;
              const T* wrow = pw + (co * Ci + ci) * K;
              for (std::size_t k = 0; k < K; ++k) {
                const T wv = wrow[k];
                T* gk = grad_row + k;
                if (stride == 1) {
                  for (std::size_t t = 0; t < Lo; ++t) gk[t] += wv * grow[t];
                } else {
                  for (std::size_t t = 0; t < Lo; ++t) gk[t * stride] += wv * grow[t];
                }
              }
            }
          }
        T* gx = x.grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < Ci; ++c) {
            const T* src = gpad.data() + (b * Ci + c) * Lp + padding;
            T* dst = gx + (b * Ci + c) * L;
            for (std::size_t t = 0; t < L; ++t) dst[t] += src[t];
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool1d over [B,C,L], no padding. Output length (L - k) / stride + 1.
// The winning position per window is recorded; ties go to the earliest.

template <typename T>
Tensor<T> maxpool1d(Tape<T>& tape, const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 3)
    throw std::invalid_argument("maxpool1d: expects rank 3, got " + shape_str(x.shape()));
  if (kernel < 1 || stride < 1) throw std::invalid_argument("maxpool1d: kernel and stride must be >= 1");
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (L < kernel)
    throw std::invalid_argument("maxpool1d: sequence shorter than pooling window (" +
                                std::to_string(L) + " < " + std::to_string(kernel) + ")");
  const std::size_t Lo = (L - kernel) / stride + 1;
  Tensor<T> out({B, C, Lo}, detail::track(tape, x.requires_grad()));
  auto argmax = std::make_shared<std::vector<std::size_t>>(B * C * Lo);
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* xrow = px + bc * L;
    T* orow = po + bc * Lo;
    std::size_t* arow = argmax->data() + bc * Lo;
    for (std::size_t t = 0; t < Lo; ++t) {
      const std::size_t t0 = t * stride;
      std::size_t best = t0;
      T bv = xrow[t0];
      for (std::size_t j = 1; j < kernel; ++j) {
        const T v = xrow[t0 + j];
        if (v > bv) {
          bv = v;
          best = t0 + j;
        }
      }
      orow[t] = bv;
      arow[t] = best;
    }
  }
  if (out.requires_grad()) {
    tape.record(out, [x, out, argmax, B, C, L, Lo]() {
      const T* g = out.grad();
      T* gx = x.grad();
      for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* grow = g + bc * Lo;
        T* gxrow = gx + bc * L;
        const std::size_t* arow = argmax->data() + bc * Lo;
        for (std::size_t t = 0; t < Lo; ++t) gxrow[arow[t]] += grow[t];
      }
    });
  }
  return out;
}

}  // namespace scrawl
