#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Tensors share storage on copy (shallow value semantics). Ops record a
// backward closure on the thread-local active tape; with no active tape
// they are pure compute, which is the inference fast path. Gradients
// accumulate additively across fan-out; callers zero them between steps.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aan/kernels.hpp"
#include "aan/rng.hpp"

namespace aan {

template <class T>
struct TensorImpl {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty unless this tensor wants gradients
  bool requires_grad = false;
  const void* tape_tag = nullptr;  // tape whose op produced this tensor
};

template <class T>
class Tape;

template <class T>
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

  explicit Tensor(std::vector<int> shape)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(numel_of(impl_->shape), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> values)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->shape = std::move(shape);
    if (values.size() != numel_of(impl_->shape))
      throw std::invalid_argument("tensor data length " +
                                  std::to_string(values.size()) +
                                  " does not match shape " +
                                  shape_str(impl_->shape));
    impl_->data = std::move(values);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = v;
    return t;
  }

  static Tensor ones(std::vector<int> shape) { return full(std::move(shape), T(1)); }

  static Tensor uniform(std::vector<int> shape, T lo, T hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  // Trainable leaf: gradient buffer allocated up front, zero-filled.
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    if (on)
      impl_->grad.assign(impl_->data.size(), T(0));
    else
      impl_->grad.clear();
    return *this;
  }

  bool requires_grad() const { return impl_->requires_grad; }

  const std::vector<int>& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  int rows() const { return ndim() == 2 ? dim(0) : 1; }
  int cols() const { return ndim() == 2 ? dim(1) : dim(0); }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& grad() { return impl_->grad; }
  const std::vector<T>& grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  T& at(int i) { return impl_->data[static_cast<std::size_t>(i)]; }
  T at(int i) const { return impl_->data[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) {
    return impl_->data[static_cast<std::size_t>(i) * dim(1) + j];
  }
  T at(int i, int j) const {
    return impl_->data[static_cast<std::size_t>(i) * dim(1) + j];
  }

  T value() const {
    if (numel() != 1)
      throw std::invalid_argument("value() on non-scalar tensor of shape " +
                                  shape_str(impl_->shape));
    return impl_->data[0];
  }

  void zero_grad() {
    for (auto& g : impl_->grad) g = T(0);
  }

  std::shared_ptr<TensorImpl<T>>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

  static std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Recorded ops in execution order; reversing that order is a valid
// topological order, so backward visits each node exactly once.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active() {
    thread_local Tape* g_active = nullptr;
    return g_active;
  }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }

  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

// Activates a tape for the lifetime of the scope.
template <class T>
class TapeScope {
 public:
  TapeScope() : prev_(Tape<T>::active()) { Tape<T>::active() = &tape_; }
  ~TapeScope() { Tape<T>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape<T>& tape() { return tape_; }

 private:
  Tape<T> tape_;
  Tape<T>* prev_;
};

namespace detail {

template <class T>
void ensure_grad(const std::shared_ptr<TensorImpl<T>>& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), T(0));
}

// Marks `out` as produced on the active tape when any input needs grads
// and returns the tape to record on (nullptr = nothing to record).
template <class T>
Tape<T>* prep_out(Tensor<T>& out, bool any_input_grad) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape || !any_input_grad) return nullptr;
  out.impl()->requires_grad = true;
  out.impl()->tape_tag = tape;
  ensure_grad(out.impl());
  return tape;
}

inline void check_same_shape(const std::vector<int>& a,
                             const std::vector<int>& b, const char* op) {
  if (a != b)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                Tensor<float>::shape_str(a) + " vs " +
                                Tensor<float>::shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " +
                                Tensor<T>::shape_str(a.shape()) + " x " +
                                Tensor<T>::shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  kernels::matmul(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (auto* tape = detail::prep_out(out, a.requires_grad() || b.requires_grad())) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi, m, k, n] {
      if (ai->requires_grad) {  // dA += dC * B^T
        detail::ensure_grad(ai);
        kernels::matmul_nt(oi->grad.data(), bi->data.data(), ai->grad.data(),
                           m, n, k, true);
      }
      if (bi->requires_grad) {  // dB += A^T * dC
        detail::ensure_grad(bi);
        kernels::matmul_tn(ai->data.data(), oi->grad.data(), bi->grad.data(),
                           m, k, n, true);
      }
    });
  }
  return out;
}

// a[m x k] * b[n x k]^T without materializing the transpose; this is how
// tied output projections reuse the embedding table storage.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw std::invalid_argument("matmul_nt: incompatible shapes " +
                                Tensor<T>::shape_str(a.shape()) + " x " +
                                Tensor<T>::shape_str(b.shape()) + "^T");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor<T> out({m, n});
  kernels::matmul_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (auto* tape = detail::prep_out(out, a.requires_grad() || b.requires_grad())) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi, m, k, n] {
      if (ai->requires_grad) {  // dA += dC * B
        detail::ensure_grad(ai);
        kernels::matmul(oi->grad.data(), bi->data.data(), ai->grad.data(),
                        m, n, k, true);
      }
      if (bi->requires_grad) {  // dB += dC^T * A
        detail::ensure_grad(bi);
        kernels::matmul_tn(oi->grad.data(), ai->data.data(), bi->grad.data(),
                           m, n, k, true);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (auto* tape = detail::prep_out(out, a.requires_grad() || b.requires_grad())) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi, n] {
      if (ai->requires_grad) {
        detail::ensure_grad(ai);
        for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        detail::ensure_grad(bi);
        for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (auto* tape = detail::prep_out(out, a.requires_grad() || b.requires_grad())) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi, n] {
      if (ai->requires_grad) {
        detail::ensure_grad(ai);
        for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        detail::ensure_grad(bi);
        for (std::size_t i = 0; i < n; ++i) bi->grad[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (auto* tape = detail::prep_out(out, a.requires_grad() || b.requires_grad())) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi, n] {
      if (ai->requires_grad) {
        detail::ensure_grad(ai);
        for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        detail::ensure_grad(bi);
        for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (auto* tape = detail::prep_out(out, a.requires_grad())) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record([ai, oi, n, c] {
      detail::ensure_grad(ai);
      for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * c;
    });
  }
  return out;
}

// Documented broadcast: a [rows x d] matrix plus a length-d vector added
// to every row. The only broadcast form the tensor module supports.
template <class T>
Tensor<T> add_row_vector(const Tensor<T>& m, const Tensor<T>& v) {
  if (m.ndim() != 2 || v.ndim() != 1 || m.dim(1) != v.dim(0))
    throw std::invalid_argument("add_row_vector: shapes " +
                                Tensor<T>::shape_str(m.shape()) + " and " +
                                Tensor<T>::shape_str(v.shape()));
  const int rows = m.dim(0), d = m.dim(1);
  Tensor<T> out({rows, d});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = m.at(i, j) + v.at(j);
  if (auto* tape = detail::prep_out(out, m.requires_grad() || v.requires_grad())) {
    auto mi = m.impl(), vi = v.impl(), oi = out.impl();
    tape->record([mi, vi, oi, rows, d] {
      if (mi->requires_grad) {
        detail::ensure_grad(mi);
        const std::size_t n = std::size_t(rows) * d;
        for (std::size_t i = 0; i < n; ++i) mi->grad[i] += oi->grad[i];
      }
      if (vi->requires_grad) {
        detail::ensure_grad(vi);
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < d; ++j)
            vi->grad[static_cast<std::size_t>(j)] +=
                oi->grad[static_cast<std::size_t>(i) * d + j];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  if (auto* tape = detail::prep_out(out, a.requires_grad())) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record([ai, oi, n] {
      detail::ensure_grad(ai);
      for (std::size_t i = 0; i < n; ++i)
        if (ai->data[i] > T(0)) ai->grad[i] += oi->grad[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  kernels::sigmoid_serial(a.data().data(), out.data().data(), n);
  if (auto* tape = detail::prep_out(out, a.requires_grad())) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record([ai, oi, n] {
      detail::ensure_grad(ai);
      for (std::size_t i = 0; i < n; ++i) {
        const T s = oi->data[i];
        ai->grad[i] += oi->grad[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.ndim() > 2)
    throw std::invalid_argument("softmax_rows: expects 1-D or 2-D, got " +
                                Tensor<T>::shape_str(a.shape()));
  const int rows = a.rows(), cols = a.cols();
  Tensor<T> out(a.shape());
  kernels::softmax_rows(a.data().data(), out.data().data(), rows, cols);
  if (auto* tape = detail::prep_out(out, a.requires_grad())) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record([ai, oi, rows, cols] {
      detail::ensure_grad(ai);
      for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        T dot = 0;
        for (int j = 0; j < cols; ++j) dot += oi->grad[off + j] * oi->data[off + j];
        for (int j = 0; j < cols; ++j)
          ai->grad[off + j] += oi->data[off + j] * (oi->grad[off + j] - dot);
      }
    });
  }
  return out;
}

// Per-position (x - mean) / sqrt(var + eps) * gain + bias over the last
// dimension, population variance.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  if (x.ndim() > 2 || gain.ndim() != 1 || bias.ndim() != 1)
    throw std::invalid_argument("layer_norm: expects 1-D/2-D input with vector params");
  const int rows = x.rows(), d = x.cols();
  if (gain.dim(0) != d || bias.dim(0) != d)
    throw std::invalid_argument("layer_norm: param length " +
                                std::to_string(gain.dim(0)) +
                                " does not match feature dim " + std::to_string(d));
  if (eps <= T(0)) throw std::invalid_argument("layer_norm: eps must be positive");
  Tensor<T> out(x.shape());
  // Saved normalized values and inverse stddev per row for backward.
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_sd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * d;
    T mean = 0;
    for (int j = 0; j < d; ++j) mean += x.data()[off + j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (int j = 0; j < d; ++j) {
      const T c = x.data()[off + j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_sd)[static_cast<std::size_t>(i)] = inv;
    for (int j = 0; j < d; ++j) {
      const T h = (x.data()[off + j] - mean) * inv;
      (*xhat)[off + j] = h;
      out.data()[off + j] = h * gain.data()[static_cast<std::size_t>(j)] +
                            bias.data()[static_cast<std::size_t>(j)];
    }
  }
  if (auto* tape = detail::prep_out(
          out, x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    tape->record([xi, gi, bi, oi, xhat, inv_sd, rows, d] {
      for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * d;
        if (gi->requires_grad) {
          detail::ensure_grad(gi);
          for (int j = 0; j < d; ++j)
            gi->grad[static_cast<std::size_t>(j)] += oi->grad[off + j] * (*xhat)[off + j];
        }
        if (bi->requires_grad) {
          detail::ensure_grad(bi);
          for (int j = 0; j < d; ++j)
            bi->grad[static_cast<std::size_t>(j)] += oi->grad[off + j];
        }
        if (xi->requires_grad) {
          detail::ensure_grad(xi);
          // dxhat_j = dout_j * gain_j;
          // dx = inv_sd * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
          T mean_dh = 0, mean_dh_h = 0;
          for (int j = 0; j < d; ++j) {
            const T dh = oi->grad[off + j] * gi->data[static_cast<std::size_t>(j)];
            mean_dh += dh;
            mean_dh_h += dh * (*xhat)[off + j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          const T inv = (*inv_sd)[static_cast<std::size_t>(i)];
          for (int j = 0; j < d; ++j) {
            const T dh = oi->grad[off + j] * gi->data[static_cast<std::size_t>(j)];
            xi->grad[off + j] += inv * (dh - mean_dh - (*xhat)[off + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

// Concatenation along the last axis; leading dimensions must agree.
template <class T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != b.ndim() || a.ndim() > 2)
    throw std::invalid_argument("concat_last: rank mismatch " +
                                Tensor<T>::shape_str(a.shape()) + " vs " +
                                Tensor<T>::shape_str(b.shape()));
  if (a.ndim() == 2 && a.dim(0) != b.dim(0))
    throw std::invalid_argument("concat_last: leading dims differ, " +
                                Tensor<T>::shape_str(a.shape()) + " vs " +
                                Tensor<T>::shape_str(b.shape()));
  const int rows = a.rows();
  const int d1 = a.cols(), d2 = b.cols();
  Tensor<T> out(a.ndim() == 2 ? std::vector<int>{rows, d1 + d2}
                              : std::vector<int>{d1 + d2});
  for (int i = 0; i < rows; ++i) {
    const std::size_t ao = static_cast<std::size_t>(i) * d1;
    const std::size_t bo = static_cast<std::size_t>(i) * d2;
    const std::size_t oo = static_cast<std::size_t>(i) * (d1 + d2);
    for (int j = 0; j < d1; ++j) out.data()[oo + j] = a.data()[ao + j];
    for (int j = 0; j < d2; ++j) out.data()[oo + d1 + j] = b.data()[bo + j];
  }
  if (auto* tape = detail::prep_out(out, a.requires_grad() || b.requires_grad())) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi, rows, d1, d2] {
      for (int i = 0; i < rows; ++i) {
        const std::size_t oo = static_cast<std::size_t>(i) * (d1 + d2);
        if (ai->requires_grad) {
          detail::ensure_grad(ai);
          for (int j = 0; j < d1; ++j)
            ai->grad[static_cast<std::size_t>(i) * d1 + j] += oi->grad[oo + j];
        }
        if (bi->requires_grad) {
          detail::ensure_grad(bi);
          for (int j = 0; j < d2; ++j)
            bi->grad[static_cast<std::size_t>(i) * d2 + j] += oi->grad[oo + d1 + j];
        }
      }
    });
  }
  return out;
}

// Columns [c0, c1) of a 2-D tensor (or the same slice of a vector).
template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  const int rows = a.rows(), d = a.cols();
  if (c0 < 0 || c1 > d || c0 >= c1)
    throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + ", " +
                                std::to_string(c1) + ") out of range for " +
                                Tensor<T>::shape_str(a.shape()));
  const int w = c1 - c0;
  Tensor<T> out(a.ndim() == 2 ? std::vector<int>{rows, w} : std::vector<int>{w});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < w; ++j)
      out.data()[static_cast<std::size_t>(i) * w + j] =
          a.data()[static_cast<std::size_t>(i) * d + c0 + j];
  if (auto* tape = detail::prep_out(out, a.requires_grad())) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record([ai, oi, rows, d, w, c0] {
      detail::ensure_grad(ai);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < w; ++j)
          ai->grad[static_cast<std::size_t>(i) * d + c0 + j] +=
              oi->grad[static_cast<std::size_t>(i) * w + j];
    });
  }
  return out;
}

// Gather rows of an embedding table; backward scatter-adds into the table.
template <class T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.ndim() != 2)
    throw std::invalid_argument("embedding_rows: table must be 2-D");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::out_of_range("embedding_rows: id " + std::to_string(id) +
                              " out of range [0, " + std::to_string(v) + ")");
  const int m = static_cast<int>(ids.size());
  Tensor<T> out({m, d});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j)
      out.at(i, j) = table.data()[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d + j];
  if (auto* tape = detail::prep_out(out, table.requires_grad())) {
    auto ti = table.impl();
    auto oi = out.impl();
    tape->record([ti, oi, ids, m, d] {
      detail::ensure_grad(ti);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j)
          ti->grad[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d + j] +=
              oi->grad[static_cast<std::size_t>(i) * d + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  Tensor<T> out({1});
  T s = 0;
  for (const T v : a.data()) s += v;
  out.data()[0] = s;
  if (auto* tape = detail::prep_out(out, a.requires_grad())) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record([ai, oi] {
      detail::ensure_grad(ai);
      const T g = oi->grad[0];
      for (auto& x : ai->grad) x += g;
    });
  }
  return out;
}

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// Identity when not training or p == 0; mask order is one rng draw per
// element, so a fixed seed fixes the mask.
template <class T>
Tensor<T> dropout(const Tensor<T>& a, T p, Rng& rng, bool training) {
  if (p < T(0) || p >= T(1))
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " +
                                std::to_string(static_cast<double>(p)));
  if (!training || p == T(0)) return a;
  const std::size_t n = a.numel();
  Tensor<T> out(a.shape());
  auto mask = std::make_shared<std::vector<T>>(n);
  const T keep_scale = T(1) / (T(1) - p);
  for (std::size_t i = 0; i < n; ++i) {
    const T m = rng.uniform() < static_cast<double>(p) ? T(0) : keep_scale;
    (*mask)[i] = m;
    out.data()[i] = a.data()[i] * m;
  }
  if (auto* tape = detail::prep_out(out, a.requires_grad())) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record([ai, oi, mask, n] {
      detail::ensure_grad(ai);
      for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------
// Backward driver + gradient oracle
// ---------------------------------------------------------------------

// Seeds d(loss)/d(loss) = seed and propagates through the tape. Parameters
// reachable from the loss end up with accumulated gradients.
template <class T>
void backward(Tensor<T>& loss, Tape<T>& tape, T seed = T(1)) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                Tensor<T>::shape_str(loss.shape()));
  if (loss.impl()->tape_tag != &tape)
    throw std::invalid_argument("backward: loss was not produced on this tape");
  detail::ensure_grad(loss.impl());
  loss.grad()[0] += seed;
  tape.run_backward();
}

template <class T>
void backward(Tensor<T>& loss, T seed = T(1)) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) throw std::runtime_error("backward: no active tape");
  backward(loss, *tape, seed);
}

template <class T>
void zero_grads(const std::vector<Tensor<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

// Central-difference gradient of a scalar-valued function, the oracle all
// analytic gradients are checked against.
template <class T>
Tensor<T> finite_difference_grad(const std::function<T(const Tensor<T>&)>& f,
                                 const Tensor<T>& x, T h = T(1e-4)) {
  if (h <= T(0)) throw std::invalid_argument("finite_difference_grad: h must be positive");
  Tensor<T> x_work(x.shape(), x.data());
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T saved = x_work.data()[i];
    x_work.data()[i] = saved + h;
    const T fp = f(x_work);
    x_work.data()[i] = saved - h;
    const T fm = f(x_work);
    x_work.data()[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_difference_grad: non-finite function value");
    g.data()[i] = (fp - fm) / (T(2) * h);
  }
  return g;
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (const T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template <class T>
void assert_all_finite(const Tensor<T>& t, const char* what) {
  if (!all_finite(t))
    throw std::runtime_error(std::string("non-finite values in ") + what);
}

}  // namespace aan
