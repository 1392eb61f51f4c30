#include "aan/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace aan::kernels {

namespace {
std::atomic<int> g_max_threads{0};  // 0 = library default

int effective_threads() {
  int cap = g_max_threads.load(std::memory_order_relaxed);
#ifdef _OPENMP
  int hw = omp_get_max_threads();
  if (cap <= 0) return hw;
  return std::min(cap, hw);
#else
  (void)cap;
  return 1;
#endif
}

template <class T>
inline void mm_row(const T* a_row, const T* b, T* c_row, int k, int n,
                   bool accumulate) {
  if (!accumulate) std::fill(c_row, c_row + n, T(0));
  for (int p = 0; p < k; ++p) {
    const T av = a_row[p];
    const T* b_row = b + static_cast<std::size_t>(p) * n;
    for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

template <class T>
inline void mm_nt_row(const T* a_row, const T* b, T* c_row, int k, int n,
                      bool accumulate) {
  for (int j = 0; j < n; ++j) {
    const T* b_row = b + static_cast<std::size_t>(j) * k;
    T sum = 0;
    for (int p = 0; p < k; ++p) sum += a_row[p] * b_row[p];
    c_row[j] = accumulate ? c_row[j] + sum : sum;
  }
}

template <class T>
inline void softmax_row(const T* x, T* out, int cols) {
  T mx = x[0];
  for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  T sum = 0;
  for (int j = 0; j < cols; ++j) {
    const T e = std::exp(x[j] - mx);
    out[j] = e;
    sum += e;
  }
  const T inv = T(1) / sum;
  for (int j = 0; j < cols; ++j) out[j] *= inv;
}
}  // namespace

void set_max_threads(int n) { g_max_threads.store(n, std::memory_order_relaxed); }

int max_threads() { return effective_threads(); }

template <class T>
void matmul_serial(const T* a, const T* b, T* c, int m, int k, int n,
                   bool accumulate) {
  for (int i = 0; i < m; ++i)
    mm_row(a + static_cast<std::size_t>(i) * k, b,
           c + static_cast<std::size_t>(i) * n, k, n, accumulate);
}

template <class T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n,
            bool accumulate) {
  const std::size_t work = std::size_t(m) * k * n;
  const int nt = effective_threads();
  if (nt <= 1 || work < kParallelGrain || m < 2) {
    matmul_serial(a, b, c, m, k, n, accumulate);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int i = 0; i < m; ++i)
    mm_row(a + static_cast<std::size_t>(i) * k, b,
           c + static_cast<std::size_t>(i) * n, k, n, accumulate);
#else
  matmul_serial(a, b, c, m, k, n, accumulate);
#endif
}

template <class T>
void matmul_nt_serial(const T* a, const T* b, T* c, int m, int k, int n,
                      bool accumulate) {
  for (int i = 0; i < m; ++i)
    mm_nt_row(a + static_cast<std::size_t>(i) * k, b,
              c + static_cast<std::size_t>(i) * n, k, n, accumulate);
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
  const std::size_t work = std::size_t(m) * k * n;
  const int nt = effective_threads();
  if (nt <= 1 || work < kParallelGrain || m < 2) {
    matmul_nt_serial(a, b, c, m, k, n, accumulate);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int i = 0; i < m; ++i)
    mm_nt_row(a + static_cast<std::size_t>(i) * k, b,
              c + static_cast<std::size_t>(i) * n, k, n, accumulate);
#else
  matmul_nt_serial(a, b, c, m, k, n, accumulate);
#endif
}

// a^T * b walks a column-wise; parallelize over output rows (columns of a).
template <class T>
void matmul_tn_serial(const T* a, const T* b, T* c, int m, int k, int n,
                      bool accumulate) {
  for (int i = 0; i < k; ++i) {
    T* c_row = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::fill(c_row, c_row + n, T(0));
    for (int p = 0; p < m; ++p) {
      const T av = a[static_cast<std::size_t>(p) * k + i];
      const T* b_row = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
  const std::size_t work = std::size_t(m) * k * n;
  const int nt = effective_threads();
  if (nt <= 1 || work < kParallelGrain || k < 2) {
    matmul_tn_serial(a, b, c, m, k, n, accumulate);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int i = 0; i < k; ++i) {
    T* c_row = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::fill(c_row, c_row + n, T(0));
    for (int p = 0; p < m; ++p) {
      const T av = a[static_cast<std::size_t>(p) * k + i];
      const T* b_row = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
#else
  matmul_tn_serial(a, b, c, m, k, n, accumulate);
#endif
}

template <class T>
void softmax_rows_serial(const T* x, T* out, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<std::size_t>(i) * cols,
                out + static_cast<std::size_t>(i) * cols, cols);
}

template <class T>
void softmax_rows(const T* x, T* out, int rows, int cols) {
  const std::size_t work = std::size_t(rows) * cols * 8;  // exp is ~8 flops
  const int nt = effective_threads();
  if (nt <= 1 || work < kParallelGrain || rows < 2) {
    softmax_rows_serial(x, out, rows, cols);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<std::size_t>(i) * cols,
                out + static_cast<std::size_t>(i) * cols, cols);
#else
  softmax_rows_serial(x, out, rows, cols);
#endif
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= 0) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
void sigmoid_serial(const T* x, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = stable_sigmoid(x[i]);
}

template void matmul_serial<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_serial<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_nt_serial<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_nt_serial<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_nt<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_nt<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_tn_serial<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_tn_serial<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_tn<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_tn<double>(const double*, const double*, double*, int, int, int, bool);
template void softmax_rows_serial<float>(const float*, float*, int, int);
template void softmax_rows_serial<double>(const double*, double*, int, int);
template void softmax_rows<float>(const float*, float*, int, int);
template void softmax_rows<double>(const double*, double*, int, int);
template void sigmoid_serial<float>(const float*, float*, std::size_t);
template void sigmoid_serial<double>(const double*, double*, std::size_t);
template float stable_sigmoid<float>(float);
template double stable_sigmoid<double>(double);

}  // namespace aan::kernels
