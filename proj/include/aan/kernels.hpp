#pragma once

// Raw row-major kernels behind the tensor ops. Every kernel has a plain
// serial form (the reference, kept for testing) and an auto form that
// row-partitions across OpenMP threads when the problem is big enough.
// Row partitioning never reorders the per-element accumulation, so the
// auto forms are bit-identical to the serial ones at any thread count.

#include <cstddef>

namespace aan::kernels {

// Work threshold (multiply-adds) below which the auto forms stay serial.
inline constexpr std::size_t kParallelGrain = 1u << 19;

// Global cap on worker threads; 1 forces serial everywhere (bench mode).
void set_max_threads(int n);
int max_threads();

// RAII guard that pins the thread cap for a scope.
class ThreadGuard {
 public:
  explicit ThreadGuard(int n) : saved_(max_threads()) { set_max_threads(n); }
  ~ThreadGuard() { set_max_threads(saved_); }
  ThreadGuard(const ThreadGuard&) = delete;
  ThreadGuard& operator=(const ThreadGuard&) = delete;

 private:
  int saved_;
};

// c[m x n] = a[m x k] * b[k x n]; accumulate adds instead of assigning.
template <class T>
void matmul_serial(const T* a, const T* b, T* c, int m, int k, int n,
                   bool accumulate = false);
template <class T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n,
            bool accumulate = false);

// c[m x n] = a[m x k] * b[n x k]^T  (b stored row-major, used transposed)
template <class T>
void matmul_nt_serial(const T* a, const T* b, T* c, int m, int k, int n,
                      bool accumulate = false);
template <class T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate = false);

// c[k x n] = a[m x k]^T * b[m x n]
template <class T>
void matmul_tn_serial(const T* a, const T* b, T* c, int m, int k, int n,
                      bool accumulate = false);
template <class T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate = false);

// Row-wise softmax over x[rows x cols], stabilized by the row max.
template <class T>
void softmax_rows_serial(const T* x, T* out, int rows, int cols);
template <class T>
void softmax_rows(const T* x, T* out, int rows, int cols);

// out = sigmoid(x), stable on both tails.
template <class T>
void sigmoid_serial(const T* x, T* out, std::size_t n);

template <class T>
T stable_sigmoid(T x);

extern template void matmul_serial<float>(const float*, const float*, float*, int, int, int, bool);
extern template void matmul_serial<double>(const double*, const double*, double*, int, int, int, bool);
extern template void matmul<float>(const float*, const float*, float*, int, int, int, bool);
extern template void matmul<double>(const double*, const double*, double*, int, int, int, bool);
extern template void matmul_nt_serial<float>(const float*, const float*, float*, int, int, int, bool);
extern template void matmul_nt_serial<double>(const double*, const double*, double*, int, int, int, bool);
extern template void matmul_nt<float>(const float*, const float*, float*, int, int, int, bool);
extern template void matmul_nt<double>(const double*, const double*, double*, int, int, int, bool);
extern template void matmul_tn_serial<float>(const float*, const float*, float*, int, int, int, bool);
extern template void matmul_tn_serial<double>(const double*, const double*, double*, int, int, int, bool);
extern template void matmul_tn<float>(const float*, const float*, float*, int, int, int, bool);
extern template void matmul_tn<double>(const double*, const double*, double*, int, int, int, bool);
extern template void softmax_rows_serial<float>(const float*, float*, int, int);
extern template void softmax_rows_serial<double>(const double*, double*, int, int);
extern template void softmax_rows<float>(const float*, float*, int, int);
extern template void softmax_rows<double>(const double*, double*, int, int);
extern template void sigmoid_serial<float>(const float*, float*, std::size_t);
extern template void sigmoid_serial<double>(const double*, double*, std::size_t);
extern template float stable_sigmoid<float>(float);
extern template double stable_sigmoid<double>(double);

}  // namespace aan::kernels
