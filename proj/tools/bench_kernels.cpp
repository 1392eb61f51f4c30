// Serial-reference vs OpenMP kernel comparison: verifies bit identity,
// then reports wall times and speedups at a few sizes.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "aan/kernels.hpp"
#include "aan/rng.hpp"

using namespace aan;
using Clock = std::chrono::steady_clock;

namespace {

double time_once(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(Clock::now() - t0).count() / reps;
}

void bench_matmul(int m, int k, int n, int reps) {
  Rng rng(1);
  std::vector<float> a(size_t(m) * k), b(size_t(k) * n);
  for (auto& v : a) v = float(rng.uniform(-1, 1));
  for (auto& v : b) v = float(rng.uniform(-1, 1));
  std::vector<float> c_serial(size_t(m) * n), c_parallel(size_t(m) * n);

  const double ts = time_once(
      [&] { kernels::matmul_serial(a.data(), b.data(), c_serial.data(), m, k, n); }, reps);
  const double tp = time_once(
      [&] {
        kernels::ThreadGuard guard(0);  // library default thread count
        kernels::matmul(a.data(), b.data(), c_parallel.data(), m, k, n);
      },
      reps);
  const bool identical = c_serial == c_parallel;
  std::printf("matmul %4dx%4dx%4d  serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  %s\n",
              m, k, n, 1e3 * ts, 1e3 * tp, ts / tp,
              identical ? "bit-identical" : "MISMATCH");
}

void bench_softmax(int rows, int cols, int reps) {
  Rng rng(2);
  std::vector<float> x(size_t(rows) * cols), s(x.size()), p(x.size());
  for (auto& v : x) v = float(rng.uniform(-5, 5));
  const double ts = time_once(
      [&] { kernels::softmax_rows_serial(x.data(), s.data(), rows, cols); }, reps);
  const double tp = time_once(
      [&] {
        kernels::ThreadGuard guard(0);
        kernels::softmax_rows(x.data(), p.data(), rows, cols);
      },
      reps);
  std::printf("softmax %4dx%4d       serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  %s\n",
              rows, cols, 1e3 * ts, 1e3 * tp, ts / tp,
              s == p ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("kernel threads available: %d\n", kernels::max_threads());
  bench_matmul(64, 64, 64, 200);
  bench_matmul(256, 256, 256, 30);
  bench_matmul(512, 512, 512, 8);
  bench_matmul(1024, 256, 1024, 4);
  bench_softmax(4096, 256, 50);
  return 0;
}
