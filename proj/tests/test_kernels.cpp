// Parallel kernels must be bit-identical to the serial reference at any
// thread count, plus hand-computed matmul oracles.

#include "aan/kernels.hpp"

#include <vector>

#include "aan/rng.hpp"
#include "test_util.hpp"

using namespace aan;
using testutil::check;
using testutil::check_near;

namespace {

template <class T>
void fill_random(std::vector<T>& v, Rng& rng) {
  for (auto& x : v) x = static_cast<T>(rng.uniform(-2.0, 2.0));
}

template <class T>
bool bit_equal(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <class T>
void parallel_matches_serial(const char* label) {
  Rng rng(7);
  const int sizes[][3] = {{1, 1, 1},   {3, 5, 2},    {17, 33, 9},
                          {64, 64, 64}, {130, 70, 41}, {256, 64, 128}};
  for (const auto& s : sizes) {
    const int m = s[0], k = s[1], n = s[2];
    std::vector<T> a(size_t(m) * k), b(size_t(k) * n), bt(size_t(n) * k);
    fill_random(a, rng);
    fill_random(b, rng);
    fill_random(bt, rng);
    std::vector<T> c_ref(size_t(m) * n), c_par(size_t(m) * n);

    kernels::matmul_serial(a.data(), b.data(), c_ref.data(), m, k, n);
    {
      kernels::ThreadGuard guard(8);
      kernels::matmul(a.data(), b.data(), c_par.data(), m, k, n);
    }
    check(bit_equal(c_ref, c_par), std::string(label) + " matmul parallel==serial");

    kernels::matmul_nt_serial(a.data(), bt.data(), c_ref.data(), m, k, n);
    {
      kernels::ThreadGuard guard(8);
      kernels::matmul_nt(a.data(), bt.data(), c_par.data(), m, k, n);
    }
    check(bit_equal(c_ref, c_par), std::string(label) + " matmul_nt parallel==serial");

    std::vector<T> at(size_t(m) * k), bb(size_t(m) * n);
    fill_random(at, rng);
    fill_random(bb, rng);
    std::vector<T> d_ref(size_t(k) * n), d_par(size_t(k) * n);
    kernels::matmul_tn_serial(at.data(), bb.data(), d_ref.data(), m, k, n);
    {
      kernels::ThreadGuard guard(8);
      kernels::matmul_tn(at.data(), bb.data(), d_par.data(), m, k, n);
    }
    check(bit_equal(d_ref, d_par), std::string(label) + " matmul_tn parallel==serial");
  }

  // softmax rows
  std::vector<T> x(size_t(300) * 80), s_ref(x.size()), s_par(x.size());
  fill_random(x, rng);
  kernels::softmax_rows_serial(x.data(), s_ref.data(), 300, 80);
  {
    kernels::ThreadGuard guard(8);
    kernels::softmax_rows(x.data(), s_par.data(), 300, 80);
  }
  check(bit_equal(s_ref, s_par), std::string(label) + " softmax parallel==serial");
}

void matmul_oracles() {
  // identity
  std::vector<float> eye = {1, 0, 0, 1}, m = {1, 2, 3, 4}, out(4);
  kernels::matmul_serial(eye.data(), m.data(), out.data(), 2, 2, 2);
  check(bit_equal(out, m), "I * M == M");

  // hand-computed 2x2
  std::vector<float> a = {1, 2, 3, 4}, b = {5, 6, 7, 8};
  kernels::matmul_serial(a.data(), b.data(), out.data(), 2, 2, 2);
  check_near(out[0], 19, 0, "2x2 [0][0]");
  check_near(out[1], 22, 0, "2x2 [0][1]");
  check_near(out[2], 43, 0, "2x2 [1][0]");
  check_near(out[3], 50, 0, "2x2 [1][1]");

  // accumulate adds on top
  kernels::matmul_serial(a.data(), b.data(), out.data(), 2, 2, 2, true);
  check_near(out[3], 100, 0, "accumulate doubles the result");

  // nt/tn against explicit transposes
  Rng rng(3);
  const int m2 = 5, k2 = 7, n2 = 4;
  std::vector<float> A(m2 * k2), B(k2 * n2), Bt(n2 * k2), At(m2 * k2);
  fill_random(A, rng);
  fill_random(B, rng);
  for (int i = 0; i < k2; ++i)
    for (int j = 0; j < n2; ++j) Bt[size_t(j) * k2 + i] = B[size_t(i) * n2 + j];
  std::vector<float> c1(m2 * n2), c2(m2 * n2);
  kernels::matmul_serial(A.data(), B.data(), c1.data(), m2, k2, n2);
  kernels::matmul_nt_serial(A.data(), Bt.data(), c2.data(), m2, k2, n2);
  check(testutil::max_abs_diff(c1, c2) < 1e-5, "matmul_nt == matmul with transposed B");

  fill_random(At, rng);
  std::vector<float> Atr(k2 * m2);
  for (int i = 0; i < m2; ++i)
    for (int j = 0; j < k2; ++j) Atr[size_t(j) * m2 + i] = At[size_t(i) * k2 + j];
  std::vector<float> Bm(m2 * n2), d1(k2 * n2), d2(k2 * n2);
  fill_random(Bm, rng);
  kernels::matmul_tn_serial(At.data(), Bm.data(), d1.data(), m2, k2, n2);
  kernels::matmul_serial(Atr.data(), Bm.data(), d2.data(), k2, m2, n2);
  check(testutil::max_abs_diff(d1, d2) < 1e-5, "matmul_tn == matmul with transposed A");
}

}  // namespace

int main() {
  matmul_oracles();
  parallel_matches_serial<float>("f32");
  parallel_matches_serial<double>("f64");
  return testutil::summarize("test_kernels");
}
