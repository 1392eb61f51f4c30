#pragma once

// Tiny check harness shared by the test mains: counts failures, prints
// one line per failed expectation, and the main returns the failure count.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace testutil {

inline int g_failures = 0;
inline int g_checks = 0;

inline void check(bool ok, const std::string& what) {
  ++g_checks;
  if (!ok) {
    ++g_failures;
    std::printf("FAIL: %s\n", what.c_str());
  }
}

inline void check_near(double got, double want, double tol, const std::string& what) {
  ++g_checks;
  const bool ok = std::isfinite(got) && std::fabs(got - want) <= tol;
  if (!ok) {
    ++g_failures;
    std::printf("FAIL: %s (got %.10g, want %.10g, tol %.3g)\n", what.c_str(),
                got, want, tol);
  }
}

template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = std::fabs(double(a[i]) - double(b[i]));
    if (d > m) m = d;
  }
  return m;
}

// Largest relative error, with an absolute floor so near-zero entries do
// not blow the ratio up.
template <class A, class B>
double max_rel_diff(const A& a, const B& b, double floor = 1e-6) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::fabs(double(a[i])), std::fabs(double(b[i])), floor});
    const double d = std::fabs(double(a[i]) - double(b[i])) / denom;
    if (d > m) m = d;
  }
  return m;
}

inline int summarize(const char* suite) {
  if (g_failures == 0)
    std::printf("%s: %d checks passed\n", suite, g_checks);
  else
    std::printf("%s: %d of %d checks FAILED\n", suite, g_failures, g_checks);
  return g_failures == 0 ? 0 : 1;
}

template <class F>
bool throws(F&& f) {
  try {
    f();
  } catch (const std::exception&) {
    return true;
  }
  return false;
}

}  // namespace testutil
