#include "xlan/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace xlan::kernels {

namespace {

inline void row_nn(std::size_t i, std::size_t n, std::size_t k, const double* a, const double* b,
                   double* c) {
  double* ci = c + i * n;
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = ai[p];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

inline void row_nt(std::size_t i, std::size_t n, std::size_t k, const double* a, const double* b,
                   double* c) {
  double* ci = c + i * n;
  const double* ai = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] += acc;
  }
}

inline void row_tn(std::size_t i, std::size_t m, std::size_t n, std::size_t k, const double* a,
                   const double* b, double* c) {
  double* ci = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double api = a[p * m + i];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
  }
}

inline void prepare(std::span<double> c, std::size_t count, bool accumulate) {
  if (!accumulate) std::fill_n(c.begin(), count, 0.0);
}

}  // namespace

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  prepare(c, m * n, accumulate);
  for (std::size_t i = 0; i < m; ++i) row_nn(i, n, k, a.data(), b.data(), c.data());
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  prepare(c, m * n, accumulate);
  for (std::size_t i = 0; i < m; ++i) row_nt(i, n, k, a.data(), b.data(), c.data());
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  prepare(c, m * n, accumulate);
  for (std::size_t i = 0; i < m; ++i) row_tn(i, m, n, k, a.data(), b.data(), c.data());
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate,
             std::size_t min_work) {
  prepare(c, m * n, accumulate);
  const auto rows = static_cast<std::ptrdiff_t>(m);
  const bool go_wide = m > 1 && m * n * k >= min_work;
#pragma omp parallel for schedule(static) if (go_wide)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    row_nn(static_cast<std::size_t>(i), n, k, a.data(), b.data(), c.data());
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate,
             std::size_t min_work) {
  prepare(c, m * n, accumulate);
  const auto rows = static_cast<std::ptrdiff_t>(m);
  const bool go_wide = m > 1 && m * n * k >= min_work;
#pragma omp parallel for schedule(static) if (go_wide)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    row_nt(static_cast<std::size_t>(i), n, k, a.data(), b.data(), c.data());
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate,
             std::size_t min_work) {
  prepare(c, m * n, accumulate);
  const auto rows = static_cast<std::ptrdiff_t>(m);
  const bool go_wide = m > 1 && m * n * k >= min_work;
#pragma omp parallel for schedule(static) if (go_wide)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    row_tn(static_cast<std::size_t>(i), m, n, k, a.data(), b.data(), c.data());
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace xlan::kernels
