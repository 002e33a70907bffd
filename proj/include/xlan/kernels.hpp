#pragma once

// Dense GEMM kernels behind every matrix product in the autograd ops.
//
// Two implementations share one loop order: `serial` is the reference kept
// for testing and benchmarking, `parallel` splits the outermost (output-row)
// loop across OpenMP threads. Each output element is reduced over the inner
// index in the same order in both, so results are bit-identical.

#include <cstddef>
#include <span>

namespace xlan::kernels {

// All matrices are row-major. `accumulate` adds into `c` instead of overwriting.

namespace serial {

// c[m×n] (+)= a[m×k] · b[k×n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

// c[m×n] (+)= a[m×k] · b[n×k]ᵀ
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

// c[m×n] (+)= a[k×m]ᵀ · b[k×n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

}  // namespace serial

namespace parallel {

// Below this many multiply-adds the OpenMP region is skipped.
inline constexpr std::size_t kDefaultMinWork = std::size_t{1} << 16;

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate,
             std::size_t min_work = kDefaultMinWork);

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate,
             std::size_t min_work = kDefaultMinWork);

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate,
             std::size_t min_work = kDefaultMinWork);

}  // namespace parallel

int max_threads();

}  // namespace xlan::kernels
