// SPDX-License-Identifier: Apache-2.0
#include "refdec/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace refdec::kernels {

namespace {

std::atomic<std::size_t> g_parallel_threshold{1u << 16};

// The two variants must stay bit-identical, so parallelism is only worth it
// when OpenMP is compiled in, we are not already inside a parallel region,
// and the problem is large enough to amortize the fork.
bool go_parallel(std::size_t flops) {
#ifdef _OPENMP
  return flops >= g_parallel_threshold.load(std::memory_order_relaxed) &&
         omp_get_max_threads() > 1 && !omp_in_parallel();
#else
  (void)flops;
  return false;
#endif
}

using index_t = std::int64_t;

}  // namespace

std::size_t parallel_threshold() {
  return g_parallel_threshold.load(std::memory_order_relaxed);
}

void set_parallel_threshold(std::size_t flops) {
  g_parallel_threshold.store(flops, std::memory_order_relaxed);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n >= 1) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

// ---------------------------------------------------------------------------
// matmul: c = a * b

void matmul_serial(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = c + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] = 0.0;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a[i * k + l];
      const double* brow = b + l * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

void matmul_omp(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(m); ++i) {
    double* row = c + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] = 0.0;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a[i * k + l];
      const double* brow = b + l * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
  if (go_parallel(2 * m * k * n))
    matmul_omp(a, b, c, m, k, n);
  else
    matmul_serial(a, b, c, m, k, n);
}

// ---------------------------------------------------------------------------
// matmul_abt_acc: c[m x k] += a[m x n] * b[k x n]^T

void matmul_abt_acc_serial(const double* a, const double* b, double* c,
                           std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const double* brow = b + j * n;
      double acc = 0.0;
      for (std::size_t l = 0; l < n; ++l) acc += arow[l] * brow[l];
      c[i * k + j] += acc;
    }
  }
}

void matmul_abt_acc_omp(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t n, std::size_t k) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(m); ++i) {
    const double* arow = a + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const double* brow = b + j * n;
      double acc = 0.0;
      for (std::size_t l = 0; l < n; ++l) acc += arow[l] * brow[l];
      c[i * k + j] += acc;
    }
  }
}

void matmul_abt_acc(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k) {
  if (go_parallel(2 * m * n * k))
    matmul_abt_acc_omp(a, b, c, m, n, k);
  else
    matmul_abt_acc_serial(a, b, c, m, n, k);
}

// ---------------------------------------------------------------------------
// matmul_atb_acc: c[k x n] += a[m x k]^T * b[m x n]
// Per output element the reduction over rows i runs in ascending order in
// both variants; the serial loop nest is chosen to match.

void matmul_atb_acc_serial(const double* a, const double* b, double* c,
                           std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t j = 0; j < k; ++j) {
    double* crow = c + j * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + j];
      const double* brow = b + i * n;
      for (std::size_t l = 0; l < n; ++l) crow[l] += av * brow[l];
    }
  }
}

void matmul_atb_acc_omp(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (index_t j = 0; j < static_cast<index_t>(k); ++j) {
    double* crow = c + j * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + j];
      const double* brow = b + i * n;
      for (std::size_t l = 0; l < n; ++l) crow[l] += av * brow[l];
    }
  }
}

void matmul_atb_acc(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  if (go_parallel(2 * m * k * n))
    matmul_atb_acc_omp(a, b, c, m, k, n);
  else
    matmul_atb_acc_serial(a, b, c, m, k, n);
}

// ---------------------------------------------------------------------------
// matvec: y = w * x

void matvec_serial(const double* w, const double* x, double* y, std::size_t m,
                   std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = w + i * k;
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec_omp(const double* w, const double* x, double* y, std::size_t m,
                std::size_t k) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(m); ++i) {
    const double* row = w + i * k;
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec(const double* w, const double* x, double* y, std::size_t m,
            std::size_t k) {
  if (go_parallel(2 * m * k))
    matvec_omp(w, x, y, m, k);
  else
    matvec_serial(w, x, y, m, k);
}

// ---------------------------------------------------------------------------
// matvec_t_acc: y += w^T * x

void matvec_t_acc_serial(const double* w, const double* x, double* y,
                         std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double xv = x[i];
    const double* row = w + i * k;
    for (std::size_t j = 0; j < k; ++j) y[j] += xv * row[j];
  }
}

void matvec_t_acc_omp(const double* w, const double* x, double* y,
                      std::size_t m, std::size_t k) {
  // Column-parallel; each y[j] still accumulates rows in ascending order.
#pragma omp parallel for schedule(static)
  for (index_t j = 0; j < static_cast<index_t>(k); ++j) {
    double acc = y[j];
    for (std::size_t i = 0; i < m; ++i) acc += x[i] * w[i * k + j];
    y[j] = acc;
  }
}

void matvec_t_acc(const double* w, const double* x, double* y, std::size_t m,
                  std::size_t k) {
  if (go_parallel(2 * m * k))
    matvec_t_acc_omp(w, x, y, m, k);
  else
    matvec_t_acc_serial(w, x, y, m, k);
}

// ---------------------------------------------------------------------------
// outer_acc: acc += y (outer) x

void outer_acc_serial(const double* y, const double* x, double* acc,
                      std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double yv = y[i];
    double* row = acc + i * k;
    for (std::size_t j = 0; j < k; ++j) row[j] += yv * x[j];
  }
}

void outer_acc_omp(const double* y, const double* x, double* acc,
                   std::size_t m, std::size_t k) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(m); ++i) {
    const double yv = y[i];
    double* row = acc + i * k;
    for (std::size_t j = 0; j < k; ++j) row[j] += yv * x[j];
  }
}

void outer_acc(const double* y, const double* x, double* acc, std::size_t m,
               std::size_t k) {
  if (go_parallel(2 * m * k))
    outer_acc_omp(y, x, acc, m, k);
  else
    outer_acc_serial(y, x, acc, m, k);
}

// ---------------------------------------------------------------------------
// Elementwise ops.

#define REFDEC_ELEMENTWISE(name, expr)                                        \
  void name##_serial(const double* a, const double* b, double* out,           \
                     std::size_t n) {                                         \
    for (std::size_t i = 0; i < n; ++i) out[i] = (expr);                      \
  }                                                                           \
  void name##_omp(const double* a, const double* b, double* out,              \
                  std::size_t n) {                                            \
    _Pragma("omp parallel for schedule(static)")                              \
    for (index_t i = 0; i < static_cast<index_t>(n); ++i) out[i] = (expr);    \
  }                                                                           \
  void name(const double* a, const double* b, double* out, std::size_t n) {   \
    if (go_parallel(n))                                                       \
      name##_omp(a, b, out, n);                                               \
    else                                                                      \
      name##_serial(a, b, out, n);                                            \
  }

REFDEC_ELEMENTWISE(vadd, a[i] + b[i])
REFDEC_ELEMENTWISE(vsub, a[i] - b[i])
REFDEC_ELEMENTWISE(vmul, a[i] * b[i])

#undef REFDEC_ELEMENTWISE

void vscale_serial(const double* a, double s, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void vscale_omp(const double* a, double s, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(n); ++i) out[i] = a[i] * s;
}

void vscale(const double* a, double s, double* out, std::size_t n) {
  if (go_parallel(n))
    vscale_omp(a, s, out, n);
  else
    vscale_serial(a, s, out, n);
}

void vtanh_serial(const double* a, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
}

void vtanh_omp(const double* a, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(n); ++i)
    out[i] = std::tanh(a[i]);
}

void vtanh(const double* a, double* out, std::size_t n) {
  // tanh is ~25 flops worth of work per element
  if (go_parallel(25 * n))
    vtanh_omp(a, out, n);
  else
    vtanh_serial(a, out, n);
}

double sigmoid_scalar(double v) {
  // Split on sign so exp never overflows; output is strictly inside (0, 1).
  if (v >= 0.0) {
    return 1.0 / (1.0 + std::exp(-v));
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void vsigmoid_serial(const double* a, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid_scalar(a[i]);
}

void vsigmoid_omp(const double* a, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(n); ++i)
    out[i] = sigmoid_scalar(a[i]);
}

void vsigmoid(const double* a, double* out, std::size_t n) {
  if (go_parallel(25 * n))
    vsigmoid_omp(a, out, n);
  else
    vsigmoid_serial(a, out, n);
}

void axpy_serial(double s, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

void axpy_omp(double s, const double* x, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(n); ++i) y[i] += s * x[i];
}

void axpy(double s, const double* x, double* y, std::size_t n) {
  if (go_parallel(2 * n))
    axpy_omp(s, x, y, n);
  else
    axpy_serial(s, x, y, n);
}

}  // namespace refdec::kernels
