// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace refdec::kernels {

// Dense double-precision primitives behind the autodiff ops.
//
// Each kernel ships in two variants: a serial reference implementation and
// an OpenMP one. Both compute every output element with the same
// accumulation order, so they are bit-identical; the unsuffixed entry point
// dispatches on problem size and never affects results. The serial versions
// stay exported so tests can pin the parallel ones against them and the
// benchmark tool can compare throughput.

// c[m x n] = a[m x k] * b[k x n]
void matmul_serial(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n);
void matmul_omp(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k, std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n);

// c[m x k] += a[m x n] * b[k x n]^T      (i.e. a * b^T)
void matmul_abt_acc_serial(const double* a, const double* b, double* c,
                           std::size_t m, std::size_t n, std::size_t k);
void matmul_abt_acc_omp(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t n, std::size_t k);
void matmul_abt_acc(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k);

// c[k x n] += a[m x k]^T * b[m x n]      (i.e. a^T * b)
void matmul_atb_acc_serial(const double* a, const double* b, double* c,
                           std::size_t m, std::size_t k, std::size_t n);
void matmul_atb_acc_omp(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n);
void matmul_atb_acc(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n);

// y[m] = w[m x k] * x[k]
void matvec_serial(const double* w, const double* x, double* y, std::size_t m,
                   std::size_t k);
void matvec_omp(const double* w, const double* x, double* y, std::size_t m,
                std::size_t k);
void matvec(const double* w, const double* x, double* y, std::size_t m,
            std::size_t k);

// y[k] += w[m x k]^T * x[m]; per output element the sum runs over ascending
// rows in both variants.
void matvec_t_acc_serial(const double* w, const double* x, double* y,
                         std::size_t m, std::size_t k);
void matvec_t_acc_omp(const double* w, const double* x, double* y,
                      std::size_t m, std::size_t k);
void matvec_t_acc(const double* w, const double* x, double* y, std::size_t m,
                  std::size_t k);

// acc[m x k] += y[m] (outer) x[k]
void outer_acc_serial(const double* y, const double* x, double* acc,
                      std::size_t m, std::size_t k);
void outer_acc_omp(const double* y, const double* x, double* acc,
                   std::size_t m, std::size_t k);
void outer_acc(const double* y, const double* x, double* acc, std::size_t m,
               std::size_t k);

// Elementwise vector ops.
void vadd_serial(const double* a, const double* b, double* out, std::size_t n);
void vadd_omp(const double* a, const double* b, double* out, std::size_t n);
void vadd(const double* a, const double* b, double* out, std::size_t n);

void vsub_serial(const double* a, const double* b, double* out, std::size_t n);
void vsub_omp(const double* a, const double* b, double* out, std::size_t n);
void vsub(const double* a, const double* b, double* out, std::size_t n);

void vmul_serial(const double* a, const double* b, double* out, std::size_t n);
void vmul_omp(const double* a, const double* b, double* out, std::size_t n);
void vmul(const double* a, const double* b, double* out, std::size_t n);

void vscale_serial(const double* a, double s, double* out, std::size_t n);
void vscale_omp(const double* a, double s, double* out, std::size_t n);
void vscale(const double* a, double s, double* out, std::size_t n);

void vtanh_serial(const double* a, double* out, std::size_t n);
void vtanh_omp(const double* a, double* out, std::size_t n);
void vtanh(const double* a, double* out, std::size_t n);

void vsigmoid_serial(const double* a, double* out, std::size_t n);
void vsigmoid_omp(const double* a, double* out, std::size_t n);
void vsigmoid(const double* a, double* out, std::size_t n);

// y[n] += s * x[n]
void axpy_serial(double s, const double* x, double* y, std::size_t n);
void axpy_omp(double s, const double* x, double* y, std::size_t n);
void axpy(double s, const double* x, double* y, std::size_t n);

// Numerically stable scalar sigmoid (shared with the elementwise kernel).
double sigmoid_scalar(double v);

// Work threshold (in flops) below which the dispatcher stays serial.
// The model's desk-scale ops sit below the default, so parallelism there
// comes from the batch level; the benchmark exercises sizes above it.
std::size_t parallel_threshold();
void set_parallel_threshold(std::size_t flops);

// Number of OpenMP threads the dispatcher would use (1 when built without).
int max_threads();

// Caps the OpenMP thread count; no-op without OpenMP.
void set_threads(int n);

}  // namespace refdec::kernels
