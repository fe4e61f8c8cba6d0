// SPDX-License-Identifier: Apache-2.0
//
// Times the serial reference kernels against their OpenMP variants at
// paper-scale sizes and verifies the outputs agree bit-for-bit.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "refdec/kernels.hpp"
#include "refdec/rng.hpp"

namespace {

using refdec::Rng;
namespace kernels = refdec::kernels;

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  std::vector<double> samples;
  for (int r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    samples.push_back(
        std::chrono::duration<double, std::milli>(stop - start).count());
  }
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a == b;
}

void report(const char* name, const char* size, double serial_ms,
            double omp_ms, bool identical) {
  std::printf("%-14s %-18s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   %s\n",
              name, size, serial_ms, omp_ms, serial_ms / omp_ms,
              identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("threads available: %d\n", kernels::max_threads());
  Rng rng(7);
  const int reps = 5;

  {
    const std::size_t m = 1000, k = 2048;
    const auto w = random_vec(m * k, rng);
    const auto x = random_vec(k, rng);
    std::vector<double> ys(m), yp(m);
    const double ts = time_ms(
        [&] { kernels::matvec_serial(w.data(), x.data(), ys.data(), m, k); },
        reps);
    const double tp = time_ms(
        [&] { kernels::matvec_omp(w.data(), x.data(), yp.data(), m, k); },
        reps);
    report("matvec", "1000x2048", ts, tp, bit_equal(ys, yp));
  }
  {
    const std::size_t m = 512, k = 512, n = 512;
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    std::vector<double> cs(m * n), cp(m * n);
    const double ts = time_ms(
        [&] {
          kernels::matmul_serial(a.data(), b.data(), cs.data(), m, k, n);
        },
        reps);
    const double tp = time_ms(
        [&] { kernels::matmul_omp(a.data(), b.data(), cp.data(), m, k, n); },
        reps);
    report("matmul", "512x512x512", ts, tp, bit_equal(cs, cp));
  }
  {
    const std::size_t m = 1000, k = 2048;
    const auto w = random_vec(m * k, rng);
    const auto x = random_vec(m, rng);
    std::vector<double> ys(k, 0.0), yp(k, 0.0);
    const double ts = time_ms(
        [&] {
          std::fill(ys.begin(), ys.end(), 0.0);
          kernels::matvec_t_acc_serial(w.data(), x.data(), ys.data(), m, k);
        },
        reps);
    const double tp = time_ms(
        [&] {
          std::fill(yp.begin(), yp.end(), 0.0);
          kernels::matvec_t_acc_omp(w.data(), x.data(), yp.data(), m, k);
        },
        reps);
    report("matvec_t_acc", "1000x2048", ts, tp, bit_equal(ys, yp));
  }
  {
    const std::size_t m = 1000, k = 2048;
    const auto y = random_vec(m, rng);
    const auto x = random_vec(k, rng);
    std::vector<double> as(m * k, 0.0), ap(m * k, 0.0);
    const double ts = time_ms(
        [&] {
          std::fill(as.begin(), as.end(), 0.0);
          kernels::outer_acc_serial(y.data(), x.data(), as.data(), m, k);
        },
        reps);
    const double tp = time_ms(
        [&] {
          std::fill(ap.begin(), ap.end(), 0.0);
          kernels::outer_acc_omp(y.data(), x.data(), ap.data(), m, k);
        },
        reps);
    report("outer_acc", "1000x2048", ts, tp, bit_equal(as, ap));
  }
  {
    const std::size_t n = 4'000'000;
    const auto a = random_vec(n, rng);
    std::vector<double> os(n), op(n);
    const double ts =
        time_ms([&] { kernels::vtanh_serial(a.data(), os.data(), n); }, reps);
    const double tp =
        time_ms([&] { kernels::vtanh_omp(a.data(), op.data(), n); }, reps);
    report("vtanh", "4000000", ts, tp, bit_equal(os, op));
  }
  {
    const std::size_t n = 4'000'000;
    const auto a = random_vec(n, rng);
    const auto b = random_vec(n, rng);
    std::vector<double> os(n), op(n);
    const double ts = time_ms(
        [&] { kernels::vmul_serial(a.data(), b.data(), os.data(), n); }, reps);
    const double tp = time_ms(
        [&] { kernels::vmul_omp(a.data(), b.data(), op.data(), n); }, reps);
    report("vmul", "4000000", ts, tp, bit_equal(os, op));
  }
  return 0;
}
