// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "refdec/model.hpp"

namespace refdec {

// Straight-line extended-precision evaluation of the teacher-forced
// objective (cross entropy plus lambda times the position loss).
//
// The finite-difference side of the gradient checker needs function values
// whose rounding error is far below the difference quotient it forms;
// double evaluations leave ~1e-10 of noise on the derivative at eps = 1e-5,
// which drowns coordinates whose true gradient is small. This evaluator
// recomputes the same objective in long double with plain loops, no tape.
long double reference_objective(const ModelParams& params,
                                std::span<const Tensor> regions,
                                std::span<const int> gold, double lambda);

// Full-model gradient check: builds a model and one synthetic record from
// the seed, computes analytic gradients on the tape, and compares every
// parameter coordinate against central differences of the extended-
// precision objective. corrupt_one perturbs one analytic entry, forcing a
// failure (hook for testing the checker itself).
GradCheckReport model_grad_check(const ModelDims& dims,
                                 std::size_t region_count,
                                 std::size_t caption_len, std::uint64_t seed,
                                 double eps, double lambda,
                                 bool corrupt_one = false);

}  // namespace refdec
