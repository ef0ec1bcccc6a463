#pragma once

#include "pico/numerics/tensor.hpp"

// Dense matrix kernels used by the autodiff ops and the training loops.
//
// `serial` holds straightforward triple-loop references. `parallel` holds the
// OpenMP versions used in production. Every output element is accumulated over
// the shared index in ascending order in both variants, so results are
// bit-identical regardless of thread count.
namespace pico::kernels {

namespace serial {
Tensor matmul(const Tensor& a, const Tensor& b);     // [n×k]·[k×m]
Tensor matmul_bt(const Tensor& a, const Tensor& b);  // [n×k]·[m×k]ᵀ
Tensor matmul_at(const Tensor& a, const Tensor& b);  // [k×n]ᵀ·[k×m]
}  // namespace serial

namespace parallel {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor matmul_at(const Tensor& a, const Tensor& b);
}  // namespace parallel

using parallel::matmul;
using parallel::matmul_at;
using parallel::matmul_bt;

int max_threads();

}  // namespace pico::kernels
