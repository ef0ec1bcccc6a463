#include "pico/numerics/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pico::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 15;

void check_inner(std::size_t lhs, std::size_t rhs, const char* op) {
    if (lhs != rhs) {
        throw ShapeError(std::string(op) + ": inner dimensions " + std::to_string(lhs) + " and " +
                         std::to_string(rhs) + " disagree");
    }
}

}  // namespace

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_inner(a.cols(), b.rows(), "matmul");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor c = Tensor::zeros(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += a(i, t) * b(t, j);
            c(i, j) = s;
        }
    return c;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    check_inner(a.cols(), b.cols(), "matmul_bt");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Tensor c = Tensor::zeros(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += a(i, t) * b(j, t);
            c(i, j) = s;
        }
    return c;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
    check_inner(a.rows(), b.rows(), "matmul_at");
    const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
    Tensor c = Tensor::zeros(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += a(t, i) * b(t, j);
            c(i, j) = s;
        }
    return c;
}

}  // namespace serial

namespace parallel {

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_inner(a.cols(), b.rows(), "matmul");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor c = Tensor::zeros(n, m);
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const bool go_wide = n * k * m >= kParallelWork;
#pragma omp parallel for schedule(static) if (go_wide)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        double* crow = pc + i * m;
        const double* arow = pa + i * k;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = arow[t];
            const double* brow = pb + t * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    check_inner(a.cols(), b.cols(), "matmul_bt");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Tensor c = Tensor::zeros(n, m);
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const bool go_wide = n * k * m >= kParallelWork;
#pragma omp parallel for schedule(static) if (go_wide)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = pb + j * k;
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += arow[t] * brow[t];
            pc[i * m + j] = s;
        }
    }
    return c;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
    check_inner(a.rows(), b.rows(), "matmul_at");
    const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
    Tensor c = Tensor::zeros(n, m);
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const bool go_wide = n * k * m >= kParallelWork;
    // Each thread owns whole output rows; the shared index t runs ascending.
#pragma omp parallel for schedule(static) if (go_wide)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        double* crow = pc + i * m;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = pa[t * n + i];
            const double* brow = pb + t * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace pico::kernels
