// Serial reference vs OpenMP kernels: wall time and bit-equality per shape.
//
//   bench_kernels [reps]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <vector>

#include "pico/numerics/kernels.hpp"

using namespace pico;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    Tensor t = Tensor::zeros(r, c);
    for (double& v : t.values()) v = n01(rng);
    return t;
}

template <class F>
double median_ms(int reps, F&& f) {
    std::vector<double> times;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + reps / 2, times.end());
    return times[reps / 2];
}

}  // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
    std::mt19937_64 rng(7);
    std::printf("threads %d\n", kernels::max_threads());
    std::printf("%-10s %6s %6s %6s %10s %10s %8s %s\n", "kernel", "n", "k", "m", "serial_ms", "omp_ms", "speedup", "equal");

    struct Shape {
        std::size_t n, k, m;
    };
    // Batch-by-width shapes from training plus the pool similarity shape.
    const Shape shapes[] = {{64, 16, 64}, {64, 256, 256}, {256, 256, 256}, {128, 32, 1152}, {512, 512, 512}};
    bool all_equal = true;
    for (const Shape& s : shapes) {
        const Tensor a = random_matrix(s.n, s.k, rng);
        const Tensor b = random_matrix(s.k, s.m, rng);
        const Tensor bt = random_matrix(s.m, s.k, rng);
        const Tensor at = random_matrix(s.k, s.n, rng);

        auto row = [&](const char* name, auto serial, auto parallel) {
            Tensor rs, rp;
            const double ts = median_ms(reps, [&] { rs = serial(); });
            const double tp = median_ms(reps, [&] { rp = parallel(); });
            const bool eq = rs == rp;
            all_equal &= eq;
            std::printf("%-10s %6zu %6zu %6zu %10.3f %10.3f %8.2f %s\n", name, s.n, s.k, s.m, ts, tp, ts / tp,
                        eq ? "yes" : "NO");
        };
        row("matmul", [&] { return kernels::serial::matmul(a, b); }, [&] { return kernels::parallel::matmul(a, b); });
        row("matmul_bt", [&] { return kernels::serial::matmul_bt(a, bt); },
            [&] { return kernels::parallel::matmul_bt(a, bt); });
        row("matmul_at", [&] { return kernels::serial::matmul_at(at, b); },
            [&] { return kernels::parallel::matmul_at(at, b); });
    }
    return all_equal ? 0 : 1;
}
