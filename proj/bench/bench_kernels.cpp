// Parallel kernels against the serial reference on the same inputs.
#include "tikuda/bench.hpp"
#include "tikuda/kernels.hpp"
#include "tikuda/linalg.hpp"
#include "tikuda/reference.hpp"
#include "tikuda/runtime.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

using namespace tikuda;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (std::size_t i = 0; i < r * c; ++i) {
        m.data()[i] = n(rng);
    }
    return m;
}

bench::TimingStats time(const std::function<void()>& fn, std::size_t iters) {
    fn();
    std::vector<double> s;
    for (std::size_t i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return bench::summarize(s);
}

void row(const char* kernel, std::size_t n, const bench::TimingStats& fast, const bench::TimingStats& ref, double diff) {
    std::printf("%-12s %6zu %12.6f %12.6f %8.2fx %10.2e\n", kernel, n, fast.median, ref.median,
                ref.median / fast.median, diff);
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"kernel benchmark: OpenMP kernels vs serial reference"};
    std::vector<std::size_t> sizes{64, 128, 256, 512};
    std::size_t iters = 5;
    std::size_t batch = 64;
    app.add_option("--sizes", sizes, "square sizes")->delimiter(',');
    app.add_option("--iters", iters, "timed iterations")->check(CLI::PositiveNumber);
    app.add_option("--batch", batch, "rows of the gram input")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    std::printf("threads %d\n", omp_get_max_threads());
    std::printf("%-12s %6s %12s %12s %9s %10s\n", "kernel", "n", "omp_s", "serial_s", "speedup", "max_diff");
    std::mt19937_64 rng(1);
    for (const std::size_t n : sizes) {
        const Matrix a = random_matrix(n, n, rng);
        const Matrix b = random_matrix(n, n, rng);
        Matrix c1;
        Matrix c2;
        const auto f = time([&] { c1 = kernels::matmul(a, b); }, iters);
        const auto r = time([&] { c2 = reference::matmul(a, b); }, iters);
        row("matmul", n, f, r, max_abs_diff(c1, c2));

        const Matrix z = random_matrix(batch, n, rng);
        const auto fg = time([&] { c1 = kernels::gram(z, 1.0); }, iters);
        const auto rg = time([&] { c2 = reference::gram(z, 1.0); }, iters);
        row("gram", n, fg, rg, max_abs_diff(c1, c2));

        const SpdMatrix spd = SpdMatrix::tikhonov(z, 1.0);
        const auto fi = time([&] { c1 = spd_inverse(spd); }, iters);
        const auto ri = time([&] { c2 = reference::spd_inverse(spd.matrix()); }, iters);
        row("spd_inverse", n, fi, ri, max_abs_diff(c1, c2));
    }
    return 0;
}
