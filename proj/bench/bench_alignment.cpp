// TikUDA against DARE-GRAM (and the cheap baselines) across feature widths.
#include "tikuda/bench.hpp"
#include "tikuda/runtime.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <fstream>

using namespace tikuda;

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"alignment loss timing, forward plus backward"};
    std::vector<std::size_t> p{64, 128, 256, 512, 1024};
    std::size_t batch = 64;
    std::size_t iters = 20;
    std::vector<std::string> names{"tikuda", "dare-gram"};
    std::string out;
    app.add_option("--p", p, "feature widths, ascending")->delimiter(',');
    app.add_option("--batch", batch)->check(CLI::PositiveNumber);
    app.add_option("--iters", iters)->check(CLI::PositiveNumber);
    app.add_option("--methods", names)->delimiter(',');
    app.add_option("-o,--out", out, "csv path");
    CLI11_PARSE(app, argc, argv);

    std::vector<train::Method> methods;
    for (const auto& n : names) {
        methods.push_back(train::parse_method(n));
    }
    std::printf("threads %d\n", omp_get_max_threads());
    const auto rows = bench::bench_alignment(p, batch, iters, methods);
    std::printf("%-12s %6s %12s %12s %12s\n", "method", "p", "median_s", "p10_s", "p90_s");
    for (const auto& r : rows) {
        std::printf("%-12s %6zu %12.6f %12.6f %12.6f\n", r.method.c_str(), r.p, r.stats.median, r.stats.p10,
                    r.stats.p90);
    }
    for (const std::size_t w : p) {
        double tk = 0.0;
        double dg = 0.0;
        for (const auto& r : rows) {
            if (r.p == w && r.method == "tikuda") tk = r.stats.median;
            if (r.p == w && r.method == "dare-gram") dg = r.stats.median;
        }
        if (tk > 0.0 && dg > 0.0) {
            std::printf("p %zu dare-gram / tikuda = %.2f\n", w, dg / tk);
        }
    }
    if (!out.empty()) {
        std::ofstream(out) << bench::to_csv(rows);
    }
    return 0;
}
