#pragma once

#include "tikuda/alignment.hpp"
#include "tikuda/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tikuda::bench {

struct TimingStats {
    double median = 0.0;  // seconds
    double p10 = 0.0;
    double p90 = 0.0;
    std::size_t iters = 0;
};

/// Linear-interpolated quantile of unsorted samples, q ∈ [0, 1].
double quantile(std::vector<double> samples, double q);

TimingStats summarize(const std::vector<double>& seconds);

/// Two b×p feature batches shaped like post-activation features (positive mean, unit spread).
std::pair<Matrix, Matrix> feature_batches(std::size_t b, std::size_t p, std::uint64_t seed);

/// Forward plus backward of one alignment loss per iteration; batch generation is outside the timed region.
TimingStats time_alignment(train::Method method, std::size_t p, std::size_t b, std::size_t iters,
                           std::uint64_t seed, const align::AlignmentConfig& cfg = {});

struct BenchRow {
    std::string method;
    std::size_t p = 0;
    std::size_t b = 0;
    TimingStats stats;
};

std::vector<BenchRow> bench_alignment(const std::vector<std::size_t>& p_list, std::size_t b, std::size_t iters,
                                      const std::vector<train::Method>& methods, std::uint64_t seed = 0,
                                      const align::AlignmentConfig& cfg = {});

/// CSV with header method,p,b,iters,median_s,p10_s,p90_s.
std::string to_csv(const std::vector<BenchRow>& rows);

}  // namespace tikuda::bench
