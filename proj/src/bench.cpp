#include "tikuda/bench.hpp"

#include "tikuda/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

namespace tikuda::bench {

double quantile(std::vector<double> s, double q) {
    if (s.empty()) {
        throw EmptyDataset("quantile of no samples");
    }
    std::sort(s.begin(), s.end());
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

TimingStats summarize(const std::vector<double>& seconds) {
    return {quantile(seconds, 0.5), quantile(seconds, 0.1), quantile(seconds, 0.9), seconds.size()};
}

std::pair<Matrix, Matrix> feature_batches(std::size_t b, std::size_t p, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix s(b, p);
    Matrix t(b, p);
    for (double& v : s.flat()) {
        v = 0.5 + n(gen);
    }
    for (double& v : t.flat()) {
        v = 0.8 + 1.3 * n(gen);
    }
    return {std::move(s), std::move(t)};
}

TimingStats time_alignment(train::Method method, std::size_t p, std::size_t b, std::size_t iters,
                           std::uint64_t seed, const align::AlignmentConfig& cfg) {
    if (method == train::Method::source_only) {
        throw ConfigError("bench: source-only has no alignment loss");
    }
    if (iters == 0) {
        throw ConfigError("bench: iters must be >= 1");
    }
    const auto [zs, zt] = feature_batches(b, p, seed);
    std::vector<double> seconds;
    seconds.reserve(iters);
    for (std::size_t i = 0; i < iters; ++i) {
        const auto start = std::chrono::steady_clock::now();
        ad::Tape tape;
        const ad::Value s = tape.variable(zs);
        const ad::Value t = tape.variable(zt);
        const align::AlignmentTerms terms = train::alignment_terms(method, s, t, cfg);
        ad::Value loss = terms.angle;
        if (terms.scale.valid()) {
            loss = ad::add(loss, terms.scale);
        }
        tape.backward(loss);
        seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    return summarize(seconds);
}

std::vector<BenchRow> bench_alignment(const std::vector<std::size_t>& p_list, std::size_t b, std::size_t iters,
                                      const std::vector<train::Method>& methods, std::uint64_t seed,
                                      const align::AlignmentConfig& cfg) {
    if (!std::is_sorted(p_list.begin(), p_list.end())) {
        throw ConfigError("bench: p values must be sorted");
    }
    std::vector<BenchRow> rows;
    for (std::size_t p : p_list) {
        for (train::Method m : methods) {
            rows.push_back({train::to_string(m), p, b, time_alignment(m, p, b, iters, seed, cfg)});
        }
    }
    return rows;
}

std::string to_csv(const std::vector<BenchRow>& rows) {
    std::string out = "method,p,b,iters,median_s,p10_s,p90_s\n";
    char buf[256];
    for (const BenchRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.9g,%.9g,%.9g\n", r.method.c_str(), r.p, r.b, r.stats.iters,
                      r.stats.median, r.stats.p10, r.stats.p90);
        out += buf;
    }
    return out;
}

}  // namespace tikuda::bench
