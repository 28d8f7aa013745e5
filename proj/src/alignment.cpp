#include "tikuda/alignment.hpp"

#include "tikuda/errors.hpp"
#include "tikuda/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

namespace tikuda::align {

using ad::Value;

Similarity parse_similarity(const std::string& name) {
    if (name == "haversine") {
        return Similarity::haversine;
    }
    if (name == "cosine") {
        return Similarity::cosine;
    }
    throw ConfigError("unknown similarity '" + name + "' (expected haversine or cosine)");
}

std::string to_string(Similarity s) { return s == Similarity::haversine ? "haversine" : "cosine"; }

void AlignmentConfig::validate() const {
    if (!(alpha > 0.0)) {
        throw OutOfRange("alignment: alpha must be > 0, got " + std::to_string(alpha));
    }
    if (!(dare_gram_energy_threshold > 0.0) || dare_gram_energy_threshold > 1.0) {
        throw OutOfRange("alignment: energy threshold must lie in (0, 1], got " +
                         std::to_string(dare_gram_energy_threshold));
    }
    if (!(epsilon_norm > 0.0)) {
        throw OutOfRange("alignment: epsilon_norm must be > 0");
    }
}

namespace {

void require_batch(const Value& z, const char* what) {
    if (z.rows() == 0 || z.cols() == 0) {
        throw ShapeMismatch(std::string(what) + ": empty feature batch " + z.data().shape_string());
    }
}

void require_pair(const Value& zs, const Value& zt, const char* what) {
    require_batch(zs, what);
    require_batch(zt, what);
    if (zs.cols() != zt.cols()) {
        throw DimensionMismatch(std::string(what) + ": feature dimensions differ (" + std::to_string(zs.cols()) +
                                " vs " + std::to_string(zt.cols()) + ")");
    }
}

Value one_minus(const Value& v) { return ad::add_scalar(ad::scalar_mul(v, -1.0), 1.0); }

Value squared(const Value& v) { return ad::elementwise_mul(v, v); }

}  // namespace

Value tikhonov_inverse(const Value& z, double alpha) {
    require_batch(z, "tikhonov_inverse");
    if (!(alpha > 0.0)) {
        throw OutOfRange("tikhonov_inverse: alpha must be > 0, got " + std::to_string(alpha));
    }
    return ad::tikhonov_inverse(z, alpha);
}

Value haversine_similarity(const Value& cos_phi) {
    Value c = ad::clamp(cos_phi, -1.0, 1.0);
    return one_minus(ad::sqrt(ad::scalar_mul(one_minus(c), 0.5)));
}

Value column_cosine(const Value& a, const Value& b, double eps) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeMismatch("column_cosine: " + a.data().shape_string() + " vs " + b.data().shape_string());
    }
    Value dot = ad::sum_rows(ad::elementwise_mul(a, b));
    Value ssa = ad::sum_rows(squared(a));
    Value ssb = ad::sum_rows(squared(b));
    // sqrt(‖a‖²‖b‖²) rather than ‖a‖‖b‖ keeps the cosine of identical columns exactly 1.
    const double floor = eps * eps * eps * eps;
    Value denom = ad::sqrt(ad::clamp(ad::elementwise_mul(ssa, ssb), floor, std::numeric_limits<double>::infinity()));
    return ad::clamp(ad::div(dot, denom), -1.0, 1.0);
}

Value angle_loss(const Value& g_s_inv, const Value& g_t_inv, Similarity similarity, double eps) {
    Value cos = column_cosine(g_s_inv, g_t_inv, eps);
    Value m = similarity == Similarity::haversine ? haversine_similarity(cos) : cos;
    return ad::sum(one_minus(m));
}

Value scale_loss(const Value& z_src, const Value& z_tgt, double alpha, const PowerIterationOptions& power) {
    require_pair(z_src, z_tgt, "scale_loss");
    Value ls = ad::lambda_max(ad::tikhonov(z_src, alpha), power);
    Value lt = ad::lambda_max(ad::tikhonov(z_tgt, alpha), power);
    return squared(ad::sub(ls, lt));
}

AlignmentTerms tikuda_loss(const Value& z_src, const Value& z_tgt, const AlignmentConfig& cfg) {
    cfg.validate();
    require_pair(z_src, z_tgt, "tikuda_loss");
    Value gs = align::tikhonov_inverse(z_src, cfg.alpha);
    Value gt = align::tikhonov_inverse(z_tgt, cfg.alpha);
    return {angle_loss(gs, gt, cfg.similarity, cfg.epsilon_norm), scale_loss(z_src, z_tgt, cfg.alpha, cfg.power)};
}

namespace {

Value covariance(const Value& z) {
    const double b = static_cast<double>(z.rows());
    Value mean = ad::scalar_mul(ad::sum_rows(z), 1.0 / b);
    Value centered = ad::sub(z, mean);
    return ad::scalar_mul(ad::matmul(ad::transpose(centered), centered), 1.0 / (b - 1.0));
}

}  // namespace

Value coral_loss(const Value& z_src, const Value& z_tgt) {
    require_pair(z_src, z_tgt, "coral_loss");
    if (z_src.rows() < 2 || z_tgt.rows() < 2) {
        throw ShapeMismatch("coral_loss: covariance needs at least 2 rows per batch");
    }
    const double p = static_cast<double>(z_src.cols());
    Value diff = ad::sub(covariance(z_src), covariance(z_tgt));
    return ad::scalar_mul(ad::sum(squared(diff)), 1.0 / (4.0 * p * p));
}

namespace {

struct RowPair {
    std::size_t i;
    std::size_t j;
};

// Pairs of rows of the stacked batch [x; y] whose distances form the median.
std::vector<RowPair> median_pairs(const Matrix& x, const Matrix& y) {
    std::vector<const double*> rows;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        rows.push_back(x.row(i).data());
    }
    for (std::size_t i = 0; i < y.rows(); ++i) {
        rows.push_back(y.row(i).data());
    }
    const std::size_t p = x.cols();
    std::vector<std::pair<double, RowPair>> d;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < p; ++c) {
                const double e = rows[i][c] - rows[j][c];
                s += e * e;
            }
            d.push_back({s, {i, j}});
        }
    }
    if (d.empty()) {
        return {};
    }
    auto less = [](const auto& a, const auto& b) { return a.first < b.first; };
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end(), less);
    std::vector<RowPair> out{mid->second};
    if (d.size() % 2 == 0) {
        out.push_back(std::max_element(d.begin(), mid, less)->second);
    }
    return out;
}

}  // namespace

double median_pairwise_distance(const Matrix& x, const Matrix& y) {
    const std::vector<RowPair> pairs = median_pairs(x, y);
    if (pairs.empty()) {
        return 0.0;
    }
    auto row = [&](std::size_t k) { return k < x.rows() ? x.row(k) : y.row(k - x.rows()); };
    double total = 0.0;
    for (const RowPair& pr : pairs) {
        const auto a = row(pr.i);
        const auto b = row(pr.j);
        double s = 0.0;
        for (std::size_t c = 0; c < a.size(); ++c) {
            s += (a[c] - b[c]) * (a[c] - b[c]);
        }
        total += std::sqrt(s);
    }
    return total / static_cast<double>(pairs.size());
}

Value mmd_loss(const Value& z_src, const Value& z_tgt, MmdBandwidth bandwidth) {
    require_pair(z_src, z_tgt, "mmd_loss");
    ad::Tape& tape = *z_src.tape();
    Value sigma;
    if (bandwidth.median && median_pairwise_distance(z_src.data(), z_tgt.data()) > 0.0) {
        // The bandwidth stays a function of the batch, so the gradient is that of the loss as evaluated.
        const std::size_t bs = z_src.rows();
        auto row = [&](std::size_t k) {
            const std::size_t idx[1] = {k < bs ? k : k - bs};
            return ad::gather_rows(k < bs ? z_src : z_tgt, idx);
        };
        std::vector<Value> dists;
        for (const RowPair& pr : median_pairs(z_src.data(), z_tgt.data())) {
            dists.push_back(ad::sqrt(ad::sum(squared(ad::sub(row(pr.i), row(pr.j))))));
        }
        sigma = dists.size() == 1 ? dists[0] : ad::scalar_mul(ad::add(dists[0], dists[1]), 0.5);
    } else {
        const double s = bandwidth.median ? 1.0 : bandwidth.sigma;
        if (!(s > 0.0)) {
            throw OutOfRange("mmd_loss: bandwidth must be > 0");
        }
        sigma = tape.constant(Matrix(1, 1, s));
    }
    Value coef = ad::div(tape.constant(Matrix(1, 1, -0.5)), squared(sigma));
    auto kernel_mean = [&](const Value& a, const Value& b) {
        return ad::mean(ad::exp(ad::elementwise_mul(ad::pairwise_sq_dist(a, b), coef)));
    };
    Value kss = kernel_mean(z_src, z_src);
    Value ktt = kernel_mean(z_tgt, z_tgt);
    Value kst = kernel_mean(z_src, z_tgt);
    return ad::sub(ad::add(kss, ktt), ad::scalar_mul(kst, 2.0));
}

AlignmentTerms dare_gram_loss(const Value& z_src, const Value& z_tgt, const AlignmentConfig& cfg) {
    cfg.validate();
    require_pair(z_src, z_tgt, "dare_gram_loss");
    Value gs = ad::tikhonov(z_src, 0.0);
    Value gt = ad::tikhonov(z_tgt, 0.0);
    auto ss = std::make_shared<const EigenResult>(symmetric_eigen(gs.data()));
    auto st = std::make_shared<const EigenResult>(symmetric_eigen(gt.data()));
    const std::size_t ks = energy_rank(ss->eigenvalues, cfg.dare_gram_energy_threshold);
    const std::size_t kt = energy_rank(st->eigenvalues, cfg.dare_gram_energy_threshold);
    Value ps = ad::pinv_from_spectrum(gs, ss, ks);
    Value pt = ad::pinv_from_spectrum(gt, st, kt);
    Value angle = angle_loss(ps, pt, Similarity::cosine, cfg.epsilon_norm);
    if (ks == 0) {
        return {angle, gs.tape()->constant(Matrix(1, 1))};
    }
    Value diff = ad::sub(ad::top_eigenvalues(gs, ss, ks), ad::top_eigenvalues(gt, st, ks));
    return {angle, ad::mean(squared(diff))};
}

}  // namespace tikuda::align
