#include "doctest.h"
#include "test_util.hpp"

#include "tikuda/alignment.hpp"
#include "tikuda/errors.hpp"
#include "tikuda/kernels.hpp"
#include "tikuda/linalg.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

using namespace tikuda;
using namespace tikuda::align;
using ad::Tape;
using ad::Value;
using tikuda::testing::gradient_error;
using tikuda::testing::random_matrix;

namespace {

Matrix features(std::size_t b, std::size_t p, std::uint64_t seed, double offset = 0.5) {
    Matrix z = random_matrix(b, p, seed);
    for (double& v : z.flat()) {
        v += offset;
    }
    return z;
}

AlignmentConfig tight_config(Similarity s = Similarity::haversine) {
    AlignmentConfig cfg;
    cfg.similarity = s;
    cfg.power = {5000, 1e-15, 0};
    return cfg;
}

// Straight-line reimplementation of the angle term on plain matrices.
double angle_oracle(const Matrix& a, const Matrix& b, bool haversine) {
    double loss = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
        double dot = 0.0;
        double na = 0.0;
        double nb = 0.0;
        for (std::size_t r = 0; r < a.rows(); ++r) {
            dot += a(r, c) * b(r, c);
            na += a(r, c) * a(r, c);
            nb += b(r, c) * b(r, c);
        }
        double cos = dot / (std::sqrt(na) * std::sqrt(nb));
        cos = std::max(-1.0, std::min(1.0, cos));
        const double m = haversine ? 1.0 - std::sqrt((1.0 - cos) / 2.0) : cos;
        loss += 1.0 - m;
    }
    return loss;
}

Matrix covariance_oracle(const Matrix& z) {
    const std::size_t b = z.rows();
    const std::size_t p = z.cols();
    std::vector<double> mu(p, 0.0);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            mu[c] += z(r, c) / static_cast<double>(b);
        }
    }
    Matrix cov(p, p);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < b; ++r) {
                s += (z(r, i) - mu[i]) * (z(r, j) - mu[j]);
            }
            cov(i, j) = s / static_cast<double>(b - 1);
        }
    }
    return cov;
}

double mmd_oracle(const Matrix& x, const Matrix& y, double sigma) {
    auto k = [&](const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
        double d = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
            d += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
        }
        return std::exp(-d / (2.0 * sigma * sigma));
    };
    auto avg = [&](const Matrix& a, const Matrix& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            for (std::size_t j = 0; j < b.rows(); ++j) {
                s += k(a, i, b, j);
            }
        }
        return s / static_cast<double>(a.rows() * b.rows());
    };
    return avg(x, x) + avg(y, y) - 2.0 * avg(x, y);
}

Matrix permute_rows(const Matrix& z, const std::vector<std::size_t>& perm) {
    Matrix out(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c = 0; c < z.cols(); ++c) {
            out(r, c) = z(perm[r], c);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("tikhonov_inverse closed forms") {
    Tape t;
    CHECK(max_abs_diff(align::tikhonov_inverse(t.constant(Matrix(2, 2)), 0.5).data(), Matrix{{2, 0}, {0, 2}}) < 1e-14);
    CHECK(max_abs_diff(align::tikhonov_inverse(t.constant(Matrix::identity(2)), 1.0).data(), Matrix{{0.5, 0}, {0, 0.5}}) <
          1e-14);
    CHECK(max_abs_diff(align::tikhonov_inverse(t.constant(Matrix{{2, 0}, {0, 0}}), 1.0).data(),
                       Matrix{{0.2, 0}, {0, 1.0}}) < 1e-14);
    CHECK_THROWS_AS(align::tikhonov_inverse(t.constant(Matrix(2, 2)), 0.0), OutOfRange);
}

TEST_CASE("haversine similarity values") {
    Tape t;
    Value c = t.constant(Matrix{{1.0, -1.0, 0.0}});
    const Matrix hs = haversine_similarity(c).data();
    CHECK(hs(0, 0) == 1.0);
    CHECK(hs(0, 1) == doctest::Approx(0.0));
    CHECK(hs(0, 2) == doctest::Approx(1.0 - std::sqrt(0.5)).epsilon(1e-12));
    CHECK(hs(0, 2) == doctest::Approx(0.292893).epsilon(1e-6));
}

TEST_CASE("haversine penalises at least half of cosine on a grid") {
    Tape t;
    Matrix phis(1, 1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        phis(0, i) = std::numbers::pi * static_cast<double>(i) / 999.0;
    }
    Matrix cosines = phis;
    for (double& v : cosines.flat()) {
        v = std::cos(v);
    }
    const Matrix hs = haversine_similarity(t.constant(cosines)).data();
    double prev = 2.0;
    for (std::size_t i = 0; i < 1000; ++i) {
        const double lhs = 1.0 - hs(0, i);
        const double rhs = (1.0 - cosines(0, i)) / 2.0;
        CHECK(lhs >= rhs);
        // sqrt(x) = x only at x = 0 and x = 1, i.e. at both ends of [0, π].
        if (i > 0 && i < 999) {
            CHECK(lhs > rhs);
        }
        CHECK(hs(0, i) < prev);
        prev = hs(0, i);
    }
}

TEST_CASE("angle_loss") {
    Tape t;
    SUBCASE("identical inputs give zero") {
        const Matrix g = random_matrix(6, 6, 1);
        CHECK(angle_loss(t.constant(g), t.constant(g), Similarity::haversine).item() == 0.0);
        CHECK(angle_loss(t.constant(g), t.constant(g), Similarity::cosine).item() == 0.0);
    }
    SUBCASE("orthogonal columns") {
        Value a = t.constant(Matrix::identity(2));
        Value b = t.constant(Matrix{{0, 1}, {1, 0}});
        CHECK(angle_loss(a, b, Similarity::haversine).item() == doctest::Approx(1.414214).epsilon(1e-6));
        CHECK(angle_loss(a, b, Similarity::cosine).item() == doctest::Approx(2.0));
    }
    SUBCASE("matches the scalar oracle") {
        const Matrix a = random_matrix(8, 8, 2);
        const Matrix b = random_matrix(8, 8, 3);
        CHECK(std::abs(angle_loss(t.constant(a), t.constant(b), Similarity::haversine).item() -
                       angle_oracle(a, b, true)) < 1e-10);
        CHECK(std::abs(angle_loss(t.constant(a), t.constant(b), Similarity::cosine).item() -
                       angle_oracle(a, b, false)) < 1e-10);
    }
}

TEST_CASE("scale_loss") {
    Tape t;
    const PowerIterationOptions power{};
    SUBCASE("identical batches") {
        const Matrix z = features(10, 6, 4);
        CHECK(scale_loss(t.constant(z), t.constant(z), 1.0, power).item() == 0.0);
    }
    SUBCASE("constructed spectra") {
        // α = 1: diag(√2, 1) gives Gram spectrum {3, 2}; diag(2, 1) gives {5, 2}.
        Value zs = t.constant(Matrix{{std::sqrt(2.0), 0}, {0, 1}});
        Value zt = t.constant(Matrix{{2, 0}, {0, 1}});
        CHECK(scale_loss(zs, zt, 1.0, power).item() == doctest::Approx(4.0).epsilon(1e-6));
    }
    SUBCASE("matches the Jacobi spectrum") {
        // A common feature mean gives the Gram matrix a well-separated leading eigenvalue.
        const Matrix zs = features(32, 8, 5, 1.0);
        const Matrix zt = features(32, 8, 6, 1.5);
        const double ls = jacobi_eigen(kernels::gram(zs, 1.0)).eigenvalues.front();
        const double lt = jacobi_eigen(kernels::gram(zt, 1.0)).eigenvalues.front();
        const double expected = (ls - lt) * (ls - lt);
        const double got = scale_loss(t.constant(zs), t.constant(zt), 1.0, power).item();
        CHECK(std::abs(got - expected) < 1e-3 * expected);
    }
}

TEST_CASE("tikuda_loss") {
    Tape t;
    const AlignmentConfig cfg;
    SUBCASE("identical batches give zero") {
        const Matrix z = features(8, 5, 7);
        AlignmentTerms terms = tikuda_loss(t.constant(z), t.constant(z), cfg);
        CHECK(terms.angle.item() == 0.0);
        CHECK(terms.scale.item() == 0.0);
    }
    SUBCASE("row permutation of either batch") {
        const Matrix zs = features(8, 5, 8);
        const Matrix zt = features(7, 5, 9, 1.0);
        const std::vector<std::size_t> perm{3, 6, 0, 2, 5, 1, 4};
        AlignmentTerms a = tikuda_loss(t.constant(zs), t.constant(zt), cfg);
        AlignmentTerms b = tikuda_loss(t.constant(zs), t.constant(permute_rows(zt, perm)), cfg);
        CHECK(b.angle.item() == doctest::Approx(a.angle.item()).epsilon(1e-10));
        CHECK(b.scale.item() == doctest::Approx(a.scale.item()).epsilon(1e-6));
    }
    SUBCASE("rotation is detected") {
        const Matrix zs = features(10, 4, 10);
        const double th = 0.7;
        Matrix r = Matrix::identity(4);
        r(0, 0) = std::cos(th);
        r(0, 1) = -std::sin(th);
        r(1, 0) = std::sin(th);
        r(1, 1) = std::cos(th);
        AlignmentTerms terms = tikuda_loss(t.constant(zs), t.constant(kernels::matmul(zs, r)), cfg);
        CHECK(terms.angle.item() > 1e-3);
        CHECK(terms.scale.item() >= 0.0);
    }
    SUBCASE("batches may differ in size but not in width") {
        CHECK_NOTHROW(tikuda_loss(t.constant(features(5, 3, 11)), t.constant(features(3, 3, 12)), cfg));
        CHECK_THROWS_AS(tikuda_loss(t.constant(features(5, 3, 11)), t.constant(features(5, 4, 12)), cfg),
                        DimensionMismatch);
    }
}

TEST_CASE("coral_loss") {
    Tape t;
    const Matrix z = random_matrix(6, 4, 13);
    CHECK(coral_loss(t.constant(z), t.constant(z)).item() == 0.0);

    // p = 1, samples {1, 2, 3}: variance 1, doubled batch variance 4.
    Value a = t.constant(Matrix{{1}, {2}, {3}});
    Value b = t.constant(Matrix{{2}, {4}, {6}});
    CHECK(coral_loss(a, b).item() == doctest::Approx(9.0 / 4.0));

    const Matrix zs = random_matrix(7, 5, 14);
    const Matrix zt = random_matrix(6, 5, 15, 2.0);
    const Matrix diff = covariance_oracle(zs) - covariance_oracle(zt);
    const double expected = diff.frobenius_norm() * diff.frobenius_norm() / (4.0 * 25.0);
    CHECK(std::abs(coral_loss(t.constant(zs), t.constant(zt)).item() - expected) < 1e-10);
    CHECK_THROWS_AS(coral_loss(t.constant(Matrix(1, 3)), t.constant(Matrix(4, 3))), ShapeMismatch);
}

TEST_CASE("mmd_loss") {
    Tape t;
    const Matrix z = random_matrix(6, 3, 16);
    CHECK(mmd_loss(t.constant(z), t.constant(z)).item() == 0.0);

    const double d = 1.3;
    const double sigma = 0.7;
    Value x = t.constant(Matrix{{0.0, 0.0}});
    Value y = t.constant(Matrix{{d, 0.0}});
    CHECK(mmd_loss(x, y, MmdBandwidth::fixed(sigma)).item() ==
          doctest::Approx(2.0 * (1.0 - std::exp(-d * d / (2 * sigma * sigma)))).epsilon(1e-12));

    const Matrix zs = random_matrix(6, 4, 17);
    const Matrix zt = random_matrix(5, 4, 18, 1.5);
    const double med = median_pairwise_distance(zs, zt);
    CHECK(std::abs(mmd_loss(t.constant(zs), t.constant(zt)).item() - mmd_oracle(zs, zt, med)) < 1e-12);
    CHECK(mmd_loss(t.constant(zs), t.constant(zt)).item() >= 0.0);
}

TEST_CASE("median_pairwise_distance") {
    // Points 0, 1, 3 on a line: distances {1, 3, 2}.
    CHECK(median_pairwise_distance(Matrix{{0.0}, {1.0}}, Matrix{{3.0}}) == 2.0);
    // Points 0, 1, 3, 7: distances {1, 3, 7, 2, 6, 4} -> median of even count is (3 + 4)/2.
    CHECK(median_pairwise_distance(Matrix{{0.0}, {1.0}}, Matrix{{3.0}, {7.0}}) == 3.5);
}

TEST_CASE("dare_gram_loss") {
    Tape t;
    AlignmentConfig cfg;
    SUBCASE("identical batches give zero") {
        const Matrix z = features(6, 8, 19);
        AlignmentTerms terms = dare_gram_loss(t.constant(z), t.constant(z), cfg);
        CHECK(terms.angle.item() == 0.0);
        CHECK(terms.scale.item() == 0.0);
    }
    SUBCASE("threshold 1 on a full-rank Gram approaches cosine TikUDA at small alpha") {
        cfg.dare_gram_energy_threshold = 1.0;
        const Matrix zs = random_matrix(20, 4, 20);
        const Matrix zt = random_matrix(20, 4, 21, 1.3);
        AlignmentConfig tik = cfg;
        tik.alpha = 1e-6;
        tik.similarity = Similarity::cosine;
        const double dare = dare_gram_loss(t.constant(zs), t.constant(zt), cfg).angle.item();
        const double tikuda = tikuda_loss(t.constant(zs), t.constant(zt), tik).angle.item();
        CHECK(std::abs(dare - tikuda) < 1e-3);
    }
    SUBCASE("matches a reconstruction from the Jacobi spectrum") {
        const Matrix zs = features(6, 8, 22);
        const Matrix zt = features(6, 8, 23, 0.9);
        auto oracle_pinv = [&](const Matrix& z, std::size_t& kept, std::vector<double>& eig) {
            const EigenResult e = jacobi_eigen(kernels::gram(z));
            kept = energy_rank(e.eigenvalues, cfg.dare_gram_energy_threshold);
            eig = e.eigenvalues;
            Matrix p(8, 8);
            for (std::size_t k = 0; k < kept; ++k) {
                for (std::size_t i = 0; i < 8; ++i) {
                    for (std::size_t j = 0; j < 8; ++j) {
                        p(i, j) += e.eigenvectors(i, k) * e.eigenvectors(j, k) / e.eigenvalues[k];
                    }
                }
            }
            return p;
        };
        std::size_t ks = 0;
        std::size_t kt = 0;
        std::vector<double> es;
        std::vector<double> et;
        const Matrix ps = oracle_pinv(zs, ks, es);
        const Matrix pt = oracle_pinv(zt, kt, et);
        double scale = 0.0;
        for (std::size_t k = 0; k < ks; ++k) {
            scale += (es[k] - et[k]) * (es[k] - et[k]) / static_cast<double>(ks);
        }
        AlignmentTerms terms = dare_gram_loss(t.constant(zs), t.constant(zt), cfg);
        CHECK(terms.angle.item() == doctest::Approx(angle_oracle(ps, pt, false)).epsilon(1e-8));
        CHECK(terms.scale.item() == doctest::Approx(scale).epsilon(1e-8));
    }
}

TEST_CASE("config validation") {
    AlignmentConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(cfg.validate(), OutOfRange);
    cfg.alpha = 1.0;
    cfg.dare_gram_energy_threshold = 1.5;
    CHECK_THROWS_AS(cfg.validate(), OutOfRange);
    CHECK(parse_similarity("cosine") == Similarity::cosine);
    CHECK_THROWS_AS(parse_similarity("euclid"), ConfigError);
}

TEST_CASE("finite differences through every alignment loss") {
    const Matrix zs = features(6, 5, 30);
    const Matrix zt = features(5, 5, 31, 0.9);
    const Matrix wide_s = features(6, 8, 32);
    const Matrix wide_t = features(6, 8, 33, 0.8);
    constexpr double tol = 1e-4;

    for (Similarity s : {Similarity::haversine, Similarity::cosine}) {
        const AlignmentConfig cfg = tight_config(s);
        auto total = [cfg](Tape&, const auto& v) {
            AlignmentTerms terms = tikuda_loss(v[0], v[1], cfg);
            return ad::add(terms.angle, ad::scalar_mul(terms.scale, 1e-2));
        };
        CHECK(gradient_error(total, {zs, zt}) < tol);
        CHECK(gradient_error(total, {wide_s, wide_t}) < tol);
    }
    CHECK(gradient_error([](Tape&, const auto& v) { return coral_loss(v[0], v[1]); }, {zs, zt}) < tol);
    CHECK(gradient_error([](Tape&, const auto& v) { return mmd_loss(v[0], v[1]); }, {zs, zt}) < tol);
    const AlignmentConfig cfg = tight_config();
    auto dare = [cfg](Tape&, const auto& v) {
        AlignmentTerms terms = dare_gram_loss(v[0], v[1], cfg);
        return ad::add(terms.angle, ad::scalar_mul(terms.scale, 1e-2));
    };
    CHECK(gradient_error(dare, {zs, zt}) < tol);
    CHECK(gradient_error(dare, {wide_s, wide_t}) < tol);
}
