#include "doctest.h"
#include "test_util.hpp"

#include "tikuda/autodiff.hpp"
#include "tikuda/errors.hpp"
#include "tikuda/linalg.hpp"

#include <cmath>
#include <memory>

using namespace tikuda;
using namespace tikuda::ad;
using tikuda::testing::gradient_error;
using tikuda::testing::random_matrix;
using tikuda::testing::relative_frobenius;

namespace {

// Reduces a matrix-valued op to a scalar with fixed random weights so every output entry matters.
Value weigh(Tape& t, const Value& v, std::uint64_t seed) {
    return sum(elementwise_mul(v, t.constant(random_matrix(v.rows(), v.cols(), seed))));
}

Matrix positive_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrix m = random_matrix(r, c, seed);
    for (double& v : m.flat()) {
        v = 0.5 + std::abs(v);
    }
    return m;
}

constexpr double kGradTol = 1e-6;

}  // namespace

TEST_CASE("closed-form values and derivatives") {
    Tape t;
    Value x = t.variable(Matrix(1, 1, 0.0));
    Value s = sigmoid(x);
    CHECK(s.item() == doctest::Approx(0.5));
    t.backward(s);
    CHECK(x.grad()(0, 0) == doctest::Approx(0.25));

    Tape t2;
    Value y = t2.variable(Matrix(1, 1, -1.0));
    Value l = leaky_relu(y, 0.2);
    CHECK(l.item() == doctest::Approx(-0.2));
    t2.backward(l);
    CHECK(y.grad()(0, 0) == doctest::Approx(0.2));
}

TEST_CASE("backward on simple losses") {
    SUBCASE("sum gives all-ones") {
        Tape t;
        Value w = t.variable(random_matrix(3, 4, 1));
        t.backward(sum(w));
        for (double g : w.grad().flat()) {
            CHECK(g == 1.0);
        }
    }
    SUBCASE("half squared norm gives the input back") {
        Tape t;
        const Matrix w0 = random_matrix(3, 4, 2);
        Value w = t.variable(w0);
        t.backward(scalar_mul(sum(elementwise_mul(w, w)), 0.5));
        CHECK(max_abs_diff(w.grad(), w0) < 1e-15);
    }
    SUBCASE("non-scalar loss is rejected") {
        Tape t;
        Value w = t.variable(random_matrix(2, 2, 3));
        CHECK_THROWS_AS(t.backward(w), NotScalar);
    }
    SUBCASE("grad is zero before backward") {
        Tape t;
        Value w = t.variable(random_matrix(2, 3, 4));
        CHECK(w.grad() == Matrix(2, 3));
    }
}

TEST_CASE("stop_gradient") {
    Tape t;
    Value x = t.variable(Matrix(1, 1, 2.0));
    Value y = elementwise_mul(stop_gradient(x), x);
    CHECK(y.item() == 4.0);
    t.backward(y);
    CHECK(x.grad()(0, 0) == 2.0);
}

TEST_CASE("shape errors name both shapes") {
    Tape t;
    Value a = t.variable(Matrix(2, 3));
    Value b = t.variable(Matrix(2, 3));
    try {
        (void)matmul(a, b);
        FAIL("expected ShapeMismatch");
    } catch (const ShapeMismatch& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, t.variable(Matrix(3, 2))), ShapeMismatch);
    CHECK_THROWS_AS(concat_cols(std::vector<Value>{a, t.variable(Matrix(3, 1))}), ShapeMismatch);
    CHECK_THROWS_AS(slice_cols(a, 2, 2), ShapeMismatch);
}

TEST_CASE("finite differences: binary and structural ops") {
    const Matrix a = random_matrix(3, 4, 10);
    const Matrix b = random_matrix(4, 2, 11);
    const Matrix c = random_matrix(3, 4, 12);
    const Matrix row = random_matrix(1, 4, 13);
    const Matrix col = random_matrix(3, 1, 14);

    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, matmul(v[0], v[1]), 100); }, {a, b}) <
          kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, add(v[0], v[1]), 101); }, {a, c}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, sub(v[0], v[1]), 102); }, {a, row}) <
          kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, elementwise_mul(v[0], v[1]), 103); },
                         {a, col}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, div(v[0], v[1]), 104); },
                         {a, positive_matrix(3, 4, 15)}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, scalar_mul(v[0], -1.7), 105); }, {a}) <
          kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, add_scalar(v[0], 0.3), 106); }, {a}) <
          kGradTol);
    CHECK(gradient_error(
              [](Tape& t, const auto& v) {
                  return weigh(t, concat_cols(std::vector<Value>{v[0], v[1], v[0]}), 107);
              },
              {a, col}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, slice_cols(v[0], 1, 2), 108); }, {a}) <
          kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, transpose(v[0]), 109); }, {a}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, reshape(v[0], 6, 2), 110); }, {a}) <
          kGradTol);
}

TEST_CASE("finite differences: elementwise nonlinearities") {
    const Matrix a = random_matrix(3, 4, 20);
    const Matrix pos = positive_matrix(3, 4, 21);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, sigmoid(v[0]), 200); }, {a}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, tanh(v[0]), 201); }, {a}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, leaky_relu(v[0], 0.2), 202); }, {a}) <
          kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, exp(v[0]), 203); }, {a}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, log(v[0]), 204); }, {pos}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, sqrt(v[0]), 205); }, {pos}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, clamp(v[0], -0.5, 0.5), 206); }, {a}) <
          kGradTol);
}

TEST_CASE("finite differences: reductions") {
    const Matrix a = random_matrix(4, 3, 30);
    CHECK(gradient_error([](Tape&, const auto& v) { return sum(v[0]); }, {a}) < kGradTol);
    CHECK(gradient_error([](Tape&, const auto& v) { return mean(v[0]); }, {a}) < kGradTol);
    CHECK(gradient_error([](Tape&, const auto& v) { return l1_norm(v[0]); }, {a}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, l2_norm_cols(v[0]), 300); }, {a}) <
          kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, sum_rows(v[0]), 301); }, {a}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, sum_cols(v[0]), 302); }, {a}) < kGradTol);
}

TEST_CASE("finite differences: graph ops") {
    const Matrix scores = random_matrix(7, 1, 40);
    const std::vector<std::size_t> group{0, 0, 1, 1, 1, 2, 0};
    CHECK(gradient_error([&](Tape& t, const auto& v) { return weigh(t, softmax_over_group(v[0], group), 400); },
                         {scores}) < kGradTol);

    const Matrix a = random_matrix(4, 3, 41);
    const std::vector<std::size_t> idx{3, 0, 0, 2, 1};
    CHECK(gradient_error([&](Tape& t, const auto& v) { return weigh(t, gather_rows(v[0], idx), 401); }, {a}) <
          kGradTol);
    const Matrix m = random_matrix(5, 3, 42);
    CHECK(gradient_error([&](Tape& t, const auto& v) { return weigh(t, scatter_add_rows(v[0], idx, 4), 402); },
                         {m}) < kGradTol);
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, pairwise_sq_dist(v[0], v[1]), 403); },
                         {a, m}) < kGradTol);
}

TEST_CASE("softmax_over_group normalises each group") {
    Tape t;
    Value s = t.constant(random_matrix(6, 1, 50));
    const std::vector<std::size_t> group{1, 0, 1, 0, 2, 1};
    const Matrix y = softmax_over_group(s, group).data();
    double sums[3] = {0, 0, 0};
    for (std::size_t i = 0; i < 6; ++i) {
        sums[group[i]] += y(i, 0);
    }
    for (double v : sums) {
        CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("gru_gates matches the composed ops") {
    const std::size_t d = 3;
    const Matrix gi = random_matrix(5, 3 * d, 60);
    const Matrix gh = random_matrix(5, 3 * d, 61);
    const Matrix h = random_matrix(5, d, 62);
    auto composed = [d](const Value& a, const Value& b, const Value& hp) {
        Value r = sigmoid(add(slice_cols(a, 0, d), slice_cols(b, 0, d)));
        Value z = sigmoid(add(slice_cols(a, d, d), slice_cols(b, d, d)));
        Value n = tanh(add(slice_cols(a, 2 * d, d), elementwise_mul(r, slice_cols(b, 2 * d, d))));
        return add(n, elementwise_mul(z, sub(hp, n)));
    };
    Tape t;
    const Value a = t.variable(gi);
    const Value b = t.variable(gh);
    const Value hp = t.variable(h);
    CHECK(tikuda::testing::relative_frobenius(gru_gates(a, b, hp).data(), composed(a, b, hp).data()) < 1e-15);
    CHECK(gradient_error([](Tape& tp, const auto& v) { return weigh(tp, gru_gates(v[0], v[1], v[2]), 63); },
                         {gi, gh, h}) < kGradTol);
    CHECK_THROWS_AS(gru_gates(a, b, t.variable(Matrix(5, 2))), ShapeMismatch);
}

TEST_CASE("spd_inverse adjoint") {
    const Matrix z = random_matrix(6, 4, 60);
    auto builder = [](Tape& t, const auto& v) { return weigh(t, spd_inverse(tikhonov(v[0], 0.7)), 600); };
    CHECK(gradient_error(builder, {z}) < kGradTol);
}

TEST_CASE("tikhonov_inverse matches the composed ops") {
    const Matrix z = random_matrix(5, 7, 61);
    Tape a;
    Value za = a.variable(z);
    Value la = weigh(a, tikhonov_inverse(za, 0.4), 610);
    a.backward(la);
    Tape b;
    Value zb = b.variable(z);
    Value lb = weigh(b, spd_inverse(tikhonov(zb, 0.4)), 610);
    b.backward(lb);
    CHECK(la.item() == doctest::Approx(lb.item()).epsilon(1e-12));
    CHECK(max_abs_diff(za.grad(), zb.grad()) < 1e-10 * std::max(1.0, zb.grad().max_abs()));
    CHECK(gradient_error([](Tape& t, const auto& v) { return weigh(t, tikhonov_inverse(v[0], 0.4), 611); }, {z}) <
          kGradTol);
}

TEST_CASE("lambda_max adjoint") {
    const PowerIterationOptions tight{5000, 1e-15, 3};
    Matrix z = random_matrix(9, 5, 70);
    for (double& v : z.flat()) {
        v += 0.5;
    }
    CHECK(gradient_error([&](Tape&, const auto& v) { return lambda_max(tikhonov(v[0], 0.5), tight); }, {z}) <
          kGradTol);

    SUBCASE("agrees with differentiating the unrolled iteration") {
        Tape a;
        Value za = a.variable(z);
        Value lam = lambda_max(tikhonov(za, 0.5), tight);
        a.backward(lam);

        Tape b;
        Value zb = b.variable(z);
        Value g = tikhonov(zb, 0.5);
        Value v = b.constant(Matrix(5, 1, 1.0));
        for (int it = 0; it < 300; ++it) {
            Value w = matmul(g, v);
            v = div(w, l2_norm_cols(w));
        }
        Value rq = sum(elementwise_mul(v, matmul(g, v)));
        b.backward(rq);
        CHECK(rq.item() == doctest::Approx(lam.item()).epsilon(1e-10));
        CHECK(max_abs_diff(za.grad(), zb.grad()) < 1e-6 * std::max(1.0, zb.grad().max_abs()));
    }
}

TEST_CASE("pinv_from_spectrum and top_eigenvalues adjoints") {
    // Rank-deficient Gram (b < p) with energy truncation inside the positive spectrum.
    const Matrix z = random_matrix(4, 6, 80);
    auto spectrum_of = [](const Matrix& g) { return std::make_shared<const EigenResult>(jacobi_eigen(g)); };
    const Matrix g0 = kernels::gram(z);
    const std::size_t kept = energy_rank(jacobi_eigen(g0).eigenvalues, 0.9);
    REQUIRE(kept >= 1);
    REQUIRE(kept < 4);

    auto pinv_builder = [&](Tape& t, const auto& v) {
        Value g = tikhonov(v[0], 0.0);
        return weigh(t, pinv_from_spectrum(g, spectrum_of(g.data()), kept), 800);
    };
    CHECK(gradient_error(pinv_builder, {z}) < 1e-5);

    auto full_builder = [&](Tape& t, const auto& v) {
        Value g = tikhonov(v[0], 0.0);
        return weigh(t, pinv_from_spectrum(g, spectrum_of(g.data()), 4), 801);
    };
    CHECK(gradient_error(full_builder, {z}) < 1e-5);

    auto eig_builder = [&](Tape& t, const auto& v) {
        Value g = tikhonov(v[0], 0.0);
        return weigh(t, top_eigenvalues(g, spectrum_of(g.data()), 3), 802);
    };
    CHECK(gradient_error(eig_builder, {z}) < kGradTol);

    SUBCASE("full rank pinv equals the inverse") {
        const Matrix zz = random_matrix(10, 4, 81);
        Tape t;
        Value g = t.constant(kernels::gram(zz));
        Value p = pinv_from_spectrum(g, spectrum_of(g.data()), 4);
        CHECK(relative_frobenius(p.data(), tikuda::spd_inverse(SpdMatrix(g.data()))) < 1e-10);
    }
}

TEST_CASE("backward is deterministic") {
    auto run = [] {
        Tape t;
        Value z = t.variable(random_matrix(8, 5, 90));
        Value loss = add(weigh(t, tikhonov_inverse(z, 1.0), 900), lambda_max(tikhonov(z, 1.0), {}));
        t.backward(loss);
        return z.grad();
    };
    CHECK(run() == run());
}
