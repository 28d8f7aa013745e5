#pragma once

#include "tikuda/autodiff.hpp"
#include "tikuda/kernels.hpp"
#include "tikuda/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

namespace tikuda::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.flat()) {
        v = n(gen);
    }
    return m;
}

/// Well-conditioned SPD matrix: BᵀB/n + shift·I.
inline Matrix random_spd(std::size_t n, std::uint64_t seed, double shift = 0.5) {
    const Matrix b = random_matrix(n + 4, n, seed);
    Matrix a = kernels::gram(b, 0.0);
    a *= 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        a(i, i) += shift;
    }
    return a;
}

/// Tikhonov matrix ZᵀZ/b + alpha·I of a feature batch whose entries have a common
/// positive mean, the shape of matrix the alignment losses feed to power iteration.
inline Matrix random_feature_gram(std::size_t p, std::uint64_t seed, double alpha = 0.1) {
    Matrix z = random_matrix(2 * p + 2, p, seed);
    for (double& v : z.flat()) {
        v += 0.5;
    }
    Matrix g = kernels::gram(z, 0.0);
    g *= 1.0 / static_cast<double>(z.rows());
    for (std::size_t i = 0; i < p; ++i) {
        g(i, i) += alpha;
    }
    return g;
}

inline Matrix random_symmetric(std::size_t n, std::uint64_t seed) {
    const Matrix b = random_matrix(n, n, seed);
    return symmetrize(b);
}

inline double relative_frobenius(const Matrix& a, const Matrix& b) {
    return (a - b).frobenius_norm() / std::max(1e-300, b.frobenius_norm());
}

/// Builds a scalar loss on a fresh tape from leaf variables.
using LossBuilder = std::function<ad::Value(ad::Tape&, const std::vector<ad::Value>&)>;

/// Largest |analytic - central difference| / max(1, |central difference|) over every input entry.
inline double gradient_error(const LossBuilder& f, const std::vector<Matrix>& inputs, double eps = 1e-5) {
    std::vector<Matrix> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Value> leaves;
        for (const Matrix& m : inputs) {
            leaves.push_back(tape.variable(m));
        }
        ad::Value loss = f(tape, leaves);
        tape.backward(loss);
        for (const ad::Value& v : leaves) {
            analytic.push_back(v.grad());
        }
    }
    auto eval = [&](const std::vector<Matrix>& xs) {
        ad::Tape tape;
        std::vector<ad::Value> leaves;
        for (const Matrix& m : xs) {
            leaves.push_back(tape.variable(m));
        }
        return f(tape, leaves).item();
    };
    double worst = 0.0;
    std::vector<Matrix> xs = inputs;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        for (std::size_t i = 0; i < xs[k].size(); ++i) {
            const double orig = xs[k].flat()[i];
            xs[k].flat()[i] = orig + eps;
            const double up = eval(xs);
            xs[k].flat()[i] = orig - eps;
            const double down = eval(xs);
            xs[k].flat()[i] = orig;
            const double fd = (up - down) / (2.0 * eps);
            worst = std::max(worst, std::abs(analytic[k].flat()[i] - fd) / std::max(1.0, std::abs(fd)));
        }
    }
    return worst;
}

}  // namespace tikuda::testing
