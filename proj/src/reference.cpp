#include "tikuda/reference.hpp"

#include <cmath>
#include <string>

namespace tikuda::reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeMismatch("reference::matmul: " + a.shape_string() + " times " + b.shape_string());
    }
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                s += a(i, k) * b(k, j);
            }
            c(i, j) = s;
        }
    }
    return c;
}

Matrix gram(const Matrix& z, double ridge) {
    const std::size_t p = z.cols();
    Matrix g(p, p);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < z.rows(); ++r) {
                s += z(r, i) * z(r, j);
            }
            g(i, j) = s + (i == j ? ridge : 0.0);
        }
    }
    return g;
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            y[i] += a(i, j) * x[j];
        }
    }
    return y;
}

Matrix cholesky_lower(const Matrix& a) {
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                s -= l(i, k) * l(j, k);
            }
            if (i == j) {
                if (!(s > 0.0)) {
                    throw NotPositiveDefinite("reference::cholesky_lower: pivot " + std::to_string(i) +
                                              " is not positive");
                }
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

Matrix spd_inverse(const Matrix& a) {
    const std::size_t n = a.rows();
    const Matrix l = cholesky_lower(a);
    Matrix x(n, n);
    std::vector<double> y(n);
    for (std::size_t c = 0; c < n; ++c) {
        // L y = e_c
        for (std::size_t i = 0; i < n; ++i) {
            double s = i == c ? 1.0 : 0.0;
            for (std::size_t k = 0; k < i; ++k) {
                s -= l(i, k) * y[k];
            }
            y[i] = s / l(i, i);
        }
        // Lᵀ x = y
        for (std::size_t i = n; i-- > 0;) {
            double s = y[i];
            for (std::size_t k = i + 1; k < n; ++k) {
                s -= l(k, i) * x(k, c);
            }
            x(i, c) = s / l(i, i);
        }
    }
    return x;
}

}  // namespace tikuda::reference
