#include "tikuda/linalg.hpp"

#include "tikuda/kernels.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace tikuda {
namespace {

void require_square(const Matrix& m, const char* what) {
    if (!m.is_square()) {
        throw ShapeMismatch(std::string(what) + ": matrix " + m.shape_string() + " is not square");
    }
}

Matrix upper_factor_with_jitter(const Matrix& a) {
    Matrix u = a;
    long bad = kernels::cholesky_upper_inplace(u);
    if (bad < 0) {
        return u;
    }
    const std::size_t p = a.rows();
    const double jitter = 1e-8 * a.trace() / static_cast<double>(p);
    u = a;
    if (jitter > 0.0) {
        for (std::size_t i = 0; i < p; ++i) {
            u(i, i) += jitter;
        }
    }
    bad = kernels::cholesky_upper_inplace(u);
    if (bad >= 0) {
        throw NotPositiveDefinite("cholesky: pivot " + std::to_string(bad) + " of " + std::to_string(p) +
                                  " is not positive (after jitter retry)");
    }
    return u;
}

void fix_signs(EigenResult& r) {
    Matrix& v = r.eigenvectors;
    for (std::size_t c = 0; c < v.cols(); ++c) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < v.rows(); ++i) {
            if (std::abs(v(i, c)) > best) {
                best = std::abs(v(i, c));
                arg = i;
            }
        }
        if (v(arg, c) < 0.0) {
            for (std::size_t i = 0; i < v.rows(); ++i) {
                v(i, c) = -v(i, c);
            }
        }
    }
}

EigenResult sorted_descending(const std::vector<double>& values, const Matrix& vectors) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    EigenResult r;
    r.eigenvalues.resize(n);
    r.eigenvectors = Matrix(vectors.rows(), n);
    for (std::size_t k = 0; k < n; ++k) {
        r.eigenvalues[k] = values[order[k]];
        for (std::size_t i = 0; i < vectors.rows(); ++i) {
            r.eigenvectors(i, k) = vectors(i, order[k]);
        }
    }
    fix_signs(r);
    return r;
}

}  // namespace

SpdMatrix::SpdMatrix(Matrix m) : m_(std::move(m)) {
    require_square(m_, "SpdMatrix");
    const double scale = std::max(1.0, m_.max_abs());
    for (std::size_t i = 0; i < m_.rows(); ++i) {
        for (std::size_t j = i + 1; j < m_.cols(); ++j) {
            if (std::abs(m_(i, j) - m_(j, i)) > 1e-10 * scale) {
                throw NotPositiveDefinite("SpdMatrix: matrix is not symmetric at (" + std::to_string(i) + ", " +
                                          std::to_string(j) + ")");
            }
        }
    }
}

SpdMatrix SpdMatrix::tikhonov(const Matrix& z, double alpha) {
    return SpdMatrix(kernels::gram(z, alpha));
}

Matrix cholesky_factor(const SpdMatrix& a) {
    return upper_factor_with_jitter(a.matrix()).transposed();
}

Matrix spd_inverse(const SpdMatrix& a) {
    Matrix u = upper_factor_with_jitter(a.matrix());
    kernels::invert_upper_inplace(u);
    return kernels::upper_times_transpose(u);
}

PowerIterationResult power_iteration_full(const SpdMatrix& a, const PowerIterationOptions& opts) {
    const Matrix& m = a.matrix();
    const std::size_t p = m.rows();
    PowerIterationResult out;
    if (p == 0) {
        return out;
    }
    std::mt19937_64 gen(opts.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::vector<double> v(p);
    for (double& x : v) {
        x = unif(gen);
    }
    auto normalize = [](std::vector<double>& x) {
        double n = 0.0;
        for (double e : x) {
            n += e * e;
        }
        n = std::sqrt(n);
        if (n > 0.0) {
            for (double& e : x) {
                e /= n;
            }
        }
        return n;
    };
    normalize(v);
    std::vector<double> w = kernels::matvec(m, v);
    double estimate = std::inner_product(v.begin(), v.end(), w.begin(), 0.0);
    const std::size_t budget = std::max<std::size_t>(1, opts.max_iters);
    for (std::size_t it = 1; it <= budget; ++it) {
        v = w;
        if (normalize(v) == 0.0) {
            break;
        }
        w = kernels::matvec(m, v);
        const double next = std::inner_product(v.begin(), v.end(), w.begin(), 0.0);
        out.iterations = it;
        const bool converged = std::abs(next - estimate) < opts.tol * std::abs(next);
        estimate = next;
        if (converged) {
            break;
        }
    }
    out.eigenvalue = estimate;
    out.eigenvector = std::move(v);
    return out;
}

double power_iteration(const SpdMatrix& a, std::size_t max_iters, double tol, std::uint64_t seed) {
    return power_iteration_full(a, {max_iters, tol, seed}).eigenvalue;
}

EigenResult jacobi_eigen(const Matrix& input) {
    require_square(input, "jacobi_eigen");
    const std::size_t n = input.rows();
    Matrix a = symmetrize(input);
    Matrix v = Matrix::identity(n);
    const double scale = a.frobenius_norm();
    constexpr int kMaxSweeps = 100;
    bool converged = n <= 1 || scale == 0.0;
    for (int sweep = 0; !converged; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                off += a(i, j) * a(i, j);
            }
        }
        if (std::sqrt(off) <= 1e-15 * scale) {
            converged = true;
            break;
        }
        if (sweep == kMaxSweeps) {
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged) {
        throw NoConvergence("jacobi_eigen: no convergence after 100 sweeps (n = " + std::to_string(n) + ")");
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = a(i, i);
    }
    return sorted_descending(values, v);
}

EigenResult symmetric_eigen(const Matrix& input) {
    require_square(input, "symmetric_eigen");
    const std::size_t n = input.rows();
    if (n == 0) {
        return {};
    }
    Matrix a = input;
    std::vector<double> w(n);
    const lapack_int info = LAPACKE_dsyevd(LAPACK_ROW_MAJOR, 'V', 'U', static_cast<lapack_int>(n), a.data(),
                                           static_cast<lapack_int>(n), w.data());
    if (info != 0) {
        throw NoConvergence("symmetric_eigen: dsyevd failed with info = " + std::to_string(info));
    }
    return sorted_descending(w, a);
}

std::size_t energy_rank(const std::vector<double>& eigenvalues_desc, double energy_threshold) {
    if (!(energy_threshold > 0.0) || energy_threshold > 1.0) {
        throw OutOfRange("energy_rank: threshold must lie in (0, 1], got " + std::to_string(energy_threshold));
    }
    double total = 0.0;
    for (double l : eigenvalues_desc) {
        total += std::max(0.0, l);
    }
    if (total <= 0.0) {
        return 0;
    }
    // Eigenvalues this far below the top one are round-off, not signal.
    const double floor = 1e-12 * eigenvalues_desc.front();
    const double target = energy_threshold * total * (1.0 - 1e-12);
    double cum = 0.0;
    std::size_t k = 0;
    for (double l : eigenvalues_desc) {
        if (l <= floor) {
            break;
        }
        cum += l;
        ++k;
        if (cum >= target) {
            break;
        }
    }
    return k;
}

TruncatedPseudoInverse pseudo_inverse_gram_full(const Matrix& g, double energy_threshold) {
    require_square(g, "pseudo_inverse_gram");
    TruncatedPseudoInverse out;
    out.spectrum = symmetric_eigen(g);
    out.kept = energy_rank(out.spectrum.eigenvalues, energy_threshold);
    const std::size_t p = g.rows();
    const std::size_t k = out.kept;
    Matrix vk(p, k);
    Matrix scaled(p, k);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            vk(i, c) = out.spectrum.eigenvectors(i, c);
            scaled(i, c) = vk(i, c) / out.spectrum.eigenvalues[c];
        }
    }
    out.pinv = k == 0 ? Matrix(p, p) : symmetrize(kernels::matmul_nt(scaled, vk));
    return out;
}

Matrix pseudo_inverse_gram(const Matrix& g, double energy_threshold) {
    return pseudo_inverse_gram_full(g, energy_threshold).pinv;
}

}  // namespace tikuda
