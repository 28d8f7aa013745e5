#pragma once

#include "tikuda/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace tikuda {

/// Square, symmetric matrix that the caller asserts is positive definite.
/// Symmetry is checked on construction; definiteness surfaces as NotPositiveDefinite
/// from the factorization.
class SpdMatrix {
public:
    explicit SpdMatrix(Matrix m);

    /// zᵀz + alpha·I. Always SPD for alpha > 0.
    static SpdMatrix tikhonov(const Matrix& z, double alpha);

    [[nodiscard]] const Matrix& matrix() const noexcept { return m_; }
    [[nodiscard]] std::size_t dim() const noexcept { return m_.rows(); }

private:
    Matrix m_;
};

struct EigenResult {
    std::vector<double> eigenvalues;  // descending
    Matrix eigenvectors;              // column i pairs with eigenvalues[i]
};

/// Lower-triangular L with L·Lᵀ = a. On a non-positive pivot the factorization is
/// retried once with a jitter of 1e-8·trace/p on the diagonal before giving up.
Matrix cholesky_factor(const SpdMatrix& a);

/// a⁻¹ through the Cholesky factor; the result is exactly symmetric.
Matrix spd_inverse(const SpdMatrix& a);

struct PowerIterationOptions {
    std::size_t max_iters = 50;
    double tol = 1e-7;
    std::uint64_t seed = 0;
};

struct PowerIterationResult {
    double eigenvalue = 0.0;
    std::vector<double> eigenvector;  // unit norm
    std::size_t iterations = 0;
};

/// Dominant eigenpair by normalized power iteration with a Rayleigh-quotient estimate.
/// Stops when the estimate's relative change falls below tol, or after max_iters.
PowerIterationResult power_iteration_full(const SpdMatrix& a, const PowerIterationOptions& opts);

double power_iteration(const SpdMatrix& a, std::size_t max_iters = 50, double tol = 1e-7, std::uint64_t seed = 0);

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Throws NoConvergence after 100 sweeps.
/// Eigenvector signs are fixed so that each column's largest-magnitude entry is positive.
EigenResult jacobi_eigen(const Matrix& a);

/// Divide-and-conquer symmetric eigendecomposition (LAPACK dsyevd). Same output
/// convention as jacobi_eigen.
EigenResult symmetric_eigen(const Matrix& a);

struct TruncatedPseudoInverse {
    Matrix pinv;
    std::size_t kept = 0;
    EigenResult spectrum;
};

/// Number of leading eigenvalues whose sum reaches energy_threshold·(sum of positive eigenvalues).
std::size_t energy_rank(const std::vector<double>& eigenvalues_desc, double energy_threshold);

/// Pseudo-inverse of a PSD Gram matrix restricted to its leading eigen-subspace.
TruncatedPseudoInverse pseudo_inverse_gram_full(const Matrix& g, double energy_threshold);

Matrix pseudo_inverse_gram(const Matrix& g, double energy_threshold = 0.999);

}  // namespace tikuda
