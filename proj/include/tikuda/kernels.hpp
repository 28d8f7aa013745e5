#pragma once

// OpenMP-parallel dense kernels. Every kernel here has a serial twin in
// tikuda/reference.hpp that the tests compare against.

#include "tikuda/matrix.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace tikuda::kernels {

/// Read-only strided window into row-major storage.
struct ConstView {
    const double* data;
    std::size_t rows;
    std::size_t cols;
    std::size_t ld;

    double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * ld + c]; }
    const double* ptr(std::size_t r, std::size_t c) const noexcept { return data + r * ld + c; }
};

struct MutView {
    double* data;
    std::size_t rows;
    std::size_t cols;
    std::size_t ld;

    double& operator()(std::size_t r, std::size_t c) const noexcept { return data[r * ld + c]; }
};

inline ConstView cview(const Matrix& m) { return {m.data(), m.rows(), m.cols(), m.cols()}; }
inline MutView view(Matrix& m) { return {m.data(), m.rows(), m.cols(), m.cols()}; }

/// c += alpha · op(a) · b, where op(a) is a or aᵀ.
void gemm_acc(double alpha, ConstView a, bool transpose_a, ConstView b, MutView c);

/// Upper triangle (j ≥ i) of c += alpha · aᵀ · a. Entries within a 6×16 micro-tile below the
/// diagonal may also be written; callers treat the strict lower triangle as scratch.
void syrk_upper_acc(double alpha, ConstView a, MutView c);

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// zᵀz + ridge·I, exactly symmetric.
Matrix gram(const Matrix& z, double ridge = 0.0);

std::vector<double> matvec(const Matrix& a, std::span<const double> x);

/// In-place blocked Cholesky on the upper triangle: on return the upper triangle
/// holds U with a = UᵀU and the strict lower triangle is zeroed.
/// Returns the index of the first non-positive pivot, or -1 on success.
long cholesky_upper_inplace(Matrix& a);

/// In-place inverse of an upper-triangular matrix with positive diagonal.
void invert_upper_inplace(Matrix& u);

/// x · xᵀ for upper-triangular x; the result is exactly symmetric.
Matrix upper_times_transpose(const Matrix& x);

}  // namespace tikuda::kernels
