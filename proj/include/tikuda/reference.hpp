#pragma once

// Straight-line serial versions of the dense kernels. Kept for tests and the
// kernel benchmark; nothing in the library's hot path calls these.

#include "tikuda/matrix.hpp"

#include <span>
#include <vector>

namespace tikuda::reference {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix gram(const Matrix& z, double ridge = 0.0);
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

/// Textbook Cholesky–Banachiewicz. Returns lower L with a = L·Lᵀ; throws NotPositiveDefinite.
Matrix cholesky_lower(const Matrix& a);

/// Inverse of an SPD matrix by solving L·Lᵀ·X = I column by column.
Matrix spd_inverse(const Matrix& a);

}  // namespace tikuda::reference
