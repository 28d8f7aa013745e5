#include "tikuda/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tikuda::kernels {
namespace {

constexpr std::size_t kRowTile = 96;
constexpr std::size_t kColTile = 512;
constexpr std::size_t kDepthTile = 256;
constexpr std::size_t kCholBlock = 64;
constexpr std::size_t kInvBlock = 64;
constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;

using vec8 = double __attribute__((vector_size(64)));

// acc[6×16] = Σ_l a[l·6 + r] · b[l·16 + j] over packed panels.
inline void micro_kernel(const double* __restrict a, const double* __restrict b, std::size_t kc,
                         double* __restrict acc) {
    vec8 c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{}, c40{}, c41{}, c50{}, c51{};
    for (std::size_t l = 0; l < kc; ++l) {
        vec8 b0;
        vec8 b1;
        __builtin_memcpy(&b0, b + l * kNr, sizeof(vec8));
        __builtin_memcpy(&b1, b + l * kNr + 8, sizeof(vec8));
        const double* al = a + l * kMr;
        c00 += al[0] * b0;
        c01 += al[0] * b1;
        c10 += al[1] * b0;
        c11 += al[1] * b1;
        c20 += al[2] * b0;
        c21 += al[2] * b1;
        c30 += al[3] * b0;
        c31 += al[3] * b1;
        c40 += al[4] * b0;
        c41 += al[4] * b1;
        c50 += al[5] * b0;
        c51 += al[5] * b1;
    }
    const vec8* rows[kMr][2] = {{&c00, &c01}, {&c10, &c11}, {&c20, &c21}, {&c30, &c31}, {&c40, &c41}, {&c50, &c51}};
    for (std::size_t r = 0; r < kMr; ++r) {
        __builtin_memcpy(acc + r * kNr, rows[r][0], sizeof(vec8));
        __builtin_memcpy(acc + r * kNr + 8, rows[r][1], sizeof(vec8));
    }
}

// c[i0..i1, j-range of the packed block] += packed products, for one row tile.
// skip_below_diagonal restricts writes to columns ≥ row (syrk).
void gemm_tile(double alpha, ConstView a, bool ta, ConstView b, MutView c, std::size_t i0, std::size_t i1,
               std::size_t j0, std::size_t j1, std::size_t l0, std::size_t l1, std::vector<double>& bpack,
               std::vector<double>& apack, bool upper_only) {
    const std::size_t kc = l1 - l0;
    const std::size_t panels = (j1 - j0 + kNr - 1) / kNr;
    bpack.assign(panels * kc * kNr, 0.0);
    for (std::size_t pnl = 0; pnl < panels; ++pnl) {
        const std::size_t js = j0 + pnl * kNr;
        const std::size_t w = std::min(kNr, j1 - js);
        double* dst = bpack.data() + pnl * kc * kNr;
        for (std::size_t l = 0; l < kc; ++l) {
            const double* src = b.ptr(l0 + l, js);
            for (std::size_t j = 0; j < w; ++j) {
                dst[l * kNr + j] = src[j];
            }
        }
    }
    apack.resize(kc * kMr);
    double acc[kMr * kNr];
    for (std::size_t i = i0; i < i1; i += kMr) {
        const std::size_t h = std::min(kMr, i1 - i);
        if (upper_only && j1 <= i) {
            continue;
        }
        for (std::size_t l = 0; l < kc; ++l) {
            for (std::size_t r = 0; r < kMr; ++r) {
                apack[l * kMr + r] = r < h ? alpha * (ta ? a(l0 + l, i + r) : a(i + r, l0 + l)) : 0.0;
            }
        }
        for (std::size_t pnl = 0; pnl < panels; ++pnl) {
            const std::size_t js = j0 + pnl * kNr;
            const std::size_t w = std::min(kNr, j1 - js);
            if (upper_only && js + w <= i) {
                continue;
            }
            micro_kernel(apack.data(), bpack.data() + pnl * kc * kNr, kc, acc);
            for (std::size_t r = 0; r < h; ++r) {
                double* crow = &c(i + r, js);
                const double* arow = acc + r * kNr;
                for (std::size_t j = 0; j < w; ++j) {
                    crow[j] += arow[j];
                }
            }
        }
    }
}

}  // namespace

void gemm_acc(double alpha, ConstView a, bool transpose_a, ConstView b, MutView c) {
    const std::size_t m = transpose_a ? a.cols : a.rows;
    const std::size_t k = transpose_a ? a.rows : a.cols;
    if (m != c.rows || k != b.rows || b.cols != c.cols) {
        throw ShapeMismatch("gemm_acc: op(a) is " + std::to_string(m) + "x" + std::to_string(k) + ", b is " +
                            std::to_string(b.rows) + "x" + std::to_string(b.cols) + ", c is " +
                            std::to_string(c.rows) + "x" + std::to_string(c.cols));
    }
    const std::size_t n = c.cols;
    if (m == 0 || n == 0 || k == 0) {
        return;
    }
    const long row_tiles = static_cast<long>((m + kRowTile - 1) / kRowTile);
#pragma omp parallel
    {
        std::vector<double> bpack;
        std::vector<double> apack;
#pragma omp for schedule(static)
        for (long t = 0; t < row_tiles; ++t) {
            const std::size_t i0 = static_cast<std::size_t>(t) * kRowTile;
            const std::size_t i1 = std::min(m, i0 + kRowTile);
            for (std::size_t j0 = 0; j0 < n; j0 += kColTile) {
                const std::size_t j1 = std::min(n, j0 + kColTile);
                for (std::size_t l0 = 0; l0 < k; l0 += kDepthTile) {
                    const std::size_t l1 = std::min(k, l0 + kDepthTile);
                    gemm_tile(alpha, a, transpose_a, b, c, i0, i1, j0, j1, l0, l1, bpack, apack, false);
                }
            }
        }
    }
}

void syrk_upper_acc(double alpha, ConstView a, MutView c) {
    const std::size_t m = a.cols;
    const std::size_t k = a.rows;
    if (c.rows != m || c.cols != m) {
        throw ShapeMismatch("syrk_upper_acc: a is " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                            ", c is " + std::to_string(c.rows) + "x" + std::to_string(c.cols));
    }
    if (m == 0 || k == 0) {
        return;
    }
    const long row_tiles = static_cast<long>((m + kRowTile - 1) / kRowTile);
    // Row tiles near the top carry more work; dynamic scheduling balances the triangle.
#pragma omp parallel
    {
        std::vector<double> bpack;
        std::vector<double> apack;
#pragma omp for schedule(dynamic)
        for (long t = 0; t < row_tiles; ++t) {
            const std::size_t i0 = static_cast<std::size_t>(t) * kRowTile;
            const std::size_t i1 = std::min(m, i0 + kRowTile);
            for (std::size_t j0 = i0; j0 < m; j0 += kColTile) {
                const std::size_t j1 = std::min(m, j0 + kColTile);
                for (std::size_t l0 = 0; l0 < k; l0 += kDepthTile) {
                    const std::size_t l1 = std::min(k, l0 + kDepthTile);
                    gemm_tile(alpha, a, true, a, c, i0, i1, j0, j1, l0, l1, bpack, apack, true);
                }
            }
        }
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeMismatch("matmul: " + a.shape_string() + " times " + b.shape_string());
    }
    Matrix c(a.rows(), b.cols());
    gemm_acc(1.0, cview(a), false, cview(b), view(c));
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeMismatch("matmul_tn: transpose of " + a.shape_string() + " times " + b.shape_string());
    }
    Matrix c(a.cols(), b.cols());
    gemm_acc(1.0, cview(a), true, cview(b), view(c));
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeMismatch("matmul_nt: " + a.shape_string() + " times transpose of " + b.shape_string());
    }
    const Matrix bt = b.transposed();
    Matrix c(a.rows(), b.rows());
    gemm_acc(1.0, cview(a), false, cview(bt), view(c));
    return c;
}

Matrix gram(const Matrix& z, double ridge) {
    const std::size_t p = z.cols();
    Matrix g(p, p);
    syrk_upper_acc(1.0, cview(z), view(g));
    for (std::size_t i = 0; i < p; ++i) {
        g(i, i) += ridge;
        for (std::size_t j = i + 1; j < p; ++j) {
            g(j, i) = g(i, j);
        }
    }
    return g;
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) {
        throw ShapeMismatch("matvec: " + a.shape_string() + " times vector of length " + std::to_string(x.size()));
    }
    std::vector<double> y(a.rows());
    const long rows = static_cast<long>(a.rows());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) {
        const double* __restrict r = a.data() + static_cast<std::size_t>(i) * a.cols();
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            s += r[j] * x[j];
        }
        y[static_cast<std::size_t>(i)] = s;
    }
    return y;
}

long cholesky_upper_inplace(Matrix& a) {
    if (!a.is_square()) {
        throw ShapeMismatch("cholesky: matrix " + a.shape_string() + " is not square");
    }
    const std::size_t p = a.rows();
    for (std::size_t k0 = 0; k0 < p; k0 += kCholBlock) {
        const std::size_t k1 = std::min(p, k0 + kCholBlock);
        // Factor the panel rows k0..k1 across all remaining columns.
        for (std::size_t k = k0; k < k1; ++k) {
            const double d = a(k, k);
            if (!(d > 0.0) || !std::isfinite(d)) {
                return static_cast<long>(k);
            }
            const double u = std::sqrt(d);
            a(k, k) = u;
            const double inv = 1.0 / u;
            double* __restrict rk = &a(k, 0);
            for (std::size_t j = k + 1; j < p; ++j) {
                rk[j] *= inv;
            }
            for (std::size_t i = k + 1; i < k1; ++i) {
                const double f = rk[i];
                double* __restrict ri = &a(i, 0);
                for (std::size_t j = i; j < p; ++j) {
                    ri[j] -= f * rk[j];
                }
            }
        }
        if (k1 < p) {
            const ConstView panel{&a(k0, k1), k1 - k0, p - k1, p};
            const MutView trailing{&a(k1, k1), p - k1, p - k1, p};
            syrk_upper_acc(-1.0, panel, trailing);
        }
    }
    for (std::size_t i = 1; i < p; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            a(i, j) = 0.0;
        }
    }
    return -1;
}

namespace {

// Unblocked inverse of the upper-triangular block u[o..o+n, o..o+n) written to x (n×n).
void invert_upper_block(const Matrix& u, std::size_t o, std::size_t n, Matrix& x) {
    x = Matrix(n, n);
    for (std::size_t ii = n; ii-- > 0;) {
        const double inv = 1.0 / u(o + ii, o + ii);
        x(ii, ii) = inv;
        double* __restrict xi = &x(ii, 0);
        for (std::size_t k = ii + 1; k < n; ++k) {
            const double f = -inv * u(o + ii, o + k);
            const double* __restrict xk = &x(k, 0);
            for (std::size_t j = k; j < n; ++j) {
                xi[j] += f * xk[j];
            }
        }
    }
}

}  // namespace

void invert_upper_inplace(Matrix& u) {
    if (!u.is_square()) {
        throw ShapeMismatch("invert_upper: matrix " + u.shape_string() + " is not square");
    }
    const std::size_t p = u.rows();
    Matrix x(p, p);
    Matrix diag_inv;
    // Row blocks bottom-up: X[I, I+] = -inv(U_II) · U[I, I+] · X[I+, I+].
    const std::size_t nblocks = (p + kInvBlock - 1) / kInvBlock;
    for (std::size_t bi = nblocks; bi-- > 0;) {
        const std::size_t i0 = bi * kInvBlock;
        const std::size_t i1 = std::min(p, i0 + kInvBlock);
        const std::size_t nb = i1 - i0;
        invert_upper_block(u, i0, nb, diag_inv);
        for (std::size_t r = 0; r < nb; ++r) {
            for (std::size_t c = r; c < nb; ++c) {
                x(i0 + r, i0 + c) = diag_inv(r, c);
            }
        }
        if (i1 == p) {
            continue;
        }
        const std::size_t rest = p - i1;
        Matrix t(nb, rest);
        // X[i1.., J] is upper triangular, so only rows i1..j1 contribute to column block J.
        for (std::size_t j0 = i1; j0 < p; j0 += kColTile) {
            const std::size_t j1 = std::min(p, j0 + kColTile);
            const ConstView ua{&u(i0, i1), nb, j1 - i1, p};
            const ConstView xb{&x(i1, j0), j1 - i1, j1 - j0, p};
            const MutView tv{&t(0, j0 - i1), nb, j1 - j0, rest};
            gemm_acc(1.0, ua, false, xb, tv);
        }
        const MutView out{&x(i0, i1), nb, rest, p};
        gemm_acc(-1.0, cview(diag_inv), false, cview(t), out);
    }
    u = std::move(x);
}

Matrix upper_times_transpose(const Matrix& x) {
    if (!x.is_square()) {
        throw ShapeMismatch("upper_times_transpose: matrix " + x.shape_string() + " is not square");
    }
    const std::size_t p = x.rows();
    const Matrix xt = x.transposed();
    Matrix s(p, p);
    const long nblocks = static_cast<long>((p + kInvBlock - 1) / kInvBlock);
#pragma omp parallel for schedule(dynamic)
    for (long bi = 0; bi < nblocks; ++bi) {
        const std::size_t i0 = static_cast<std::size_t>(bi) * kInvBlock;
        const std::size_t i1 = std::min(p, i0 + kInvBlock);
        for (std::size_t j0 = i0; j0 < p; j0 += kInvBlock) {
            const std::size_t j1 = std::min(p, j0 + kInvBlock);
            // S[I, J] = Σ_{k ≥ j0} X[I, k] · X[J, k]
            const ConstView xa{x.data() + i0 * p + j0, i1 - i0, p - j0, p};
            const ConstView xb{xt.data() + j0 * p + j0, p - j0, j1 - j0, p};
            const MutView sv{&s(i0, j0), i1 - i0, j1 - j0, p};
            gemm_acc(1.0, xa, false, xb, sv);
        }
    }
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i + 1; j < p; ++j) {
            s(j, i) = s(i, j);
        }
    }
    return s;
}

}  // namespace tikuda::kernels
