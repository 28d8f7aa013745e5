#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape owns every node created during one forward pass. Nodes are appended in
// creation order, which is also a topological order, so backward() simply walks
// the tape in reverse and calls each node's adjoint once. Values are cheap
// handles (tape pointer + index); the tape must outlive them.

#include "tikuda/linalg.hpp"
#include "tikuda/matrix.hpp"

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace tikuda::ad {

class Tape;

class Value {
public:
    Value() = default;
    Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    [[nodiscard]] const Matrix& data() const;
    /// Gradient accumulated by the last backward(); zeros if the node was not reached.
    [[nodiscard]] const Matrix& grad() const;
    [[nodiscard]] std::size_t rows() const { return data().rows(); }
    [[nodiscard]] std::size_t cols() const { return data().cols(); }
    /// Convenience for 1×1 values.
    [[nodiscard]] double item() const;
    [[nodiscard]] bool requires_grad() const;

    [[nodiscard]] Tape* tape() const noexcept { return tape_; }
    [[nodiscard]] std::size_t id() const noexcept { return id_; }
    [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    /// Adjoint: reads the node's gradient and accumulates into its inputs.
    using Adjoint = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf whose gradient is tracked.
    Value variable(Matrix m);
    /// Leaf without gradient.
    Value constant(Matrix m);

    /// Appends a node. The adjoint is dropped when no input requires a gradient.
    Value record(Matrix value, std::initializer_list<Value> inputs, Adjoint adjoint);
    Value record(Matrix value, std::span<const Value> inputs, Adjoint adjoint);

    /// Seeds d loss/d loss = 1 and propagates to every node. Throws NotScalar unless loss is 1×1.
    void backward(const Value& loss);

    /// Clears all gradients, keeping values.
    void zero_grad();

    [[nodiscard]] const Matrix& data(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] const Matrix& grad(std::size_t id);
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    /// Adds g into the gradient of node id (allocating zeros on first use).
    void accumulate(std::size_t id, const Matrix& g);
    /// Mutable gradient buffer of node id, zero-initialised on first use.
    Matrix& grad_buffer(std::size_t id);
    /// Gradient of node id if any has been accumulated, else nullptr.
    [[nodiscard]] const Matrix* grad_if_any(std::size_t id) const;

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Adjoint adjoint;
    };
    std::vector<Node> nodes_;
};

// --- Primitive operations ----------------------------------------------------
// Binary elementwise ops broadcast operands that are 1×n, m×1 or 1×1.

Value matmul(const Value& a, const Value& b);
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value elementwise_mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value scalar_mul(const Value& a, double s);
Value add_scalar(const Value& a, double s);
Value concat_cols(std::span<const Value> parts);
Value slice_cols(const Value& a, std::size_t start, std::size_t count);
Value transpose(const Value& a);
Value reshape(const Value& a, std::size_t rows, std::size_t cols);

Value sigmoid(const Value& a);
Value tanh(const Value& a);
Value leaky_relu(const Value& a, double slope);
Value exp(const Value& a);
Value log(const Value& a);
/// Gradient at exactly 0 is taken as 0.
Value sqrt(const Value& a);
/// Gradient passes for lo ≤ x ≤ hi, zero outside.
Value clamp(const Value& a, double lo, double hi);

/// GRU update from gate pre-activations gi = x·W_ih + b_ih and gh = h·W_hh + b_hh, each m×3d in
/// [r | z | n] blocks: r, z = σ(gi + gh), n = tanh(gi_n + r⊙gh_n), h' = n + z⊙(h − n).
Value gru_gates(const Value& gi, const Value& gh, const Value& h);

Value sum(const Value& a);
Value mean(const Value& a);
Value l1_norm(const Value& a);
/// 1×n row of column Euclidean norms.
Value l2_norm_cols(const Value& a);
/// 1×n row of column sums.
Value sum_rows(const Value& a);
/// m×1 column of row sums.
Value sum_cols(const Value& a);

/// Softmax of an m×1 column within groups: rows sharing group[i] are normalised together.
Value softmax_over_group(const Value& scores, std::span<const std::size_t> group);

/// out[i] = a[index[i]] (rows).
Value gather_rows(const Value& a, std::span<const std::size_t> index);
/// out[index[i]] += a[i] (rows), out has out_rows rows.
Value scatter_add_rows(const Value& a, std::span<const std::size_t> index, std::size_t out_rows);

/// Forward identity; contributes no gradient.
Value stop_gradient(const Value& a);

/// m×n matrix of squared Euclidean distances between rows of x (m×p) and y (n×p).
Value pairwise_sq_dist(const Value& x, const Value& y);

// --- Linear-algebra operations with hand-written adjoints --------------------

/// zᵀz + alpha·I.
Value tikhonov(const Value& z, double alpha);

/// a⁻¹ for SPD a; adjoint dA = -A⁻¹·Ḡ·A⁻¹.
Value spd_inverse(const Value& a);

/// (zᵀz + alpha·I)⁻¹ with the adjoint contracted against z directly, so the
/// backward pass costs O(b·p²) rather than O(p³).
Value tikhonov_inverse(const Value& z, double alpha);

/// Dominant eigenvalue of SPD a by power iteration (1×1). The adjoint uses the
/// converged unit eigenvector: dA = λ̄·v·vᵀ.
Value lambda_max(const Value& a, const PowerIterationOptions& opts);

/// Eigendecomposition of a symmetric matrix, shared by ops that need its spectrum.
using SharedSpectrum = std::shared_ptr<const EigenResult>;

/// Truncated pseudo-inverse V_k·diag(1/λ)·V_kᵀ of a PSD matrix whose spectrum is given.
/// The adjoint is the Daleckii–Krein derivative of the spectral function with the kept set held fixed.
Value pinv_from_spectrum(const Value& g, SharedSpectrum spectrum, std::size_t kept);

/// 1×k row of the k leading eigenvalues; adjoint dA = Σ λ̄_i·v_i·v_iᵀ.
Value top_eigenvalues(const Value& g, SharedSpectrum spectrum, std::size_t k);

}  // namespace tikuda::ad
