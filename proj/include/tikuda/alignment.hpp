#pragma once

// Feature-alignment losses between a source and a target batch Z (b×p).

#include "tikuda/autodiff.hpp"
#include "tikuda/linalg.hpp"

#include <string>

namespace tikuda::align {

enum class Similarity { haversine, cosine };

Similarity parse_similarity(const std::string& name);
std::string to_string(Similarity s);

struct AlignmentConfig {
    double alpha = 1.0;
    Similarity similarity = Similarity::haversine;
    PowerIterationOptions power{};
    double epsilon_norm = 1e-12;
    double dare_gram_energy_threshold = 0.999;

    /// Throws OutOfRange on alpha ≤ 0 or a threshold outside (0, 1].
    void validate() const;
};

struct AlignmentTerms {
    ad::Value angle;
    ad::Value scale;
};

/// (ZᵀZ + αI)⁻¹, differentiable in z.
ad::Value tikhonov_inverse(const ad::Value& z, double alpha);

/// 1 − sqrt((1 − c)/2) elementwise, with c clamped to [−1, 1].
ad::Value haversine_similarity(const ad::Value& cos_phi);

/// 1×p row of cosines between matching columns of a and b.
ad::Value column_cosine(const ad::Value& a, const ad::Value& b, double eps);

/// Σ_i (1 − m_i) over column similarities m_i.
ad::Value angle_loss(const ad::Value& g_s_inv, const ad::Value& g_t_inv, Similarity similarity,
                     double eps = 1e-12);

/// (λmax(Z_sᵀZ_s + αI) − λmax(Z_tᵀZ_t + αI))².
ad::Value scale_loss(const ad::Value& z_src, const ad::Value& z_tgt, double alpha, const PowerIterationOptions& power);

AlignmentTerms tikuda_loss(const ad::Value& z_src, const ad::Value& z_tgt, const AlignmentConfig& cfg);

/// ‖C_s − C_t‖²_F / (4p²) with unbiased covariances.
ad::Value coral_loss(const ad::Value& z_src, const ad::Value& z_tgt);

struct MmdBandwidth {
    bool median = true;  // median pairwise distance of the joint batch
    double sigma = 1.0;  // used when median is false

    static MmdBandwidth fixed(double s) { return {false, s}; }
};

/// Biased V-statistic of the squared MMD under a Gaussian kernel exp(−d²/2σ²).
ad::Value mmd_loss(const ad::Value& z_src, const ad::Value& z_tgt, MmdBandwidth bandwidth = {});

/// Median of the pairwise Euclidean distances between distinct rows of the stacked batch.
double median_pairwise_distance(const Matrix& x, const Matrix& y);

/// Pseudo-inverse Gram alignment: cosine angle term over truncated pseudo-inverses of ZᵀZ,
/// scale term = mean squared difference of the k leading eigenvalues, k set by the source.
AlignmentTerms dare_gram_loss(const ad::Value& z_src, const ad::Value& z_tgt, const AlignmentConfig& cfg);

}  // namespace tikuda::align
