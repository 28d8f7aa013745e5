#pragma once

#include "tikuda/alignment.hpp"
#include "tikuda/data.hpp"
#include "tikuda/matrix.hpp"
#include "tikuda/stgnn.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tikuda::train {

enum class Method { source_only, tikuda, tikuda_cosine, dare_gram, coral, mmd };

Method parse_method(const std::string& name);
std::string to_string(Method m);

/// 2/(1 + exp(−k·p)) − 1 for p ∈ [0, 1].
double lambda_schedule(double progress, double gain = 10.0);

struct AdamOptions {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::size_t step = 0;

    static AdamState like(const std::vector<Matrix>& params);
};

/// One bias-corrected Adam update in place.
void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamOptions& opts);

struct TrainConfig {
    double lr = 3e-4;
    std::size_t batch = 64;
    std::size_t epochs = 150;
    double gamma_angle = 1e-2;  // maximum weight, reached as λ → 1
    double gamma_scale = 1e-3;
    double schedule_gain = 10.0;
    Method method = Method::tikuda;
    align::AlignmentConfig alignment{};
    std::uint64_t seed = 0;
    std::size_t seeds = 1;  // > 1: multi-seed summary over seed, seed+1, ...
    double holdout_fraction = 0.0;

    void validate() const;
};

struct EpochTrace {
    std::size_t epoch = 0;
    double lambda = 0.0;
    double total = 0.0;
    double source = 0.0;
    double angle = 0.0;
    double scale = 0.0;
};

struct MetricsReport {
    double rmse_norm = 0.0;
    double rmse_actual = 0.0;
    double mae_norm = 0.0;
    double mae_actual = 0.0;
    double energy_distance = 0.0;
    std::vector<EpochTrace> traces;
};

struct Prediction {
    Matrix values;    // B×1
    Matrix features;  // B×(N·hidden)
};

struct Model {
    stgnn::ModelConfig config;
    stgnn::GraphSpec graph;
};

/// Forward pass in chunks without gradients.
Prediction predict(const Model& model, const stgnn::ModelParams& params, const Tensor4& samples,
                   std::size_t chunk = 256);

/// Normalized metrics on `ds`; actual = normalized × label_range.
MetricsReport evaluate(const Model& model, const stgnn::ModelParams& params, const data::WindowedDataset& ds,
                       double label_range);

/// Metrics of fixed predictions against labels.
MetricsReport score(const Matrix& predictions, const Matrix& labels, double label_range);

/// 2·E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖ over rows (V-statistic).
double energy_distance(const Matrix& x, const Matrix& y);
double energy_distance_reference(const Matrix& x, const Matrix& y);

/// Every ceil(m/limit)-th row, so at most `limit` rows.
Matrix subsample_rows(const Matrix& x, std::size_t limit);

struct PcaResult {
    Matrix components;                 // p×k, column j = j-th principal axis
    std::vector<double> mean;          // p
    std::vector<double> eigenvalues;   // all p covariance eigenvalues, descending
    std::vector<double> explained;     // k explained-variance ratios
    Matrix projected;                  // m×k

    [[nodiscard]] Matrix project(const Matrix& x) const;
};

/// Principal axes by Jacobi on the sample covariance; each axis's largest-magnitude entry is positive.
PcaResult pca_project(const Matrix& x, std::size_t k = 2);

struct TrainResult {
    stgnn::ModelParams initial;
    stgnn::ModelParams params;
    MetricsReport metrics;  // on the evaluation split of the target
    std::vector<std::vector<Matrix>> trajectory;  // parameters after each step when recorded
};

struct TrainOptions {
    bool record_trajectory = false;
    std::size_t energy_sample_limit = 1024;
    std::function<void(const EpochTrace&)> on_epoch;
};

/// Target windows used for training (unlabelled) and for evaluation under a holdout fraction.
struct TargetSplit {
    data::WindowedDataset train;
    data::WindowedDataset eval;
};
TargetSplit split_target(const data::WindowedDataset& target, double holdout_fraction);

/// Source MSE plus γ-weighted alignment between source and target feature batches, γ ramped by λ.
TrainResult train_adapt(const data::WindowedDataset& source, const data::WindowedDataset& target,
                        const Model& model, const TrainConfig& cfg, double label_range,
                        const TrainOptions& options = {});

/// Alignment terms of one batch pair. CORAL and MMD report their single loss as `angle`;
/// terms a method lacks are left invalid.
align::AlignmentTerms alignment_terms(Method method, const ad::Value& z_src, const ad::Value& z_tgt,
                                      const align::AlignmentConfig& cfg);

struct SeedSummary {
    std::vector<MetricsReport> runs;
    double rmse_norm_mean = 0.0;
    double rmse_norm_std = 0.0;
    double mae_norm_mean = 0.0;
    double mae_norm_std = 0.0;
};

/// cfg.seeds runs over consecutive seeds; sample standard deviation.
SeedSummary train_seeds(const data::WindowedDataset& source, const data::WindowedDataset& target, const Model& model,
                        const TrainConfig& cfg, double label_range);

}  // namespace tikuda::train
