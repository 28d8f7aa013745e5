#pragma once

#include "tikuda/matrix.hpp"
#include "tikuda/stgnn.hpp"
#include "tikuda/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace tikuda::data {

/// Time-ordered columns of equal length.
struct RawSeries {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> values;  // values[c][t]
    std::vector<std::string> timestamps;      // empty when the file had none
    std::string target;
    std::size_t dropped_rows = 0;

    [[nodiscard]] std::size_t length() const { return values.empty() ? 0 : values.front().size(); }
    [[nodiscard]] std::size_t index_of(const std::string& column) const;
    [[nodiscard]] const std::vector<double>& column(const std::string& name) const;
    std::vector<double>& column(const std::string& name);
    /// Every column except the target, in file order.
    [[nodiscard]] std::vector<std::string> sensor_columns() const;
};

struct CsvSchema {
    std::vector<std::string> sensors;  // empty: every column other than target and timestamp
    std::string target;
    std::string timestamp;  // optional column name, carried through but not used as a feature
};

/// Rows with missing or unparseable cells are dropped and counted.
RawSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema);

void write_csv(const std::filesystem::path& path, const RawSeries& series);

/// FNV-1a over column names and the raw bytes of every value.
std::uint64_t checksum(const RawSeries& series);

/// Per-column min–max scaling fitted on one domain.
struct Normalizer {
    std::vector<std::string> columns;
    std::vector<double> min;
    std::vector<double> max;

    /// Throws ConstantColumn if a column has max == min.
    static Normalizer fit(const RawSeries& series);
    /// Columns of `series` known to the normalizer are scaled; no clamping.
    [[nodiscard]] RawSeries apply(const RawSeries& series) const;
    [[nodiscard]] double normalize(const std::string& column, double v) const;
    [[nodiscard]] double denormalize(const std::string& column, double v) const;
    [[nodiscard]] double range(const std::string& column) const;

private:
    [[nodiscard]] std::size_t index_of(const std::string& column) const;
};

struct WindowedDataset {
    Tensor4 samples;  // B×N×T×1
    Matrix labels;    // B×1, target at the window's last step
    std::string domain;
    std::vector<std::size_t> starts;
    std::vector<std::string> sensors;

    [[nodiscard]] std::size_t size() const noexcept { return samples.batch(); }
};

/// floor((len − T)/stride) + 1 windows when len ≥ T, else none.
WindowedDataset make_windows(const RawSeries& series, const std::vector<std::string>& sensors, std::size_t window,
                             std::size_t stride, const std::string& domain);

std::size_t window_count(std::size_t length, std::size_t window, std::size_t stride);

/// Tail of a dataset (the final `fraction` of windows), or all of it for fraction 0.
WindowedDataset tail(const WindowedDataset& ds, double fraction);

/// Whitespace-separated 0/1 matrix. An optional first line "# name name ..." labels the rows;
/// when present, `sensors` selects and orders the sub-graph. Self-loops are forced.
stgnn::GraphSpec load_adjacency(const std::filesystem::path& path, const std::vector<std::string>& sensors);

stgnn::GraphSpec build_graph(const std::string& kind, const std::vector<std::string>& sensors,
                             const std::filesystem::path& adjacency_file = {});

// --- Synthetic domain shift -------------------------------------------------------

/// Latent AR processes observed by redundant sensors; the label is a fixed nonlinear
/// function of the latents.
struct BaseSpec {
    std::size_t sensors = 6;
    std::size_t latents = 3;
    std::size_t steps = 3000;
    double sensor_noise = 0.05;
    std::uint64_t seed = 7;
};

struct ShiftSpec {
    std::vector<double> gain;
    std::vector<double> bias;
    Matrix mixing;
    double noise = 0.0;
    double label_drift = 0.0;  // target label = (1 + drift)·label
    std::uint64_t seed = 11;

    static ShiftSpec identity(std::size_t sensors);
    /// Gain and offset on the second observer of every latent; the first observers are untouched.
    static ShiftSpec fixture_default();
    /// Large gains with only a slight rotation between sensors.
    static ShiftSpec scale_dominant();

    /// Throws BadDimension for mismatched sizes and SingularMixing for a singular mixing matrix.
    void validate(std::size_t sensors) const;
};

RawSeries generate_base(const BaseSpec& spec);

/// (source, target): source = base; target sensors = mixing·(gain⊙x + bias) + noise.
std::pair<RawSeries, RawSeries> synthesize_shift(const RawSeries& base, const ShiftSpec& spec);

/// Overlap coefficient ∫min(f, g) of Gaussian kernel density estimates of two samples.
double kde_overlap(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace tikuda::data
