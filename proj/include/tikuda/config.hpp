#pragma once

// Sectioned key=value run configuration. Every field is addressable as section.key;
// unknown sections or keys are errors.

#include "tikuda/data.hpp"
#include "tikuda/stgnn.hpp"
#include "tikuda/trainer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tikuda::config {

struct DataSection {
    std::string source;  // csv paths; empty when `synthetic` is set
    std::string target;
    std::string target_column = "y";
    std::string timestamp;
    std::vector<std::string> sensors;  // empty: every non-target column
    std::size_t window = 16;
    std::size_t stride = 1;
    std::string graph = "full";  // full | file
    std::string adjacency;
    std::string synthetic = "none";  // none | default | scale-dominant | identity
};

struct SyntheticSection {
    std::size_t sensors = 6;
    std::size_t latents = 3;
    std::size_t steps = 3000;
    double sensor_noise = 0.05;
    std::uint64_t base_seed = 7;
    std::uint64_t shift_seed = 11;
    std::optional<double> noise;
    std::optional<std::vector<double>> gain;
    std::optional<std::vector<double>> bias;
    std::optional<std::vector<double>> mixing;  // row-major
    double label_drift = 0.0;
};

struct RunConfig {
    DataSection data;
    SyntheticSection synthetic;
    stgnn::ModelConfig model;  // n_nodes, in_features and window are filled from the data
    train::TrainConfig train;
    std::string output_dir = "run";

    /// Applies "section.key=value"; throws ConfigError on unknown keys or bad values.
    void set(const std::string& assignment);
    void set(const std::string& section, const std::string& key, const std::string& value);

    /// Canonical text form; parsing it reproduces this config.
    [[nodiscard]] std::string snapshot() const;

    void validate() const;
};

RunConfig parse(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load(const std::filesystem::path& path);

/// The shift named by data.synthetic (or `preset`) with [synthetic] overrides applied.
data::ShiftSpec shift_spec(const SyntheticSection& s, const std::string& preset);
data::BaseSpec base_spec(const SyntheticSection& s);

/// Loaded, normalized and windowed experiment inputs.
struct Experiment {
    data::RawSeries source_raw;
    data::RawSeries target_raw;
    data::Normalizer normalizer;
    data::WindowedDataset source;
    data::WindowedDataset target;
    train::Model model;
    std::vector<std::string> sensors;
    double label_range = 1.0;
};

/// Loads and windows the data. The normalizer is fitted on the source unless one is given.
Experiment prepare(const RunConfig& cfg, const data::Normalizer* normalizer = nullptr);

/// Normalizer bounds as checkpoint metadata (norm.<column>.min / .max) and back.
void normalizer_to_meta(const data::Normalizer& n, std::map<std::string, std::string>& meta);
data::Normalizer normalizer_from_meta(const std::map<std::string, std::string>& meta);

}  // namespace tikuda::config
