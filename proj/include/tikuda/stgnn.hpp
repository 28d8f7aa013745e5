#pragma once

// Time-then-space regressor: sensor embedding + linear encoder, stacked GRU over
// each node's window, one single-head GAT layer over the final hidden states, and
// a linear head on the flattened node features.

#include "tikuda/autodiff.hpp"
#include "tikuda/matrix.hpp"
#include "tikuda/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tikuda::stgnn {

struct GraphSpec {
    std::size_t n_nodes = 0;
    Matrix adjacency;

    static GraphSpec full(std::size_t n);
    /// Throws AsymmetricAdjacency / BadDimension unless square, binary, symmetric with unit diagonal.
    void validate() const;
    /// Neighbours of each node (adjacency row support), ascending.
    [[nodiscard]] std::vector<std::vector<std::size_t>> neighbours() const;
};

struct ModelConfig {
    std::size_t n_nodes = 1;
    std::size_t in_features = 1;
    std::size_t window = 16;
    std::size_t hidden = 16;
    std::size_t gru_layers = 4;
    std::size_t embed_dim = 16;
    double leaky_slope = 0.2;

    void validate() const;
};

/// Named parameter matrices in a fixed order.
class ModelParams {
public:
    /// uniform(−1/√fan_in, 1/√fan_in) for every matrix, drawn in declaration order.
    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    /// Same layout filled with zeros.
    static ModelParams zeros(const ModelConfig& cfg);

    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
    [[nodiscard]] std::vector<Matrix>& values() noexcept { return values_; }
    [[nodiscard]] const std::vector<Matrix>& values() const noexcept { return values_; }
    [[nodiscard]] std::size_t size() const noexcept { return names_.size(); }
    [[nodiscard]] std::size_t scalar_count() const;

    Matrix& at(const std::string& name);
    [[nodiscard]] const Matrix& at(const std::string& name) const;
    [[nodiscard]] std::size_t index_of(const std::string& name) const;

    void add(std::string name, Matrix value);

    bool operator==(const ModelParams&) const = default;

private:
    std::vector<std::string> names_;
    std::vector<Matrix> values_;
};

/// Parameters placed on a tape, in the same order as ModelParams.
struct BoundParams {
    const ModelParams* source = nullptr;
    std::vector<ad::Value> values;

    [[nodiscard]] const ad::Value& operator[](const std::string& name) const {
        return values[source->index_of(name)];
    }
};

BoundParams bind(ad::Tape& tape, const ModelParams& params, bool trainable = true);

/// Per time step, a (B·N)×hidden matrix (row b·N + n) of encoded inputs.
std::vector<ad::Value> encode(ad::Tape& tape, const Tensor4& input, const BoundParams& p, const ModelConfig& cfg);

/// Runs the GRU stack over the encoded sequence; returns the top layer's final hidden state, (B·N)×hidden.
ad::Value gru_forward(ad::Tape& tape, const std::vector<ad::Value>& seq, const BoundParams& p, const ModelConfig& cfg);

/// One GRU step h' = (1 − z)⊙n + z⊙h for layer `layer`.
ad::Value gru_cell(const ad::Value& x, const ad::Value& h, const BoundParams& p, std::size_t layer, std::size_t hidden);

struct Attention {
    std::vector<std::size_t> source;  // global row u = b·N + node
    std::vector<std::size_t> target;  // global row v
    std::vector<double> weight;       // α_{u,v}
};

/// Single-head graph attention over h ((B·N)×hidden). Optionally reports the attention weights.
ad::Value gat_forward(ad::Tape& tape, const ad::Value& h, std::size_t batch, const GraphSpec& graph,
                      const BoundParams& p, const ModelConfig& cfg, Attention* attention = nullptr);

struct ModelOutput {
    ad::Value features;    // B×(N·hidden), node-major
    ad::Value prediction;  // B×1
};

ModelOutput forward(ad::Tape& tape, const Tensor4& input, const GraphSpec& graph, const BoundParams& p,
                    const ModelConfig& cfg);

/// Binary checkpoint: magic, version, string metadata, then named matrices. Round trip is bit-exact.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    ModelParams params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

ModelConfig config_from_meta(const std::map<std::string, std::string>& meta);
void config_to_meta(const ModelConfig& cfg, std::map<std::string, std::string>& meta);

}  // namespace tikuda::stgnn
