#include "tikuda/stgnn.hpp"

#include "tikuda/errors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace tikuda::stgnn {

using ad::Value;

GraphSpec GraphSpec::full(std::size_t n) {
    if (n == 0) {
        throw BadDimension("graph: need at least one node");
    }
    return {n, Matrix(n, n, 1.0)};
}

void GraphSpec::validate() const {
    if (adjacency.rows() != n_nodes || adjacency.cols() != n_nodes) {
        throw BadDimension("graph: adjacency " + adjacency.shape_string() + " for " + std::to_string(n_nodes) +
                           " nodes");
    }
    for (std::size_t i = 0; i < n_nodes; ++i) {
        if (adjacency(i, i) != 1.0) {
            throw BadDimension("graph: missing self-loop at node " + std::to_string(i));
        }
        for (std::size_t j = 0; j < n_nodes; ++j) {
            const double v = adjacency(i, j);
            if (v != 0.0 && v != 1.0) {
                throw BadDimension("graph: adjacency entry (" + std::to_string(i) + ", " + std::to_string(j) +
                                   ") is not 0/1");
            }
            if (v != adjacency(j, i)) {
                throw AsymmetricAdjacency("graph: adjacency differs at (" + std::to_string(i) + ", " +
                                          std::to_string(j) + ")");
            }
        }
    }
}

std::vector<std::vector<std::size_t>> GraphSpec::neighbours() const {
    std::vector<std::vector<std::size_t>> out(n_nodes);
    for (std::size_t u = 0; u < n_nodes; ++u) {
        for (std::size_t v = 0; v < n_nodes; ++v) {
            if (adjacency(u, v) != 0.0) {
                out[u].push_back(v);
            }
        }
    }
    return out;
}

void ModelConfig::validate() const {
    if (n_nodes == 0 || in_features == 0 || window == 0 || hidden == 0 || gru_layers == 0 || embed_dim == 0) {
        throw ConfigError("model: n_nodes, in_features, window, hidden, gru_layers and embed_dim must all be >= 1");
    }
    if (!(leaky_slope >= 0.0) || leaky_slope >= 1.0) {
        throw ConfigError("model: leaky_slope must lie in [0, 1)");
    }
}

namespace {

std::string gru_name(std::size_t layer, const char* what) { return "gru" + std::to_string(layer) + "." + what; }

// Declares every parameter with its shape and fan-in, in checkpoint order.
template <class F>
void for_each_param(const ModelConfig& c, F&& f) {
    const std::size_t d = c.hidden;
    const std::size_t enc_fan = c.in_features + c.embed_dim;
    f("embedding", c.n_nodes, c.embed_dim, c.embed_dim);
    f("encoder.w_feat", c.in_features, d, enc_fan);
    f("encoder.w_embed", c.embed_dim, d, enc_fan);
    f("encoder.bias", 1, d, enc_fan);
    for (std::size_t l = 0; l < c.gru_layers; ++l) {
        f(gru_name(l, "w_ih"), d, 3 * d, d);
        f(gru_name(l, "w_hh"), d, 3 * d, d);
        f(gru_name(l, "b_ih"), 1, 3 * d, d);
        f(gru_name(l, "b_hh"), 1, 3 * d, d);
    }
    f("gat.weight", d, d, d);
    f("gat.attn_src", d, 1, 2 * d);
    f("gat.attn_dst", d, 1, 2 * d);
    f("head.weight", c.n_nodes * d, 1, c.n_nodes * d);
    f("head.bias", 1, 1, c.n_nodes * d);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 gen(seed);
    ModelParams p;
    for_each_param(cfg, [&](const std::string& name, std::size_t r, std::size_t c, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        Matrix m(r, c);
        for (double& v : m.flat()) {
            v = u(gen);
        }
        p.add(name, std::move(m));
    });
    return p;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    for_each_param(cfg, [&](const std::string& name, std::size_t r, std::size_t c, std::size_t) {
        p.add(name, Matrix(r, c));
    });
    return p;
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const Matrix& m : values_) {
        n += m.size();
    }
    return n;
}

std::size_t ModelParams::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) {
            return i;
        }
    }
    throw ConfigError("model: no parameter named '" + name + "'");
}

Matrix& ModelParams::at(const std::string& name) { return values_[index_of(name)]; }
const Matrix& ModelParams::at(const std::string& name) const { return values_[index_of(name)]; }

void ModelParams::add(std::string name, Matrix value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
}

BoundParams bind(ad::Tape& tape, const ModelParams& params, bool trainable) {
    BoundParams b;
    b.source = &params;
    for (const Matrix& m : params.values()) {
        b.values.push_back(trainable ? tape.variable(m) : tape.constant(m));
    }
    return b;
}

namespace {

void require_input(const Tensor4& input, const ModelConfig& cfg) {
    if (input.nodes() != cfg.n_nodes || input.features() != cfg.in_features || input.steps() == 0) {
        throw ShapeMismatch("model input " + std::to_string(input.batch()) + "x" + std::to_string(input.nodes()) +
                            "x" + std::to_string(input.steps()) + "x" + std::to_string(input.features()) +
                            " does not match config (N=" + std::to_string(cfg.n_nodes) +
                            ", F=" + std::to_string(cfg.in_features) + ")");
    }
    if (input.batch() == 0) {
        throw EmptyDataset("model input has an empty batch");
    }
}

}  // namespace

std::vector<Value> encode(ad::Tape& tape, const Tensor4& input, const BoundParams& p, const ModelConfig& cfg) {
    require_input(input, cfg);
    const std::size_t bn = input.batch() * input.nodes();
    std::vector<std::size_t> node_of(bn);
    for (std::size_t r = 0; r < bn; ++r) {
        node_of[r] = r % input.nodes();
    }
    // [x ‖ e]·W = x·W_feat + e·W_embed; the embedding half is the same at every step.
    Value emb = ad::matmul(ad::gather_rows(p["embedding"], node_of), p["encoder.w_embed"]);
    Value shift = ad::add(emb, p["encoder.bias"]);
    std::vector<Value> out;
    out.reserve(input.steps());
    for (std::size_t t = 0; t < input.steps(); ++t) {
        Value x = tape.constant(input.step(t));
        out.push_back(ad::add(ad::matmul(x, p["encoder.w_feat"]), shift));
    }
    return out;
}

Value gru_cell(const Value& x, const Value& h, const BoundParams& p, std::size_t layer, std::size_t) {
    Value gi = ad::add(ad::matmul(x, p[gru_name(layer, "w_ih")]), p[gru_name(layer, "b_ih")]);
    Value gh = ad::add(ad::matmul(h, p[gru_name(layer, "w_hh")]), p[gru_name(layer, "b_hh")]);
    return ad::gru_gates(gi, gh, h);
}

Value gru_forward(ad::Tape& tape, const std::vector<Value>& seq, const BoundParams& p, const ModelConfig& cfg) {
    if (seq.empty()) {
        throw ShapeMismatch("gru_forward: empty sequence");
    }
    const std::size_t rows = seq.front().rows();
    std::vector<Value> layer_in = seq;
    for (std::size_t l = 0; l < cfg.gru_layers; ++l) {
        Value h = tape.constant(Matrix(rows, cfg.hidden));
        std::vector<Value> layer_out;
        layer_out.reserve(layer_in.size());
        for (const Value& x : layer_in) {
            if (x.rows() != rows || x.cols() != cfg.hidden) {
                throw ShapeMismatch("gru_forward: step " + x.data().shape_string() + ", expected " +
                                    std::to_string(rows) + "x" + std::to_string(cfg.hidden));
            }
            h = gru_cell(x, h, p, l, cfg.hidden);
            layer_out.push_back(h);
        }
        layer_in = std::move(layer_out);
    }
    return layer_in.back();
}

Value gat_forward(ad::Tape&, const Value& h, std::size_t batch, const GraphSpec& graph, const BoundParams& p,
                  const ModelConfig& cfg, Attention* attention) {
    const std::size_t n = graph.n_nodes;
    if (n != cfg.n_nodes || h.rows() != batch * n || h.cols() != cfg.hidden) {
        throw ShapeMismatch("gat_forward: hidden " + h.data().shape_string() + " for batch " + std::to_string(batch) +
                            " over " + std::to_string(n) + " nodes");
    }
    const auto nb = graph.neighbours();
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;
    for (std::size_t u = 0; u < n; ++u) {
        if (nb[u].empty()) {
            throw IsolatedNode("gat_forward: node " + std::to_string(u) + " has no neighbours");
        }
    }
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t u = 0; u < n; ++u) {
            for (std::size_t v : nb[u]) {
                src.push_back(b * n + u);
                dst.push_back(b * n + v);
            }
        }
    }
    Value wh = ad::matmul(h, p["gat.weight"]);
    // aᵀ[Wh_u ‖ Wh_v] splits into a source half and a target half.
    Value s_src = ad::matmul(wh, p["gat.attn_src"]);
    Value s_dst = ad::matmul(wh, p["gat.attn_dst"]);
    Value e = ad::leaky_relu(ad::add(ad::gather_rows(s_src, src), ad::gather_rows(s_dst, dst)), cfg.leaky_slope);
    Value alpha = ad::softmax_over_group(e, src);
    if (attention != nullptr) {
        attention->source = src;
        attention->target = dst;
        const auto w = alpha.data().flat();
        attention->weight.assign(w.begin(), w.end());
    }
    Value msg = ad::elementwise_mul(ad::gather_rows(wh, dst), alpha);
    return ad::scatter_add_rows(msg, src, batch * n);
}

ModelOutput forward(ad::Tape& tape, const Tensor4& input, const GraphSpec& graph, const BoundParams& p,
                    const ModelConfig& cfg) {
    std::vector<Value> seq = encode(tape, input, p, cfg);
    Value h = gru_forward(tape, seq, p, cfg);
    Value g = gat_forward(tape, h, input.batch(), graph, p, cfg);
    Value features = ad::reshape(g, input.batch(), cfg.n_nodes * cfg.hidden);
    Value pred = ad::add(ad::matmul(features, p["head.weight"]), p["head.bias"]);
    return {features, pred};
}

namespace {

constexpr char kMagic[4] = {'T', 'K', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ofstream& out, const std::string& s) {
    put(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw CheckpointError("checkpoint " + path.string() + ": truncated");
    }
    return v;
}

std::string get_string(std::ifstream& in, const std::filesystem::path& path) {
    const auto n = get<std::uint32_t>(in, path);
    if (n > (1u << 20)) {
        throw CheckpointError("checkpoint " + path.string() + ": implausible string length");
    }
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) {
        throw CheckpointError("checkpoint " + path.string() + ": truncated");
    }
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CheckpointError("cannot write checkpoint " + path.string());
    }
    out.write(kMagic, 4);
    put(out, kVersion);
    put(out, static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        put_string(out, k);
        put_string(out, v);
    }
    const ModelParams& p = ckpt.params;
    put(out, static_cast<std::uint32_t>(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Matrix& m = p.values()[i];
        put_string(out, p.names()[i]);
        put(out, static_cast<std::uint64_t>(m.rows()));
        put(out, static_cast<std::uint64_t>(m.cols()));
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!out) {
        throw CheckpointError("error while writing checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError("checkpoint " + path.string() + ": bad magic");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw CheckpointError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    const auto n_meta = get<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = get_string(in, path);
        ck.meta[k] = get_string(in, path);
    }
    const auto n_params = get<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        std::string name = get_string(in, path);
        const auto rows = get<std::uint64_t>(in, path);
        const auto cols = get<std::uint64_t>(in, path);
        if (rows * cols > (std::uint64_t{1} << 32)) {
            throw CheckpointError("checkpoint " + path.string() + ": implausible shape for " + name);
        }
        Matrix m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!in) {
            throw CheckpointError("checkpoint " + path.string() + ": truncated in " + name);
        }
        ck.params.add(std::move(name), std::move(m));
    }
    return ck;
}

namespace {

std::size_t meta_size(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw CheckpointError("checkpoint metadata lacks '" + key + "'");
    }
    return static_cast<std::size_t>(std::stoull(it->second));
}

}  // namespace

ModelConfig config_from_meta(const std::map<std::string, std::string>& meta) {
    ModelConfig c;
    c.n_nodes = meta_size(meta, "model.n_nodes");
    c.in_features = meta_size(meta, "model.in_features");
    c.window = meta_size(meta, "model.window");
    c.hidden = meta_size(meta, "model.hidden");
    c.gru_layers = meta_size(meta, "model.gru_layers");
    c.embed_dim = meta_size(meta, "model.embed_dim");
    auto it = meta.find("model.leaky_slope");
    if (it == meta.end()) {
        throw CheckpointError("checkpoint metadata lacks 'model.leaky_slope'");
    }
    c.leaky_slope = std::stod(it->second);
    c.validate();
    return c;
}

void config_to_meta(const ModelConfig& c, std::map<std::string, std::string>& meta) {
    meta["model.n_nodes"] = std::to_string(c.n_nodes);
    meta["model.in_features"] = std::to_string(c.in_features);
    meta["model.window"] = std::to_string(c.window);
    meta["model.hidden"] = std::to_string(c.hidden);
    meta["model.gru_layers"] = std::to_string(c.gru_layers);
    meta["model.embed_dim"] = std::to_string(c.embed_dim);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", c.leaky_slope);
    meta["model.leaky_slope"] = buf;
}

}  // namespace tikuda::stgnn
