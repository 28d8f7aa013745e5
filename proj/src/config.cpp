#include "tikuda/config.hpp"

#include "tikuda/errors.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace tikuda::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::string where(const std::string& section, const std::string& key) { return section + "." + key; }

double to_double(const std::string& v, const std::string& name) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(name + ": '" + v + "' is not a number");
    }
    return out;
}

std::uint64_t to_u64(const std::string& v, const std::string& name) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(name + ": '" + v + "' is not a non-negative integer");
    }
    return out;
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    if (trim(v).empty()) {
        return out;
    }
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(trim(item));
    }
    return out;
}

std::vector<double> to_doubles(const std::string& v, const std::string& name) {
    std::vector<double> out;
    for (const std::string& s : split_list(v)) {
        out.push_back(to_double(s, name));
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + v[i];
    }
    return out;
}

std::string join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + fmt(v[i]);
    }
    return out;
}

struct Field {
    std::string section;
    std::string key;
    std::function<void(const std::string&)> set;
    std::function<std::optional<std::string>()> get;
};

std::vector<Field> fields(RunConfig& c) {
    std::vector<Field> f;
    auto text = [&f](std::string s, std::string k, std::string& ref) {
        f.push_back({s, k, [&ref](const std::string& v) { ref = v; }, [&ref] { return std::optional(ref); }});
    };
    auto size = [&f](std::string s, std::string k, std::size_t& ref) {
        const std::string name = where(s, k);
        f.push_back({s, k, [&ref, name](const std::string& v) { ref = to_u64(v, name); },
                     [&ref] { return std::optional(std::to_string(ref)); }});
    };
    auto u64 = [&f](std::string s, std::string k, std::uint64_t& ref) {
        const std::string name = where(s, k);
        f.push_back({s, k, [&ref, name](const std::string& v) { ref = to_u64(v, name); },
                     [&ref] { return std::optional(std::to_string(ref)); }});
    };
    auto real = [&f](std::string s, std::string k, double& ref) {
        const std::string name = where(s, k);
        f.push_back({s, k, [&ref, name](const std::string& v) { ref = to_double(v, name); },
                     [&ref] { return std::optional(fmt(ref)); }});
    };
    auto opt_real = [&f](std::string s, std::string k, std::optional<double>& ref) {
        const std::string name = where(s, k);
        f.push_back({s, k, [&ref, name](const std::string& v) { ref = to_double(v, name); },
                     [&ref] { return ref ? std::optional(fmt(*ref)) : std::nullopt; }});
    };
    auto opt_list = [&f](std::string s, std::string k, std::optional<std::vector<double>>& ref) {
        const std::string name = where(s, k);
        f.push_back({s, k, [&ref, name](const std::string& v) { ref = to_doubles(v, name); },
                     [&ref] { return ref ? std::optional(join(*ref)) : std::nullopt; }});
    };

    DataSection& d = c.data;
    text("data", "source", d.source);
    text("data", "target", d.target);
    text("data", "target_column", d.target_column);
    text("data", "timestamp", d.timestamp);
    f.push_back({"data", "sensors", [&d](const std::string& v) { d.sensors = split_list(v); },
                 [&d] { return std::optional(join(d.sensors)); }});
    size("data", "window", d.window);
    size("data", "stride", d.stride);
    text("data", "graph", d.graph);
    text("data", "adjacency", d.adjacency);
    text("data", "synthetic", d.synthetic);

    SyntheticSection& s = c.synthetic;
    size("synthetic", "sensors", s.sensors);
    size("synthetic", "latents", s.latents);
    size("synthetic", "steps", s.steps);
    real("synthetic", "sensor_noise", s.sensor_noise);
    u64("synthetic", "base_seed", s.base_seed);
    u64("synthetic", "shift_seed", s.shift_seed);
    opt_real("synthetic", "noise", s.noise);
    opt_list("synthetic", "gain", s.gain);
    opt_list("synthetic", "bias", s.bias);
    opt_list("synthetic", "mixing", s.mixing);
    real("synthetic", "label_drift", s.label_drift);

    stgnn::ModelConfig& m = c.model;
    size("model", "hidden", m.hidden);
    size("model", "gru_layers", m.gru_layers);
    size("model", "embed_dim", m.embed_dim);
    real("model", "leaky_slope", m.leaky_slope);

    train::TrainConfig& t = c.train;
    real("train", "lr", t.lr);
    size("train", "batch", t.batch);
    size("train", "epochs", t.epochs);
    real("train", "gamma_angle", t.gamma_angle);
    real("train", "gamma_scale", t.gamma_scale);
    real("train", "schedule_gain", t.schedule_gain);
    f.push_back({"train", "method", [&t](const std::string& v) { t.method = train::parse_method(v); },
                 [&t] { return std::optional(train::to_string(t.method)); }});
    u64("train", "seed", t.seed);
    size("train", "seeds", t.seeds);
    real("train", "holdout_fraction", t.holdout_fraction);

    align::AlignmentConfig& a = t.alignment;
    real("alignment", "alpha", a.alpha);
    f.push_back({"alignment", "similarity",
                 [&a](const std::string& v) { a.similarity = align::parse_similarity(v); },
                 [&a] { return std::optional(align::to_string(a.similarity)); }});
    size("alignment", "power_iters", a.power.max_iters);
    real("alignment", "power_tol", a.power.tol);
    u64("alignment", "power_seed", a.power.seed);
    real("alignment", "epsilon_norm", a.epsilon_norm);
    real("alignment", "dare_gram_energy_threshold", a.dare_gram_energy_threshold);

    text("output", "dir", c.output_dir);
    return f;
}

}  // namespace

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
    for (Field& f : fields(*this)) {
        if (f.section == section && f.key == key) {
            f.set(trim(value));
            return;
        }
    }
    throw ConfigError("unknown config key '" + where(section, key) + "'");
}

void RunConfig::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("expected section.key=value, got '" + assignment + "'");
    }
    set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)), assignment.substr(eq + 1));
}

std::string RunConfig::snapshot() const {
    std::string out;
    std::string section;
    for (const Field& f : fields(const_cast<RunConfig&>(*this))) {
        const std::optional<std::string> v = f.get();
        if (!v) {
            continue;
        }
        if (f.section != section) {
            out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + *v + "\n";
    }
    return out;
}

void RunConfig::validate() const {
    if (data.synthetic != "none" && data.synthetic != "default" && data.synthetic != "scale-dominant" &&
        data.synthetic != "identity") {
        throw ConfigError("data.synthetic must be none, default, scale-dominant or identity");
    }
    if (data.synthetic == "none" && (data.source.empty() || data.target.empty())) {
        throw ConfigError("data.source and data.target are required unless data.synthetic is set");
    }
    if (data.window == 0 || data.stride == 0) {
        throw ConfigError("data.window and data.stride must be >= 1");
    }
    if (data.graph != "full" && data.graph != "file") {
        throw ConfigError("data.graph must be full or file");
    }
    if (data.graph == "file" && data.adjacency.empty()) {
        throw ConfigError("data.graph = file needs data.adjacency");
    }
    if (model.hidden == 0 || model.gru_layers == 0 || model.embed_dim == 0) {
        throw ConfigError("model.hidden, model.gru_layers and model.embed_dim must be >= 1");
    }
    train.validate();
}

RunConfig parse(const std::string& text, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') {
            continue;
        }
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        }
        cfg.set(section, trim(t.substr(0, eq)), t.substr(eq + 1));
    }
    if (!base_dir.empty()) {
        for (std::string* p : {&cfg.data.source, &cfg.data.target, &cfg.data.adjacency}) {
            if (!p->empty() && std::filesystem::path(*p).is_relative()) {
                *p = (base_dir / *p).lexically_normal().string();
            }
        }
    }
    return cfg;
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.parent_path());
}

data::BaseSpec base_spec(const SyntheticSection& s) {
    data::BaseSpec b;
    b.sensors = s.sensors;
    b.latents = s.latents;
    b.steps = s.steps;
    b.sensor_noise = s.sensor_noise;
    b.seed = s.base_seed;
    return b;
}

data::ShiftSpec shift_spec(const SyntheticSection& s, const std::string& preset) {
    data::ShiftSpec spec;
    if (preset == "default") {
        spec = data::ShiftSpec::fixture_default();
    } else if (preset == "scale-dominant") {
        spec = data::ShiftSpec::scale_dominant();
    } else if (preset == "identity") {
        spec = data::ShiftSpec::identity(s.sensors);
    } else {
        throw ConfigError("unknown shift preset '" + preset + "'");
    }
    if (spec.gain.size() != s.sensors && !s.gain && !s.mixing) {
        throw ConfigError("shift preset '" + preset + "' is defined for " + std::to_string(spec.gain.size()) +
                          " sensors; synthetic.sensors is " + std::to_string(s.sensors));
    }
    if (s.gain) spec.gain = *s.gain;
    if (s.bias) spec.bias = *s.bias;
    if (s.mixing) {
        const std::size_t n = s.sensors;
        if (s.mixing->size() != n * n) {
            throw ConfigError("synthetic.mixing needs " + std::to_string(n * n) + " entries");
        }
        spec.mixing = Matrix(n, n, *s.mixing);
    }
    if (s.noise) spec.noise = *s.noise;
    spec.label_drift = s.label_drift;
    spec.seed = s.shift_seed;
    return spec;
}

Experiment prepare(const RunConfig& cfg, const data::Normalizer* normalizer) {
    cfg.validate();
    Experiment e;
    if (cfg.data.synthetic != "none") {
        const data::ShiftSpec spec = shift_spec(cfg.synthetic, cfg.data.synthetic);
        try {
            spec.validate(cfg.synthetic.sensors);
        } catch (const BadDimension& err) {
            throw ConfigError(err.what());
        }
        std::tie(e.source_raw, e.target_raw) = data::synthesize_shift(data::generate_base(base_spec(cfg.synthetic)), spec);
    } else {
        const data::CsvSchema schema{cfg.data.sensors, cfg.data.target_column, cfg.data.timestamp};
        e.source_raw = data::load_csv(cfg.data.source, schema);
        e.target_raw = data::load_csv(cfg.data.target, schema);
    }
    e.sensors = cfg.data.sensors.empty() ? e.source_raw.sensor_columns() : cfg.data.sensors;
    e.normalizer = normalizer ? *normalizer : data::Normalizer::fit(e.source_raw);
    e.source = data::make_windows(e.normalizer.apply(e.source_raw), e.sensors, cfg.data.window, cfg.data.stride,
                                  "source");
    e.target = data::make_windows(e.normalizer.apply(e.target_raw), e.sensors, cfg.data.window, cfg.data.stride,
                                  "target");
    e.label_range = e.normalizer.range(e.source_raw.target);
    e.model.config = cfg.model;
    e.model.config.n_nodes = e.sensors.size();
    e.model.config.in_features = 1;
    e.model.config.window = cfg.data.window;
    e.model.graph = data::build_graph(cfg.data.graph, e.sensors, cfg.data.adjacency);
    return e;
}

void normalizer_to_meta(const data::Normalizer& n, std::map<std::string, std::string>& meta) {
    meta["norm.columns"] = join(n.columns);
    for (std::size_t i = 0; i < n.columns.size(); ++i) {
        meta["norm." + n.columns[i] + ".min"] = fmt(n.min[i]);
        meta["norm." + n.columns[i] + ".max"] = fmt(n.max[i]);
    }
}

data::Normalizer normalizer_from_meta(const std::map<std::string, std::string>& meta) {
    auto get = [&meta](const std::string& key) {
        auto it = meta.find(key);
        if (it == meta.end()) {
            throw CheckpointError("checkpoint metadata lacks '" + key + "'");
        }
        return it->second;
    };
    data::Normalizer n;
    n.columns = split_list(get("norm.columns"));
    for (const std::string& c : n.columns) {
        n.min.push_back(to_double(get("norm." + c + ".min"), "norm." + c + ".min"));
        n.max.push_back(to_double(get("norm." + c + ".max"), "norm." + c + ".max"));
    }
    return n;
}

}  // namespace tikuda::config
