#include "tikuda/data.hpp"

#include "tikuda/errors.hpp"
#include "tikuda/kernels.hpp"
#include "tikuda/linalg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace tikuda::data {

std::size_t RawSeries::index_of(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) {
        throw MissingColumn("series has no column '" + name + "'");
    }
    return static_cast<std::size_t>(it - columns.begin());
}

const std::vector<double>& RawSeries::column(const std::string& name) const { return values[index_of(name)]; }
std::vector<double>& RawSeries::column(const std::string& name) { return values[index_of(name)]; }

std::vector<std::string> RawSeries::sensor_columns() const {
    std::vector<std::string> out;
    for (const std::string& c : columns) {
        if (c != target) {
            out.push_back(c);
        }
    }
    return out;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                                          : comma - start)));
        if (comma == std::string::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) {
        return false;
    }
    const char* first = s.data();
    if (*first == '+') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

RawSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw EmptyAfterCleaning(path.string() + ": file is empty");
    }
    const std::vector<std::string> header = split_csv(line);
    auto find = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw MissingColumn(path.string() + ": missing column '" + name + "'");
        }
        return static_cast<std::size_t>(it - header.begin());
    };
    if (schema.target.empty()) {
        throw MissingColumn(path.string() + ": no target column named in the schema");
    }
    std::vector<std::string> sensors = schema.sensors;
    if (sensors.empty()) {
        for (const std::string& h : header) {
            if (h != schema.target && h != schema.timestamp) {
                sensors.push_back(h);
            }
        }
    }
    RawSeries s;
    s.columns = sensors;
    s.columns.push_back(schema.target);
    s.target = schema.target;
    std::vector<std::size_t> idx;
    for (const std::string& c : s.columns) {
        idx.push_back(find(c));
    }
    const bool has_ts = !schema.timestamp.empty();
    const std::size_t ts_idx = has_ts ? find(schema.timestamp) : 0;
    s.values.assign(s.columns.size(), {});
    std::vector<double> row(idx.size());
    while (std::getline(in, line)) {
        if (trim(line).empty()) {
            continue;
        }
        const std::vector<std::string> cells = split_csv(line);
        bool ok = cells.size() == header.size();
        for (std::size_t k = 0; ok && k < idx.size(); ++k) {
            ok = parse_double(cells[idx[k]], row[k]);
        }
        if (!ok) {
            ++s.dropped_rows;
            continue;
        }
        for (std::size_t k = 0; k < idx.size(); ++k) {
            s.values[k].push_back(row[k]);
        }
        if (has_ts) {
            s.timestamps.push_back(cells[ts_idx]);
        }
    }
    if (s.length() == 0) {
        throw EmptyAfterCleaning(path.string() + ": no usable rows (" + std::to_string(s.dropped_rows) + " dropped)");
    }
    return s;
}

void write_csv(const std::filesystem::path& path, const RawSeries& s) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    const bool has_ts = !s.timestamps.empty();
    if (has_ts) {
        out << "timestamp,";
    }
    for (std::size_t c = 0; c < s.columns.size(); ++c) {
        out << (c ? "," : "") << s.columns[c];
    }
    out << '\n';
    char buf[32];
    for (std::size_t t = 0; t < s.length(); ++t) {
        if (has_ts) {
            out << s.timestamps[t] << ',';
        }
        for (std::size_t c = 0; c < s.columns.size(); ++c) {
            const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, s.values[c][t]);
            out << (c ? "," : "") << std::string_view(buf, static_cast<std::size_t>(end - buf));
        }
        out << '\n';
    }
    if (!out) {
        throw DataError("error while writing " + path.string());
    }
}

std::uint64_t checksum(const RawSeries& s) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (std::size_t c = 0; c < s.columns.size(); ++c) {
        mix(s.columns[c].data(), s.columns[c].size());
        mix(s.values[c].data(), s.values[c].size() * sizeof(double));
    }
    return h;
}

Normalizer Normalizer::fit(const RawSeries& s) {
    if (s.length() == 0) {
        throw EmptyAfterCleaning("normalizer: empty series");
    }
    Normalizer n;
    for (std::size_t c = 0; c < s.columns.size(); ++c) {
        const auto [lo, hi] = std::minmax_element(s.values[c].begin(), s.values[c].end());
        if (!(*hi > *lo)) {
            throw ConstantColumn("normalizer: column '" + s.columns[c] + "' is constant");
        }
        n.columns.push_back(s.columns[c]);
        n.min.push_back(*lo);
        n.max.push_back(*hi);
    }
    return n;
}

std::size_t Normalizer::index_of(const std::string& column) const {
    auto it = std::find(columns.begin(), columns.end(), column);
    if (it == columns.end()) {
        throw MissingColumn("normalizer has no column '" + column + "'");
    }
    return static_cast<std::size_t>(it - columns.begin());
}

double Normalizer::normalize(const std::string& column, double v) const {
    const std::size_t i = index_of(column);
    return (v - min[i]) / (max[i] - min[i]);
}

double Normalizer::denormalize(const std::string& column, double v) const {
    const std::size_t i = index_of(column);
    return v * (max[i] - min[i]) + min[i];
}

double Normalizer::range(const std::string& column) const {
    const std::size_t i = index_of(column);
    return max[i] - min[i];
}

RawSeries Normalizer::apply(const RawSeries& s) const {
    RawSeries out = s;
    for (std::size_t c = 0; c < out.columns.size(); ++c) {
        const std::size_t i = index_of(out.columns[c]);
        const double lo = min[i];
        const double span = max[i] - min[i];
        for (double& v : out.values[c]) {
            v = (v - lo) / span;
        }
    }
    return out;
}

std::size_t window_count(std::size_t length, std::size_t window, std::size_t stride) {
    if (window == 0 || stride == 0) {
        throw OutOfRange("windows: window and stride must be >= 1");
    }
    return length < window ? 0 : (length - window) / stride + 1;
}

WindowedDataset make_windows(const RawSeries& s, const std::vector<std::string>& sensors, std::size_t window,
                             std::size_t stride, const std::string& domain) {
    const std::size_t count = window_count(s.length(), window, stride);
    WindowedDataset ds;
    ds.domain = domain;
    ds.sensors = sensors;
    ds.samples = Tensor4(count, sensors.size(), window, 1);
    ds.labels = Matrix(count, 1);
    std::vector<const std::vector<double>*> cols;
    for (const std::string& name : sensors) {
        cols.push_back(&s.column(name));
    }
    const std::vector<double>& y = s.column(s.target);
    for (std::size_t b = 0; b < count; ++b) {
        const std::size_t start = b * stride;
        ds.starts.push_back(start);
        for (std::size_t n = 0; n < sensors.size(); ++n) {
            for (std::size_t t = 0; t < window; ++t) {
                ds.samples.at(b, n, t, 0) = (*cols[n])[start + t];
            }
        }
        ds.labels(b, 0) = y[start + window - 1];
    }
    return ds;
}

WindowedDataset tail(const WindowedDataset& ds, double fraction) {
    if (!(fraction >= 0.0) || fraction >= 1.0) {
        throw OutOfRange("holdout fraction must lie in [0, 1)");
    }
    if (fraction == 0.0) {
        return ds;
    }
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ds.size()))));
    const std::size_t first = ds.size() - std::min(keep, ds.size());
    std::vector<std::size_t> idx;
    for (std::size_t i = first; i < ds.size(); ++i) {
        idx.push_back(i);
    }
    WindowedDataset out;
    out.domain = ds.domain;
    out.sensors = ds.sensors;
    out.samples = ds.samples.select(idx);
    out.labels = Matrix(idx.size(), 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.labels(i, 0) = ds.labels(idx[i], 0);
        out.starts.push_back(ds.starts[idx[i]]);
    }
    return out;
}

stgnn::GraphSpec load_adjacency(const std::filesystem::path& path, const std::vector<std::string>& sensors) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open adjacency file " + path.string());
    }
    std::vector<std::string> names;
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) {
            continue;
        }
        std::istringstream ss(t[0] == '#' ? t.substr(1) : t);
        std::string tok;
        if (t[0] == '#') {
            if (rows.empty() && names.empty()) {
                while (ss >> tok) {
                    names.push_back(tok);
                }
            }
            continue;
        }
        std::vector<double> row;
        while (ss >> tok) {
            if (tok != "0" && tok != "1") {
                throw BadDimension(path.string() + ": entry '" + tok + "' is not 0 or 1");
            }
            row.push_back(tok == "1" ? 1.0 : 0.0);
        }
        rows.push_back(std::move(row));
    }
    const std::size_t n = rows.size();
    for (const auto& r : rows) {
        if (r.size() != n) {
            throw BadDimension(path.string() + ": adjacency is not square (" + std::to_string(n) + " rows, a row of " +
                               std::to_string(r.size()) + ")");
        }
    }
    if (!names.empty() && names.size() != n) {
        throw BadDimension(path.string() + ": header names " + std::to_string(names.size()) + " nodes, matrix has " +
                           std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (rows[i][j] != rows[j][i]) {
                throw AsymmetricAdjacency(path.string() + ": entries (" + std::to_string(i) + ", " +
                                          std::to_string(j) + ") and its mirror differ");
            }
        }
    }
    std::vector<std::size_t> pick;
    if (names.empty()) {
        if (!sensors.empty() && sensors.size() != n) {
            throw BadDimension(path.string() + ": " + std::to_string(n) + " nodes for " +
                               std::to_string(sensors.size()) + " sensors");
        }
        for (std::size_t i = 0; i < n; ++i) {
            pick.push_back(i);
        }
    } else {
        const std::vector<std::string>& want = sensors.empty() ? names : sensors;
        for (const std::string& s : want) {
            auto it = std::find(names.begin(), names.end(), s);
            if (it == names.end()) {
                throw MissingColumn(path.string() + ": no node named '" + s + "'");
            }
            pick.push_back(static_cast<std::size_t>(it - names.begin()));
        }
    }
    if (pick.empty()) {
        throw BadDimension(path.string() + ": empty adjacency");
    }
    stgnn::GraphSpec g{pick.size(), Matrix(pick.size(), pick.size())};
    for (std::size_t i = 0; i < pick.size(); ++i) {
        for (std::size_t j = 0; j < pick.size(); ++j) {
            g.adjacency(i, j) = i == j ? 1.0 : rows[pick[i]][pick[j]];
        }
    }
    return g;
}

stgnn::GraphSpec build_graph(const std::string& kind, const std::vector<std::string>& sensors,
                             const std::filesystem::path& adjacency_file) {
    if (kind == "full") {
        return stgnn::GraphSpec::full(sensors.size());
    }
    if (kind == "file") {
        return load_adjacency(adjacency_file, sensors);
    }
    throw ConfigError("unknown graph kind '" + kind + "' (expected full or file)");
}

ShiftSpec ShiftSpec::identity(std::size_t sensors) {
    ShiftSpec s;
    s.gain.assign(sensors, 1.0);
    s.bias.assign(sensors, 0.0);
    s.mixing = Matrix::identity(sensors);
    return s;
}

ShiftSpec ShiftSpec::fixture_default() {
    ShiftSpec s = identity(6);
    for (std::size_t i = 3; i < 6; ++i) {
        s.gain[i] = 2.5;
        s.bias[i] = 1.0;
    }
    s.noise = 0.02;
    return s;
}

ShiftSpec ShiftSpec::scale_dominant() {
    ShiftSpec s = identity(6);
    for (std::size_t i = 3; i < 6; ++i) {
        s.gain[i] = 3.0;
    }
    const double th = 0.1;
    s.mixing(0, 0) = s.mixing(1, 1) = std::cos(th);
    s.mixing(0, 1) = -std::sin(th);
    s.mixing(1, 0) = std::sin(th);
    s.noise = 0.02;
    return s;
}

void ShiftSpec::validate(std::size_t sensors) const {
    if (gain.size() != sensors || bias.size() != sensors || mixing.rows() != sensors || mixing.cols() != sensors) {
        throw BadDimension("shift spec sized for " + std::to_string(gain.size()) + " gains, " +
                           std::to_string(bias.size()) + " biases, mixing " + mixing.shape_string() + "; series has " +
                           std::to_string(sensors) + " sensors");
    }
    if (!(noise >= 0.0)) {
        throw OutOfRange("shift spec: noise must be >= 0");
    }
    const EigenResult e = jacobi_eigen(kernels::matmul_tn(mixing, mixing));
    if (!(e.eigenvalues.back() > 1e-12 * std::max(1.0, e.eigenvalues.front()))) {
        throw SingularMixing("shift spec: mixing matrix is singular");
    }
}

RawSeries generate_base(const BaseSpec& spec) {
    if (spec.sensors == 0 || spec.latents == 0 || spec.steps == 0) {
        throw OutOfRange("base spec: sensors, latents and steps must be >= 1");
    }
    std::mt19937_64 gen(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // Latents: AR(1) noise on top of a slow periodic component, each with its own period.
    const std::size_t L = spec.latents;
    std::vector<std::vector<double>> z(L, std::vector<double>(spec.steps));
    for (std::size_t k = 0; k < L; ++k) {
        const double period = 40.0 + 37.0 * static_cast<double>(k);
        const double phase = 2.0 * std::numbers::pi * unif(gen);
        double ar = 0.0;
        for (std::size_t t = 0; t < spec.steps; ++t) {
            ar = 0.9 * ar + 0.3 * normal(gen);
            z[k][t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase) + ar;
        }
    }
    RawSeries s;
    s.target = "y";
    for (std::size_t i = 0; i < spec.sensors; ++i) {
        const double a = 0.8 + 0.4 * unif(gen);
        const double b = 0.4 * unif(gen) - 0.2;
        const std::size_t k = i % L;
        std::vector<double> col(spec.steps);
        for (std::size_t t = 0; t < spec.steps; ++t) {
            col[t] = a * z[k][t] + b + spec.sensor_noise * normal(gen);
        }
        s.columns.push_back("s" + std::to_string(i));
        s.values.push_back(std::move(col));
    }
    std::vector<double> y(spec.steps);
    for (std::size_t t = 0; t < spec.steps; ++t) {
        const double z1 = L > 1 ? z[1][t] : 0.0;
        const double z2 = L > 2 ? z[2][t] : 0.0;
        y[t] = std::tanh(z[0][t]) + 0.5 * z1 * z2 + 0.3 * z2;
    }
    s.columns.push_back("y");
    s.values.push_back(std::move(y));
    return s;
}

std::pair<RawSeries, RawSeries> synthesize_shift(const RawSeries& base, const ShiftSpec& spec) {
    const std::vector<std::string> sensors = base.sensor_columns();
    spec.validate(sensors.size());
    RawSeries target = base;
    std::mt19937_64 gen(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = sensors.size();
    std::vector<std::size_t> idx;
    for (const std::string& c : sensors) {
        idx.push_back(base.index_of(c));
    }
    std::vector<double> u(n);
    for (std::size_t t = 0; t < base.length(); ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            u[i] = spec.gain[i] * base.values[idx[i]][t] + spec.bias[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            double v = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (spec.mixing(i, j) != 0.0) {
                    v += spec.mixing(i, j) * u[j];
                }
            }
            if (spec.noise > 0.0) {
                v += spec.noise * normal(gen);
            }
            target.values[idx[i]][t] = v;
        }
    }
    if (spec.label_drift != 0.0) {
        for (double& v : target.column(target.target)) {
            v *= 1.0 + spec.label_drift;
        }
    }
    return {base, std::move(target)};
}

double kde_overlap(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) {
        throw OutOfRange("kde_overlap: need at least two samples per side");
    }
    auto bandwidth = [](const std::vector<double>& x) {
        double mean = 0.0;
        for (double v : x) {
            mean += v;
        }
        mean /= static_cast<double>(x.size());
        double var = 0.0;
        for (double v : x) {
            var += (v - mean) * (v - mean);
        }
        const double sd = std::sqrt(var / static_cast<double>(x.size() - 1));
        // Silverman's rule of thumb.
        return std::max(1e-12, 1.06 * sd * std::pow(static_cast<double>(x.size()), -0.2));
    };
    const double ha = bandwidth(a);
    const double hb = bandwidth(b);
    const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
    const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
    const double lo = std::min(*amin - 4 * ha, *bmin - 4 * hb);
    const double hi = std::max(*amax + 4 * ha, *bmax + 4 * hb);
    constexpr std::size_t kGrid = 512;
    const double step = (hi - lo) / static_cast<double>(kGrid - 1);
    auto density = [](const std::vector<double>& x, double h, double at) {
        double s = 0.0;
        for (double v : x) {
            const double u = (at - v) / h;
            s += std::exp(-0.5 * u * u);
        }
        return s / (static_cast<double>(x.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    };
    double overlap = 0.0;
    for (std::size_t g = 0; g < kGrid; ++g) {
        const double at = lo + step * static_cast<double>(g);
        overlap += std::min(density(a, ha, at), density(b, hb, at)) * step;
    }
    return overlap;
}

}  // namespace tikuda::data
