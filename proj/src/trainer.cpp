#include "tikuda/trainer.hpp"

#include "tikuda/errors.hpp"
#include "tikuda/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace tikuda::train {

using ad::Tape;
using ad::Value;

Method parse_method(const std::string& name) {
    if (name == "source-only") return Method::source_only;
    if (name == "tikuda") return Method::tikuda;
    if (name == "tikuda-cosine") return Method::tikuda_cosine;
    if (name == "dare-gram") return Method::dare_gram;
    if (name == "coral") return Method::coral;
    if (name == "mmd") return Method::mmd;
    throw ConfigError("unknown method '" + name +
                      "' (expected source-only, tikuda, tikuda-cosine, dare-gram, coral or mmd)");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::source_only: return "source-only";
        case Method::tikuda: return "tikuda";
        case Method::tikuda_cosine: return "tikuda-cosine";
        case Method::dare_gram: return "dare-gram";
        case Method::coral: return "coral";
        case Method::mmd: return "mmd";
    }
    return "?";
}

double lambda_schedule(double progress, double gain) {
    if (!(progress >= 0.0 && progress <= 1.0)) {
        throw OutOfRange("lambda_schedule: progress must lie in [0, 1]");
    }
    return 2.0 / (1.0 + std::exp(-gain * progress)) - 1.0;
}

AdamState AdamState::like(const std::vector<Matrix>& params) {
    AdamState s;
    for (const Matrix& p : params) {
        s.m.emplace_back(p.rows(), p.cols());
        s.v.emplace_back(p.rows(), p.cols());
    }
    return s;
}

void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamOptions& opts) {
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw ShapeMismatch("adam_step: parameter, gradient and state counts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols() ||
            params[i].rows() != state.m[i].rows() || params[i].cols() != state.m[i].cols()) {
            throw ShapeMismatch("adam_step: parameter " + std::to_string(i) + " is " + params[i].shape_string() +
                                ", gradient " + grads[i].shape_string());
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].flat();
        auto g = grads[i].flat();
        auto m = state.m[i].flat();
        auto v = state.v[i].flat();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * g[k];
            v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * g[k] * g[k];
            p[k] -= opts.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + opts.eps);
        }
    }
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (batch < 2) throw ConfigError("train.batch must be >= 2");
    if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
    if (!(gamma_angle >= 0.0) || !(gamma_scale >= 0.0)) throw ConfigError("gamma maxima must be >= 0");
    if (!(schedule_gain > 0.0)) throw ConfigError("train.schedule_gain must be > 0");
    if (seeds == 0) throw ConfigError("train.seeds must be >= 1");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
        throw ConfigError("train.holdout_fraction must lie in [0, 1)");
    }
    try {
        alignment.validate();
    } catch (const OutOfRange& e) {
        throw ConfigError(e.what());
    }
}

Prediction predict(const Model& model, const stgnn::ModelParams& params, const Tensor4& samples, std::size_t chunk) {
    const std::size_t n = samples.batch();
    const std::size_t p = model.config.n_nodes * model.config.hidden;
    Prediction out{Matrix(n, 1), Matrix(n, p)};
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t len = std::min(chunk, n - start);
        idx.resize(len);
        std::iota(idx.begin(), idx.end(), start);
        Tape tape;
        const stgnn::BoundParams bp = stgnn::bind(tape, params, false);
        const stgnn::ModelOutput o = stgnn::forward(tape, samples.select(idx), model.graph, bp, model.config);
        const Matrix& y = o.prediction.data();
        const Matrix& f = o.features.data();
        for (std::size_t i = 0; i < len; ++i) {
            out.values(start + i, 0) = y(i, 0);
            std::copy_n(f.row(i).data(), p, out.features.row(start + i).data());
        }
    }
    return out;
}

MetricsReport score(const Matrix& pred, const Matrix& labels, double label_range) {
    if (labels.rows() == 0) {
        throw EmptyDataset("evaluate: no samples");
    }
    if (pred.rows() != labels.rows() || pred.cols() != labels.cols()) {
        throw ShapeMismatch("evaluate: predictions " + pred.shape_string() + " vs labels " + labels.shape_string());
    }
    double se = 0.0;
    double ae = 0.0;
    for (std::size_t i = 0; i < labels.rows(); ++i) {
        const double d = pred(i, 0) - labels(i, 0);
        se += d * d;
        ae += std::abs(d);
    }
    const double n = static_cast<double>(labels.rows());
    MetricsReport r;
    r.rmse_norm = std::sqrt(se / n);
    r.mae_norm = ae / n;
    r.rmse_actual = r.rmse_norm * label_range;
    r.mae_actual = r.mae_norm * label_range;
    return r;
}

MetricsReport evaluate(const Model& model, const stgnn::ModelParams& params, const data::WindowedDataset& ds,
                       double label_range) {
    if (ds.size() == 0) {
        throw EmptyDataset("evaluate: dataset '" + ds.domain + "' is empty");
    }
    return score(predict(model, params, ds.samples).values, ds.labels, label_range);
}

namespace {

double row_distance(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    const double* x = a.row(i).data();
    const double* y = b.row(j).data();
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) {
        const double d = x[k] - y[k];
        s += d * d;
    }
    return std::sqrt(s);
}

// Mean pairwise distance; rows summed in parallel into fixed slots, then reduced serially.
double mean_distance(const Matrix& a, const Matrix& b) {
    std::vector<double> partial(a.rows(), 0.0);
    const auto m = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < b.rows(); ++j) {
            s += row_distance(a, static_cast<std::size_t>(i), b, j);
        }
        partial[static_cast<std::size_t>(i)] = s;
    }
    double total = 0.0;
    for (double s : partial) {
        total += s;
    }
    return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

void require_rows(const Matrix& x, const Matrix& y) {
    if (x.rows() == 0 || y.rows() == 0) {
        throw EmptyDataset("energy_distance: empty sample");
    }
    if (x.cols() != y.cols()) {
        throw DimensionMismatch("energy_distance: " + x.shape_string() + " vs " + y.shape_string());
    }
}

}  // namespace

double energy_distance(const Matrix& x, const Matrix& y) {
    require_rows(x, y);
    return std::max(0.0, 2.0 * mean_distance(x, y) - mean_distance(x, x) - mean_distance(y, y));
}

double energy_distance_reference(const Matrix& x, const Matrix& y) {
    require_rows(x, y);
    auto mean = [](const Matrix& a, const Matrix& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            for (std::size_t j = 0; j < b.rows(); ++j) {
                double d2 = 0.0;
                for (std::size_t k = 0; k < a.cols(); ++k) {
                    d2 += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
                }
                s += std::sqrt(d2);
            }
        }
        return s / static_cast<double>(a.rows() * b.rows());
    };
    return 2.0 * mean(x, y) - mean(x, x) - mean(y, y);
}

Matrix subsample_rows(const Matrix& x, std::size_t limit) {
    if (limit == 0 || x.rows() <= limit) {
        return x;
    }
    const std::size_t stride = (x.rows() + limit - 1) / limit;
    Matrix out((x.rows() + stride - 1) / stride, x.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        std::copy_n(x.row(i * stride).data(), x.cols(), out.row(i).data());
    }
    return out;
}

Matrix PcaResult::project(const Matrix& x) const {
    if (x.cols() != mean.size()) {
        throw DimensionMismatch("pca project: " + x.shape_string() + " with " + std::to_string(mean.size()) +
                                " features");
    }
    Matrix out(x.rows(), components.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < components.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < x.cols(); ++k) {
                s += (x(i, k) - mean[k]) * components(k, j);
            }
            out(i, j) = s;
        }
    }
    return out;
}

PcaResult pca_project(const Matrix& x, std::size_t k) {
    const std::size_t m = x.rows();
    const std::size_t p = x.cols();
    if (m < 2) {
        throw EmptyDataset("pca: need at least two samples");
    }
    k = std::min(k, p);
    PcaResult r;
    r.mean.assign(p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            r.mean[j] += x(i, j);
        }
    }
    for (double& v : r.mean) {
        v /= static_cast<double>(m);
    }
    Matrix cov(p, p);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t a = 0; a < p; ++a) {
            const double da = x(i, a) - r.mean[a];
            for (std::size_t b = a; b < p; ++b) {
                cov(a, b) += da * (x(i, b) - r.mean[b]);
            }
        }
    }
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = a; b < p; ++b) {
            cov(a, b) /= static_cast<double>(m - 1);
            cov(b, a) = cov(a, b);
        }
    }
    const EigenResult e = jacobi_eigen(cov);
    r.eigenvalues = e.eigenvalues;
    double total = 0.0;
    for (double v : e.eigenvalues) {
        total += std::max(0.0, v);
    }
    r.components = Matrix(p, k);
    for (std::size_t j = 0; j < k; ++j) {
        std::size_t big = 0;
        for (std::size_t i = 1; i < p; ++i) {
            if (std::abs(e.eigenvectors(i, j)) > std::abs(e.eigenvectors(big, j))) {
                big = i;
            }
        }
        const double sign = e.eigenvectors(big, j) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < p; ++i) {
            r.components(i, j) = sign * e.eigenvectors(i, j);
        }
        r.explained.push_back(total > 0.0 ? std::max(0.0, e.eigenvalues[j]) / total : 0.0);
    }
    r.projected = r.project(x);
    return r;
}

align::AlignmentTerms alignment_terms(Method method, const Value& zs, const Value& zt,
                                      const align::AlignmentConfig& cfg) {
    switch (method) {
        case Method::source_only:
            return {};
        case Method::tikuda:
        case Method::tikuda_cosine: {
            align::AlignmentConfig c = cfg;
            if (method == Method::tikuda_cosine) {
                c.similarity = align::Similarity::cosine;
            }
            return align::tikuda_loss(zs, zt, c);
        }
        case Method::dare_gram:
            return align::dare_gram_loss(zs, zt, cfg);
        case Method::coral:
            return {align::coral_loss(zs, zt), {}};
        case Method::mmd:
            return {align::mmd_loss(zs, zt), {}};
    }
    return {};
}

namespace {

data::WindowedDataset slice(const data::WindowedDataset& ds, std::size_t first, std::size_t count) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), first);
    data::WindowedDataset out;
    out.domain = ds.domain;
    out.sensors = ds.sensors;
    out.samples = ds.samples.select(idx);
    out.labels = Matrix(count, 1);
    for (std::size_t i = 0; i < count; ++i) {
        out.labels(i, 0) = ds.labels(first + i, 0);
        out.starts.push_back(ds.starts[first + i]);
    }
    return out;
}

// Shuffled index stream; reshuffles whenever fewer than `batch` indices remain.
class BatchStream {
public:
    BatchStream(std::size_t n, std::uint64_t seed) : order_(n), gen_(seed) {
        std::iota(order_.begin(), order_.end(), 0);
        reshuffle();
    }

    void reshuffle() {
        std::shuffle(order_.begin(), order_.end(), gen_);
        pos_ = 0;
    }

    std::vector<std::size_t> next(std::size_t batch) {
        if (pos_ + batch > order_.size()) {
            reshuffle();
        }
        std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch));
        pos_ += batch;
        return out;
    }

private:
    std::vector<std::size_t> order_;
    std::mt19937_64 gen_;
    std::size_t pos_ = 0;
};

Matrix select_labels(const Matrix& labels, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out(i, 0) = labels(idx[i], 0);
    }
    return out;
}

}  // namespace

TargetSplit split_target(const data::WindowedDataset& target, double holdout_fraction) {
    if (holdout_fraction == 0.0) {
        return {target, target};
    }
    data::WindowedDataset eval = data::tail(target, holdout_fraction);
    const std::size_t head = target.size() - eval.size();
    if (head == 0) {
        throw EmptyDataset("holdout leaves no target windows for training");
    }
    return {slice(target, 0, head), std::move(eval)};
}

TrainResult train_adapt(const data::WindowedDataset& source, const data::WindowedDataset& target,
                        const Model& model, const TrainConfig& cfg, double label_range,
                        const TrainOptions& options) {
    cfg.validate();
    model.config.validate();
    if (source.size() == 0 || target.size() == 0) {
        throw EmptyDataset("train: source has " + std::to_string(source.size()) + " windows, target " +
                           std::to_string(target.size()));
    }
    const Tensor4& xs_all = source.samples;
    const Tensor4& xt_all = target.samples;
    if (xs_all.nodes() != xt_all.nodes() || xs_all.steps() != xt_all.steps() ||
        xs_all.features() != xt_all.features()) {
        throw DimensionMismatch("train: source windows are " + std::to_string(xs_all.nodes()) + "×" +
                                std::to_string(xs_all.steps()) + "×" + std::to_string(xs_all.features()) +
                                ", target " + std::to_string(xt_all.nodes()) + "×" + std::to_string(xt_all.steps()) +
                                "×" + std::to_string(xt_all.features()));
    }
    if (xs_all.nodes() != model.config.n_nodes || xs_all.features() != model.config.in_features) {
        throw DimensionMismatch("train: windows have " + std::to_string(xs_all.nodes()) + " nodes, model expects " +
                                std::to_string(model.config.n_nodes));
    }
    const TargetSplit split = split_target(target, cfg.holdout_fraction);
    const std::size_t ns = source.size();
    const std::size_t nt = split.train.size();
    const std::size_t batch = std::min({cfg.batch, ns, nt});
    if (batch < 2) {
        throw EmptyDataset("train: need at least two windows per domain");
    }
    const std::size_t steps_per_epoch = std::max(ns, nt) / batch;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    TrainResult result;
    result.initial = stgnn::ModelParams::init(model.config, cfg.seed);
    stgnn::ModelParams params = result.initial;
    AdamState state = AdamState::like(params.values());
    const AdamOptions adam{cfg.lr};
    BatchStream src_stream(ns, cfg.seed * 2 + 1);
    BatchStream tgt_stream(nt, cfg.seed * 2 + 2);
    const bool adapt = cfg.method != Method::source_only;

    std::size_t global = 0;
    std::vector<Matrix> grads(params.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        src_stream.reshuffle();
        tgt_stream.reshuffle();
        EpochTrace trace;
        trace.epoch = epoch + 1;
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++global) {
            const double lambda =
                lambda_schedule(static_cast<double>(global) / static_cast<double>(total_steps), cfg.schedule_gain);
            const std::vector<std::size_t> is = src_stream.next(batch);
            const std::vector<std::size_t> it = tgt_stream.next(batch);

            Tape tape;
            const stgnn::BoundParams bp = stgnn::bind(tape, params, true);
            const stgnn::ModelOutput out_s = stgnn::forward(tape, xs_all.select(is), model.graph, bp, model.config);
            const Value diff = ad::sub(out_s.prediction, tape.constant(select_labels(source.labels, is)));
            const Value mse = ad::mean(ad::elementwise_mul(diff, diff));
            Value total = mse;
            double angle = 0.0;
            double scale = 0.0;
            if (adapt) {
                const stgnn::ModelOutput out_t =
                    stgnn::forward(tape, split.train.samples.select(it), model.graph, bp, model.config);
                const align::AlignmentTerms terms =
                    alignment_terms(cfg.method, out_s.features, out_t.features, cfg.alignment);
                if (terms.angle.valid()) {
                    angle = terms.angle.item();
                    total = ad::add(total, ad::scalar_mul(terms.angle, cfg.gamma_angle * lambda));
                }
                if (terms.scale.valid()) {
                    scale = terms.scale.item();
                    total = ad::add(total, ad::scalar_mul(terms.scale, cfg.gamma_scale * lambda));
                }
            }
            const double loss = total.item();
            if (!std::isfinite(loss)) {
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                     std::to_string(s + 1));
            }
            tape.backward(total);
            for (std::size_t i = 0; i < params.size(); ++i) {
                grads[i] = bp.values[i].grad();
            }
            adam_step(params.values(), grads, state, adam);
            if (options.record_trajectory) {
                result.trajectory.push_back(params.values());
            }
            trace.lambda = lambda;
            trace.total += loss;
            trace.source += mse.item();
            trace.angle += angle;
            trace.scale += scale;
        }
        const double k = static_cast<double>(steps_per_epoch);
        trace.total /= k;
        trace.source /= k;
        trace.angle /= k;
        trace.scale /= k;
        result.metrics.traces.push_back(trace);
        if (options.on_epoch) {
            options.on_epoch(trace);
        }
    }

    const Prediction pt = predict(model, params, split.eval.samples);
    const Prediction ps = predict(model, params, source.samples);
    MetricsReport m = score(pt.values, split.eval.labels, label_range);
    m.energy_distance = energy_distance(subsample_rows(ps.features, options.energy_sample_limit),
                                        subsample_rows(pt.features, options.energy_sample_limit));
    m.traces = std::move(result.metrics.traces);
    result.metrics = std::move(m);
    result.params = std::move(params);
    return result;
}

SeedSummary train_seeds(const data::WindowedDataset& source, const data::WindowedDataset& target, const Model& model,
                        const TrainConfig& cfg, double label_range) {
    SeedSummary s;
    for (std::size_t i = 0; i < cfg.seeds; ++i) {
        TrainConfig c = cfg;
        c.seed = cfg.seed + i;
        s.runs.push_back(train_adapt(source, target, model, c, label_range).metrics);
    }
    auto stats = [&](auto field, double& mean, double& sd) {
        mean = 0.0;
        for (const MetricsReport& r : s.runs) mean += r.*field;
        mean /= static_cast<double>(s.runs.size());
        sd = 0.0;
        for (const MetricsReport& r : s.runs) sd += (r.*field - mean) * (r.*field - mean);
        sd = s.runs.size() > 1 ? std::sqrt(sd / static_cast<double>(s.runs.size() - 1)) : 0.0;
    };
    stats(&MetricsReport::rmse_norm, s.rmse_norm_mean, s.rmse_norm_std);
    stats(&MetricsReport::mae_norm, s.mae_norm_mean, s.mae_norm_std);
    return s;
}

}  // namespace tikuda::train
