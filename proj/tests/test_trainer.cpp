#include "doctest.h"
#include "test_util.hpp"

#include "tikuda/errors.hpp"
#include "tikuda/trainer.hpp"

#include <cmath>
#include <random>

using namespace tikuda;
using namespace tikuda::train;
using tikuda::testing::random_matrix;

namespace {

struct Toy {
    data::WindowedDataset source;
    data::WindowedDataset target;
    Model model;
    double label_range = 1.0;
};

Toy toy(std::size_t steps = 90, std::size_t window = 6) {
    data::BaseSpec bs;
    bs.sensors = 3;
    bs.steps = steps;
    const data::RawSeries base = data::generate_base(bs);
    data::ShiftSpec spec = data::ShiftSpec::identity(3);
    spec.gain[2] = 2.0;
    spec.bias[2] = 0.5;
    const auto [s, t] = data::synthesize_shift(base, spec);
    const data::Normalizer norm = data::Normalizer::fit(s);
    Toy out;
    out.source = data::make_windows(norm.apply(s), s.sensor_columns(), window, 1, "source");
    out.target = data::make_windows(norm.apply(t), t.sensor_columns(), window, 1, "target");
    out.model.config.n_nodes = 3;
    out.model.config.window = window;
    out.model.config.hidden = 4;
    out.model.config.gru_layers = 1;
    out.model.config.embed_dim = 2;
    out.model.graph = stgnn::GraphSpec::full(3);
    out.label_range = norm.range("y");
    return out;
}

TrainConfig quick(Method m) {
    TrainConfig c;
    c.method = m;
    c.epochs = 2;
    c.batch = 16;
    c.lr = 1e-2;
    c.gamma_angle = 0.1;
    c.gamma_scale = 0.01;
    c.seed = 3;
    c.alignment.power = {200, 1e-12, 0};
    return c;
}

}  // namespace

TEST_CASE("lambda schedule") {
    CHECK(lambda_schedule(0.0) == 0.0);
    CHECK(std::abs(lambda_schedule(0.5) - std::tanh(2.5)) < 1e-9);
    CHECK(std::abs(lambda_schedule(1.0) - std::tanh(5.0)) < 1e-9);
    CHECK(lambda_schedule(0.5) == doctest::Approx(0.986614).epsilon(1e-6));
    CHECK(lambda_schedule(1.0) == doctest::Approx(0.999909).epsilon(1e-6));
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
        const double l = lambda_schedule(i / 100.0);
        CHECK(l > prev);
        prev = l;
    }
    CHECK_THROWS_AS(lambda_schedule(-0.01), OutOfRange);
    CHECK_THROWS_AS(lambda_schedule(1.01), OutOfRange);
    CHECK_THROWS_AS(lambda_schedule(std::nan("")), OutOfRange);
}

TEST_CASE("adam") {
    const AdamOptions opts{0.01};
    std::vector<Matrix> params{Matrix(1, 3, {1.0, 2.0, 3.0})};
    const std::vector<Matrix> grads{Matrix(1, 3, {0.5, -4.0, 0.0})};
    AdamState st = AdamState::like(params);
    adam_step(params, grads, st, opts);
    CHECK(params[0](0, 0) == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(params[0](0, 1) == doctest::Approx(2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
    CHECK(params[0](0, 2) == 3.0);
    CHECK(st.step == 1);

    std::vector<Matrix> bad{Matrix(2, 2)};
    CHECK_THROWS_AS(adam_step(bad, grads, st, opts), ShapeMismatch);

    // f(x) = ½‖x − c‖²
    const Matrix c(1, 4, {0.3, -1.0, 2.0, 0.5});
    std::vector<Matrix> x{Matrix(1, 4)};
    AdamState s2 = AdamState::like(x);
    auto loss = [&] { return 0.5 * std::pow((x[0] - c).frobenius_norm(), 2); };
    const double start = loss();
    double last = start;
    for (int i = 0; i < 10; ++i) {
        adam_step(x, {x[0] - c}, s2, AdamOptions{0.1});
        last = loss();
    }
    CHECK(last < start);
    for (int i = 0; i < 500; ++i) {
        adam_step(x, {x[0] - c}, s2, AdamOptions{0.1});
    }
    CHECK(loss() < 1e-3);
}

TEST_CASE("score and evaluate") {
    const Matrix y(4, 1, {0.1, 0.5, 0.7, 0.9});
    const MetricsReport perfect = score(y, y, 233.0);
    CHECK(perfect.rmse_norm == 0.0);
    CHECK(perfect.mae_norm == 0.0);
    CHECK(perfect.rmse_actual == 0.0);
    CHECK(perfect.mae_actual == 0.0);

    Matrix off = y;
    for (double& v : off.flat()) {
        v += 0.1;
    }
    const MetricsReport r = score(off, y, 233.0);
    CHECK(r.mae_norm == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.rmse_norm == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.rmse_actual == doctest::Approx(23.3).epsilon(1e-12));

    Matrix spread = y;
    spread(0, 0) += 0.087 * 2.0;  // RMSE = 0.087
    const MetricsReport p = score(spread, y, 233.0);
    CHECK(p.rmse_norm == doctest::Approx(0.087).epsilon(1e-12));
    CHECK(p.rmse_actual == doctest::Approx(0.087 * 233.0).epsilon(1e-12));
    CHECK(p.rmse_actual == doctest::Approx(20.271).epsilon(1e-12));

    CHECK_THROWS_AS(score(Matrix(0, 1), Matrix(0, 1), 1.0), EmptyDataset);
    CHECK_THROWS_AS(score(Matrix(3, 1), y, 1.0), ShapeMismatch);

    const Toy t = toy();
    const stgnn::ModelParams params = stgnn::ModelParams::init(t.model.config, 1);
    const Prediction pred = predict(t.model, params, t.source.samples, 7);
    const Prediction whole = predict(t.model, params, t.source.samples, 1000);
    CHECK(pred.values == whole.values);
    CHECK(pred.features.cols() == 12);
    const MetricsReport e = evaluate(t.model, params, t.source, t.label_range);
    CHECK(e.rmse_norm == score(pred.values, t.source.labels, 1.0).rmse_norm);
    CHECK(e.mae_actual == doctest::Approx(e.mae_norm * t.label_range).epsilon(1e-14));
}

TEST_CASE("energy distance") {
    const Matrix x = random_matrix(17, 5, 1);
    const Matrix y = random_matrix(23, 5, 2, 1.5);
    CHECK(energy_distance(x, x) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(energy_distance(Matrix(1, 2, {0.0, 0.0}), Matrix(1, 2, {3.0, 4.0})) == doctest::Approx(10.0));
    CHECK(std::abs(energy_distance(x, y) - energy_distance_reference(x, y)) < 1e-10);
    CHECK(energy_distance(x, y) > 0.0);
    CHECK(energy_distance(x, y) == doctest::Approx(energy_distance(y, x)).epsilon(1e-12));
    CHECK_THROWS_AS(energy_distance(x, Matrix(3, 4)), DimensionMismatch);
    CHECK_THROWS_AS(energy_distance(Matrix(0, 5), y), EmptyDataset);

    const Matrix big = random_matrix(2500, 2, 3);
    const Matrix sub = subsample_rows(big, 1024);
    CHECK(sub.rows() <= 1024);
    CHECK(sub.rows() == 834);
    CHECK(sub(1, 0) == big(3, 0));
}

TEST_CASE("pca") {
    Matrix line(30, 3);
    for (std::size_t i = 0; i < 30; ++i) {
        const double s = static_cast<double>(i) - 10.0;
        line(i, 0) = 2.0 * s + 1.0;
        line(i, 1) = -s;
        line(i, 2) = 0.5 * s;
    }
    const PcaResult l = pca_project(line, 2);
    CHECK(l.eigenvalues[0] > 1.0);
    CHECK(std::abs(l.eigenvalues[1]) < 1e-10);
    CHECK(std::abs(l.eigenvalues[2]) < 1e-10);
    CHECK(l.explained[0] == doctest::Approx(1.0));
    CHECK(l.components(0, 0) > 0.0);  // largest-magnitude entry is positive

    const Matrix iso = random_matrix(20000, 3, 11);
    const PcaResult r = pca_project(iso, 3);
    CHECK(r.eigenvalues[0] / r.eigenvalues[2] < 1.1);
    for (double v : r.eigenvalues) {
        CHECK(v == doctest::Approx(1.0).epsilon(0.05));
    }

    // Top-2 axes reconstruct better than any other orthonormal pair.
    Matrix x = random_matrix(200, 5, 4);
    for (std::size_t i = 0; i < 200; ++i) {
        x(i, 1) += 2.0 * x(i, 0);
        x(i, 3) *= 3.0;
    }
    const PcaResult p = pca_project(x, 2);
    auto residual = [&](const Matrix& basis) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            std::vector<double> c(5);
            for (std::size_t k = 0; k < 5; ++k) c[k] = x(i, k) - p.mean[k];
            std::vector<double> proj(5, 0.0);
            for (std::size_t j = 0; j < basis.cols(); ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < 5; ++k) dot += c[k] * basis(k, j);
                for (std::size_t k = 0; k < 5; ++k) proj[k] += dot * basis(k, j);
            }
            for (std::size_t k = 0; k < 5; ++k) s += (c[k] - proj[k]) * (c[k] - proj[k]);
        }
        return s;
    };
    const double best = residual(p.components);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Matrix q = random_matrix(5, 2, 100 + seed);
        // Gram–Schmidt
        for (std::size_t j = 0; j < 2; ++j) {
            for (std::size_t i = 0; i < j; ++i) {
                double d = 0.0;
                for (std::size_t k = 0; k < 5; ++k) d += q(k, i) * q(k, j);
                for (std::size_t k = 0; k < 5; ++k) q(k, j) -= d * q(k, i);
            }
            double n = 0.0;
            for (std::size_t k = 0; k < 5; ++k) n += q(k, j) * q(k, j);
            for (std::size_t k = 0; k < 5; ++k) q(k, j) /= std::sqrt(n);
        }
        CHECK(best <= residual(q) + 1e-9);
    }
    CHECK_THROWS_AS(pca_project(Matrix(1, 3), 2), EmptyDataset);
}

TEST_CASE("config and method parsing") {
    for (Method m : {Method::source_only, Method::tikuda, Method::tikuda_cosine, Method::dare_gram, Method::coral,
                     Method::mmd}) {
        CHECK(parse_method(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_method("adda"), ConfigError);
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.lr == 3e-4);
    CHECK(c.batch == 64);
    CHECK(c.epochs == 150);
    c.batch = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.gamma_scale = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.holdout_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.alignment.alpha = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero gammas reproduce source-only exactly") {
    const Toy t = toy();
    TrainOptions rec;
    rec.record_trajectory = true;
    const TrainResult base = train_adapt(t.source, t.target, t.model, quick(Method::source_only), t.label_range, rec);
    REQUIRE(!base.trajectory.empty());
    for (Method m : {Method::tikuda, Method::tikuda_cosine, Method::dare_gram, Method::coral, Method::mmd}) {
        TrainConfig c = quick(m);
        c.gamma_angle = 0.0;
        c.gamma_scale = 0.0;
        const TrainResult r = train_adapt(t.source, t.target, t.model, c, t.label_range, rec);
        CHECK(r.trajectory == base.trajectory);
        CHECK(r.metrics.rmse_norm == base.metrics.rmse_norm);
    }
}

TEST_CASE("training is deterministic and finite for every method") {
    const Toy t = toy();
    for (Method m : {Method::source_only, Method::tikuda, Method::tikuda_cosine, Method::dare_gram, Method::coral,
                     Method::mmd}) {
        CAPTURE(to_string(m));
        const TrainResult a = train_adapt(t.source, t.target, t.model, quick(m), t.label_range);
        const TrainResult b = train_adapt(t.source, t.target, t.model, quick(m), t.label_range);
        CHECK(a.params == b.params);
        CHECK(a.metrics.rmse_norm == b.metrics.rmse_norm);
        REQUIRE(a.metrics.traces.size() == 2);
        for (const EpochTrace& e : a.metrics.traces) {
            CHECK(std::isfinite(e.total));
            CHECK(std::isfinite(e.angle));
            CHECK(std::isfinite(e.scale));
        }
        CHECK(!(a.params == a.initial));
        CHECK(a.metrics.rmse_actual == doctest::Approx(a.metrics.rmse_norm * t.label_range).epsilon(1e-14));
    }
}

TEST_CASE("identical domains give vanishing alignment losses") {
    const Toy t = toy(40, 6);
    // One batch is the whole dataset, so every step aligns a permutation of the same set.
    TrainConfig c = quick(Method::tikuda);
    c.batch = t.source.size();
    c.epochs = 4;
    const TrainResult r = train_adapt(t.source, t.source, t.model, c, t.label_range);
    // Permuted rows change only the summation order. Haversine maps a cosine of 1 - O(eps)
    // to O(sqrt(eps)) per column, so the angle term sits near 1e-8, not at 0.
    for (const EpochTrace& e : r.metrics.traces) {
        CHECK(std::abs(e.angle) < 1e-6);
        CHECK(std::abs(e.scale) < 1e-8);
    }
    TrainConfig so = c;
    so.method = Method::source_only;
    const TrainResult s = train_adapt(t.source, t.source, t.model, so, t.label_range);
    CHECK(r.metrics.rmse_norm == doctest::Approx(s.metrics.rmse_norm).epsilon(1e-6));
    CHECK(r.metrics.energy_distance < 1e-12);
}

TEST_CASE("training errors and holdout") {
    const Toy t = toy();
    data::WindowedDataset empty = t.source;
    empty.samples = Tensor4(0, 3, 6, 1);
    empty.labels = Matrix(0, 1);
    empty.starts.clear();
    CHECK_THROWS_AS(train_adapt(empty, t.target, t.model, quick(Method::tikuda), 1.0), EmptyDataset);

    const Toy other = toy(90, 5);
    CHECK_THROWS_AS(train_adapt(t.source, other.target, t.model, quick(Method::tikuda), 1.0), DimensionMismatch);

    const TargetSplit split = split_target(t.target, 0.2);
    CHECK(split.eval.size() == 17);
    CHECK(split.train.size() == t.target.size() - 17);
    CHECK(split.train.starts.back() + 1 == split.eval.starts.front());
    TrainConfig c = quick(Method::tikuda);
    c.holdout_fraction = 0.2;
    const TrainResult r = train_adapt(t.source, t.target, t.model, c, t.label_range);
    CHECK(r.metrics.rmse_norm == doctest::Approx(evaluate(t.model, r.params, split.eval, t.label_range).rmse_norm));
}

TEST_CASE("multi-seed summary") {
    const Toy t = toy();
    TrainConfig c = quick(Method::coral);
    c.epochs = 1;
    c.seeds = 3;
    const SeedSummary s = train_seeds(t.source, t.target, t.model, c, t.label_range);
    REQUIRE(s.runs.size() == 3);
    double mean = 0.0;
    for (const MetricsReport& r : s.runs) mean += r.rmse_norm;
    mean /= 3.0;
    CHECK(s.rmse_norm_mean == doctest::Approx(mean));
    double var = 0.0;
    for (const MetricsReport& r : s.runs) var += (r.rmse_norm - mean) * (r.rmse_norm - mean);
    CHECK(s.rmse_norm_std == doctest::Approx(std::sqrt(var / 2.0)));
    CHECK(s.runs[0].rmse_norm != s.runs[1].rmse_norm);
}
