// tikuda: train, evaluate, benchmark and generate synthetic shift fixtures.

#include "tikuda/bench.hpp"
#include "tikuda/config.hpp"
#include "tikuda/errors.hpp"
#include "tikuda/runtime.hpp"
#include "tikuda/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace tikuda;
using json = nlohmann::ordered_json;

namespace {

constexpr int kConfigExit = 1;
constexpr int kDataExit = 2;
constexpr int kNumericalExit = 3;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw DataError("error while writing " + path.string());
    }
}

config::RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
    config::RunConfig cfg = path.empty() ? config::RunConfig{} : config::load(path);
    for (const std::string& s : sets) {
        cfg.set(s);
    }
    return cfg;
}

std::string metrics_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k + "=" + v + "\n";
    }
    return out;
}

std::string traces_csv(const std::vector<train::EpochTrace>& traces) {
    std::string out = "epoch,lambda,total,source,angle,scale\n";
    for (const train::EpochTrace& t : traces) {
        out += std::to_string(t.epoch) + "," + fmt(t.lambda) + "," + fmt(t.total) + "," + fmt(t.source) + "," +
               fmt(t.angle) + "," + fmt(t.scale) + "\n";
    }
    return out;
}

// PCA fitted per stage on the stacked source and target features; rows tagged by stage.
void write_pca(const fs::path& dir, const std::vector<std::pair<std::string, std::pair<Matrix, Matrix>>>& stages) {
    std::string src = "stage,pc1,pc2\n";
    std::string tgt = "stage,pc1,pc2\n";
    for (const auto& [stage, feats] : stages) {
        const Matrix& fs_ = feats.first;
        const Matrix& ft = feats.second;
        Matrix stacked(fs_.rows() + ft.rows(), fs_.cols());
        std::copy(fs_.flat().begin(), fs_.flat().end(), stacked.flat().begin());
        std::copy(ft.flat().begin(), ft.flat().end(), stacked.flat().begin() + static_cast<std::ptrdiff_t>(fs_.size()));
        const train::PcaResult pca = train::pca_project(stacked, 2);
        for (std::size_t i = 0; i < stacked.rows(); ++i) {
            std::string& out = i < fs_.rows() ? src : tgt;
            out += stage + "," + fmt(pca.projected(i, 0)) + "," +
                   fmt(pca.projected.cols() > 1 ? pca.projected(i, 1) : 0.0) + "\n";
        }
    }
    write_file(dir / "pca_source.csv", src);
    write_file(dir / "pca_target.csv", tgt);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets, const std::string& out_override) {
    config::RunConfig cfg = load_config(config_path, sets);
    if (!out_override.empty()) {
        cfg.output_dir = out_override;
    }
    cfg.validate();
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);

    // Snapshot and manifest go down before any data is touched.
    const std::string snapshot = cfg.snapshot();
    write_file(dir / "config.ini", snapshot);
    json manifest;
    manifest["config_path"] = config_path;
    manifest["snapshot"] = "config.ini";
    manifest["seed"] = cfg.train.seed;
    manifest["output_dir"] = dir.string();
    manifest["build"] = build_id();
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    const config::Experiment e = config::prepare(cfg);
    const train::TrainResult r = train::train_adapt(e.source, e.target, e.model, cfg.train, e.label_range);
    const train::TargetSplit split = train::split_target(e.target, cfg.train.holdout_fraction);

    stgnn::Checkpoint ckpt;
    stgnn::config_to_meta(e.model.config, ckpt.meta);
    config::normalizer_to_meta(e.normalizer, ckpt.meta);
    ckpt.meta["data.target_column"] = e.source_raw.target;
    std::string sensors;
    for (std::size_t i = 0; i < e.sensors.size(); ++i) {
        sensors += (i ? "," : "") + e.sensors[i];
    }
    ckpt.meta["data.sensors"] = sensors;
    ckpt.meta["train.method"] = train::to_string(cfg.train.method);
    ckpt.meta["train.seed"] = std::to_string(cfg.train.seed);
    ckpt.params = r.params;
    stgnn::save_checkpoint(dir / "checkpoint.tkck", ckpt);

    const train::MetricsReport source_fit = train::evaluate(e.model, r.params, e.source, e.label_range);
    const std::size_t limit = 1024;
    const train::Prediction pre_s = train::predict(e.model, r.initial, e.source.samples);
    const train::Prediction pre_t = train::predict(e.model, r.initial, split.eval.samples);
    const train::Prediction post_s = train::predict(e.model, r.params, e.source.samples);
    const train::Prediction post_t = train::predict(e.model, r.params, split.eval.samples);
    const double energy_initial = train::energy_distance(train::subsample_rows(pre_s.features, limit),
                                                         train::subsample_rows(pre_t.features, limit));
    write_pca(dir, {{"pre", {train::subsample_rows(pre_s.features, limit), train::subsample_rows(pre_t.features, limit)}},
                    {"post",
                     {train::subsample_rows(post_s.features, limit), train::subsample_rows(post_t.features, limit)}}});

    const train::MetricsReport& m = r.metrics;
    std::vector<std::pair<std::string, std::string>> kv{
        {"method", train::to_string(cfg.train.method)},
        {"seed", std::to_string(cfg.train.seed)},
        {"epochs", std::to_string(cfg.train.epochs)},
        {"source_windows", std::to_string(e.source.size())},
        {"target_eval_windows", std::to_string(split.eval.size())},
        {"label_range", fmt(e.label_range)},
        {"rmse_norm", fmt(m.rmse_norm)},
        {"rmse_actual", fmt(m.rmse_actual)},
        {"mae_norm", fmt(m.mae_norm)},
        {"mae_actual", fmt(m.mae_actual)},
        {"energy_distance", fmt(m.energy_distance)},
        {"energy_distance_initial", fmt(energy_initial)},
        {"source_rmse_norm", fmt(source_fit.rmse_norm)},
        {"final_total_loss", fmt(m.traces.empty() ? 0.0 : m.traces.back().total)},
    };
    json summary;
    summary["method"] = train::to_string(cfg.train.method);
    summary["seed"] = cfg.train.seed;
    summary["metrics"] = {{"rmse_norm", m.rmse_norm},           {"rmse_actual", m.rmse_actual},
                          {"mae_norm", m.mae_norm},             {"mae_actual", m.mae_actual},
                          {"energy_distance", m.energy_distance}, {"energy_distance_initial", energy_initial},
                          {"source_rmse_norm", source_fit.rmse_norm}};
    if (cfg.train.seeds > 1) {
        train::TrainConfig rest = cfg.train;
        const train::SeedSummary s = train::train_seeds(e.source, e.target, e.model, rest, e.label_range);
        kv.emplace_back("seeds", std::to_string(cfg.train.seeds));
        kv.emplace_back("rmse_norm_mean", fmt(s.rmse_norm_mean));
        kv.emplace_back("rmse_norm_std", fmt(s.rmse_norm_std));
        kv.emplace_back("mae_norm_mean", fmt(s.mae_norm_mean));
        kv.emplace_back("mae_norm_std", fmt(s.mae_norm_std));
        json runs = json::array();
        for (std::size_t i = 0; i < s.runs.size(); ++i) {
            runs.push_back({{"seed", cfg.train.seed + i}, {"rmse_norm", s.runs[i].rmse_norm},
                            {"mae_norm", s.runs[i].mae_norm}});
        }
        summary["seeds"] = {{"runs", runs},
                            {"rmse_norm_mean", s.rmse_norm_mean},
                            {"rmse_norm_std", s.rmse_norm_std},
                            {"mae_norm_mean", s.mae_norm_mean},
                            {"mae_norm_std", s.mae_norm_std}};
    }
    write_file(dir / "metrics.kv", metrics_kv(kv));
    write_file(dir / "traces.csv", traces_csv(m.traces));
    write_file(dir / "summary.json", summary.dump(2) + "\n");

    std::printf("%s: target rmse_norm %.6f (actual %.6g), mae_norm %.6f, energy %.6g -> %s\n",
                train::to_string(cfg.train.method).c_str(), m.rmse_norm, m.rmse_actual, m.mae_norm,
                m.energy_distance, dir.string().c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path, const std::vector<std::string>& sets,
             const std::string& out) {
    const stgnn::Checkpoint ckpt = stgnn::load_checkpoint(ckpt_path);
    config::RunConfig cfg = load_config(config_path, sets);
    const data::Normalizer norm = config::normalizer_from_meta(ckpt.meta);
    const config::Experiment e = config::prepare(cfg, &norm);
    train::Model model = e.model;
    model.config = stgnn::config_from_meta(ckpt.meta);
    if (model.config.n_nodes != e.sensors.size() || model.config.window != cfg.data.window) {
        throw DimensionMismatch("checkpoint expects " + std::to_string(model.config.n_nodes) + " sensors and window " +
                                std::to_string(model.config.window) + "; data has " + std::to_string(e.sensors.size()) +
                                " and " + std::to_string(cfg.data.window));
    }
    const train::TargetSplit split = train::split_target(e.target, cfg.train.holdout_fraction);
    const train::MetricsReport m = train::evaluate(model, ckpt.params, split.eval, e.label_range);
    const std::string text = metrics_kv({{"rmse_norm", fmt(m.rmse_norm)},
                                         {"rmse_actual", fmt(m.rmse_actual)},
                                         {"mae_norm", fmt(m.mae_norm)},
                                         {"mae_actual", fmt(m.mae_actual)},
                                         {"target_eval_windows", std::to_string(split.eval.size())}});
    if (out.empty()) {
        std::cout << text;
    } else {
        fs::create_directories(out);
        write_file(fs::path(out) / "metrics.kv", text);
    }
    return 0;
}

int cmd_bench(const std::vector<std::size_t>& p_list, std::size_t b, std::size_t iters,
              const std::vector<std::string>& method_names, std::uint64_t seed, const std::string& out) {
    omp_set_num_threads(1);
    std::vector<train::Method> methods;
    for (const std::string& m : method_names) {
        methods.push_back(train::parse_method(m));
    }
    std::string csv = "method,p,b,iters,median_s,p10_s,p90_s\n";
    for (std::size_t p : p_list) {
        const std::vector<bench::BenchRow> rows = bench::bench_alignment({p}, b, iters, methods, seed);
        const std::string part = bench::to_csv(rows);
        csv += part.substr(part.find('\n') + 1);
        for (const bench::BenchRow& r : rows) {
            std::printf("%-14s p=%-5zu median %.6f s  p10 %.6f  p90 %.6f\n", r.method.c_str(), r.p, r.stats.median,
                        r.stats.p10, r.stats.p90);
            std::fflush(stdout);
        }
    }
    if (!out.empty()) {
        if (fs::path(out).has_parent_path()) {
            fs::create_directories(fs::path(out).parent_path());
        }
        write_file(out, csv);
    }
    return 0;
}

int cmd_synthetic(const std::string& config_path, const std::vector<std::string>& sets, const std::string& preset,
                  const std::string& out) {
    const config::RunConfig cfg = load_config(config_path, sets);
    const data::ShiftSpec spec = config::shift_spec(cfg.synthetic, preset);
    try {
        spec.validate(cfg.synthetic.sensors);
    } catch (const DataError& e) {
        throw ConfigError(std::string("invalid shift spec: ") + e.what());
    }
    const auto [source, target] = data::synthesize_shift(data::generate_base(config::base_spec(cfg.synthetic)), spec);
    fs::create_directories(out);
    data::write_csv(fs::path(out) / "source.csv", source);
    data::write_csv(fs::path(out) / "target.csv", target);
    std::printf("source.csv %016llx\ntarget.csv %016llx\n", static_cast<unsigned long long>(data::checksum(source)),
                static_cast<unsigned long long>(data::checksum(target)));
    return 0;
}

int cmd_inspect(const std::string& path) {
    const stgnn::Checkpoint ckpt = stgnn::load_checkpoint(path);
    for (const auto& [k, v] : ckpt.meta) {
        std::printf("%s = %s\n", k.c_str(), v.c_str());
    }
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        const Matrix& m = ckpt.params.values()[i];
        std::printf("param %-16s %zux%zu  |max| %.6g\n", ckpt.params.names()[i].c_str(), m.rows(), m.cols(),
                    m.max_abs());
    }
    std::printf("scalars %zu\n", ckpt.params.scalar_count());
    return 0;
}

template <class F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigExit;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kDataExit;
    } catch (const EmptyDataset& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kDataExit;
    } catch (const DimensionMismatch& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kDataExit;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumericalExit;
    } catch (const NotPositiveDefinite& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumericalExit;
    } catch (const NoConvergence& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumericalExit;
    } catch (const OutOfRange& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigExit;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumericalExit;
    }
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Tikhonov-regularised feature alignment for sensor calibration"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::string out;

    auto* train = app.add_subcommand("train", "train a model and write run artifacts");
    train->add_option("-c,--config", config_path, "config file")->required()->check(CLI::ExistingFile);
    train->add_option("--set", sets, "override, section.key=value")->take_all();
    train->add_option("-o,--out", out, "run directory (overrides output.dir)");

    std::string ckpt;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the configured target data");
    eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval->add_option("-c,--config", config_path, "config naming the data")->required()->check(CLI::ExistingFile);
    eval->add_option("--set", sets, "override, section.key=value")->take_all();
    eval->add_option("-o,--out", out, "directory for metrics.kv (stdout if omitted)");

    std::vector<std::size_t> p_list{2, 128, 512, 1024};
    std::size_t batch = 64;
    std::size_t iters = 20;
    std::vector<std::string> methods{"tikuda", "dare-gram"};
    std::uint64_t seed = 0;
    auto* bench = app.add_subcommand("bench-alignment", "time alignment losses (forward + backward)");
    bench->add_option("--p", p_list, "feature dimensions, ascending")->delimiter(',');
    bench->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
    bench->add_option("--iters", iters, "timed iterations per cell")->check(CLI::Range(20, 1000000));
    bench->add_option("--methods", methods, "methods")->delimiter(',');
    bench->add_option("--seed", seed, "batch seed");
    bench->add_option("-o,--out", out, "bench.csv path");

    std::string preset = "default";
    auto* synth = app.add_subcommand("synthetic", "write a synthetic source/target pair");
    synth->add_option("-c,--config", config_path, "config with a [synthetic] section")->check(CLI::ExistingFile);
    synth->add_option("--preset", preset, "default, scale-dominant or identity");
    synth->add_option("--set", sets, "override, synthetic.key=value")->take_all();
    synth->add_option("-o,--out", out, "output directory")->required();

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint metadata and parameter shapes");
    inspect->add_option("checkpoint", inspect_path, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigExit;
    }

    if (*train) return guarded([&] { return cmd_train(config_path, sets, out); });
    if (*eval) return guarded([&] { return cmd_eval(ckpt, config_path, sets, out); });
    if (*bench) {
        return guarded([&] {
            if (!std::is_sorted(p_list.begin(), p_list.end())) {
                throw ConfigError("--p values must be ascending");
            }
            return cmd_bench(p_list, batch, iters, methods, seed, out);
        });
    }
    if (*synth) return guarded([&] { return cmd_synthetic(config_path, sets, preset, out); });
    if (*inspect) return guarded([&] { return cmd_inspect(inspect_path); });
    return kConfigExit;
}
