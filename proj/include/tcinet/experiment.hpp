#ifndef TCINET_EXPERIMENT_HPP
#define TCINET_EXPERIMENT_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcinet/errors.hpp"
#include "tcinet/inference.hpp"
#include "tcinet/metrics.hpp"
#include "tcinet/pom.hpp"
#include "tcinet/synthgen.hpp"
#include "tcinet/timeseries.hpp"

namespace tcinet::experiment {

inline constexpr const char* kToolkitVersion = "0.1.0";

struct DatasetSpec {
    enum class Kind { synthetic, csv };
    Kind kind = Kind::synthetic;
    synth::SynthConfig synth; // per-run seed is substituted at run time
    std::string csv_path;
    ts::Schema schema;

    nlohmann::json to_json() const {
        if (kind == Kind::synthetic) {
            nlohmann::json iv;
            switch (synth.intervention.kind) {
            case synth::Intervention::Kind::fixed:
                iv = {{"kind", "fixed"}, {"value", synth.intervention.value}};
                break;
            case synth::Intervention::Kind::scale:
                iv = {{"kind", "scale"}, {"value", synth.intervention.value}};
                break;
            default: iv = {{"kind", "none"}}; break;
            }
            return {{"kind", "synthetic"},
                    {"n_steps", synth.n_steps},
                    {"burn_in", synth.burn_in},
                    {"noise_std", synth.noise_std},
                    {"intervention", iv}};
        }
        nlohmann::json roles;
        for (const auto& [name, role] : schema) roles[name] = ts::role_name(role);
        return {{"kind", "csv"}, {"path", csv_path}, {"roles", roles}};
    }

    static DatasetSpec from_json(const nlohmann::json& j) {
        DatasetSpec d;
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "synthetic") {
            d.kind = Kind::synthetic;
            d.synth.n_steps = j.value("n_steps", d.synth.n_steps);
            d.synth.burn_in = j.value("burn_in", d.synth.burn_in);
            d.synth.noise_std = j.value("noise_std", d.synth.noise_std);
            if (j.contains("intervention")) {
                const auto& iv = j.at("intervention");
                const auto ik = iv.at("kind").get<std::string>();
                if (ik == "fixed")
                    d.synth.intervention = {synth::Intervention::Kind::fixed,
                                            iv.at("value").get<double>()};
                else if (ik == "scale")
                    d.synth.intervention = {synth::Intervention::Kind::scale,
                                            iv.at("value").get<double>()};
                else if (ik == "none")
                    d.synth.intervention = {};
                else
                    throw ConfigError("unknown synthetic intervention kind '" + ik + "'");
            }
        } else if (kind == "csv") {
            d.kind = Kind::csv;
            d.csv_path = j.at("path").get<std::string>();
            for (const auto& [name, role] : j.at("roles").items())
                d.schema[name] = ts::role_from_name(role.get<std::string>());
        } else {
            throw ConfigError("unknown dataset kind '" + kind + "'");
        }
        return d;
    }
};

struct ExperimentConfig {
    DatasetSpec dataset;
    metrics::PipelineConfig pipeline;
    pom::Balancing balancing = pom::Balancing::gmm_sw;
    std::vector<infer::InterventionSpec> interventions;
    std::vector<std::uint64_t> seeds{1};
    std::string out_dir = "out";

    void validate() const {
        if (seeds.empty()) throw ConfigError("at least one seed is required");
        pipeline.pom.validate();
        for (const auto& iv : interventions) iv.validate();
        if (dataset.kind == DatasetSpec::Kind::synthetic) dataset.synth.validate();
        if (!(pipeline.train_fraction > 0.0 && pipeline.train_fraction < 1.0))
            throw ConfigError("train_fraction must be in (0,1)");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["dataset"] = dataset.to_json();
        j["pom"] = pom::PomNetwork::config_to_json(pipeline.pom);
        j["weights"] = {{"n_components", pipeline.sw.n_components},
                        {"history_lag", pipeline.sw.history_lag},
                        {"clip_percentiles",
                         {pipeline.sw.clip_lo_pct, pipeline.sw.clip_hi_pct}},
                        {"refit_per_step", pipeline.sw.refit_per_step}};
        j["late"] = {{"n_mc", pipeline.late.n_mc},
                     {"paired", pipeline.late.paired},
                     {"mc_dropout", pipeline.late.mc_dropout},
                     {"bootstrap_ci", pipeline.late.bootstrap_ci}};
        j["train_fraction"] = pipeline.train_fraction;
        j["context_bridge"] = pipeline.context_bridge;
        j["balancing"] = pom::balancing_name(balancing);
        nlohmann::json ivs = nlohmann::json::array();
        for (const auto& iv : interventions) ivs.push_back(iv.to_json());
        j["interventions"] = ivs;
        j["seeds"] = seeds;
        j["out_dir"] = out_dir;
        return j;
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        if (j.contains("dataset")) c.dataset = DatasetSpec::from_json(j.at("dataset"));
        if (j.contains("pom")) c.pipeline.pom = pom::PomNetwork::config_from_json(j.at("pom"));
        // The documented Arctic workflow operates at a lag-correlation
        // horizon of 8 days; synthetic studies default to one-step-ahead.
        if (!j.contains("pom") || !j.at("pom").contains("horizon"))
            c.pipeline.pom.horizon = c.dataset.kind == DatasetSpec::Kind::csv ? 8 : 1;
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            c.pipeline.sw.n_components = w.value("n_components", c.pipeline.sw.n_components);
            c.pipeline.sw.history_lag = w.value("history_lag", c.pipeline.sw.history_lag);
            if (w.contains("clip_percentiles")) {
                c.pipeline.sw.clip_lo_pct = w.at("clip_percentiles").at(0).get<double>();
                c.pipeline.sw.clip_hi_pct = w.at("clip_percentiles").at(1).get<double>();
            }
            c.pipeline.sw.refit_per_step = w.value("refit_per_step", false);
        }
        if (j.contains("late")) {
            const auto& l = j.at("late");
            c.pipeline.late.n_mc = l.value("n_mc", c.pipeline.late.n_mc);
            c.pipeline.late.paired = l.value("paired", c.pipeline.late.paired);
            c.pipeline.late.mc_dropout = l.value("mc_dropout", c.pipeline.late.mc_dropout);
            c.pipeline.late.bootstrap_ci = l.value("bootstrap_ci", false);
        }
        c.pipeline.train_fraction = j.value("train_fraction", c.pipeline.train_fraction);
        c.pipeline.context_bridge = j.value("context_bridge", false);
        if (j.contains("balancing"))
            c.balancing = pom::balancing_from_name(j.at("balancing").get<std::string>());
        if (j.contains("interventions"))
            for (const auto& iv : j.at("interventions"))
                c.interventions.push_back(infer::InterventionSpec::from_json(iv));
        if (j.contains("seeds")) j.at("seeds").get_to(c.seeds);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.validate();
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
        }
        return from_json(j);
    }
};

namespace detail {

inline std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot checksum '" + path.string() + "'");
    std::uint64_t h = 0xCBF29CE484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001B3ull;
        }
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string format_cell(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline int thread_cap() {
    if (const char* env = std::getenv("TCINET_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const auto hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

} // namespace detail

struct SeedRunResult {
    std::uint64_t seed = 0;
    metrics::EvalSummary summary;
    std::map<std::string, double> stage_seconds;
};

/// One end-to-end run: data -> weights -> train -> infer -> evaluate,
/// persisting every stage's artifacts under `dir`.
inline SeedRunResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                              const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    SeedRunResult result;
    result.seed = seed;
    fs::create_directories(dir);

    std::string stage = "data";
    const auto stage_start = [&](const std::string& name) {
        stage = name;
        return std::chrono::steady_clock::now();
    };
    const auto stage_end = [&](std::chrono::steady_clock::time_point t0) {
        result.stage_seconds[stage] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    try {
        // data
        auto t0 = stage_start("data");
        ts::TimeSeriesFrame frame;
        std::optional<synth::SynthOutput> synth_out;
        std::optional<synth::FixedContrast> contrast;
        if (cfg.dataset.kind == DatasetSpec::Kind::synthetic) {
            synth::SynthConfig sc = cfg.dataset.synth;
            sc.seed = seed;
            if (sc.intervention.kind == synth::Intervention::Kind::fixed) {
                contrast = synth::fixed_contrast(sc);
                synth_out = contrast->treated;
            } else {
                synth_out = synth::generate(sc);
            }
            frame = synth_out->factual;
            ts::write_csv(frame, (dir / "factual.csv").string());
            ts::TimeSeriesFrame cf = frame;
            cf.columns[3].values = synth_out->counterfactual_s4;
            ts::write_csv(cf, (dir / "counterfactual.csv").string());
            const double truth_ate =
                contrast ? contrast->true_ate : synth_out->true_ate;
            std::ofstream truth(dir / "truth.json");
            truth << nlohmann::json{{"true_ate", truth_ate},
                                    {"seed", seed},
                                    {"config", cfg.dataset.to_json()}}
                         .dump(2)
                  << '\n';
        } else {
            frame = ts::ingest_csv(cfg.dataset.csv_path, cfg.dataset.schema);
            ts::write_csv(frame, (dir / "data.csv").string());
        }
        stage_end(t0);

        // weights
        t0 = stage_start("weights");
        const auto td = metrics::prepare_training(frame, cfg.pipeline);
        std::vector<density::GmmFitInfo> diag;
        const auto weights = metrics::compute_weights(td, cfg.balancing, cfg.pipeline, seed,
                                                      &diag);
        {
            std::ofstream wcsv(dir / "weights.csv");
            wcsv << "window_end_index,weight\n";
            for (std::size_t i = 0; i < weights.weights.size(); ++i)
                wcsv << weights.window_ends[i] << ','
                     << detail::format_cell(weights.weights[i]) << '\n';
            nlohmann::json jd;
            jd["effective_sample_size"] = weights.ess();
            jd["kind"] = density::weight_kind_name(weights.kind);
            nlohmann::json traces = nlohmann::json::array();
            for (const auto& f : diag)
                traces.push_back({{"label", f.label},
                                  {"iterations", f.iterations},
                                  {"converged", f.converged},
                                  {"loglik_trace", f.loglik_trace}});
            jd["gmm_fits"] = traces;
            std::ofstream wdiag(dir / "weights_diag.json");
            wdiag << jd.dump(2) << '\n';
        }
        stage_end(t0);

        // train
        t0 = stage_start("train");
        metrics::TrainedPipeline tp{metrics::train_network(td, cfg.balancing, weights,
                                                           cfg.pipeline, seed),
                                    {}, {}, {}, weights, td.train_frame.size(), diag};
        metrics::attach_eval_windows(tp, frame, cfg.pipeline);
        tp.network.save((dir / "checkpoint.json").string());
        {
            std::ofstream hist(dir / "history.csv");
            hist << "epoch,train_loss,val_loss\n";
            const auto& tl = tp.network.train_loss_history();
            const auto& vl = tp.network.val_loss_history();
            for (std::size_t e = 0; e < tl.size(); ++e)
                hist << e << ',' << detail::format_cell(tl[e]) << ','
                     << detail::format_cell(vl[e]) << '\n';
        }
        stage_end(t0);

        // infer: one report per configured intervention
        t0 = stage_start("infer");
        for (const auto& iv : cfg.interventions) {
            infer::LateOptions opt = cfg.pipeline.late;
            opt.seed = Rng::derive_seed(seed, "mc-infer");
            const auto report = infer::estimate_late(tp.network, tp.eval_windows, iv, opt);
            const std::string label = iv.label();
            std::ofstream rj(dir / ("report_" + label + ".json"));
            nlohmann::json j = report.to_json();
            j["intervention"] = iv.to_json();
            rj << j.dump(2) << '\n';
            std::ofstream arms(dir / ("arms_" + label + ".csv"));
            arms << "window_end_index,factual_mean,counterfactual_mean\n";
            for (std::size_t i = 0; i < report.factual_mean.size(); ++i)
                arms << tp.eval_windows.windows[i].end_index << ','
                     << detail::format_cell(report.factual_mean[i]) << ','
                     << detail::format_cell(report.counterfactual_mean[i]) << '\n';
        }
        stage_end(t0);

        // evaluate
        t0 = stage_start("evaluate");
        if (contrast) {
            const infer::InterventionSpec one{infer::InterventionSpec::Kind::clamp, 1.0, 0, 0};
            const infer::InterventionSpec zero{infer::InterventionSpec::Kind::clamp, 0.0, 0, 0};
            result.summary =
                metrics::evaluate_trained(tp, one, zero, cfg.pipeline.late, &contrast->true_ite,
                                          contrast->true_ate,
                                          pom::balancing_name(cfg.balancing), seed);
        } else if (synth_out &&
                   synth_out->config.intervention.kind != synth::Intervention::Kind::none) {
            result.summary = metrics::evaluate_trained(
                tp, metrics::spec_from_synth(synth_out->config.intervention),
                infer::InterventionSpec::identity(), cfg.pipeline.late, &synth_out->true_ite,
                synth_out->true_ate, pom::balancing_name(cfg.balancing), seed);
        } else {
            const infer::InterventionSpec arm =
                cfg.interventions.empty() ? infer::InterventionSpec::identity()
                                          : cfg.interventions.front();
            result.summary =
                metrics::evaluate_trained(tp, arm, infer::InterventionSpec::identity(),
                                          cfg.pipeline.late, nullptr, 0.0,
                                          pom::balancing_name(cfg.balancing), seed);
        }
        {
            std::ofstream sj(dir / "summary.json");
            sj << result.summary.to_json().dump(2) << '\n';
        }
        stage_end(t0);
    } catch (const std::exception& e) {
        throw ExecutionError("stage " + stage + " (seed " + std::to_string(seed) +
                             "): " + e.what());
    }
    return result;
}

struct ExperimentResult {
    std::vector<SeedRunResult> runs;
    std::filesystem::path out_dir;
    nlohmann::json manifest;
};

/// Runs every seed (in parallel up to TCINET_THREADS), writes the aggregate
/// table and a manifest with per-file checksums. A failing stage aborts the
/// experiment but still persists a partial manifest naming the stage.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    const fs::path out_dir(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    {
        std::ofstream probe(out_dir / ".write_probe");
        if (!probe) throw IoError("output directory '" + cfg.out_dir + "' is not writable");
    }
    fs::remove(out_dir / ".write_probe", ec);

    const auto config_json = cfg.to_json();
    const std::string config_hash =
        detail::hex64(tcinet::detail::fnv1a64(config_json.dump()));

    ExperimentResult result;
    result.out_dir = out_dir;
    result.runs.resize(cfg.seeds.size());

    std::vector<std::exception_ptr> failures(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    const int n_threads =
        std::min<int>(detail::thread_cap(), static_cast<int>(cfg.seeds.size()));
    const auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.seeds.size()) return;
            try {
                result.runs[i] = run_seed(cfg, cfg.seeds[i],
                                          out_dir / ("seed_" + std::to_string(cfg.seeds[i])));
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::string failed_stage;
    for (std::size_t i = 0; i < failures.size(); ++i) {
        if (failures[i]) {
            try {
                std::rethrow_exception(failures[i]);
            } catch (const std::exception& e) {
                failed_stage = e.what();
            }
            break;
        }
    }

    if (failed_stage.empty()) {
        std::ofstream agg(out_dir / "aggregate.csv");
        agg << "variant,seed,rmse,late,true_ate,pehe\n";
        std::vector<double> rmses, lates, pehes;
        for (const auto& r : result.runs) {
            const auto& s = r.summary;
            agg << s.variant << ',' << r.seed << ',' << detail::format_cell(s.rmse) << ','
                << detail::format_cell(s.late_hat) << ','
                << (s.true_ate ? detail::format_cell(*s.true_ate) : "") << ','
                << (s.pehe ? detail::format_cell(*s.pehe) : "") << '\n';
            rmses.push_back(s.rmse);
            lates.push_back(s.late_hat);
            if (s.pehe) pehes.push_back(*s.pehe);
        }
        agg << result.runs.front().summary.variant << ",median,"
            << detail::format_cell(detail::median(rmses)) << ','
            << detail::format_cell(detail::median(lates)) << ",,"
            << (pehes.empty() ? "" : detail::format_cell(detail::median(pehes))) << '\n';
    }

    // Manifest: everything under out_dir except the manifest itself, with
    // checksums; stage timings are informational and live only here.
    nlohmann::json manifest;
    manifest["toolkit_version"] = kToolkitVersion;
    manifest["config_hash"] = config_hash;
    manifest["config"] = config_json;
    if (!failed_stage.empty()) manifest["failed"] = failed_stage;
    nlohmann::json files = nlohmann::json::array();
    std::vector<fs::path> paths;
    for (const auto& entry : fs::recursive_directory_iterator(out_dir))
        if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
            paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths)
        files.push_back({{"path", fs::relative(p, out_dir).generic_string()},
                         {"checksum", detail::hex64(detail::fnv1a64_file(p))},
                         {"bytes", fs::file_size(p)}});
    manifest["files"] = files;
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& r : result.runs) {
        nlohmann::json s{{"seed", r.seed}};
        for (const auto& [name, secs] : r.stage_seconds) s[name] = secs;
        stages.push_back(s);
    }
    manifest["stage_seconds"] = stages;
    {
        std::ofstream mj(out_dir / "manifest.json");
        mj << manifest.dump(2) << '\n';
    }
    result.manifest = manifest;

    if (!failed_stage.empty()) throw ExecutionError(failed_stage);
    return result;
}

} // namespace tcinet::experiment

#endif
