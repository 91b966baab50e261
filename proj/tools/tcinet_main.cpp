// tcinet: train, weight, infer and evaluate time-series causal-inference
// experiments from the command line. Exit code 0 on success, 1 on validation
// errors, 2 on runtime failures.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tcinet/tcinet.hpp"

namespace fs = std::filesystem;
using namespace tcinet;

namespace {

std::string format_cell(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ts::Schema schema_from_flags(const std::string& treatment, const std::string& outcome,
                             const std::vector<std::string>& covariates) {
    if (treatment.empty() || outcome.empty())
        throw ConfigError("--treatment and --outcome are required");
    ts::Schema schema;
    schema[treatment] = ts::ColumnRole::treatment;
    schema[outcome] = ts::ColumnRole::outcome;
    for (const auto& c : covariates) schema[c] = ts::ColumnRole::covariate;
    return schema;
}

int cmd_synth(std::uint64_t seed, int n, int burn_in, double noise_std,
              const std::string& intervention, const std::string& out_dir) {
    synth::SynthConfig cfg;
    cfg.seed = seed;
    cfg.n_steps = n;
    cfg.burn_in = burn_in;
    cfg.noise_std = noise_std;
    if (intervention == "none") {
        cfg.intervention = {};
    } else {
        const auto spec = infer::InterventionSpec::parse(intervention);
        if (spec.kind == infer::InterventionSpec::Kind::scale)
            cfg.intervention = {synth::Intervention::Kind::scale, spec.value};
        else if (spec.kind == infer::InterventionSpec::Kind::clamp)
            cfg.intervention = {synth::Intervention::Kind::fixed, spec.value};
        else
            throw ConfigError("synth supports scale:<f>, clamp:<v> or none");
    }
    const auto out = synth::generate(cfg);

    fs::create_directories(out_dir);
    ts::write_csv(out.factual, (fs::path(out_dir) / "factual.csv").string());
    ts::TimeSeriesFrame cf = out.factual;
    cf.columns[3].values = out.counterfactual_s4;
    ts::write_csv(cf, (fs::path(out_dir) / "counterfactual.csv").string());

    nlohmann::json truth{{"true_ate", out.true_ate},
                         {"seed", seed},
                         {"n_steps", n},
                         {"burn_in", burn_in},
                         {"noise_std", noise_std},
                         {"intervention", intervention}};
    std::ofstream tj(fs::path(out_dir) / "truth.json");
    tj << truth.dump(2) << '\n';
    std::cout << "true_ate " << format_cell(out.true_ate) << '\n';
    return 0;
}

int cmd_weights(const std::string& data, const std::string& treatment,
                const std::string& outcome, const std::vector<std::string>& covariates,
                const std::string& kind, int lag, int history_lag, int components,
                std::uint64_t seed, const std::string& out_csv, const std::string& diag_path) {
    const auto frame = ts::ingest_csv(data, schema_from_flags(treatment, outcome, covariates));

    const auto cov_idx = frame.covariate_indices();
    Eigen::MatrixXd cov(frame.size(), cov_idx.size());
    for (std::size_t c = 0; c < cov_idx.size(); ++c)
        for (std::size_t r = 0; r < frame.size(); ++r)
            cov(r, c) = frame.columns[cov_idx[c]].values[r];

    density::WeightVector wv;
    std::vector<density::GmmFitInfo> diag;
    if (kind == "gmm_sw") {
        density::StabilizedOptions opt;
        opt.history_lag = history_lag;
        opt.n_components = components;
        opt.seed = seed;
        wv = density::stabilized_weights(frame.treatment().values, cov, lag, opt, {}, &diag);
    } else if (kind == "iptw") {
        wv = density::iptw_weights(frame.treatment().values, cov, lag);
    } else {
        throw ConfigError("--kind must be gmm_sw or iptw");
    }

    std::ofstream out(out_csv);
    if (!out) throw IoError("cannot write '" + out_csv + "'");
    out << "window_end_index,weight\n";
    for (std::size_t i = 0; i < wv.weights.size(); ++i)
        out << wv.window_ends[i] << ',' << format_cell(wv.weights[i]) << '\n';

    if (!diag_path.empty()) {
        nlohmann::json jd;
        jd["effective_sample_size"] = wv.ess();
        jd["kind"] = density::weight_kind_name(wv.kind);
        nlohmann::json traces = nlohmann::json::array();
        for (const auto& f : diag)
            traces.push_back({{"label", f.label},
                              {"iterations", f.iterations},
                              {"converged", f.converged},
                              {"loglik_trace", f.loglik_trace}});
        jd["gmm_fits"] = traces;
        std::ofstream dj(diag_path);
        dj << jd.dump(2) << '\n';
    }
    std::cout << "wrote " << wv.weights.size() << " weights, ess " << format_cell(wv.ess())
              << '\n';
    return 0;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_override,
              const std::string& out_dir) {
    auto cfg = experiment::ExperimentConfig::load(config_path);
    const std::uint64_t seed = seed_override.value_or(cfg.seeds.front());

    ts::TimeSeriesFrame frame;
    if (cfg.dataset.kind == experiment::DatasetSpec::Kind::synthetic) {
        synth::SynthConfig sc = cfg.dataset.synth;
        sc.seed = seed;
        frame = synth::generate(sc).factual;
    } else {
        frame = ts::ingest_csv(cfg.dataset.csv_path, cfg.dataset.schema);
    }

    const auto td = metrics::prepare_training(frame, cfg.pipeline);
    const auto weights = metrics::compute_weights(td, cfg.balancing, cfg.pipeline, seed);
    const auto network = metrics::train_network(td, cfg.balancing, weights, cfg.pipeline, seed);

    fs::create_directories(out_dir);
    network.save((fs::path(out_dir) / "checkpoint.json").string());
    std::ofstream hist(fs::path(out_dir) / "history.csv");
    hist << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < network.train_loss_history().size(); ++e)
        hist << e << ',' << format_cell(network.train_loss_history()[e]) << ','
             << format_cell(network.val_loss_history()[e]) << '\n';
    std::cout << "trained " << network.epochs_run() << " epochs, "
              << network.parameter_count() << " parameters\n";
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& data,
              const std::string& treatment, const std::string& outcome,
              const std::vector<std::string>& covariates, const std::string& intervention,
              int n_mc, std::uint64_t seed, const std::string& report_path,
              const std::string& arms_path, const std::string& plot_path) {
    const auto network = pom::PomNetwork::load(checkpoint);
    const auto frame = ts::ingest_csv(data, schema_from_flags(treatment, outcome, covariates));
    const auto windows =
        ts::make_lagged(frame, network.config().lag, network.config().horizon);
    const auto spec = infer::InterventionSpec::parse(intervention);

    infer::LateOptions opt;
    opt.n_mc = n_mc;
    opt.seed = seed;
    const auto report = infer::estimate_late(network, windows, spec, opt);

    nlohmann::json j = report.to_json();
    j["intervention"] = spec.to_json();
    std::ofstream rj(report_path);
    if (!rj) throw IoError("cannot write '" + report_path + "'");
    rj << j.dump(2) << '\n';

    if (!arms_path.empty()) {
        std::ofstream arms(arms_path);
        arms << "window_end_index,factual_mean,counterfactual_mean\n";
        for (std::size_t i = 0; i < report.factual_mean.size(); ++i)
            arms << windows.windows[i].end_index << ',' << format_cell(report.factual_mean[i])
                 << ',' << format_cell(report.counterfactual_mean[i]) << '\n';
    }

    if (!plot_path.empty()) {
        // Per-year means of both arms at each window's outcome row; falls
        // back to per-step rows for integer-step frames.
        std::ofstream plot(plot_path);
        if (frame.calendar) {
            std::map<int, std::pair<double, int>> fsum;
            std::map<int, double> csum;
            for (std::size_t i = 0; i < report.factual_mean.size(); ++i) {
                const auto row = static_cast<std::size_t>(windows.windows[i].end_index +
                                                          network.config().horizon);
                const auto date = ts::detail::iso_date_from_days(frame.timestamps[row]);
                const int year = std::stoi(date.substr(0, 4));
                fsum[year].first += report.factual_mean[i];
                fsum[year].second += 1;
                csum[year] += report.counterfactual_mean[i];
            }
            plot << "year,factual_mean,counterfactual_mean\n";
            for (const auto& [year, acc] : fsum)
                plot << year << ',' << format_cell(acc.first / acc.second) << ','
                     << format_cell(csum[year] / acc.second) << '\n';
        } else {
            plot << "t,factual_mean,counterfactual_mean\n";
            for (std::size_t i = 0; i < report.factual_mean.size(); ++i) {
                const auto row = static_cast<std::size_t>(windows.windows[i].end_index +
                                                          network.config().horizon);
                plot << frame.timestamps[row] << ',' << format_cell(report.factual_mean[i])
                     << ',' << format_cell(report.counterfactual_mean[i]) << '\n';
            }
        }
    }
    std::cout << "late " << format_cell(report.late) << " ci [" << format_cell(report.ci_low)
              << ", " << format_cell(report.ci_high) << "]\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& variants_flag,
                 const std::string& out_csv) {
    const auto cfg = experiment::ExperimentConfig::load(config_path);
    if (cfg.dataset.kind != experiment::DatasetSpec::Kind::synthetic)
        throw ConfigError("evaluate needs a synthetic dataset with ground truth");

    std::vector<pom::Balancing> variants;
    if (variants_flag == "all")
        variants = {pom::Balancing::none, pom::Balancing::iptw, pom::Balancing::gmm_sw};
    else
        variants = {pom::balancing_from_name(variants_flag)};

    std::ofstream out(out_csv);
    if (!out) throw IoError("cannot write '" + out_csv + "'");
    out << "variant,seed,rmse,late,true_ate,pehe\n";
    for (const auto variant : variants) {
        std::vector<double> rmses, lates, pehes;
        for (const auto seed : cfg.seeds) {
            synth::SynthConfig sc = cfg.dataset.synth;
            sc.seed = seed;
            metrics::EvalSummary s;
            if (sc.intervention.kind == synth::Intervention::Kind::fixed)
                s = metrics::evaluate_fixed_contrast(variant, synth::fixed_contrast(sc),
                                                     cfg.pipeline, seed);
            else
                s = metrics::evaluate_variant(variant, synth::generate(sc), cfg.pipeline, seed);
            out << s.variant << ',' << seed << ',' << format_cell(s.rmse) << ','
                << format_cell(s.late_hat) << ','
                << (s.true_ate ? format_cell(*s.true_ate) : "") << ','
                << (s.pehe ? format_cell(*s.pehe) : "") << '\n';
            rmses.push_back(s.rmse);
            lates.push_back(s.late_hat);
            if (s.pehe) pehes.push_back(*s.pehe);
        }
        out << pom::balancing_name(variant) << ",median,"
            << format_cell(experiment::detail::median(rmses)) << ','
            << format_cell(experiment::detail::median(lates)) << ",,"
            << (pehes.empty() ? "" : format_cell(experiment::detail::median(pehes))) << '\n';
    }
    std::cout << "wrote " << out_csv << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TCINet: time-series causal inference under continuous treatment"};
    app.require_subcommand(1);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic four-series system");
    std::uint64_t s_seed = 42;
    int s_n = 2500, s_burn = 100;
    double s_noise = 1.0;
    std::string s_intervention = "scale:1.1", s_out = "synth_out";
    synth_cmd->add_option("--seed", s_seed, "generator seed");
    synth_cmd->add_option("--n", s_n, "steps after burn-in");
    synth_cmd->add_option("--burn-in", s_burn, "discarded leading rows (>= 10)");
    synth_cmd->add_option("--noise-std", s_noise, "white-noise scale");
    synth_cmd->add_option("--intervention", s_intervention,
                          "scale:<f>, clamp:<v> or none");
    synth_cmd->add_option("--out", s_out, "output directory");

    // weights
    auto* weights_cmd = app.add_subcommand("weights", "balancing weights for a frame CSV");
    std::string w_data, w_treatment, w_outcome, w_kind = "gmm_sw";
    std::vector<std::string> w_covariates;
    int w_lag = 2, w_history = -1, w_components = 3;
    std::uint64_t w_seed = 0;
    std::string w_out = "weights.csv", w_diag;
    weights_cmd->add_option("--data", w_data, "frame CSV")->required();
    weights_cmd->add_option("--treatment", w_treatment, "treatment column")->required();
    weights_cmd->add_option("--outcome", w_outcome, "outcome column")->required();
    weights_cmd->add_option("--covariates", w_covariates, "covariate columns")->delimiter(',');
    weights_cmd->add_option("--kind", w_kind, "gmm_sw or iptw");
    weights_cmd->add_option("--lag", w_lag, "window lag");
    weights_cmd->add_option("--history-lag", w_history, "treatment history depth (-1: lag)");
    weights_cmd->add_option("--components", w_components, "GMM components (0: BIC)");
    weights_cmd->add_option("--seed", w_seed, "fit seed");
    weights_cmd->add_option("--out", w_out, "weights CSV path");
    weights_cmd->add_option("--diagnostics", w_diag, "diagnostics JSON path");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a potential outcome model");
    std::string t_config, t_out = "train_out";
    std::optional<std::uint64_t> t_seed;
    train_cmd->add_option("--config", t_config, "experiment config JSON")->required();
    train_cmd->add_option("--seed", t_seed, "override the config's first seed");
    train_cmd->add_option("--out", t_out, "output directory");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "factual vs counterfactual effect report");
    std::string i_checkpoint, i_data, i_treatment, i_outcome, i_intervention = "scale:1.1";
    std::vector<std::string> i_covariates;
    int i_nmc = 50;
    std::uint64_t i_seed = 0;
    std::string i_report = "report.json", i_arms, i_plot;
    infer_cmd->add_option("--checkpoint", i_checkpoint, "model checkpoint")->required();
    infer_cmd->add_option("--data", i_data, "frame CSV")->required();
    infer_cmd->add_option("--treatment", i_treatment, "treatment column")->required();
    infer_cmd->add_option("--outcome", i_outcome, "outcome column")->required();
    infer_cmd->add_option("--covariates", i_covariates, "covariate columns")->delimiter(',');
    infer_cmd->add_option("--intervention", i_intervention,
                          "scale:<f> | clamp:<v> | trend:<t>x<m> | mean_replace[:v]");
    infer_cmd->add_option("--n-mc", i_nmc, "Monte-Carlo dropout passes");
    infer_cmd->add_option("--seed", i_seed, "MC stream seed");
    infer_cmd->add_option("--report", i_report, "report JSON path");
    infer_cmd->add_option("--arms", i_arms, "per-arm prediction CSV path");
    infer_cmd->add_option("--plot", i_plot, "plot-data CSV path");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "variant metrics table across seeds");
    std::string e_config, e_variants = "all", e_out = "results.csv";
    eval_cmd->add_option("--config", e_config, "experiment config JSON")->required();
    eval_cmd->add_option("--variants", e_variants, "none|iptw|gmm_sw|all");
    eval_cmd->add_option("--out", e_out, "results CSV path");

    // run
    auto* run_cmd = app.add_subcommand("run", "full experiment: all stages, all seeds");
    std::string r_config;
    std::string r_out;
    run_cmd->add_option("--config", r_config, "experiment config JSON")->required();
    run_cmd->add_option("--out", r_out, "override the config's output directory");

    try {
        app.parse(argc, argv);
        if (synth_cmd->parsed())
            return cmd_synth(s_seed, s_n, s_burn, s_noise, s_intervention, s_out);
        if (weights_cmd->parsed())
            return cmd_weights(w_data, w_treatment, w_outcome, w_covariates, w_kind, w_lag,
                               w_history, w_components, w_seed, w_out, w_diag);
        if (train_cmd->parsed()) return cmd_train(t_config, t_seed, t_out);
        if (infer_cmd->parsed())
            return cmd_infer(i_checkpoint, i_data, i_treatment, i_outcome, i_covariates,
                             i_intervention, i_nmc, i_seed, i_report, i_arms, i_plot);
        if (eval_cmd->parsed()) return cmd_evaluate(e_config, e_variants, e_out);
        if (run_cmd->parsed()) {
            auto cfg = experiment::ExperimentConfig::load(r_config);
            if (!r_out.empty()) cfg.out_dir = r_out;
            const auto result = experiment::run_experiment(cfg);
            std::cout << "wrote " << result.out_dir.string() << " ("
                      << result.manifest["files"].size() << " files)\n";
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
