#ifndef TCINET_METRICS_HPP
#define TCINET_METRICS_HPP

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcinet/density.hpp"
#include "tcinet/errors.hpp"
#include "tcinet/inference.hpp"
#include "tcinet/pom.hpp"
#include "tcinet/synthgen.hpp"
#include "tcinet/timeseries.hpp"

namespace tcinet::metrics {

inline double rmse(const std::vector<double>& y, const std::vector<double>& y_hat) {
    if (y.empty()) throw MetricError("rmse: empty input");
    if (y.size() != y_hat.size()) throw MetricError("rmse: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
}

/// Root mean squared error between per-step true and estimated effects.
inline double pehe(const std::vector<double>& true_ite, const std::vector<double>& est_ite) {
    if (true_ite.empty()) throw MetricError("pehe: ground truth required");
    if (true_ite.size() != est_ite.size()) throw MetricError("pehe: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < true_ite.size(); ++i)
        s += (true_ite[i] - est_ite[i]) * (true_ite[i] - est_ite[i]);
    return std::sqrt(s / static_cast<double>(true_ite.size()));
}

struct EvalSummary {
    std::string variant;
    std::uint64_t seed = 0;
    double rmse = 0.0;
    double late_hat = 0.0;
    std::optional<double> true_ate;
    std::optional<double> pehe;

    nlohmann::json to_json() const {
        nlohmann::json j{{"variant", variant},
                         {"seed", seed},
                         {"rmse", rmse},
                         {"late", late_hat}};
        if (true_ate) j["true_ate"] = *true_ate;
        if (pehe) j["pehe"] = *pehe;
        return j;
    }
};

struct PipelineConfig {
    pom::PomConfig pom;
    density::StabilizedOptions sw;
    density::IptwOptions iptw;
    infer::LateOptions late;
    double train_fraction = 0.8;
    bool context_bridge = false;
};

/// Training-partition windows plus the raw arrays the weight estimators
/// consume.
struct TrainingData {
    ts::TimeSeriesFrame train_frame;
    ts::LaggedDataset train_windows;
    std::vector<long long> window_ends;
    Eigen::MatrixXd covariates; // train rows x M
};

inline TrainingData prepare_training(const ts::TimeSeriesFrame& frame,
                                     const PipelineConfig& cfg) {
    frame.validate();
    auto [train_frame, test_frame] = ts::chronological_split(frame, cfg.train_fraction);
    (void)test_frame;
    TrainingData td;
    td.train_windows = ts::make_lagged(train_frame, cfg.pom.lag, cfg.pom.horizon);
    td.window_ends.reserve(td.train_windows.size());
    for (const auto& w : td.train_windows.windows) td.window_ends.push_back(w.end_index);

    const auto cov_idx = train_frame.covariate_indices();
    td.covariates.resize(train_frame.size(), cov_idx.size());
    for (std::size_t c = 0; c < cov_idx.size(); ++c)
        for (std::size_t r = 0; r < train_frame.size(); ++r)
            td.covariates(r, c) = train_frame.columns[cov_idx[c]].values[r];
    td.train_frame = std::move(train_frame);
    return td;
}

inline density::WeightVector compute_weights(const TrainingData& td, pom::Balancing variant,
                                             const PipelineConfig& cfg, std::uint64_t seed,
                                             std::vector<density::GmmFitInfo>* diag = nullptr) {
    switch (variant) {
    case pom::Balancing::gmm_sw: {
        density::StabilizedOptions sw = cfg.sw;
        sw.seed = Rng::derive_seed(seed, "weights");
        return density::stabilized_weights(td.train_frame.treatment().values, td.covariates,
                                           cfg.pom.lag, sw, td.window_ends, diag);
    }
    case pom::Balancing::iptw:
        return density::iptw_weights(td.train_frame.treatment().values, td.covariates,
                                     cfg.pom.lag, cfg.iptw, td.window_ends);
    default: return density::unit_weights(td.window_ends);
    }
}

inline pom::PomNetwork train_network(const TrainingData& td, pom::Balancing variant,
                                     const density::WeightVector& weights,
                                     const PipelineConfig& cfg, std::uint64_t seed) {
    pom::PomConfig pc = cfg.pom;
    pc.balancing = variant;
    pc.seed = Rng::derive_seed(seed, "pom");
    auto network = pom::PomNetwork::build(pc, td.train_windows.n_features);
    if (pc.standardize) {
        const auto standardizer = ts::fit_standardizer(td.train_frame);
        network.set_standardizer(standardizer, td.train_windows.feature_names,
                                 td.train_windows.outcome_name);
    }
    network.fit(td.train_windows, weights);
    return network;
}

/// A trained model plus the held-out evaluation windows it will be scored
/// on. `target_rows` maps each eval window to its outcome row in the full
/// frame, which is where synthetic ground-truth effects are indexed.
struct TrainedPipeline {
    pom::PomNetwork network;
    ts::LaggedDataset eval_windows;
    std::vector<double> eval_targets;
    std::vector<long long> target_rows;
    density::WeightVector train_weights;
    std::size_t n_train_rows = 0;
    std::vector<density::GmmFitInfo> weight_diagnostics;
};

/// Test-partition windows, targets and full-frame target rows.
inline void attach_eval_windows(TrainedPipeline& tp, const ts::TimeSeriesFrame& frame,
                                const PipelineConfig& cfg) {
    const auto eval = ts::build_eval_windows(frame, tp.n_train_rows, cfg.pom.lag,
                                             cfg.pom.horizon, cfg.context_bridge);
    tp.eval_windows = eval.dataset;
    tp.eval_targets.clear();
    tp.target_rows.clear();
    for (std::size_t k = 0; k < eval.dataset.size(); ++k) {
        tp.eval_targets.push_back(eval.dataset.windows[k].target);
        tp.target_rows.push_back(eval.target_row_offset + eval.dataset.windows[k].end_index +
                                 cfg.pom.horizon);
    }
}

/// Splits chronologically, fits balancing weights and the standardizer on
/// the training partition only, and trains the potential outcome model.
inline TrainedPipeline train_pipeline(const ts::TimeSeriesFrame& frame, pom::Balancing variant,
                                      const PipelineConfig& cfg, std::uint64_t seed) {
    const auto td = prepare_training(frame, cfg);
    std::vector<density::GmmFitInfo> diag;
    auto weights = compute_weights(td, variant, cfg, seed, &diag);
    TrainedPipeline tp{train_network(td, variant, weights, cfg, seed),
                       {}, {}, {}, std::move(weights), td.train_frame.size(), std::move(diag)};
    attach_eval_windows(tp, frame, cfg);
    return tp;
}

/// Scores a trained pipeline: factual test RMSE plus the effect estimate
/// for the contrast of `arm` against `base`. Ground-truth per-step effects,
/// when supplied, are sampled at each eval window's outcome row.
inline EvalSummary evaluate_trained(const TrainedPipeline& tp, const infer::InterventionSpec& arm,
                                    const infer::InterventionSpec& base,
                                    const infer::LateOptions& late_opt,
                                    const std::vector<double>* true_ite, double true_ate,
                                    const std::string& variant_label, std::uint64_t seed) {
    EvalSummary summary;
    summary.variant = variant_label;
    summary.seed = seed;

    const auto factual_pred = tp.network.predict(tp.eval_windows, false, nullptr);
    summary.rmse = rmse(tp.eval_targets, factual_pred);

    infer::LateOptions opt = late_opt;
    opt.seed = Rng::derive_seed(seed, "mc-infer");
    const auto report = infer::estimate_contrast(tp.network, tp.eval_windows, arm, base, opt);
    summary.late_hat = report.late;

    if (true_ite) {
        std::vector<double> truth(tp.target_rows.size());
        for (std::size_t i = 0; i < tp.target_rows.size(); ++i)
            truth[i] = (*true_ite)[static_cast<std::size_t>(tp.target_rows[i])];
        summary.pehe = pehe(truth, report.estimated_ite());
        summary.true_ate = true_ate;
    }
    return summary;
}

inline infer::InterventionSpec spec_from_synth(const synth::Intervention& iv) {
    infer::InterventionSpec arm;
    if (iv.kind == synth::Intervention::Kind::scale) {
        arm.kind = infer::InterventionSpec::Kind::scale;
        arm.value = iv.value;
    } else if (iv.kind == synth::Intervention::Kind::fixed) {
        arm.kind = infer::InterventionSpec::Kind::clamp;
        arm.value = iv.value;
    } else {
        arm = infer::InterventionSpec::identity();
    }
    return arm;
}

/// Full synthetic evaluation for one balancing variant: train on the
/// factual series, contrast the configured intervention against the
/// factual arm, and score against generator ground truth.
inline EvalSummary evaluate_variant(pom::Balancing variant, const synth::SynthOutput& synth_out,
                                    const PipelineConfig& cfg, std::uint64_t seed) {
    if (synth_out.config.intervention.kind == synth::Intervention::Kind::none)
        throw ConfigError("evaluate_variant: synthetic output carries no intervention");
    const auto tp = train_pipeline(synth_out.factual, variant, cfg, seed);
    return evaluate_trained(tp, spec_from_synth(synth_out.config.intervention),
                            infer::InterventionSpec::identity(), cfg.late, &synth_out.true_ite,
                            synth_out.true_ate, pom::balancing_name(variant), seed);
}

/// Fixed-treatment evaluation against the clamp-to-1 vs clamp-to-0
/// contrast, the potential-outcomes Y(1) - Y(0) reading of a binary
/// intervention.
inline EvalSummary evaluate_fixed_contrast(pom::Balancing variant,
                                           const synth::FixedContrast& fc,
                                           const PipelineConfig& cfg, std::uint64_t seed) {
    const auto tp = train_pipeline(fc.control.factual, variant, cfg, seed);
    const infer::InterventionSpec one{infer::InterventionSpec::Kind::clamp, 1.0, 0.0, 0.0};
    const infer::InterventionSpec zero{infer::InterventionSpec::Kind::clamp, 0.0, 0.0, 0.0};
    return evaluate_trained(tp, one, zero, cfg.late, &fc.true_ite, fc.true_ate,
                            pom::balancing_name(variant), seed);
}

} // namespace tcinet::metrics

#endif
