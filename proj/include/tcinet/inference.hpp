#ifndef TCINET_INFERENCE_HPP
#define TCINET_INFERENCE_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcinet/errors.hpp"
#include "tcinet/pom.hpp"
#include "tcinet/rng.hpp"
#include "tcinet/timeseries.hpp"

namespace tcinet::infer {

/// A perturbation of the treatment channel, applied to every window step.
/// Values are in natural (unstandardized) units.
struct InterventionSpec {
    enum class Kind { clamp, scale, add_trend_multiple, mean_replace };
    Kind kind = Kind::scale;
    double value = 1.0;   // clamp value / scale factor / mean_replace value (NaN: derive)
    double trend = 0.0;   // add_trend_multiple: per-step trend
    double multiple = 0.0; // add_trend_multiple: multiple of the trend

    static InterventionSpec identity() { return {Kind::scale, 1.0, 0.0, 0.0}; }

    void validate() const {
        if (kind == Kind::scale && !(value > 0.0))
            throw ConfigError("scale intervention requires a positive factor");
        if (kind == Kind::clamp && !std::isfinite(value))
            throw ConfigError("clamp intervention requires a finite value");
        if (kind == Kind::add_trend_multiple &&
            (!std::isfinite(trend) || !std::isfinite(multiple)))
            throw ConfigError("trend intervention requires finite trend and multiple");
    }

    /// Parses "scale:1.1", "clamp:0", "trend:0.039x2", "mean_replace" or
    /// "mean_replace:5.1".
    static InterventionSpec parse(const std::string& text) {
        InterventionSpec spec;
        const auto colon = text.find(':');
        const std::string head = text.substr(0, colon);
        const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
        try {
            if (head == "scale") {
                spec.kind = Kind::scale;
                spec.value = std::stod(rest);
            } else if (head == "clamp") {
                spec.kind = Kind::clamp;
                spec.value = std::stod(rest);
            } else if (head == "trend") {
                spec.kind = Kind::add_trend_multiple;
                const auto x = rest.find('x');
                if (x == std::string::npos) throw ConfigError("trend needs '<trend>x<multiple>'");
                spec.trend = std::stod(rest.substr(0, x));
                spec.multiple = std::stod(rest.substr(x + 1));
            } else if (head == "mean_replace") {
                spec.kind = Kind::mean_replace;
                spec.value = rest.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : std::stod(rest);
            } else {
                throw ConfigError("unknown intervention '" + head + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("cannot parse intervention '" + text + "'");
        }
        spec.validate();
        return spec;
    }

    std::string label() const {
        switch (kind) {
        case Kind::clamp: return "clamp:" + std::to_string(value);
        case Kind::scale: return "scale:" + std::to_string(value);
        case Kind::add_trend_multiple:
            return "trend:" + std::to_string(trend) + "x" + std::to_string(multiple);
        default: return "mean_replace";
        }
    }

    nlohmann::json to_json() const {
        switch (kind) {
        case Kind::clamp: return {{"kind", "clamp"}, {"value", value}};
        case Kind::scale: return {{"kind", "scale"}, {"value", value}};
        case Kind::add_trend_multiple:
            return {{"kind", "add_trend_multiple"}, {"trend", trend}, {"multiple", multiple}};
        default:
            if (std::isfinite(value)) return {{"kind", "mean_replace"}, {"value", value}};
            return {{"kind", "mean_replace"}};
        }
    }

    static InterventionSpec from_json(const nlohmann::json& j) {
        InterventionSpec spec;
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "clamp") {
            spec.kind = Kind::clamp;
            spec.value = j.at("value").get<double>();
        } else if (kind == "scale") {
            spec.kind = Kind::scale;
            spec.value = j.at("value").get<double>();
        } else if (kind == "add_trend_multiple") {
            spec.kind = Kind::add_trend_multiple;
            spec.trend = j.at("trend").get<double>();
            spec.multiple = j.at("multiple").get<double>();
        } else if (kind == "mean_replace") {
            spec.kind = Kind::mean_replace;
            spec.value = j.contains("value") ? j.at("value").get<double>()
                                             : std::numeric_limits<double>::quiet_NaN();
        } else {
            throw ConfigError("unknown intervention kind '" + kind + "'");
        }
        spec.validate();
        return spec;
    }
};

/// Rewrites the treatment column of every window; covariates are untouched.
/// mean_replace without an explicit value uses the mean treatment over the
/// supplied windows' steps.
inline ts::LaggedDataset apply_intervention(const ts::LaggedDataset& windows,
                                            const InterventionSpec& spec) {
    spec.validate();
    ts::LaggedDataset out = windows;
    const int tc = windows.treatment_column();

    double replace_value = spec.value;
    if (spec.kind == InterventionSpec::Kind::mean_replace && !std::isfinite(replace_value)) {
        double sum = 0.0;
        long long count = 0;
        for (const auto& w : windows.windows) {
            sum += w.input.col(tc).sum();
            count += w.input.rows();
        }
        if (count == 0) return out;
        replace_value = sum / static_cast<double>(count);
    }

    for (auto& w : out.windows) {
        for (Eigen::Index r = 0; r < w.input.rows(); ++r) {
            double& x = w.input(r, tc);
            switch (spec.kind) {
            case InterventionSpec::Kind::clamp: x = spec.value; break;
            case InterventionSpec::Kind::scale: x *= spec.value; break;
            case InterventionSpec::Kind::add_trend_multiple:
                x += spec.multiple * spec.trend;
                break;
            case InterventionSpec::Kind::mean_replace: x = replace_value; break;
            }
        }
    }
    return out;
}

struct LateOptions {
    int n_mc = 50;
    bool mc_dropout = true;
    bool paired = true; // share dropout masks between the two arms
    bool bootstrap_ci = false;
    int bootstrap_resamples = 1000;
    std::uint64_t seed = 0;
    bool keep_runs = false;
};

/// Factual/counterfactual ensembles and the lagged average treatment
/// effect with a 95% confidence interval over Monte-Carlo runs.
struct EffectReport {
    std::vector<double> factual_mean;
    std::vector<double> counterfactual_mean;
    std::vector<double> per_run_late;
    std::vector<std::vector<double>> factual_runs;        // kept when keep_runs
    std::vector<std::vector<double>> counterfactual_runs; // kept when keep_runs
    double late = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int n_mc = 0;
    bool degenerate_ci = false;

    /// Per-step estimated effect, counterfactual minus factual MC means.
    std::vector<double> estimated_ite() const {
        std::vector<double> ite(factual_mean.size());
        for (std::size_t i = 0; i < ite.size(); ++i)
            ite[i] = counterfactual_mean[i] - factual_mean[i];
        return ite;
    }

    nlohmann::json to_json() const {
        return {{"late", late},
                {"ci_low", ci_low},
                {"ci_high", ci_high},
                {"n_mc", n_mc},
                {"degenerate_ci", degenerate_ci},
                {"factual_mean", factual_mean},
                {"counterfactual_mean", counterfactual_mean},
                {"per_run_late", per_run_late}};
    }
};

/// Contrast of two intervention arms on the same windows. Each Monte-Carlo
/// run derives its RNG stream from (seed, run index); paired mode reuses
/// one stream for both arms so their dropout masks coincide and the
/// difference reflects only the treatment perturbation.
inline EffectReport estimate_contrast(const pom::PomNetwork& network,
                                      const ts::LaggedDataset& windows,
                                      const InterventionSpec& arm_spec,
                                      const InterventionSpec& base_spec,
                                      const LateOptions& opt = {}) {
    if (!network.trained()) throw StateError("estimate_late: network is not trained");
    if (opt.n_mc < 1) throw ConfigError("estimate_late: n_mc must be >= 1");
    if (windows.windows.empty()) throw DataError("estimate_late: no windows");

    const auto base = apply_intervention(windows, base_spec);
    const auto arm = apply_intervention(windows, arm_spec);
    const auto n = windows.windows.size();

    EffectReport rep;
    rep.n_mc = opt.n_mc;
    rep.factual_mean.assign(n, 0.0);
    rep.counterfactual_mean.assign(n, 0.0);

    for (int r = 0; r < opt.n_mc; ++r) {
        Rng rng_base = Rng::derive(opt.seed, "mc", static_cast<std::uint64_t>(r));
        Rng rng_arm = opt.paired
                          ? Rng::derive(opt.seed, "mc", static_cast<std::uint64_t>(r))
                          : Rng::derive(opt.seed, "mc-alt", static_cast<std::uint64_t>(r));
        const auto f = network.predict(base, opt.mc_dropout, &rng_base);
        const auto c = network.predict(arm, opt.mc_dropout, &rng_arm);
        double run_late = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            rep.factual_mean[i] += f[i];
            rep.counterfactual_mean[i] += c[i];
            run_late += c[i] - f[i];
        }
        rep.per_run_late.push_back(run_late / static_cast<double>(n));
        if (opt.keep_runs) {
            rep.factual_runs.push_back(f);
            rep.counterfactual_runs.push_back(c);
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        rep.factual_mean[i] /= opt.n_mc;
        rep.counterfactual_mean[i] /= opt.n_mc;
    }
    double late = 0.0;
    for (double v : rep.per_run_late) late += v;
    late /= opt.n_mc;
    rep.late = late;

    if (opt.n_mc == 1) {
        rep.degenerate_ci = true;
        rep.ci_low = rep.ci_high = late;
        return rep;
    }

    if (!opt.bootstrap_ci) {
        double var = 0.0;
        for (double v : rep.per_run_late) var += (v - late) * (v - late);
        var /= static_cast<double>(opt.n_mc - 1);
        const double half = 1.96 * std::sqrt(var / opt.n_mc);
        rep.ci_low = late - half;
        rep.ci_high = late + half;
    } else {
        Rng rng = Rng::derive(opt.seed, "bootstrap");
        std::vector<double> boot(opt.bootstrap_resamples);
        for (int b = 0; b < opt.bootstrap_resamples; ++b) {
            double s = 0.0;
            for (int r = 0; r < opt.n_mc; ++r)
                s += rep.per_run_late[rng.uniform_index(opt.n_mc)];
            boot[b] = s / opt.n_mc;
        }
        std::sort(boot.begin(), boot.end());
        rep.ci_low = boot[static_cast<std::size_t>(0.025 * (boot.size() - 1))];
        rep.ci_high = boot[static_cast<std::size_t>(std::ceil(0.975 * (boot.size() - 1)))];
    }
    return rep;
}

/// LATE of an intervention against the unmodified (factual) windows.
inline EffectReport estimate_late(const pom::PomNetwork& network,
                                  const ts::LaggedDataset& windows,
                                  const InterventionSpec& spec, const LateOptions& opt = {}) {
    return estimate_contrast(network, windows, spec, InterventionSpec::identity(), opt);
}

/// |LATE| under the identity intervention; should sit at zero.
inline double placebo_check(const pom::PomNetwork& network, const ts::LaggedDataset& windows,
                            const LateOptions& opt = {}) {
    return std::abs(estimate_late(network, windows, InterventionSpec::identity(), opt).late);
}

} // namespace tcinet::infer

#endif
