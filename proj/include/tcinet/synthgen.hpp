#ifndef TCINET_SYNTHGEN_HPP
#define TCINET_SYNTHGEN_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tcinet/errors.hpp"
#include "tcinet/rng.hpp"
#include "tcinet/timeseries.hpp"

namespace tcinet::synth {

/// Counterfactual treatment assignment for the S4 arm.
struct Intervention {
    enum class Kind { none, fixed, scale };
    Kind kind = Kind::none;
    double value = 0.0; // clamp value (fixed) or multiplicative factor (scale)
};

struct SynthConfig {
    int n_steps = 2500;
    int burn_in = 100; // includes the 10 randomly initialized prefix rows
    std::uint64_t seed = 42;
    double noise_std = 1.0;
    Intervention intervention{};

    void validate() const {
        if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
        if (burn_in < 10) throw ConfigError("burn_in must be >= 10 (S1 references t-10)");
        if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
        if (intervention.kind == Intervention::Kind::scale && intervention.value <= 0.0)
            throw ConfigError("scale intervention factor must be positive");
    }
};

/// Factual frame (S1,S2 covariates; S3 treatment; S4 outcome) plus the S4
/// trajectory under the intervened treatment. Both arms consume the same
/// noise draws, so true_ite isolates the intervention alone.
struct SynthOutput {
    ts::TimeSeriesFrame factual;
    std::vector<double> counterfactual_s4;
    std::vector<double> true_ite; // counterfactual_s4 - factual S4, per step
    double true_ate = 0.0;
    SynthConfig config;
};

namespace detail {

struct Trajectories {
    std::vector<double> s1, s2, s3, s4, s4_cf;
};

inline Trajectories simulate(const SynthConfig& cfg) {
    constexpr int kPrefix = 10; // deepest lag used by the S1 recurrence
    const int total = cfg.burn_in + cfg.n_steps;

    Trajectories tr;
    tr.s1.resize(total);
    tr.s2.resize(total);
    tr.s3.resize(total);
    tr.s4.resize(total);
    tr.s4_cf.resize(total);

    Rng rng = Rng::derive(cfg.seed, "synth");

    // Lagged references start as standard-normal draws; they live entirely
    // inside the discarded burn-in region.
    for (int t = 0; t < kPrefix; ++t) {
        tr.s1[t] = rng.normal();
        tr.s2[t] = rng.normal();
        tr.s3[t] = rng.normal();
        tr.s4[t] = rng.normal();
        tr.s4_cf[t] = tr.s4[t];
    }

    const auto treated_s3 = [&cfg](double s3_factual) {
        switch (cfg.intervention.kind) {
        case Intervention::Kind::fixed: return cfg.intervention.value;
        case Intervention::Kind::scale: return cfg.intervention.value * s3_factual;
        default: return s3_factual;
        }
    };

    for (int t = kPrefix; t < total; ++t) {
        const double e1 = rng.normal() * cfg.noise_std;
        const double e2 = rng.normal() * cfg.noise_std;
        const double e3 = rng.normal() * cfg.noise_std;
        const double e4 = rng.normal() * cfg.noise_std;

        tr.s1[t] = std::cos(t / 10.0) +
                   std::log(std::abs(tr.s1[t - 6] - tr.s1[t - 10]) + 1.0) + 0.1 * e1;
        tr.s2[t] = 1.2 * std::exp(tr.s1[t - 1] * tr.s1[t - 1] / 2.0) + e2;
        tr.s3[t] = -1.05 * std::exp(-tr.s1[t - 1] * tr.s1[t - 1] / 2.0) + e3;

        const double s1_term = -1.15 * std::exp(-tr.s1[t - 1] * tr.s1[t - 1] / 2.0);
        const double s3_prev = tr.s3[t - 1];
        const double s3_prev_cf = treated_s3(s3_prev);
        tr.s4[t] = s1_term + 1.35 * std::exp(-s3_prev * s3_prev / 2.0) +
                   0.28 * std::exp(-tr.s4[t - 1] * tr.s4[t - 1] / 2.0) + e4;
        tr.s4_cf[t] = s1_term + 1.35 * std::exp(-s3_prev_cf * s3_prev_cf / 2.0) +
                      0.28 * std::exp(-tr.s4_cf[t - 1] * tr.s4_cf[t - 1] / 2.0) + e4;
    }
    return tr;
}

} // namespace detail

inline SynthOutput generate(const SynthConfig& cfg) {
    cfg.validate();
    const auto tr = detail::simulate(cfg);
    const int off = cfg.burn_in;

    SynthOutput out;
    out.config = cfg;
    out.factual.calendar = false;
    out.factual.timestamps.resize(cfg.n_steps);
    for (int t = 0; t < cfg.n_steps; ++t) out.factual.timestamps[t] = t;

    const auto tail = [&](const std::vector<double>& v) {
        return std::vector<double>(v.begin() + off, v.end());
    };
    out.factual.columns = {
        ts::Column{"S1", ts::ColumnRole::covariate, tail(tr.s1)},
        ts::Column{"S2", ts::ColumnRole::covariate, tail(tr.s2)},
        ts::Column{"S3", ts::ColumnRole::treatment, tail(tr.s3)},
        ts::Column{"S4", ts::ColumnRole::outcome, tail(tr.s4)},
    };
    out.counterfactual_s4 = tail(tr.s4_cf);

    out.true_ite.resize(cfg.n_steps);
    double sum = 0.0;
    const auto& s4 = out.factual.columns[3].values;
    for (int t = 0; t < cfg.n_steps; ++t) {
        out.true_ite[t] = out.counterfactual_s4[t] - s4[t];
        sum += out.true_ite[t];
    }
    out.true_ate = sum / cfg.n_steps;
    out.factual.validate();
    return out;
}

/// S3 clamped to `treated_value` at every step of the counterfactual arm.
inline SynthOutput intervene_fixed(SynthConfig cfg, double treated_value) {
    cfg.intervention = {Intervention::Kind::fixed, treated_value};
    return generate(cfg);
}

/// Counterfactual arm uses scale * S3 at every step.
inline SynthOutput intervene_continuous(SynthConfig cfg, double scale) {
    cfg.intervention = {Intervention::Kind::scale, scale};
    return generate(cfg);
}

/// The binary-treatment contrast: Y(S3 clamped to 1) vs Y(S3 clamped to 0)
/// with shared noise. Its per-step difference is the fixed-treatment ground
/// truth used by PEHE.
struct FixedContrast {
    SynthOutput treated; // S3 clamped to 1
    SynthOutput control; // S3 clamped to 0
    std::vector<double> true_ite;
    double true_ate = 0.0;
};

inline FixedContrast fixed_contrast(const SynthConfig& cfg) {
    FixedContrast fc;
    fc.treated = intervene_fixed(cfg, 1.0);
    fc.control = intervene_fixed(cfg, 0.0);
    fc.true_ite.resize(fc.treated.counterfactual_s4.size());
    double sum = 0.0;
    for (std::size_t t = 0; t < fc.true_ite.size(); ++t) {
        fc.true_ite[t] = fc.treated.counterfactual_s4[t] - fc.control.counterfactual_s4[t];
        sum += fc.true_ite[t];
    }
    fc.true_ate = sum / static_cast<double>(fc.true_ite.size());
    return fc;
}

} // namespace tcinet::synth

#endif
