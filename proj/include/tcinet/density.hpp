#ifndef TCINET_DENSITY_HPP
#define TCINET_DENSITY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tcinet/errors.hpp"
#include "tcinet/rng.hpp"

namespace tcinet::density {

inline constexpr double kCovarianceFloor = 1e-6; // minimum covariance eigenvalue

/// Gaussian mixture: mixing weights alpha, per-component means and full
/// covariances. Immutable once fitted; evaluation is thread-safe.
struct GmmModel {
    Eigen::VectorXd mixing;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covariances;

    int n_components() const { return static_cast<int>(means.size()); }
    int dimension() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }

    void validate() const {
        if (means.empty()) throw FitError("empty mixture");
        if (std::abs(mixing.sum() - 1.0) > 1e-12) throw FitError("mixing weights must sum to 1");
        for (int j = 0; j < n_components(); ++j) {
            if (mixing[j] < 0.0) throw FitError("negative mixing weight");
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariances[j]);
            if (es.eigenvalues().minCoeff() < kCovarianceFloor * (1.0 - 1e-9))
                throw FitError("covariance eigenvalue below floor");
        }
    }
};

namespace detail {

inline double log_sum_exp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

/// Symmetrize and raise eigenvalues to the floor. Untouched when the matrix
/// is already comfortably positive definite, so a one-component fit recovers
/// the sample covariance exactly.
inline Eigen::MatrixXd floor_covariance(const Eigen::MatrixXd& cov, double floor) {
    Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.eigenvalues().minCoeff() >= floor) return sym;
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Cached Cholesky factors for repeated mixture-density evaluation.
class GmmEvaluator {
public:
    explicit GmmEvaluator(const GmmModel& model) : model_(&model) {
        const int k = model.n_components();
        const int d = model.dimension();
        llts_.reserve(k);
        log_norm_.resize(k);
        for (int j = 0; j < k; ++j) {
            Eigen::LLT<Eigen::MatrixXd> llt(model.covariances[j]);
            if (llt.info() != Eigen::Success)
                throw FitError("covariance not positive definite in component " +
                               std::to_string(j));
            double log_det_half = 0.0;
            for (int i = 0; i < d; ++i) log_det_half += std::log(llt.matrixL()(i, i));
            log_norm_[j] = -0.5 * d * std::log(2.0 * std::numbers::pi) - log_det_half;
            llts_.push_back(std::move(llt));
        }
    }

    double component_log_pdf(int j, const Eigen::VectorXd& x) const {
        const Eigen::VectorXd centered = x - model_->means[j];
        const Eigen::VectorXd z = llts_[j].matrixL().solve(centered);
        return log_norm_[j] - 0.5 * z.squaredNorm();
    }

    double log_pdf(const Eigen::VectorXd& x) const {
        const int k = model_->n_components();
        Eigen::VectorXd terms(k);
        for (int j = 0; j < k; ++j) {
            const double la = model_->mixing[j] > 0.0
                                  ? std::log(model_->mixing[j])
                                  : -std::numeric_limits<double>::infinity();
            terms[j] = la + component_log_pdf(j, x);
        }
        return log_sum_exp(terms);
    }

private:
    const GmmModel* model_;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> llts_;
    std::vector<double> log_norm_;
};

} // namespace detail

/// Mixture density sum_j alpha_j N(x; mu_j, Sigma_j), evaluated in log space.
inline double gmm_log_pdf(const GmmModel& model, const Eigen::VectorXd& x) {
    if (x.size() != model.dimension())
        throw ShapeError("gmm_log_pdf: point has dimension " + std::to_string(x.size()) +
                         ", model expects " + std::to_string(model.dimension()));
    return detail::GmmEvaluator(model).log_pdf(x);
}

inline double gmm_pdf(const GmmModel& model, const Eigen::VectorXd& x) {
    return std::exp(gmm_log_pdf(model, x));
}

/// Closed-form marginal over a subset of coordinates (Gaussian marginals
/// drop rows/columns; mixing weights are unchanged).
inline GmmModel gmm_marginal(const GmmModel& model, const std::vector<int>& keep) {
    GmmModel out;
    out.mixing = model.mixing;
    const int d = static_cast<int>(keep.size());
    for (int j = 0; j < model.n_components(); ++j) {
        Eigen::VectorXd mu(d);
        Eigen::MatrixXd cov(d, d);
        for (int a = 0; a < d; ++a) {
            mu[a] = model.means[j][keep[a]];
            for (int b = 0; b < d; ++b) cov(a, b) = model.covariances[j](keep[a], keep[b]);
        }
        out.means.push_back(std::move(mu));
        out.covariances.push_back(std::move(cov));
    }
    return out;
}

struct GmmFitOptions {
    int max_iterations = 200;
    double tolerance = 1e-6; // stop when log-likelihood improves by less
};

struct GmmFitResult {
    GmmModel model;
    std::vector<double> loglik_trace;
    int iterations = 0;
    bool converged = false;
};

/// EM with k-means++-style mean seeding. Log-likelihood is non-decreasing;
/// covariances are kept positive definite by the eigenvalue floor.
inline GmmFitResult fit_gmm(const Eigen::MatrixXd& data, int n_components, std::uint64_t seed,
                            const GmmFitOptions& opt = {}) {
    const int n = static_cast<int>(data.rows());
    if (n == 0) throw FitError("fit_gmm: empty data");
    if (n_components < 1) throw FitError("fit_gmm: n_components must be >= 1");
    if (n < n_components)
        throw FitError("fit_gmm: " + std::to_string(n) + " rows < " +
                       std::to_string(n_components) + " components");
    if (!data.allFinite()) throw FitError("fit_gmm: non-finite entries in data");

    GmmModel model;
    const int k = n_components;
    model.mixing = Eigen::VectorXd::Constant(k, 1.0 / k);

    // k-means++ seeding: first mean uniform, the rest proportional to the
    // squared distance from the nearest chosen mean.
    Rng rng = Rng::derive(seed, "gmm-seed");
    std::vector<int> chosen;
    chosen.push_back(static_cast<int>(rng.uniform_index(n)));
    Eigen::VectorXd d2 = (data.rowwise() - data.row(chosen[0])).rowwise().squaredNorm();
    while (static_cast<int>(chosen.size()) < k) {
        const double total = d2.sum();
        int pick;
        if (total <= 0.0) {
            pick = static_cast<int>(rng.uniform_index(n));
        } else {
            double target = rng.uniform01() * total;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                target -= d2[i];
                if (target <= 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        chosen.push_back(pick);
        d2 = d2.cwiseMin((data.rowwise() - data.row(pick)).rowwise().squaredNorm());
    }

    const Eigen::RowVectorXd grand_mean = data.colwise().mean();
    Eigen::MatrixXd centered0 = data.rowwise() - grand_mean;
    Eigen::MatrixXd base_cov =
        detail::floor_covariance((centered0.transpose() * centered0) / n, kCovarianceFloor);
    for (int j = 0; j < k; ++j) {
        model.means.push_back(data.row(chosen[j]).transpose());
        model.covariances.push_back(base_cov);
    }

    GmmFitResult result;
    Eigen::MatrixXd resp(n, k);
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        // E-step in log space.
        detail::GmmEvaluator eval(model);
        double ll = 0.0;
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd terms(k);
            const Eigen::VectorXd x = data.row(i).transpose();
            for (int j = 0; j < k; ++j) {
                const double la = model.mixing[j] > 0.0
                                      ? std::log(model.mixing[j])
                                      : -std::numeric_limits<double>::infinity();
                terms[j] = la + eval.component_log_pdf(j, x);
            }
            const double lse = detail::log_sum_exp(terms);
            ll += lse;
            for (int j = 0; j < k; ++j) resp(i, j) = std::exp(terms[j] - lse);
        }
        result.loglik_trace.push_back(ll);
        result.iterations = iter + 1;
        if (ll - prev_ll < opt.tolerance && iter > 0) {
            result.converged = true;
            break;
        }
        prev_ll = ll;

        // M-step.
        for (int j = 0; j < k; ++j) {
            const double nj = std::max(resp.col(j).sum(), 1e-12);
            model.mixing[j] = nj / n;
            const Eigen::VectorXd mu = (resp.col(j).transpose() * data).transpose() / nj;
            Eigen::MatrixXd c = data.rowwise() - mu.transpose();
            Eigen::MatrixXd cov =
                (c.transpose() * (resp.col(j).asDiagonal() * c)) / nj;
            model.means[j] = mu;
            model.covariances[j] = detail::floor_covariance(cov, kCovarianceFloor);
        }
        model.mixing /= model.mixing.sum();
    }

    result.model = std::move(model);
    return result;
}

/// Bayesian information criterion over a component-count range.
inline int select_n_components_bic(const Eigen::MatrixXd& data, int k_min, int k_max,
                                   std::uint64_t seed) {
    const int n = static_cast<int>(data.rows());
    const int d = static_cast<int>(data.cols());
    int best_k = k_min;
    double best_bic = std::numeric_limits<double>::infinity();
    for (int k = k_min; k <= k_max && k <= n; ++k) {
        const auto fit = fit_gmm(data, k, seed);
        const double ll = fit.loglik_trace.back();
        const double p = (k - 1) + k * d + k * d * (d + 1) / 2.0;
        const double bic = -2.0 * ll + p * std::log(static_cast<double>(n));
        if (bic < best_bic) {
            best_bic = bic;
            best_k = k;
        }
    }
    return best_k;
}

enum class WeightKind { none, iptw, stabilized };

inline std::string weight_kind_name(WeightKind k) {
    switch (k) {
    case WeightKind::iptw: return "iptw";
    case WeightKind::stabilized: return "stabilized";
    default: return "none";
    }
}

/// Balancing weights aligned to lagged-window end indices.
struct WeightVector {
    std::vector<double> weights;          // clipped and mean-normalized
    std::vector<double> raw;              // before clipping/normalization
    std::vector<long long> window_ends;
    WeightKind kind = WeightKind::none;
    std::pair<double, double> clip_bounds{1.0, 99.0}; // percentiles

    /// Effective sample size (sum w)^2 / sum w^2.
    double ess() const {
        double s = 0.0, s2 = 0.0;
        for (double w : weights) {
            s += w;
            s2 += w * w;
        }
        return s2 > 0.0 ? s * s / s2 : 0.0;
    }

    void validate() const {
        for (double w : weights)
            if (!(w > 0.0) || !std::isfinite(w))
                throw WeightError("non-positive or non-finite weight");
    }
};

inline WeightVector unit_weights(const std::vector<long long>& window_ends) {
    WeightVector wv;
    wv.kind = WeightKind::none;
    wv.window_ends = window_ends;
    wv.weights.assign(window_ends.size(), 1.0);
    wv.raw = wv.weights;
    return wv;
}

namespace detail {

inline double percentile(std::vector<double> sorted, double pct) {
    if (sorted.empty()) return 0.0;
    const double pos = pct / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline void clip_and_normalize(WeightVector& wv, double lo_pct, double hi_pct, bool normalize) {
    wv.clip_bounds = {lo_pct, hi_pct};
    std::vector<double> sorted = wv.raw;
    std::sort(sorted.begin(), sorted.end());
    const double lo = percentile(sorted, lo_pct);
    const double hi = percentile(sorted, hi_pct);
    wv.weights = wv.raw;
    for (double& w : wv.weights) w = std::clamp(w, lo, hi);
    if (normalize) {
        double mean = 0.0;
        for (double w : wv.weights) mean += w;
        mean /= static_cast<double>(wv.weights.size());
        if (!(mean > 0.0)) throw WeightError("weight mean is not positive");
        for (double& w : wv.weights) w /= mean;
    }
    wv.validate();
}

} // namespace detail

struct StabilizedOptions {
    int history_lag = -1;      // -1: use the window lag
    int covariate_history = 1; // lagged covariate copies in the denominator
    int n_components = 3;      // 0: select by BIC over {1..5}
    std::uint64_t seed = 0;
    double clip_lo_pct = 1.0;
    double clip_hi_pct = 99.0;
    bool normalize = true;
    bool separate_fits = false;  // fit numerator and denominator mixtures separately
    bool refit_per_step = false; // refit the mixtures on the causal prefix at each step
    int refit_min_rows = 50;
    GmmFitOptions fit{};
};

struct GmmFitInfo {
    std::string label;
    std::vector<double> loglik_trace;
    int iterations = 0;
    bool converged = false;
};

/// Stabilized weights for continuous treatment. For each window the log
/// ratio of the treatment density given its own history (numerator) to the
/// density given history plus covariate history (denominator) is summed
/// over the window's steps and exponentiated. Densities are mixture
/// conditionals: a fitted joint mixture divided by its closed-form marginal
/// over the conditioning coordinates. By default one mixture is fitted on
/// the full (treatment, history, covariates) block and both conditionals
/// come from it by marginalization, so estimation error largely cancels in
/// the ratio; `separate_fits` instead fits the two feature sets
/// independently. Steps whose history reaches before the start of the
/// series contribute a unit ratio.
inline WeightVector stabilized_weights(const std::vector<double>& treatment,
                                       const Eigen::MatrixXd& covariates, int lag,
                                       const StabilizedOptions& opt,
                                       const std::vector<long long>& window_ends_in = {},
                                       std::vector<GmmFitInfo>* diagnostics = nullptr) {
    const auto n = static_cast<long long>(treatment.size());
    if (lag < 1) throw WindowError("stabilized_weights: lag must be >= 1");
    if (n < lag) throw WindowError("stabilized_weights: series shorter than lag");
    if (covariates.rows() != 0 && covariates.rows() != n)
        throw ShapeError("stabilized_weights: covariate rows != treatment length");
    if (opt.covariate_history < 0)
        throw ConfigError("stabilized_weights: covariate_history must be >= 0");

    const int h = opt.history_lag < 0 ? lag : opt.history_lag;
    const int m = covariates.rows() == 0 ? 0 : static_cast<int>(covariates.cols());
    const int ch = opt.covariate_history;
    const int mz = m * (1 + ch); // covariate block width in the denominator
    const int hist_start = std::max(h, m > 0 ? ch : 0);

    std::vector<long long> ends = window_ends_in;
    if (ends.empty())
        for (long long k = lag - 1; k < n; ++k) ends.push_back(k);

    // Feature row at time tau: treatment, then h lags of treatment, then
    // (denominator only) covariates at tau..tau-ch. Defined for
    // tau >= hist_start.
    const auto num_row = [&](long long tau) {
        Eigen::VectorXd r(1 + h);
        for (int a = 0; a <= h; ++a) r[a] = treatment[static_cast<std::size_t>(tau - a)];
        return r;
    };
    const auto den_row = [&](long long tau) {
        Eigen::VectorXd r(1 + h + mz);
        r.head(1 + h) = num_row(tau);
        int f = 1 + h;
        for (int b = 0; b <= ch; ++b)
            for (int a = 0; a < m; ++a) r[f++] = covariates(tau - b, a);
        return r;
    };

    // Coordinate index sets within a denominator row.
    std::vector<int> num_dims(1 + h), hist_dims(h), condz_dims(h + mz);
    for (int a = 0; a <= h; ++a) num_dims[a] = a;
    for (int a = 0; a < h; ++a) hist_dims[a] = 1 + a;
    for (int a = 0; a < h + mz; ++a) condz_dims[a] = 1 + a;

    // log f(X|hist) - log f(X|hist,Z), all four log-densities evaluated as
    // mixture marginals of the underlying fit(s).
    struct RatioModel {
        GmmModel joint_num, marg_hist, joint_den, marg_histz;
        int h = 0;
        double operator()(const Eigen::VectorXd& full) const {
            const double log_num = gmm_log_pdf(joint_num, full.head(1 + h)) -
                                   gmm_log_pdf(marg_hist, full.segment(1, h));
            const double log_den = gmm_log_pdf(joint_den, full) -
                                   gmm_log_pdf(marg_histz, full.tail(full.size() - 1));
            return log_num - log_den;
        }
    };

    const auto fit_mixture = [&](const std::vector<Eigen::VectorXd>& rows,
                                 const std::string& label, std::uint64_t fit_seed) {
        Eigen::MatrixXd mat(rows.size(), rows[0].size());
        for (std::size_t i = 0; i < rows.size(); ++i) mat.row(i) = rows[i].transpose();
        int k = opt.n_components;
        if (k == 0) k = select_n_components_bic(mat, 1, 5, fit_seed);
        const auto fit = fit_gmm(mat, k, fit_seed, opt.fit);
        if (diagnostics)
            diagnostics->push_back(
                GmmFitInfo{label, fit.loglik_trace, fit.iterations, fit.converged});
        return fit.model;
    };

    const auto build_ratio = [&](const std::vector<Eigen::VectorXd>& nrows,
                                 const std::vector<Eigen::VectorXd>& drows,
                                 const std::string& label, std::uint64_t fit_seed) {
        RatioModel rm;
        rm.h = h;
        if (opt.separate_fits) {
            // Algorithm-1 style: independent fits per feature set, sharing
            // one seed so identical feature sets still yield a unit ratio.
            rm.joint_num = fit_mixture(nrows, "numerator/" + label, fit_seed);
            rm.joint_den = fit_mixture(drows, "denominator/" + label, fit_seed);
        } else {
            // One joint fit on (treatment, history, covariates); both
            // conditionals come from its closed-form marginals.
            rm.joint_den = fit_mixture(drows, "joint/" + label, fit_seed);
            rm.joint_num = gmm_marginal(rm.joint_den, num_dims);
        }
        rm.marg_hist = gmm_marginal(rm.joint_num, hist_dims);
        rm.marg_histz = gmm_marginal(rm.joint_den, condz_dims);
        return rm;
    };

    std::vector<double> log_sw(ends.size(), 0.0);

    if (!opt.refit_per_step) {
        // One fit per lag offset, evaluated at every window.
        for (int j = 0; j < lag; ++j) {
            std::vector<Eigen::VectorXd> nrows, drows;
            for (long long k : ends) {
                const long long tau = k - lag + 1 + j;
                if (tau < hist_start) continue;
                nrows.push_back(num_row(tau));
                drows.push_back(den_row(tau));
            }
            if (nrows.empty()) continue;
            const auto ratio = build_ratio(nrows, drows, "offset" + std::to_string(j),
                                           Rng::derive_seed(opt.seed, "sw-fit", j));
            for (std::size_t w = 0; w < ends.size(); ++w) {
                const long long tau = ends[w] - lag + 1 + j;
                if (tau < hist_start) continue;
                log_sw[w] += ratio(den_row(tau));
            }
        }
    } else {
        // Fidelity mode: refit on the causal prefix at every evaluated
        // timestep. Costly; intended for small studies.
        for (std::size_t w = 0; w < ends.size(); ++w) {
            for (int j = 0; j < lag; ++j) {
                const long long tau = ends[w] - lag + 1 + j;
                if (tau < hist_start) continue;
                std::vector<Eigen::VectorXd> nrows, drows;
                for (long long s = hist_start; s <= tau; ++s) {
                    nrows.push_back(num_row(s));
                    drows.push_back(den_row(s));
                }
                if (static_cast<int>(nrows.size()) <
                    std::max(opt.refit_min_rows, opt.n_components))
                    continue;
                const auto ratio = build_ratio(nrows, drows, "t" + std::to_string(tau),
                                               Rng::derive_seed(opt.seed, "sw-fit-t", tau));
                log_sw[w] += ratio(den_row(tau));
            }
        }
    }

    WeightVector wv;
    wv.kind = WeightKind::stabilized;
    wv.window_ends = ends;
    wv.raw.resize(ends.size());
    for (std::size_t w = 0; w < ends.size(); ++w) {
        wv.raw[w] = std::exp(log_sw[w]);
        if (!std::isfinite(wv.raw[w]) || wv.raw[w] <= 0.0)
            throw WeightError("non-finite stabilized weight at window end " +
                              std::to_string(ends[w]));
    }
    detail::clip_and_normalize(wv, opt.clip_lo_pct, opt.clip_hi_pct, opt.normalize);
    return wv;
}

struct IptwOptions {
    double threshold = std::numeric_limits<double>::quiet_NaN(); // NaN: median
    double l2 = 1e-4;
    double learning_rate = 0.5;
    int iterations = 2000;
    double prob_clip_lo = 0.01;
    double prob_clip_hi = 0.99;
    double clip_lo_pct = 1.0;
    double clip_hi_pct = 99.0;
    bool normalize = true;
};

/// Logistic-regression propensity weights for a binarized treatment,
/// multiplied over each window's steps.
inline WeightVector iptw_weights(const std::vector<double>& treatment,
                                 const Eigen::MatrixXd& covariates, int lag,
                                 const IptwOptions& opt = {},
                                 const std::vector<long long>& window_ends_in = {}) {
    const auto n = static_cast<long long>(treatment.size());
    if (lag < 1) throw WindowError("iptw_weights: lag must be >= 1");
    if (n < lag) throw WindowError("iptw_weights: series shorter than lag");
    if (covariates.rows() != 0 && covariates.rows() != n)
        throw ShapeError("iptw_weights: covariate rows != treatment length");
    const int m = covariates.rows() == 0 ? 0 : static_cast<int>(covariates.cols());

    double threshold = opt.threshold;
    if (std::isnan(threshold)) {
        std::vector<double> sorted = treatment;
        std::sort(sorted.begin(), sorted.end());
        threshold = detail::percentile(std::move(sorted), 50.0);
    }

    Eigen::VectorXd y(n);
    for (long long i = 0; i < n; ++i) y[i] = treatment[static_cast<std::size_t>(i)] > threshold;
    const double pos = y.sum();
    if (pos == 0.0 || pos == static_cast<double>(n))
        throw DegenerateTreatmentError("binarized treatment has a single class");

    // Standardize features for gradient-descent conditioning.
    Eigen::MatrixXd z(n, m);
    for (int c = 0; c < m; ++c) {
        const double mean = covariates.col(c).mean();
        double sd = std::sqrt((covariates.col(c).array() - mean).square().sum() / n);
        if (sd <= 0.0) sd = 1.0;
        z.col(c) = (covariates.col(c).array() - mean) / sd;
    }

    Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
    double b = 0.0;
    for (int it = 0; it < opt.iterations; ++it) {
        Eigen::VectorXd p = (z * w).array() + b;
        p = 1.0 / (1.0 + (-p.array()).exp());
        const Eigen::VectorXd err = p - y;
        const Eigen::VectorXd gw = z.transpose() * err / n + opt.l2 * w;
        const double gb = err.mean();
        w -= opt.learning_rate * gw;
        b -= opt.learning_rate * gb;
    }

    Eigen::VectorXd e = (z * w).array() + b;
    e = 1.0 / (1.0 + (-e.array()).exp());
    for (long long i = 0; i < n; ++i)
        e[i] = std::clamp(e[i], opt.prob_clip_lo, opt.prob_clip_hi);

    std::vector<long long> ends = window_ends_in;
    if (ends.empty())
        for (long long k = lag - 1; k < n; ++k) ends.push_back(k);

    WeightVector wv;
    wv.kind = WeightKind::iptw;
    wv.window_ends = ends;
    wv.raw.resize(ends.size());
    for (std::size_t idx = 0; idx < ends.size(); ++idx) {
        double log_w = 0.0;
        for (long long tau = ends[idx] - lag + 1; tau <= ends[idx]; ++tau)
            log_w -= std::log(y[tau] > 0.5 ? e[tau] : 1.0 - e[tau]);
        wv.raw[idx] = std::exp(log_w);
        if (!std::isfinite(wv.raw[idx]) || wv.raw[idx] <= 0.0)
            throw WeightError("non-finite IPTW weight at window end " +
                              std::to_string(ends[idx]));
    }
    detail::clip_and_normalize(wv, opt.clip_lo_pct, opt.clip_hi_pct, opt.normalize);
    return wv;
}

} // namespace tcinet::density

#endif
