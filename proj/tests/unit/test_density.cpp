#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "tcinet/density.hpp"
#include "tcinet/rng.hpp"

using namespace tcinet;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd two_clusters_1d(Rng& rng, int per_cluster, double c0, double c1, double sd) {
    MatrixXd data(2 * per_cluster, 1);
    for (int i = 0; i < per_cluster; ++i) {
        data(i, 0) = rng.normal(c0, sd);
        data(per_cluster + i, 0) = rng.normal(c1, sd);
    }
    return data;
}

density::GmmModel single_gaussian(double mu, double var) {
    density::GmmModel m;
    m.mixing = VectorXd::Ones(1);
    m.means = {VectorXd::Constant(1, mu)};
    m.covariances = {MatrixXd::Constant(1, 1, var)};
    return m;
}

} // namespace

TEST_CASE("EM recovers two well-separated clusters", "[density]") {
    Rng rng(77);
    const auto data = two_clusters_1d(rng, 500, 0.0, 10.0, 0.5);
    const auto fit = density::fit_gmm(data, 2, 1234);
    const auto& m = fit.model;
    const double m0 = std::min(m.means[0][0], m.means[1][0]);
    const double m1 = std::max(m.means[0][0], m.means[1][0]);
    REQUIRE(std::abs(m0 - 0.0) < 0.1);
    REQUIRE(std::abs(m1 - 10.0) < 0.1);
    REQUIRE(std::abs(m.mixing[0] - 0.5) < 0.05);
    REQUIRE(std::abs(m.mixing[1] - 0.5) < 0.05);
    m.validate();
}

TEST_CASE("one component reduces to sample moments exactly", "[density]") {
    Rng rng(5);
    MatrixXd data(200, 2);
    for (int i = 0; i < 200; ++i) {
        data(i, 0) = rng.normal(1.0, 2.0);
        data(i, 1) = rng.normal(-3.0, 0.7);
    }
    const auto fit = density::fit_gmm(data, 1, 0);
    const VectorXd mean = data.colwise().mean();
    const MatrixXd centered = data.rowwise() - mean.transpose();
    const MatrixXd cov = (centered.transpose() * centered) / data.rows();
    REQUIRE((fit.model.means[0] - mean).cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE((fit.model.covariances[0] - cov).cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE(fit.model.mixing[0] == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("too few rows for the requested components fails", "[density]") {
    MatrixXd data(3, 1);
    data << 1.0, 2.0, 3.0;
    REQUIRE_THROWS_AS(density::fit_gmm(data, 5, 0), FitError);
    REQUIRE_THROWS_AS(density::fit_gmm(MatrixXd(0, 1), 1, 0), FitError);
}

TEST_CASE("mixture pdf hits the standard normal mode", "[density]") {
    const auto m = single_gaussian(0.0, 1.0);
    const double p = density::gmm_pdf(m, VectorXd::Zero(1));
    REQUIRE(p == Catch::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-12));
    REQUIRE_THROWS_AS(density::gmm_pdf(m, VectorXd::Zero(2)), ShapeError);
}

TEST_CASE("two equal components collapse to one", "[density]") {
    density::GmmModel m;
    m.mixing = VectorXd::Constant(2, 0.5);
    m.means = {VectorXd::Zero(1), VectorXd::Zero(1)};
    m.covariances = {MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1)};
    const auto ref = single_gaussian(0.0, 1.0);
    for (double x : {-3.0, -1.0, 0.0, 0.5, 2.0})
        REQUIRE(density::gmm_pdf(m, VectorXd::Constant(1, x)) ==
                Catch::Approx(density::gmm_pdf(ref, VectorXd::Constant(1, x))).epsilon(1e-13));
}

TEST_CASE("1-D mixture pdf integrates to one by quadrature", "[density]") {
    Rng rng(31);
    MatrixXd data(300, 1);
    for (int i = 0; i < 300; ++i)
        data(i, 0) = (i % 3 == 0) ? rng.normal(-2.0, 0.8)
                                  : (i % 3 == 1 ? rng.normal(1.0, 0.4) : rng.normal(4.0, 1.5));
    const auto fit = density::fit_gmm(data, 3, 7);

    double lo = 1e30, hi = -1e30;
    for (int j = 0; j < 3; ++j) {
        const double sd = std::sqrt(fit.model.covariances[j](0, 0));
        lo = std::min(lo, fit.model.means[j][0] - 10.0 * sd);
        hi = std::max(hi, fit.model.means[j][0] + 10.0 * sd);
    }
    const int n = 20000;
    const double dx = (hi - lo) / n;
    double integral = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + i * dx;
        const double w = (i == 0 || i == n) ? 0.5 : 1.0;
        integral += w * density::gmm_pdf(fit.model, VectorXd::Constant(1, x));
    }
    integral *= dx;
    REQUIRE(std::abs(integral - 1.0) < 1e-3);
}

TEST_CASE("EM log-likelihood never decreases", "[density]") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 80 + static_cast<int>(rng.uniform_index(120));
        const int d = 1 + static_cast<int>(rng.uniform_index(3));
        MatrixXd data(n, d);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c)
                data(i, c) = rng.normal(rng.uniform(-2.0, 2.0), 0.5 + rng.uniform01());
        const int k = 1 + static_cast<int>(rng.uniform_index(4));
        const auto fit = density::fit_gmm(data, k, trial);
        for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i)
            REQUIRE(fit.loglik_trace[i] >= fit.loglik_trace[i - 1] - 1e-9);
    }
}

TEST_CASE("pdf is positive and log-pdf finite within 20 sigma", "[density]") {
    const auto m = single_gaussian(0.0, 1.0);
    for (double x = -20.0; x <= 20.0; x += 0.5) {
        const double lp = density::gmm_log_pdf(m, VectorXd::Constant(1, x));
        REQUIRE(std::isfinite(lp));
        REQUIRE(density::gmm_pdf(m, VectorXd::Constant(1, x)) > 0.0);
    }
}

TEST_CASE("mixture pdf equals the weighted component sum", "[density]") {
    Rng rng(13);
    density::GmmModel m;
    m.mixing = VectorXd(3);
    m.mixing << 0.2, 0.5, 0.3;
    for (int j = 0; j < 3; ++j) {
        m.means.push_back(VectorXd::Constant(2, rng.normal()));
        MatrixXd a(2, 2);
        a << 1.0 + rng.uniform01(), 0.2, 0.2, 0.5 + rng.uniform01();
        m.covariances.push_back(a);
    }
    for (int trial = 0; trial < 20; ++trial) {
        VectorXd x(2);
        x << rng.normal(), rng.normal();
        double scalar_sum = 0.0;
        for (int j = 0; j < 3; ++j) {
            density::GmmModel comp;
            comp.mixing = VectorXd::Ones(1);
            comp.means = {m.means[j]};
            comp.covariances = {m.covariances[j]};
            scalar_sum += m.mixing[j] * density::gmm_pdf(comp, x);
        }
        REQUIRE(density::gmm_pdf(m, x) == Catch::Approx(scalar_sum).epsilon(1e-12));
    }
}

TEST_CASE("component permutation leaves the pdf unchanged", "[density]") {
    Rng rng(29);
    density::GmmModel m;
    m.mixing = VectorXd(3);
    m.mixing << 0.1, 0.6, 0.3;
    for (int j = 0; j < 3; ++j) {
        m.means.push_back(VectorXd::Constant(1, -2.0 + 2.0 * j));
        m.covariances.push_back(MatrixXd::Constant(1, 1, 0.3 + 0.4 * j));
    }
    density::GmmModel p;
    p.mixing = VectorXd(3);
    p.mixing << m.mixing[2], m.mixing[0], m.mixing[1];
    p.means = {m.means[2], m.means[0], m.means[1]};
    p.covariances = {m.covariances[2], m.covariances[0], m.covariances[1]};
    for (int trial = 0; trial < 20; ++trial) {
        const VectorXd x = VectorXd::Constant(1, rng.normal(0.0, 3.0));
        REQUIRE(density::gmm_pdf(m, x) == Catch::Approx(density::gmm_pdf(p, x)).epsilon(1e-12));
    }
}

TEST_CASE("marginalization drops coordinates in closed form", "[density]") {
    density::GmmModel m;
    m.mixing = VectorXd::Ones(1);
    VectorXd mu(2);
    mu << 1.0, -2.0;
    MatrixXd cov(2, 2);
    cov << 2.0, 0.8, 0.8, 1.0;
    m.means = {mu};
    m.covariances = {cov};
    const auto marg = density::gmm_marginal(m, {1});
    REQUIRE(marg.dimension() == 1);
    REQUIRE(marg.means[0][0] == -2.0);
    REQUIRE(marg.covariances[0](0, 0) == 1.0);
    const auto ref = single_gaussian(-2.0, 1.0);
    REQUIRE(density::gmm_pdf(marg, VectorXd::Constant(1, -1.5)) ==
            Catch::Approx(density::gmm_pdf(ref, VectorXd::Constant(1, -1.5))).epsilon(1e-13));
}

TEST_CASE("identical feature sets give unit stabilized weights", "[density]") {
    Rng rng(55);
    std::vector<double> x(400);
    for (auto& v : x) v = rng.normal();
    density::StabilizedOptions opt;
    opt.seed = 1;
    opt.normalize = false;
    opt.clip_lo_pct = 0.0;
    opt.clip_hi_pct = 100.0;
    const auto wv = density::stabilized_weights(x, MatrixXd(0, 0), 1, opt);
    for (double w : wv.raw) REQUIRE(w == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("independent covariates leave stabilized weights near one", "[density]") {
    Rng rng(2024);
    const int n = 2000;
    std::vector<double> x(n);
    MatrixXd z(n, 1);
    for (int i = 0; i < n; ++i) {
        x[i] = rng.normal();
        z(i, 0) = rng.normal();
    }
    density::StabilizedOptions opt;
    opt.seed = 3;
    const auto wv = density::stabilized_weights(x, z, 2, opt);

    double mean_abs_dev = 0.0, mean = 0.0;
    for (double w : wv.weights) {
        mean_abs_dev += std::abs(w - 1.0);
        mean += w;
    }
    mean_abs_dev /= wv.weights.size();
    mean /= wv.weights.size();
    REQUIRE(mean == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(mean_abs_dev < 0.15);
    for (double w : wv.weights) {
        REQUIRE(w > 0.0);
        REQUIRE(std::isfinite(w));
    }
}

TEST_CASE("strong confounding inflates weight variance", "[density]") {
    Rng rng(404);
    const int n = 1200;
    std::vector<double> x(n);
    MatrixXd z_ind(n, 1), z_conf(n, 1);
    for (int i = 0; i < n; ++i) {
        x[i] = rng.normal();
        z_ind(i, 0) = rng.normal();
        z_conf(i, 0) = x[i] + 0.1 * rng.normal();
    }
    density::StabilizedOptions opt;
    opt.seed = 12;
    const auto w_ind = density::stabilized_weights(x, z_ind, 2, opt);
    const auto w_conf = density::stabilized_weights(x, z_conf, 2, opt);

    const auto variance = [](const std::vector<double>& w) {
        double m = 0.0, v = 0.0;
        for (double a : w) m += a;
        m /= w.size();
        for (double a : w) v += (a - m) * (a - m);
        return v / w.size();
    };
    REQUIRE(variance(w_conf.weights) > variance(w_ind.weights));
}

TEST_CASE("per-step refit mode stays consistent on a small series", "[density]") {
    Rng rng(88);
    const int n = 160;
    std::vector<double> x(n);
    MatrixXd z(n, 1);
    for (int i = 0; i < n; ++i) {
        x[i] = rng.normal();
        z(i, 0) = rng.normal();
    }
    density::StabilizedOptions opt;
    opt.seed = 4;
    opt.refit_per_step = true;
    opt.refit_min_rows = 60;
    opt.n_components = 2;
    const auto wv = density::stabilized_weights(x, z, 1, opt);
    REQUIRE(wv.weights.size() == static_cast<std::size_t>(n));
    for (double w : wv.weights) REQUIRE(std::isfinite(w));
}

TEST_CASE("balanced independent binary treatment gives flat IPTW weights", "[density]") {
    Rng rng(808);
    const int n = 1000;
    std::vector<double> x(n);
    MatrixXd z(n, 1);
    for (int i = 0; i < n; ++i) {
        x[i] = rng.normal();
        z(i, 0) = rng.normal();
    }
    density::IptwOptions opt;
    opt.clip_lo_pct = 0.0;
    opt.clip_hi_pct = 100.0;
    const auto wv = density::iptw_weights(x, z, 1, opt);
    // per-step inverse propensities sit near 1/0.5 = 2 before normalization
    double raw_mean = 0.0;
    for (double w : wv.raw) raw_mean += w;
    raw_mean /= wv.raw.size();
    REQUIRE(std::abs(raw_mean - 2.0) < 0.25);
    double mean = 0.0;
    for (double w : wv.weights) mean += w;
    mean /= wv.weights.size();
    REQUIRE(mean == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("constant treatment is degenerate for IPTW", "[density]") {
    std::vector<double> x(50, 3.0);
    REQUIRE_THROWS_AS(density::iptw_weights(x, MatrixXd(0, 0), 1), DegenerateTreatmentError);
}

TEST_CASE("a clipped propensity floor yields weight 100", "[density]") {
    // covariate perfectly predicts the treatment except for one flipped
    // point whose propensity clips at 0.01
    const int n = 400;
    std::vector<double> x(n);
    MatrixXd z(n, 1);
    for (int i = 0; i < n; ++i) {
        z(i, 0) = i < n / 2 ? -1.0 : 1.0;
        x[i] = z(i, 0);
    }
    x[0] = 1.0; // treated despite z = -1
    density::IptwOptions opt;
    opt.threshold = 0.0;
    opt.normalize = false;
    opt.clip_lo_pct = 0.0;
    opt.clip_hi_pct = 100.0;
    const auto wv = density::iptw_weights(x, z, 1, opt);
    REQUIRE(wv.raw[0] == Catch::Approx(100.0).epsilon(1e-9));
    for (double w : wv.raw) REQUIRE(std::isfinite(w));
}

TEST_CASE("BIC picks the evident component count", "[density]") {
    Rng rng(612);
    const auto data = two_clusters_1d(rng, 400, -4.0, 4.0, 0.6);
    REQUIRE(density::select_n_components_bic(data, 1, 5, 9) == 2);
}
