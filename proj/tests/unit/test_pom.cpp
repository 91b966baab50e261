#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "tcinet/metrics.hpp"
#include "tcinet/pom.hpp"
#include "tcinet/rng.hpp"
#include "tcinet/timeseries.hpp"

using namespace tcinet;

namespace {

/// Y_{t+1} = 0.9 * X_t + noise; learnable from the window's last treatment
/// row.
ts::TimeSeriesFrame linear_toy_frame(int n, double noise_sd, std::uint64_t seed) {
    Rng rng(seed);
    ts::TimeSeriesFrame f;
    ts::Column x{"x", ts::ColumnRole::treatment, {}};
    ts::Column y{"y", ts::ColumnRole::outcome, {}};
    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) xs[i] = rng.normal();
    for (int i = 0; i < n; ++i) {
        f.timestamps.push_back(i);
        x.values.push_back(xs[i]);
        y.values.push_back(i == 0 ? 0.0 : 0.9 * xs[i - 1] + noise_sd * rng.normal());
    }
    f.columns = {x, y};
    return f;
}

pom::PomConfig small_config() {
    pom::PomConfig cfg;
    cfg.lag = 2;
    cfg.horizon = 1;
    cfg.lstm_widths = {8, 8, 8};
    cfg.dense_widths = {8, 4};
    cfg.max_epochs = 200;
    cfg.patience = 15;
    cfg.seed = 5;
    return cfg;
}

} // namespace

TEST_CASE("stack maps a batch of windows to one output each", "[pom]") {
    pom::PomConfig cfg;
    cfg.lag = 3;
    auto net = pom::PomNetwork::build(cfg, 4);
    ts::LaggedDataset ds;
    ds.lag = 3;
    ds.horizon = 1;
    ds.n_features = 4;
    Rng rng(1);
    for (int k = 0; k < 4; ++k) {
        ts::LaggedWindow w;
        w.input.resize(3, 4);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) w.input(r, c) = rng.normal();
        ds.windows.push_back(w);
    }
    const auto out = net.predict(ds);
    REQUIRE(out.size() == 4);
    REQUIRE(net.predict(ts::LaggedDataset{{}, 3, 1, 4, {}, {}}).empty());

    ts::LaggedDataset bad = ds;
    bad.n_features = 5;
    for (auto& w : bad.windows) w.input.resize(3, 5);
    REQUIRE_THROWS_AS(net.predict(bad), ShapeError);
}

TEST_CASE("builds are deterministic per seed", "[pom]") {
    pom::PomConfig cfg;
    auto a = pom::PomNetwork::build(cfg, 3);
    auto b = pom::PomNetwork::build(cfg, 3);
    REQUIRE(a.to_json() == b.to_json());
    cfg.seed = 99;
    auto c = pom::PomNetwork::build(cfg, 3);
    REQUIRE(a.to_json() != c.to_json());
}

TEST_CASE("describe reports the closed-form parameter count", "[pom]") {
    pom::PomConfig cfg;
    auto net = pom::PomNetwork::build(cfg, 3);
    const auto lstm_params = [](int in, int h) { return 4 * h * (in + h + 1); };
    const long long expected = lstm_params(3, 64) + lstm_params(64, 64) + lstm_params(64, 32) +
                               (32 * 32 + 32) + (16 * 32 + 16) + (1 * 16 + 1);
    REQUIRE(net.parameter_count() == expected);
    REQUIRE(net.describe()["parameter_count"].get<long long>() == expected);
}

TEST_CASE("the linear toy system is learned to low error", "[pom]") {
    const auto frame = linear_toy_frame(640, 0.01, 7);
    const auto [train, test] = ts::chronological_split(frame, 0.8);
    auto train_ds = ts::make_lagged(train, 2, 1);
    REQUIRE(train_ds.size() >= 500);

    auto cfg = small_config();
    auto net = pom::PomNetwork::build(cfg, 1);
    net.set_standardizer(ts::fit_standardizer(train), train_ds.feature_names,
                         train_ds.outcome_name);
    std::vector<long long> ends;
    for (const auto& w : train_ds.windows) ends.push_back(w.end_index);
    net.fit(train_ds, density::unit_weights(ends));

    const auto test_ds = ts::make_lagged(test, 2, 1);
    const auto pred = net.predict(test_ds);
    std::vector<double> targets;
    for (const auto& w : test_ds.windows) targets.push_back(w.target);
    REQUIRE(metrics::rmse(targets, pred) < 0.1);

    // training loss fell by at least half from the first epoch to the best
    const auto& tl = net.train_loss_history();
    REQUIRE(*std::min_element(tl.begin(), tl.end()) < 0.5 * tl.front());
}

TEST_CASE("explicit unit weights match the balancing-free path bitwise", "[pom]") {
    const auto frame = linear_toy_frame(200, 0.05, 11);
    auto ds = ts::make_lagged(frame, 2, 1);
    std::vector<long long> ends;
    for (const auto& w : ds.windows) ends.push_back(w.end_index);

    auto cfg = small_config();
    cfg.max_epochs = 12;

    auto a = pom::PomNetwork::build(cfg, 1);
    a.fit(ds, density::unit_weights(ends));

    density::WeightVector explicit_ones;
    explicit_ones.kind = density::WeightKind::stabilized;
    explicit_ones.window_ends = ends;
    explicit_ones.weights.assign(ends.size(), 1.0);
    auto b = pom::PomNetwork::build(cfg, 1);
    b.fit(ds, explicit_ones);

    REQUIRE(a.to_json() == b.to_json());
    REQUIRE(a.train_loss_history() == b.train_loss_history());
}

TEST_CASE("patience zero stops at the first non-improvement", "[pom]") {
    const auto frame = linear_toy_frame(200, 0.5, 13);
    auto ds = ts::make_lagged(frame, 2, 1);
    std::vector<long long> ends;
    for (const auto& w : ds.windows) ends.push_back(w.end_index);

    auto cfg = small_config();
    cfg.patience = 0;
    cfg.max_epochs = 100;
    auto net = pom::PomNetwork::build(cfg, 1);
    net.fit(ds, density::unit_weights(ends));

    const auto& vl = net.val_loss_history();
    REQUIRE_FALSE(vl.empty());
    if (vl.size() < 100u) {
        // every epoch before the last improved on the best so far
        double best = vl[0];
        for (std::size_t i = 1; i + 1 < vl.size(); ++i) {
            REQUIRE(vl[i] < best);
            best = std::min(best, vl[i]);
        }
        REQUIRE(vl.back() >= best);
    }
}

TEST_CASE("early stopping restores the best-validation parameters", "[pom]") {
    auto frame = linear_toy_frame(300, 0.3, 17);
    auto ds = ts::make_lagged(frame, 2, 1);
    std::vector<long long> ends;
    for (const auto& w : ds.windows) ends.push_back(w.end_index);

    auto cfg = small_config();
    cfg.standardize = false; // validation loss is then in natural units
    cfg.max_epochs = 60;
    auto net = pom::PomNetwork::build(cfg, 1);
    net.fit(ds, density::unit_weights(ends));

    const auto& vl = net.val_loss_history();
    const double best = *std::min_element(vl.begin(), vl.end());

    // recompute the validation MSE of the restored parameters
    const auto n = ds.windows.size();
    const auto n_val = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(n)));
    ts::LaggedDataset tail = ds;
    tail.windows.assign(ds.windows.end() - n_val, ds.windows.end());
    const auto pred = net.predict(tail);
    double mse = 0.0;
    for (std::size_t i = 0; i < tail.windows.size(); ++i) {
        const double d = pred[i] - tail.windows[i].target;
        mse += d * d;
    }
    mse /= static_cast<double>(tail.windows.size());
    REQUIRE(mse == Catch::Approx(best).epsilon(1e-9));
}

TEST_CASE("deterministic prediction repeats; MC dropout varies", "[pom]") {
    const auto frame = linear_toy_frame(200, 0.05, 19);
    auto ds = ts::make_lagged(frame, 2, 1);
    std::vector<long long> ends;
    for (const auto& w : ds.windows) ends.push_back(w.end_index);
    auto cfg = small_config();
    cfg.max_epochs = 10;
    auto net = pom::PomNetwork::build(cfg, 1);
    net.fit(ds, density::unit_weights(ends));

    const auto p1 = net.predict(ds);
    const auto p2 = net.predict(ds);
    REQUIRE(p1 == p2);

    std::vector<double> first_window;
    for (int r = 0; r < 50; ++r) {
        Rng rng = Rng::derive(3, "mc", r);
        first_window.push_back(net.predict(ds, true, &rng)[0]);
    }
    double mean = 0.0, var = 0.0;
    for (double v : first_window) mean += v;
    mean /= static_cast<double>(first_window.size());
    for (double v : first_window) var += (v - mean) * (v - mean);
    REQUIRE(var > 0.0);

    REQUIRE_THROWS_AS(net.predict(ds, true, nullptr), StateError);
}

TEST_CASE("standardized and natural-unit training agree on the toy", "[pom]") {
    const auto frame = linear_toy_frame(640, 0.01, 23);
    const auto [train, test] = ts::chronological_split(frame, 0.8);
    auto train_ds = ts::make_lagged(train, 2, 1);
    const auto test_ds = ts::make_lagged(test, 2, 1);
    std::vector<long long> ends;
    for (const auto& w : train_ds.windows) ends.push_back(w.end_index);
    std::vector<double> targets;
    for (const auto& w : test_ds.windows) targets.push_back(w.target);

    auto cfg = small_config();
    auto with_std = pom::PomNetwork::build(cfg, 1);
    with_std.set_standardizer(ts::fit_standardizer(train), train_ds.feature_names,
                              train_ds.outcome_name);
    with_std.fit(train_ds, density::unit_weights(ends));
    const double rmse_std = metrics::rmse(targets, with_std.predict(test_ds));

    cfg.standardize = false;
    auto without = pom::PomNetwork::build(cfg, 1);
    without.fit(train_ds, density::unit_weights(ends));
    const double rmse_nat = metrics::rmse(targets, without.predict(test_ds));

    // the toy outcome is near unit scale already, so both routes land close
    REQUIRE(std::abs(rmse_std - rmse_nat) < 0.01);
}

TEST_CASE("error paths: empty data, misaligned weights, divergence", "[pom]") {
    auto cfg = small_config();
    auto net = pom::PomNetwork::build(cfg, 1);
    ts::LaggedDataset empty;
    empty.n_features = 1;
    REQUIRE_THROWS_AS(net.fit(empty, density::unit_weights({})), DataError);

    const auto frame = linear_toy_frame(100, 0.05, 29);
    auto ds = ts::make_lagged(frame, 2, 1);
    REQUIRE_THROWS_AS(net.fit(ds, density::unit_weights({0, 1, 2})), ShapeError);

    std::vector<long long> ends;
    for (const auto& w : ds.windows) ends.push_back(w.end_index);
    auto diverging_cfg = small_config();
    diverging_cfg.learning_rate = 1e120;
    diverging_cfg.grad_clip_norm = 1e130;
    diverging_cfg.max_epochs = 20;
    auto bad = pom::PomNetwork::build(diverging_cfg, 1);
    REQUIRE_THROWS_AS(bad.fit(ds, density::unit_weights(ends)), DivergenceError);
}

TEST_CASE("checkpoints round-trip bitwise", "[pom]") {
    const auto frame = linear_toy_frame(200, 0.05, 31);
    auto ds = ts::make_lagged(frame, 2, 1);
    std::vector<long long> ends;
    for (const auto& w : ds.windows) ends.push_back(w.end_index);
    auto cfg = small_config();
    cfg.max_epochs = 8;
    auto net = pom::PomNetwork::build(cfg, 1);
    net.set_standardizer(ts::fit_standardizer(frame), ds.feature_names, ds.outcome_name);
    net.fit(ds, density::unit_weights(ends));

    const auto path = (std::filesystem::temp_directory_path() / "tcinet_ckpt.json").string();
    net.save(path);
    const auto loaded = pom::PomNetwork::load(path);
    REQUIRE(loaded.trained());
    REQUIRE(loaded.predict(ds) == net.predict(ds));
    REQUIRE(loaded.config().lag == cfg.lag);

    nlohmann::json bogus{{"format", "something-else"}};
    REQUIRE_THROWS_AS(pom::PomNetwork::from_json(bogus), DataError);
}
