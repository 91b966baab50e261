#ifndef TCINET_POM_HPP
#define TCINET_POM_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcinet/density.hpp"
#include "tcinet/detail/base64.hpp"
#include "tcinet/errors.hpp"
#include "tcinet/neural.hpp"
#include "tcinet/rng.hpp"
#include "tcinet/timeseries.hpp"

namespace tcinet::pom {

inline constexpr const char* kCheckpointFormat = "tcinet/checkpoint@1";

enum class Balancing { none, iptw, gmm_sw };

inline std::string balancing_name(Balancing b) {
    switch (b) {
    case Balancing::iptw: return "iptw";
    case Balancing::gmm_sw: return "gmm_sw";
    default: return "none";
    }
}

inline Balancing balancing_from_name(const std::string& s) {
    if (s == "none") return Balancing::none;
    if (s == "iptw") return Balancing::iptw;
    if (s == "gmm_sw") return Balancing::gmm_sw;
    throw ConfigError("unknown balancing variant: " + s);
}

struct PomConfig {
    int lag = 2;
    int horizon = 1;
    std::array<int, 3> lstm_widths{64, 64, 32};
    std::array<int, 2> dense_widths{32, 16}; // final 1-unit linear head implied
    double dropout_rate = 0.2;
    double learning_rate = 1e-3;
    int batch_size = 32;
    int max_epochs = 300;
    int patience = 10;
    double validation_fraction = 0.2;
    Balancing balancing = Balancing::none;
    bool standardize = true;
    bool lstm_relu_output = true; // false: plain tanh LSTM output
    double grad_clip_norm = 5.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (lag < 1 || horizon < 1) throw ConfigError("lag and horizon must be >= 1");
        for (int w : lstm_widths)
            if (w < 1) throw ConfigError("LSTM widths must be positive");
        for (int w : dense_widths)
            if (w < 1) throw ConfigError("dense widths must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("dropout rate must be in [0,1)");
        if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
        if (patience < 0) throw ConfigError("patience must be >= 0");
        if (!(validation_fraction > 0.0 && validation_fraction <= 0.5))
            throw ConfigError("validation fraction must be in (0, 0.5]");
        if (grad_clip_norm <= 0.0) throw ConfigError("gradient clip norm must be positive");
    }
};

/// The potential outcome model: LSTM (seq2seq) -> dropout -> LSTM (seq2seq)
/// -> dropout -> LSTM (many-to-one) -> three dense layers ending in a
/// single linear unit. Inputs are lagged (covariates, treatment) blocks;
/// the network standardizes features internally using statistics captured
/// from the training rows and returns predictions in natural units.
class PomNetwork {
public:
    static PomNetwork build(const PomConfig& cfg, int n_features) {
        cfg.validate();
        if (n_features < 1) throw ConfigError("n_features must be >= 1");
        return PomNetwork(cfg, n_features);
    }

    const PomConfig& config() const { return cfg_; }
    int n_features() const { return n_features_; }
    bool trained() const { return trained_; }
    const std::vector<double>& train_loss_history() const { return train_loss_; }
    const std::vector<double>& val_loss_history() const { return val_loss_; }
    int epochs_run() const { return static_cast<int>(train_loss_.size()); }

    long long parameter_count() const {
        long long total = 0;
        for (const auto& l : lstm_) total += l->parameter_count();
        for (const auto& d : dense_) total += d->parameter_count();
        return total;
    }

    nlohmann::json describe() const {
        nlohmann::json j;
        j["parameter_count"] = parameter_count();
        j["n_features"] = n_features_;
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& l : lstm_)
            layers.push_back({{"type", "lstm"},
                              {"input", l->input_size()},
                              {"hidden", l->hidden_size()},
                              {"return_sequences", l->return_sequences()},
                              {"parameters", l->parameter_count()}});
        for (const auto& d : dense_)
            layers.push_back({{"type", "dense"},
                              {"input", d->input_size()},
                              {"output", d->output_size()},
                              {"parameters", d->parameter_count()}});
        j["layers"] = layers;
        return j;
    }

    /// Captures feature/outcome statistics from a standardizer fitted on
    /// training rows. With cfg.standardize == false this is a no-op and the
    /// network trains in natural units.
    void set_standardizer(const ts::Standardizer& std, const std::vector<std::string>& features,
                          const std::string& outcome) {
        if (!cfg_.standardize) return;
        if (static_cast<int>(features.size()) != n_features_)
            throw ShapeError("feature name count != n_features");
        for (int f = 0; f < n_features_; ++f) {
            const auto& st = std.stats_for(features[f]);
            feat_mean_[f] = st.mean;
            feat_std_[f] = st.stddev;
        }
        const auto& so = std.stats_for(outcome);
        out_mean_ = so.mean;
        out_std_ = so.stddev;
    }

    /// Mini-batch Adam on the weighted squared-error loss. A chronological
    /// tail of the training windows is held out; training stops once the
    /// validation loss has failed to improve for more than `patience`
    /// consecutive epochs, and the best-validation parameters are restored.
    void fit(const ts::LaggedDataset& train, const density::WeightVector& weights) {
        if (train.windows.empty()) throw DataError("fit: empty training dataset");
        if (train.n_features != n_features_)
            throw ShapeError("fit: dataset features != network features");
        if (weights.weights.size() != train.windows.size())
            throw ShapeError("fit: weight count " + std::to_string(weights.weights.size()) +
                             " != window count " + std::to_string(train.windows.size()));

        const auto n = train.windows.size();
        auto n_val = static_cast<std::size_t>(
            std::floor(cfg_.validation_fraction * static_cast<double>(n)));
        n_val = std::min(n_val, n - 1);
        if (n_val == 0 && n >= 2) n_val = 1;
        if (n_val == 0) throw DataError("fit: not enough windows for a validation split");
        const std::size_t n_fit = n - n_val;

        std::vector<std::size_t> order(n_fit);
        for (std::size_t i = 0; i < n_fit; ++i) order[i] = i;

        Rng rng = Rng::derive(cfg_.seed, "train");
        Adam_t optimizer(all_params(), neural::AdamConfig{cfg_.learning_rate, 0.9, 0.999, 1e-8});

        double best_val = std::numeric_limits<double>::infinity();
        int bad_epochs = 0;
        std::vector<neural::Matrix> best_params = snapshot_params();

        train_loss_.clear();
        val_loss_.clear();

        for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
            rng.shuffle(order);
            double epoch_loss = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < n_fit; start += cfg_.batch_size) {
                const std::size_t bsz = std::min<std::size_t>(cfg_.batch_size, n_fit - start);
                neural::Sequence input = make_batch(train, order, start, bsz);
                Eigen::VectorXd targets(bsz), w(bsz);
                for (std::size_t i = 0; i < bsz; ++i) {
                    const auto idx = order[start + i];
                    targets[i] = standardize_target(train.windows[idx].target);
                    w[i] = weights.weights[idx];
                }
                // per-batch weighted average: rescale to batch-mean weight 1
                // so every step keeps a comparable gradient scale
                const double wsum = w.sum();
                if (wsum > 0.0) w *= static_cast<double>(bsz) / wsum;

                const Eigen::VectorXd preds = forward_training(input, &rng);
                const auto [loss, dpred] = neural::weighted_mse(preds, targets, w);
                if (!std::isfinite(loss))
                    throw DivergenceError("training loss is not finite at epoch " +
                                          std::to_string(epoch));
                epoch_loss += loss;
                ++batches;

                optimizer.zero_grad();
                backward_training(dpred);
                neural::clip_global_norm(all_params(), cfg_.grad_clip_norm);
                optimizer.step();
            }
            train_loss_.push_back(epoch_loss / static_cast<double>(batches));

            // Validation: deterministic forward, plain MSE.
            double val = 0.0;
            {
                neural::Sequence vin = make_tail_batch(train, n_fit, n_val);
                const Eigen::VectorXd vp = forward_inference(vin, false, nullptr);
                for (std::size_t i = 0; i < n_val; ++i) {
                    const double diff =
                        vp[i] - standardize_target(train.windows[n_fit + i].target);
                    val += diff * diff;
                }
                val /= static_cast<double>(n_val);
            }
            val_loss_.push_back(val);

            if (val < best_val) {
                best_val = val;
                bad_epochs = 0;
                best_params = snapshot_params();
            } else {
                ++bad_epochs;
                if (bad_epochs > cfg_.patience) break;
            }
        }
        restore_params(best_params);
        trained_ = true;
    }

    /// Predictions in natural units. With mc_dropout the two dropout layers
    /// stay active and each call draws fresh masks from `rng`; otherwise the
    /// pass is deterministic. Thread-safe for concurrent calls with
    /// distinct RNG streams.
    std::vector<double> predict(const ts::LaggedDataset& windows, bool mc_dropout = false,
                                Rng* rng = nullptr) const {
        if (windows.windows.empty()) return {};
        if (windows.n_features != n_features_)
            throw ShapeError("predict: dataset features != network features");
        if (mc_dropout && !rng) throw StateError("predict: MC dropout needs an RNG stream");

        std::vector<double> out;
        out.reserve(windows.windows.size());
        constexpr std::size_t kChunk = 256;
        std::vector<std::size_t> idx(windows.windows.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t start = 0; start < idx.size(); start += kChunk) {
            const std::size_t bsz = std::min(kChunk, idx.size() - start);
            neural::Sequence input = make_batch(windows, idx, start, bsz);
            const Eigen::VectorXd preds = forward_inference(input, mc_dropout, rng);
            for (std::size_t i = 0; i < bsz; ++i)
                out.push_back(out_mean_ + out_std_ * preds[i]);
        }
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = kCheckpointFormat;
        j["config"] = config_to_json(cfg_);
        j["n_features"] = n_features_;
        j["trained"] = trained_;
        j["feature_mean"] = feat_mean_;
        j["feature_std"] = feat_std_;
        j["outcome_mean"] = out_mean_;
        j["outcome_std"] = out_std_;
        j["train_loss"] = train_loss_;
        j["val_loss"] = val_loss_;
        nlohmann::json params = nlohmann::json::array();
        for (const auto* p : const_cast<PomNetwork*>(this)->all_params()) {
            std::vector<double> flat(p->value.data(), p->value.data() + p->value.size());
            params.push_back({{"name", p->name},
                              {"rows", p->value.rows()},
                              {"cols", p->value.cols()},
                              {"data", detail::encode_doubles(flat)}});
        }
        j["parameters"] = params;
        return j;
    }

    static PomNetwork from_json(const nlohmann::json& j) {
        if (!j.contains("format") || j.at("format").get<std::string>() != kCheckpointFormat)
            throw DataError("not a recognized checkpoint (expected format tag '" +
                            std::string(kCheckpointFormat) + "')");
        const PomConfig cfg = config_from_json(j.at("config"));
        PomNetwork net(cfg, j.at("n_features").get<int>());
        j.at("feature_mean").get_to(net.feat_mean_);
        j.at("feature_std").get_to(net.feat_std_);
        net.out_mean_ = j.at("outcome_mean").get<double>();
        net.out_std_ = j.at("outcome_std").get<double>();
        net.trained_ = j.at("trained").get<bool>();
        j.at("train_loss").get_to(net.train_loss_);
        j.at("val_loss").get_to(net.val_loss_);
        const auto params = net.all_params();
        const auto& jp = j.at("parameters");
        if (jp.size() != params.size()) throw DataError("checkpoint parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto rows = jp[i].at("rows").get<Eigen::Index>();
            const auto cols = jp[i].at("cols").get<Eigen::Index>();
            if (rows != params[i]->value.rows() || cols != params[i]->value.cols())
                throw DataError("checkpoint parameter shape mismatch for " + params[i]->name);
            const auto flat = detail::decode_doubles(jp[i].at("data").get<std::string>());
            if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
                throw DataError("checkpoint blob size mismatch for " + params[i]->name);
            std::copy(flat.begin(), flat.end(), params[i]->value.data());
        }
        return net;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write checkpoint '" + path + "'");
        out << to_json().dump(2) << '\n';
    }

    static PomNetwork load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open checkpoint '" + path + "'");
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }

    static nlohmann::json config_to_json(const PomConfig& c) {
        return {{"lag", c.lag},
                {"horizon", c.horizon},
                {"lstm_widths", c.lstm_widths},
                {"dense_widths", c.dense_widths},
                {"dropout_rate", c.dropout_rate},
                {"learning_rate", c.learning_rate},
                {"batch_size", c.batch_size},
                {"max_epochs", c.max_epochs},
                {"patience", c.patience},
                {"validation_fraction", c.validation_fraction},
                {"balancing", balancing_name(c.balancing)},
                {"standardize", c.standardize},
                {"lstm_relu_output", c.lstm_relu_output},
                {"grad_clip_norm", c.grad_clip_norm},
                {"seed", c.seed}};
    }

    static PomConfig config_from_json(const nlohmann::json& j) {
        PomConfig c;
        c.lag = j.value("lag", c.lag);
        c.horizon = j.value("horizon", c.horizon);
        if (j.contains("lstm_widths")) j.at("lstm_widths").get_to(c.lstm_widths);
        if (j.contains("dense_widths")) j.at("dense_widths").get_to(c.dense_widths);
        c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
        if (j.contains("balancing"))
            c.balancing = balancing_from_name(j.at("balancing").get<std::string>());
        c.standardize = j.value("standardize", c.standardize);
        c.lstm_relu_output = j.value("lstm_relu_output", c.lstm_relu_output);
        c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
        c.seed = j.value("seed", c.seed);
        c.validate();
        return c;
    }

private:
    using Adam_t = neural::Adam;

    PomNetwork(const PomConfig& cfg, int n_features) : cfg_(cfg), n_features_(n_features) {
        Rng rng = Rng::derive(cfg.seed, "init");
        const bool relu = cfg.lstm_relu_output;
        lstm_.push_back(std::make_unique<neural::LstmLayer>(n_features, cfg.lstm_widths[0],
                                                            true, relu, rng));
        lstm_.push_back(std::make_unique<neural::LstmLayer>(cfg.lstm_widths[0],
                                                            cfg.lstm_widths[1], true, relu, rng));
        lstm_.push_back(std::make_unique<neural::LstmLayer>(cfg.lstm_widths[1],
                                                            cfg.lstm_widths[2], false, relu, rng));
        drop_.push_back(std::make_unique<neural::DropoutLayer>(cfg.dropout_rate));
        drop_.push_back(std::make_unique<neural::DropoutLayer>(cfg.dropout_rate));
        dense_.push_back(std::make_unique<neural::DenseLayer>(
            cfg.lstm_widths[2], cfg.dense_widths[0], neural::Activation::linear, rng));
        dense_.push_back(std::make_unique<neural::DenseLayer>(
            cfg.dense_widths[0], cfg.dense_widths[1], neural::Activation::linear, rng));
        dense_.push_back(std::make_unique<neural::DenseLayer>(cfg.dense_widths[1], 1,
                                                              neural::Activation::linear, rng));
        feat_mean_.assign(n_features, 0.0);
        feat_std_.assign(n_features, 1.0);
    }

    std::vector<neural::Parameter*> all_params() {
        std::vector<neural::Parameter*> out;
        for (auto& l : lstm_)
            for (auto* p : l->params()) out.push_back(p);
        for (auto& d : dense_)
            for (auto* p : d->params()) out.push_back(p);
        return out;
    }

    std::vector<neural::Matrix> snapshot_params() {
        std::vector<neural::Matrix> snap;
        for (const auto* p : all_params()) snap.push_back(p->value);
        return snap;
    }

    void restore_params(const std::vector<neural::Matrix>& snap) {
        const auto params = all_params();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
    }

    double standardize_target(double y) const { return (y - out_mean_) / out_std_; }

    neural::Sequence make_batch(const ts::LaggedDataset& ds,
                                const std::vector<std::size_t>& order, std::size_t start,
                                std::size_t bsz) const {
        neural::Sequence seq(ds.lag);
        for (int t = 0; t < ds.lag; ++t) seq[t].resize(bsz, n_features_);
        for (std::size_t i = 0; i < bsz; ++i) {
            const auto& w = ds.windows[order[start + i]];
            if (w.input.rows() != ds.lag || w.input.cols() != n_features_)
                throw ShapeError("window block has unexpected shape");
            for (int t = 0; t < ds.lag; ++t)
                for (int f = 0; f < n_features_; ++f)
                    seq[t](i, f) = (w.input(t, f) - feat_mean_[f]) / feat_std_[f];
        }
        return seq;
    }

    neural::Sequence make_tail_batch(const ts::LaggedDataset& ds, std::size_t start,
                                     std::size_t count) const {
        std::vector<std::size_t> idx(count);
        for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
        return make_batch(ds, idx, 0, count);
    }

    /// Training forward pass; layer caches stay alive for backward_training.
    Eigen::VectorXd forward_training(const neural::Sequence& input, Rng* rng) {
        auto s1 = lstm_[0]->forward(input);
        auto s1d = drop_[0]->forward(s1, true, rng);
        auto s2 = lstm_[1]->forward(s1d);
        auto s2d = drop_[1]->forward(s2, true, rng);
        auto h = lstm_[2]->forward(s2d);
        neural::Matrix y = h[0];
        for (auto& d : dense_) y = d->forward(y);
        return y.col(0);
    }

    void backward_training(const Eigen::VectorXd& dpred) {
        neural::Matrix dy(dpred.size(), 1);
        dy.col(0) = dpred;
        for (std::size_t i = dense_.size(); i-- > 0;) dy = dense_[i]->backward(dy);
        auto ds2d = lstm_[2]->backward(neural::Sequence{dy});
        auto ds2 = drop_[1]->backward(ds2d);
        auto ds1d = lstm_[1]->backward(ds2);
        auto ds1 = drop_[0]->backward(ds1d);
        lstm_[0]->backward(ds1);
    }

    /// Cache-free forward pass used by validation and prediction.
    Eigen::VectorXd forward_inference(const neural::Sequence& input, bool mc_dropout,
                                      Rng* rng) const {
        auto s1 = lstm_[0]->infer(input);
        auto s1d = drop_[0]->apply(s1, mc_dropout, rng);
        auto s2 = lstm_[1]->infer(s1d);
        auto s2d = drop_[1]->apply(s2, mc_dropout, rng);
        auto h = lstm_[2]->infer(s2d);
        neural::Matrix y = h[0];
        for (const auto& d : dense_) y = d->infer(y);
        return y.col(0);
    }

    PomConfig cfg_;
    int n_features_;
    std::vector<std::unique_ptr<neural::LstmLayer>> lstm_;
    std::vector<std::unique_ptr<neural::DropoutLayer>> drop_;
    std::vector<std::unique_ptr<neural::DenseLayer>> dense_;
    std::vector<double> feat_mean_, feat_std_;
    double out_mean_ = 0.0, out_std_ = 1.0;
    std::vector<double> train_loss_, val_loss_;
    bool trained_ = false;
};

} // namespace tcinet::pom

#endif
