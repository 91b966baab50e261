#ifndef TCINET_NEURAL_HPP
#define TCINET_NEURAL_HPP

#include <cassert>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tcinet/errors.hpp"
#include "tcinet/rng.hpp"

namespace tcinet::neural {

using Matrix = Eigen::MatrixXd;

/// Mini-batch of sequences, time-major: steps[t] is batch x features.
using Sequence = std::vector<Matrix>;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace detail {

inline Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

inline void glorot_fill(Matrix& m, double fan_in, double fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-a, a);
}

} // namespace detail

enum class Activation { linear, relu };

/// LSTM layer over a mini-batch of sequences. Gate order in the packed 4h
/// dimension is (input, forget, candidate, output); the forget-gate bias
/// slice starts at 1. When `relu_output` is set the emitted hidden sequence
/// passes through ReLU while the recurrence itself stays on the raw hidden
/// state, keeping the cell dynamics in tanh range.
class LstmLayer {
public:
    LstmLayer(int input_size, int hidden_size, bool return_sequences, bool relu_output,
              Rng& rng)
        : input_size_(input_size), hidden_size_(hidden_size),
          return_sequences_(return_sequences), relu_output_(relu_output) {
        if (input_size < 1 || hidden_size < 1) throw ConfigError("LSTM sizes must be positive");
        w_.name = "lstm.W";
        u_.name = "lstm.U";
        b_.name = "lstm.b";
        w_.value.resize(4 * hidden_size, input_size);
        u_.value.resize(4 * hidden_size, hidden_size);
        b_.value = Matrix::Zero(1, 4 * hidden_size);
        detail::glorot_fill(w_.value, input_size, hidden_size, rng);
        detail::glorot_fill(u_.value, hidden_size, hidden_size, rng);
        b_.value.block(0, hidden_size, 1, hidden_size).setOnes(); // forget gate
        w_.zero_grad();
        u_.zero_grad();
        b_.zero_grad();
    }

    int input_size() const { return input_size_; }
    int hidden_size() const { return hidden_size_; }
    bool return_sequences() const { return return_sequences_; }

    long long parameter_count() const {
        return 4LL * hidden_size_ * (input_size_ + hidden_size_ + 1);
    }

    std::vector<Parameter*> params() { return {&w_, &u_, &b_}; }

    /// Training-mode forward; caches activations for backward().
    Sequence forward(const Sequence& input) {
        check_input(input);
        const auto steps = input.size();
        const auto batch = static_cast<Eigen::Index>(input[0].rows());
        cache_ = Cache{};
        cache_.x = input;
        cache_.i.resize(steps);
        cache_.f.resize(steps);
        cache_.g.resize(steps);
        cache_.o.resize(steps);
        cache_.c.resize(steps);
        cache_.tanh_c.resize(steps);
        cache_.h.resize(steps);

        Matrix h_prev = Matrix::Zero(batch, hidden_size_);
        Matrix c_prev = Matrix::Zero(batch, hidden_size_);
        Sequence out(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            Matrix z = input[t] * w_.value.transpose() + h_prev * u_.value.transpose();
            z.rowwise() += b_.value.row(0);
            const auto hsz = hidden_size_;
            cache_.i[t] = detail::sigmoid(z.leftCols(hsz));
            cache_.f[t] = detail::sigmoid(z.middleCols(hsz, hsz));
            cache_.g[t] = z.middleCols(2 * hsz, hsz).array().tanh().matrix();
            cache_.o[t] = detail::sigmoid(z.rightCols(hsz));
            cache_.c[t] = cache_.f[t].cwiseProduct(c_prev) + cache_.i[t].cwiseProduct(cache_.g[t]);
            cache_.tanh_c[t] = cache_.c[t].array().tanh().matrix();
            cache_.h[t] = cache_.o[t].cwiseProduct(cache_.tanh_c[t]);
            out[t] = relu_output_ ? cache_.h[t].cwiseMax(0.0) : cache_.h[t];
            h_prev = cache_.h[t];
            c_prev = cache_.c[t];
        }
        cache_.valid = true;
        if (!return_sequences_) return Sequence{out.back()};
        return out;
    }

    /// Backprop through time. `upstream` has one gradient per emitted step:
    /// `steps` entries for a seq2seq layer, a single entry (for the final
    /// step) for a many-to-one layer. Accumulates parameter gradients and
    /// returns gradients for the input sequence.
    Sequence backward(const Sequence& upstream) {
        if (!cache_.valid) throw StateError("LSTM backward without a cached forward");
        const auto steps = cache_.x.size();
        const auto batch = cache_.x[0].rows();
        const auto expected = return_sequences_ ? steps : 1u;
        if (upstream.size() != expected)
            throw ShapeError("LSTM backward: wrong number of upstream gradients");

        Sequence dx(steps);
        Matrix dh_rec = Matrix::Zero(batch, hidden_size_);
        Matrix dc_rec = Matrix::Zero(batch, hidden_size_);
        for (std::size_t ti = steps; ti-- > 0;) {
            Matrix dout = Matrix::Zero(batch, hidden_size_);
            if (return_sequences_)
                dout = upstream[ti];
            else if (ti == steps - 1)
                dout = upstream[0];
            if (relu_output_)
                dout = dout.cwiseProduct(
                    (cache_.h[ti].array() > 0.0).cast<double>().matrix());

            const Matrix dh = dout + dh_rec;
            const Matrix& i = cache_.i[ti];
            const Matrix& f = cache_.f[ti];
            const Matrix& g = cache_.g[ti];
            const Matrix& o = cache_.o[ti];
            const Matrix& th = cache_.tanh_c[ti];
            const Matrix c_prev = ti == 0 ? Matrix::Zero(batch, hidden_size_).eval()
                                          : cache_.c[ti - 1];
            const Matrix h_prev = ti == 0 ? Matrix::Zero(batch, hidden_size_).eval()
                                          : cache_.h[ti - 1];

            const Matrix d_o = dh.cwiseProduct(th);
            const Matrix dc =
                dc_rec + dh.cwiseProduct(o).cwiseProduct(
                             (1.0 - th.array().square()).matrix());
            const Matrix d_i = dc.cwiseProduct(g);
            const Matrix d_f = dc.cwiseProduct(c_prev);
            const Matrix d_g = dc.cwiseProduct(i);
            dc_rec = dc.cwiseProduct(f);

            Matrix dz(batch, 4 * hidden_size_);
            dz.leftCols(hidden_size_) =
                d_i.cwiseProduct(i).cwiseProduct((1.0 - i.array()).matrix());
            dz.middleCols(hidden_size_, hidden_size_) =
                d_f.cwiseProduct(f).cwiseProduct((1.0 - f.array()).matrix());
            dz.middleCols(2 * hidden_size_, hidden_size_) =
                d_g.cwiseProduct((1.0 - g.array().square()).matrix());
            dz.rightCols(hidden_size_) =
                d_o.cwiseProduct(o).cwiseProduct((1.0 - o.array()).matrix());

            w_.grad += dz.transpose() * cache_.x[ti];
            u_.grad += dz.transpose() * h_prev;
            b_.grad += dz.colwise().sum();
            dx[ti] = dz * w_.value;
            dh_rec = dz * u_.value;
        }
        cache_.valid = false;
        return dx;
    }

    /// Stateless forward for inference; safe to call concurrently.
    Sequence infer(const Sequence& input) const {
        check_input(input);
        const auto batch = input[0].rows();
        Matrix h = Matrix::Zero(batch, hidden_size_);
        Matrix c = Matrix::Zero(batch, hidden_size_);
        Sequence out;
        out.reserve(return_sequences_ ? input.size() : 1);
        for (std::size_t t = 0; t < input.size(); ++t) {
            Matrix z = input[t] * w_.value.transpose() + h * u_.value.transpose();
            z.rowwise() += b_.value.row(0);
            const auto hsz = hidden_size_;
            const Matrix i = detail::sigmoid(z.leftCols(hsz));
            const Matrix f = detail::sigmoid(z.middleCols(hsz, hsz));
            const Matrix g = z.middleCols(2 * hsz, hsz).array().tanh().matrix();
            const Matrix o = detail::sigmoid(z.rightCols(hsz));
            c = f.cwiseProduct(c) + i.cwiseProduct(g);
            h = o.cwiseProduct(c.array().tanh().matrix());
            if (return_sequences_) out.push_back(relu_output_ ? h.cwiseMax(0.0) : h);
        }
        if (!return_sequences_) out.push_back(relu_output_ ? h.cwiseMax(0.0) : h);
        return out;
    }

    Parameter& weights() { return w_; }
    Parameter& recurrent() { return u_; }
    Parameter& bias() { return b_; }
    const Parameter& weights() const { return w_; }
    const Parameter& recurrent() const { return u_; }
    const Parameter& bias() const { return b_; }

private:
    void check_input(const Sequence& input) const {
        if (input.empty()) throw ShapeError("LSTM input has no timesteps");
        for (const auto& x : input)
            if (x.cols() != input_size_)
                throw ShapeError("LSTM input feature dim " + std::to_string(x.cols()) +
                                 " != " + std::to_string(input_size_));
    }

    struct Cache {
        Sequence x, i, f, g, o, c, tanh_c, h;
        bool valid = false;
    };

    int input_size_;
    int hidden_size_;
    bool return_sequences_;
    bool relu_output_;
    Parameter w_, u_, b_;
    Cache cache_;
};

class DenseLayer {
public:
    DenseLayer(int input_size, int output_size, Activation activation, Rng& rng)
        : input_size_(input_size), output_size_(output_size), activation_(activation) {
        if (input_size < 1 || output_size < 1) throw ConfigError("dense sizes must be positive");
        w_.name = "dense.W";
        b_.name = "dense.b";
        w_.value.resize(output_size, input_size);
        detail::glorot_fill(w_.value, input_size, output_size, rng);
        b_.value = Matrix::Zero(1, output_size);
        w_.zero_grad();
        b_.zero_grad();
    }

    int input_size() const { return input_size_; }
    int output_size() const { return output_size_; }
    long long parameter_count() const {
        return static_cast<long long>(output_size_) * input_size_ + output_size_;
    }
    std::vector<Parameter*> params() { return {&w_, &b_}; }

    Matrix forward(const Matrix& x) {
        check_input(x);
        cache_input_ = x;
        Matrix y = x * w_.value.transpose();
        y.rowwise() += b_.value.row(0);
        cache_pre_ = y;
        cache_valid_ = true;
        return activation_ == Activation::relu ? y.cwiseMax(0.0).eval() : y;
    }

    Matrix backward(const Matrix& upstream) {
        if (!cache_valid_) throw StateError("dense backward without a cached forward");
        Matrix dy = upstream;
        if (activation_ == Activation::relu)
            dy = dy.cwiseProduct((cache_pre_.array() > 0.0).cast<double>().matrix());
        w_.grad += dy.transpose() * cache_input_;
        b_.grad += dy.colwise().sum();
        cache_valid_ = false;
        return dy * w_.value;
    }

    Matrix infer(const Matrix& x) const {
        check_input(x);
        Matrix y = x * w_.value.transpose();
        y.rowwise() += b_.value.row(0);
        return activation_ == Activation::relu ? y.cwiseMax(0.0).eval() : y;
    }

    Parameter& weights() { return w_; }
    Parameter& bias() { return b_; }
    const Parameter& weights() const { return w_; }
    const Parameter& bias() const { return b_; }

private:
    void check_input(const Matrix& x) const {
        if (x.cols() != input_size_)
            throw ShapeError("dense input dim " + std::to_string(x.cols()) + " != " +
                             std::to_string(input_size_));
    }

    int input_size_;
    int output_size_;
    Activation activation_;
    Parameter w_, b_;
    Matrix cache_input_, cache_pre_;
    bool cache_valid_ = false;
};

/// Inverted dropout: active mode masks with keep probability 1-rate and
/// scales survivors by 1/(1-rate); inactive mode is the identity.
class DropoutLayer {
public:
    explicit DropoutLayer(double rate) : rate_(rate) {
        if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
    }

    double rate() const { return rate_; }

    Matrix forward(const Matrix& x, bool active, Rng* rng) {
        mask_ = make_mask(x.rows(), x.cols(), active, rng);
        return x.cwiseProduct(mask_);
    }

    Sequence forward(const Sequence& x, bool active, Rng* rng) {
        seq_mask_.clear();
        Sequence out(x.size());
        for (std::size_t t = 0; t < x.size(); ++t) {
            seq_mask_.push_back(make_mask(x[t].rows(), x[t].cols(), active, rng));
            out[t] = x[t].cwiseProduct(seq_mask_[t]);
        }
        return out;
    }

    Matrix backward(const Matrix& upstream) const { return upstream.cwiseProduct(mask_); }

    Sequence backward(const Sequence& upstream) const {
        Sequence out(upstream.size());
        for (std::size_t t = 0; t < upstream.size(); ++t)
            out[t] = upstream[t].cwiseProduct(seq_mask_[t]);
        return out;
    }

    /// Pure masking for inference paths (no cache).
    Matrix apply(const Matrix& x, bool active, Rng* rng) const {
        return x.cwiseProduct(make_mask(x.rows(), x.cols(), active, rng));
    }

    Sequence apply(const Sequence& x, bool active, Rng* rng) const {
        Sequence out(x.size());
        for (std::size_t t = 0; t < x.size(); ++t)
            out[t] = x[t].cwiseProduct(make_mask(x[t].rows(), x[t].cols(), active, rng));
        return out;
    }

private:
    Matrix make_mask(Eigen::Index rows, Eigen::Index cols, bool active, Rng* rng) const {
        if (!active || rate_ == 0.0) return Matrix::Ones(rows, cols);
        if (!rng) throw StateError("active dropout needs an RNG stream");
        const double keep = 1.0 - rate_;
        Matrix m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                m(r, c) = rng->uniform01() <= keep ? 1.0 / keep : 0.0;
        return m;
    }

    double rate_;
    Matrix mask_;
    Sequence seq_mask_;
};

/// Weighted mean squared error: loss = (1/N) sum_t w_t (y_t - yhat_t)^2,
/// gradient d loss / d yhat_t = (2/N) w_t (yhat_t - y_t).
inline std::pair<double, Eigen::VectorXd> weighted_mse(const Eigen::VectorXd& predictions,
                                                       const Eigen::VectorXd& targets,
                                                       const Eigen::VectorXd& weights) {
    if (predictions.size() != targets.size() || predictions.size() != weights.size())
        throw ShapeError("weighted_mse: length mismatch");
    if (predictions.size() == 0) throw ShapeError("weighted_mse: empty input");
    const auto n = static_cast<double>(predictions.size());
    const Eigen::VectorXd diff = predictions - targets;
    const double loss = weights.cwiseProduct(diff).dot(diff) / n;
    const Eigen::VectorXd grad = (2.0 / n) * weights.cwiseProduct(diff);
    return {loss, grad};
}

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction over an attached parameter list.
class Adam {
public:
    explicit Adam(std::vector<Parameter*> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        for (const auto* p : params_) {
            m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Matrix& g = params_[i]->grad;
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            const Matrix m_hat = m_[i] / bc1;
            const Matrix v_hat = v_[i] / bc2;
            params_[i]->value -=
                cfg_.learning_rate *
                m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + cfg_.epsilon).matrix());
        }
    }

    long long step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Parameter*> params_;
    AdamConfig cfg_;
    long long t_ = 0;
    std::vector<Matrix> m_, v_;
};

/// Scales gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
inline double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
    double total = 0.0;
    for (const auto* p : params) total += p->grad.squaredNorm();
    total = std::sqrt(total);
    if (total > max_norm && total > 0.0) {
        const double scale = max_norm / total;
        for (auto* p : const_cast<std::vector<Parameter*>&>(params)) p->grad *= scale;
    }
    return total;
}

} // namespace tcinet::neural

#endif
