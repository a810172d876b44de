#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rng.hpp"

namespace bmd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Two-layer perceptron, out = W2 tanh(W1 x + b1) + b2, applied column-wise
/// to a batch. Parameters live in one flat buffer (W1, b1, W2, b2, each
/// column-major) so optimizers, EMA and serialization work on spans.
class TanhMlp {
public:
    TanhMlp() = default;

    TanhMlp(int inputs, int hidden, int outputs)
        : inputs_(inputs), hidden_(hidden), outputs_(outputs) {
        if (inputs < 1 || hidden < 1 || outputs < 1) {
            throw std::invalid_argument("TanhMlp: layer sizes must be >= 1");
        }
        params_.assign(parameter_count(), 0.0);
    }

    /// Xavier-style normal init, zero biases.
    TanhMlp(int inputs, int hidden, int outputs, Rng& rng) : TanhMlp(inputs, hidden, outputs) {
        const double s1 = 1.0 / std::sqrt(static_cast<double>(inputs));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
        auto w1 = weights1();
        for (Eigen::Index i = 0; i < w1.size(); ++i) {
            w1.data()[i] = s1 * standard_normal(rng);
        }
        auto w2 = weights2();
        for (Eigen::Index i = 0; i < w2.size(); ++i) {
            w2.data()[i] = s2 * standard_normal(rng);
        }
    }

    int inputs() const noexcept { return inputs_; }
    int hidden() const noexcept { return hidden_; }
    int outputs() const noexcept { return outputs_; }

    std::size_t parameter_count() const noexcept {
        const auto i = static_cast<std::size_t>(inputs_);
        const auto h = static_cast<std::size_t>(hidden_);
        const auto o = static_cast<std::size_t>(outputs_);
        return h * i + h + o * h + o;
    }

    std::span<double> parameters() noexcept { return params_; }
    std::span<const double> parameters() const noexcept { return params_; }

    void set_parameters(std::span<const double> p) {
        if (p.size() != params_.size()) {
            throw std::invalid_argument("TanhMlp::set_parameters: size mismatch");
        }
        params_.assign(p.begin(), p.end());
    }

    struct Activations {
        Matrix hidden;  // tanh outputs, hidden x N
        Matrix output;  // outputs x N
    };

    Activations forward(const Matrix& x) const {
        if (x.rows() != inputs_) {
            throw std::invalid_argument("TanhMlp::forward: input width mismatch");
        }
        Activations a;
        a.hidden = ((weights1() * x).colwise() + bias1()).array().tanh();
        a.output = (weights2() * a.hidden).colwise() + bias2();
        return a;
    }

    /// Accumulates dL/dparams into grad (same layout as parameters()).
    void backward(const Matrix& x, const Activations& a, const Matrix& grad_output, std::span<double> grad) const {
        if (grad.size() != params_.size()) {
            throw std::invalid_argument("TanhMlp::backward: gradient buffer size mismatch");
        }
        auto* g = grad.data();
        Eigen::Map<Matrix> gw1(g, hidden_, inputs_);
        Eigen::Map<Vector> gb1(g + offset_b1(), hidden_);
        Eigen::Map<Matrix> gw2(g + offset_w2(), outputs_, hidden_);
        Eigen::Map<Vector> gb2(g + offset_b2(), outputs_);

        gw2.noalias() += grad_output * a.hidden.transpose();
        gb2 += grad_output.rowwise().sum();
        const Matrix dh = (weights2().transpose() * grad_output).cwiseProduct(
            (1.0 - a.hidden.array().square()).matrix());
        gw1.noalias() += dh * x.transpose();
        gb1 += dh.rowwise().sum();
    }

private:
    std::size_t offset_b1() const noexcept { return static_cast<std::size_t>(hidden_) * inputs_; }
    std::size_t offset_w2() const noexcept { return offset_b1() + static_cast<std::size_t>(hidden_); }
    std::size_t offset_b2() const noexcept { return offset_w2() + static_cast<std::size_t>(outputs_) * hidden_; }

    Eigen::Map<Matrix> weights1() { return {params_.data(), hidden_, inputs_}; }
    Eigen::Map<const Matrix> weights1() const { return {params_.data(), hidden_, inputs_}; }
    Eigen::Map<const Vector> bias1() const { return {params_.data() + offset_b1(), hidden_}; }
    Eigen::Map<Matrix> weights2() { return {params_.data() + offset_w2(), outputs_, hidden_}; }
    Eigen::Map<const Matrix> weights2() const { return {params_.data() + offset_w2(), outputs_, hidden_}; }
    Eigen::Map<const Vector> bias2() const { return {params_.data() + offset_b2(), outputs_}; }

    int inputs_ = 0;
    int hidden_ = 0;
    int outputs_ = 0;
    std::vector<double> params_;
};

/// Adam with bias correction.
class Adam {
public:
    Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    void set_learning_rate(double lr) noexcept { lr_ = lr; }
    double learning_rate() const noexcept { return lr_; }

    void step(std::span<double> params, std::span<const double> grad) {
        if (params.size() != m_.size() || grad.size() != m_.size()) {
            throw std::invalid_argument("Adam::step: size mismatch");
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

private:
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    long long t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

} // namespace bmd
