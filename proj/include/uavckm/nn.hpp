#pragma once

// Small dense-network toolkit with hand-written backward passes.
// Activations are laid out feature-major: one column per sample.

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "uavckm/errors.hpp"

namespace uavckm::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Non-owning view of a trainable tensor and its gradient accumulator.
struct ParamRef {
    std::string name;
    Matrix* value;
    Matrix* grad;
};

/// Non-owning view of any persisted tensor (parameters and running statistics).
struct StateRef {
    std::string name;
    Matrix* value;
};

class Dense {
public:
    Dense() = default;

    /// Weights drawn from N(0, gain^2 / in).
    template <class Rng>
    Dense(int in, int out, Rng& rng, double gain = 1.0)
        : w_(out, in), b_(Matrix::Zero(out, 1)), dw_(Matrix::Zero(out, in)), db_(Matrix::Zero(out, 1)) {
        std::normal_distribution<double> n(0.0, gain / std::sqrt(static_cast<double>(in)));
        for (Eigen::Index i = 0; i < w_.size(); ++i) w_.data()[i] = n(rng);
    }

    int in_dim() const { return static_cast<int>(w_.cols()); }
    int out_dim() const { return static_cast<int>(w_.rows()); }

    Matrix forward(const Matrix& x) {
        x_ = x;
        return infer(x);
    }
    Matrix infer(const Matrix& x) const { return (w_ * x).colwise() + b_.col(0); }

    Matrix backward(const Matrix& dy) {
        dw_.noalias() += dy * x_.transpose();
        db_ += dy.rowwise().sum();
        return w_.transpose() * dy;
    }

    void collect(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".w", &w_, &dw_});
        out.push_back({prefix + ".b", &b_, &db_});
    }
    void collect_state(const std::string& prefix, std::vector<StateRef>& out) {
        out.push_back({prefix + ".w", &w_});
        out.push_back({prefix + ".b", &b_});
    }

    Matrix& weight() { return w_; }
    Matrix& bias() { return b_; }

private:
    Matrix w_, b_, dw_, db_;
    Matrix x_;
};

class Relu {
public:
    Matrix forward(const Matrix& x) {
        mask_ = (x.array() > 0.0).cast<double>();
        return x.array() * mask_.array();
    }
    static Matrix infer(const Matrix& x) { return x.cwiseMax(0.0); }
    Matrix backward(const Matrix& dy) const { return dy.array() * mask_.array(); }

private:
    Matrix mask_;
};

class Tanh {
public:
    Matrix forward(const Matrix& x) {
        y_ = x.array().tanh();
        return y_;
    }
    static Matrix infer(const Matrix& x) { return x.array().tanh(); }
    Matrix backward(const Matrix& dy) const { return dy.array() * (1.0 - y_.array().square()); }

private:
    Matrix y_;
};

/// Per-feature batch normalization. Training mode normalizes with batch statistics and
/// updates the running averages; inference mode uses the running averages.
class BatchNorm {
public:
    BatchNorm() = default;
    explicit BatchNorm(int dim, double momentum = 0.1, double eps = 1e-5)
        : gamma_(Matrix::Ones(dim, 1)), beta_(Matrix::Zero(dim, 1)),
          dgamma_(Matrix::Zero(dim, 1)), dbeta_(Matrix::Zero(dim, 1)),
          running_mean_(Matrix::Zero(dim, 1)), running_var_(Matrix::Ones(dim, 1)),
          momentum_(momentum), eps_(eps) {}

    Matrix forward(const Matrix& x, bool training) {
        training_ = training;
        if (!training) {
            inv_std_ = (running_var_.array() + eps_).rsqrt().matrix();
            return infer(x);
        }
        const double n = static_cast<double>(x.cols());
        const Vector mean = x.rowwise().mean();
        const Matrix centered = x.colwise() - mean;
        const Vector var = centered.array().square().rowwise().sum() / n;
        inv_std_ = (var.array() + eps_).rsqrt().matrix();
        xhat_ = centered.array().colwise() * inv_std_.col(0).array();
        running_mean_ = (1.0 - momentum_) * running_mean_ + momentum_ * mean;
        const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
        running_var_ = (1.0 - momentum_) * running_var_ + momentum_ * unbias * var;
        return (xhat_.array().colwise() * gamma_.col(0).array()).colwise() + beta_.col(0).array();
    }

    /// Replaces the running averages with exact statistics of `x`.
    void calibrate(const Matrix& x) {
        const double n = static_cast<double>(x.cols());
        const Vector mean = x.rowwise().mean();
        const Vector var = (x.colwise() - mean).array().square().rowwise().sum() / n;
        running_mean_ = mean;
        running_var_ = var;
    }

    Matrix infer(const Matrix& x) const {
        const Vector scale = gamma_.col(0).array() * (running_var_.col(0).array() + eps_).rsqrt();
        const Vector shift = beta_.col(0).array() - running_mean_.col(0).array() * scale.array();
        return (x.array().colwise() * scale.array()).colwise() + shift.array();
    }

    Matrix backward(const Matrix& dy) {
        if (!training_) {
            // Frozen statistics: the layer is affine, and gamma/beta get no gradient here.
            return dy.array().colwise() * (gamma_.col(0).array() * inv_std_.col(0).array());
        }
        const double n = static_cast<double>(dy.cols());
        dgamma_ += (dy.array() * xhat_.array()).rowwise().sum().matrix();
        dbeta_ += dy.rowwise().sum();
        const Matrix dxhat = dy.array().colwise() * gamma_.col(0).array();
        const Vector sum_dxhat = dxhat.rowwise().sum();
        const Vector sum_dxhat_xhat = (dxhat.array() * xhat_.array()).rowwise().sum();
        Matrix dx = (n * dxhat.array()).colwise() - sum_dxhat.array();
        dx.array() -= xhat_.array().colwise() * sum_dxhat_xhat.array();
        return dx.array().colwise() * (inv_std_.col(0).array() / n);
    }

    void collect(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".gamma", &gamma_, &dgamma_});
        out.push_back({prefix + ".beta", &beta_, &dbeta_});
    }
    void collect_state(const std::string& prefix, std::vector<StateRef>& out) {
        out.push_back({prefix + ".gamma", &gamma_});
        out.push_back({prefix + ".beta", &beta_});
        out.push_back({prefix + ".running_mean", &running_mean_});
        out.push_back({prefix + ".running_var", &running_var_});
    }

private:
    Matrix gamma_, beta_, dgamma_, dbeta_;
    Matrix running_mean_, running_var_;
    Matrix xhat_, inv_std_;
    double momentum_ = 0.1;
    double eps_ = 1e-5;
    bool training_ = true;
};

/// y = x + BN(ReLU(Dense(x))).
class ResidualBlock {
public:
    ResidualBlock() = default;
    template <class Rng>
    ResidualBlock(int width, Rng& rng) : dense_(width, width, rng, std::sqrt(2.0)), bn_(width) {}

    Matrix forward(const Matrix& x, bool training) {
        return x + bn_.forward(act_.forward(dense_.forward(x)), training);
    }
    Matrix infer(const Matrix& x) const { return x + bn_.infer(Relu::infer(dense_.infer(x))); }
    Matrix calibrate(const Matrix& x) {
        const Matrix a = Relu::infer(dense_.infer(x));
        bn_.calibrate(a);
        return x + bn_.infer(a);
    }
    Matrix backward(const Matrix& dy) { return dy + dense_.backward(act_.backward(bn_.backward(dy))); }

    void collect(const std::string& prefix, std::vector<ParamRef>& out) {
        dense_.collect(prefix + ".dense", out);
        bn_.collect(prefix + ".bn", out);
    }
    void collect_state(const std::string& prefix, std::vector<StateRef>& out) {
        dense_.collect_state(prefix + ".dense", out);
        bn_.collect_state(prefix + ".bn", out);
    }

private:
    Dense dense_;
    Relu act_;
    BatchNorm bn_;
};

/// Regressor: Dense+ReLU stem, a stack of residual blocks, linear scalar head.
class ResMlp {
public:
    ResMlp() = default;
    template <class Rng>
    ResMlp(int in, int width, int blocks, Rng& rng) : stem_(in, width, rng, std::sqrt(2.0)), head_(width, 1, rng, 1.0) {
        for (int i = 0; i < blocks; ++i) blocks_.emplace_back(width, rng);
    }

    int in_dim() const { return stem_.in_dim(); }
    int width() const { return stem_.out_dim(); }
    int block_count() const { return static_cast<int>(blocks_.size()); }

    Matrix forward(const Matrix& x, bool training) {
        Matrix h = stem_act_.forward(stem_.forward(x));
        for (auto& b : blocks_) h = b.forward(h, training);
        return head_.forward(h);
    }
    Matrix infer(const Matrix& x) const {
        Matrix h = Relu::infer(stem_.infer(x));
        for (const auto& b : blocks_) h = b.infer(h);
        return head_.infer(h);
    }
    /// Sets every batch-norm layer's running statistics to the exact population values over `x`.
    void recalibrate(const Matrix& x) {
        Matrix h = Relu::infer(stem_.infer(x));
        for (auto& b : blocks_) h = b.calibrate(h);
    }
    Matrix backward(const Matrix& dy) {
        Matrix g = head_.backward(dy);
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
        return stem_.backward(stem_act_.backward(g));
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        stem_.collect("stem", out);
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("block" + std::to_string(i), out);
        head_.collect("head", out);
        return out;
    }
    std::vector<StateRef> state() {
        std::vector<StateRef> out;
        stem_.collect_state("stem", out);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect_state("block" + std::to_string(i), out);
        head_.collect_state("head", out);
        return out;
    }

private:
    Dense stem_;
    Relu stem_act_;
    std::vector<ResidualBlock> blocks_;
    Dense head_;
};

/// Plain tanh MLP with a linear output layer. `sizes` lists every layer width, input first.
class Mlp {
public:
    Mlp() = default;
    template <class Rng>
    Mlp(std::vector<int> sizes, Rng& rng, double head_gain = 1.0) : sizes_(std::move(sizes)) {
        if (sizes_.size() < 2) throw Error(ErrorCategory::Config, "an MLP needs at least input and output sizes");
        for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
            const bool last = i + 2 == sizes_.size();
            layers_.emplace_back(sizes_[i], sizes_[i + 1], rng, last ? head_gain : 1.0);
        }
        acts_.resize(layers_.size() - 1);
    }

    const std::vector<int>& sizes() const { return sizes_; }
    int in_dim() const { return sizes_.front(); }
    int out_dim() const { return sizes_.back(); }

    Matrix forward(const Matrix& x) {
        Matrix h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i].forward(h);
            if (i < acts_.size()) h = acts_[i].forward(h);
        }
        return h;
    }
    Matrix infer(const Matrix& x) const {
        Matrix h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i].infer(h);
            if (i < acts_.size()) h = Tanh::infer(h);
        }
        return h;
    }
    Matrix backward(const Matrix& dy) {
        Matrix g = dy;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            if (i < acts_.size()) g = acts_[i].backward(g);
            g = layers_[i].backward(g);
        }
        return g;
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("layer" + std::to_string(i), out);
        return out;
    }
    std::vector<StateRef> state() {
        std::vector<StateRef> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect_state("layer" + std::to_string(i), out);
        return out;
    }

private:
    std::vector<int> sizes_;
    std::vector<Dense> layers_;
    std::vector<Tanh> acts_;
};

inline void zero_grad(const std::vector<ParamRef>& params) {
    for (const auto& p : params) p.grad->setZero();
}

inline double grad_norm(const std::vector<ParamRef>& params) {
    double s = 0.0;
    for (const auto& p : params) s += p.grad->squaredNorm();
    return std::sqrt(s);
}

/// Rescales gradients so their global L2 norm does not exceed `max_norm`.
inline void clip_grad_norm(const std::vector<ParamRef>& params, double max_norm) {
    const double n = grad_norm(params);
    if (n > max_norm && n > 0.0) {
        for (const auto& p : params) *p.grad *= max_norm / n;
    }
}

/// Adam. Moment buffers follow the order of the parameter list passed to step().
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    long steps() const { return t_; }

    void step(const std::vector<ParamRef>& params) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
                v_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
            }
        }
        if (m_.size() != params.size()) throw Error(ErrorCategory::State, "optimizer bound to a different parameter set");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Matrix& g = *params[i].grad;
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
            params[i].value->array() -=
                lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Matrix> m_, v_;
};

/// Copies every tensor of `src` into `dst`; both must come from identically shaped networks.
inline void copy_state(const std::vector<StateRef>& src, const std::vector<StateRef>& dst) {
    if (src.size() != dst.size()) throw Error(ErrorCategory::State, "network shapes differ");
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = *src[i].value;
}

} // namespace uavckm::nn
