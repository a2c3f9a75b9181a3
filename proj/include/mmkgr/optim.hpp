#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmkgr/tensor.hpp"

namespace mmkgr {

enum class OptimizerKind { Adam, Sgd };

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "sgd") return OptimizerKind::Sgd;
    throw std::invalid_argument("optimizer: unknown kind '" + s + "' (expected adam|sgd)");
}

// In-place updates over a fixed parameter list. Moment buffers are keyed by
// position, so the list must be stable across steps.
class Optimizer {
public:
    Optimizer(std::vector<Parameter*> params, OptimizerKind kind, double lr)
        : params_(std::move(params)), kind_(kind), lr_(lr) {
        if (kind_ == OptimizerKind::Adam) {
            m_.reserve(params_.size());
            v_.reserve(params_.size());
            for (Parameter* p : params_) {
                m_.emplace_back(p->value.rows(), p->value.cols());
                v_.emplace_back(p->value.rows(), p->value.cols());
            }
        }
    }

    double learning_rate() const { return lr_; }
    long step_count() const { return step_; }

    // Applies one update from the accumulated gradients, then zeroes them.
    void step() {
        ++step_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter& p = *params_[i];
            if (kind_ == OptimizerKind::Sgd) {
                for (int k = 0; k < p.value.size(); ++k) p.value[k] -= lr_ * p.grad[k];
            } else {
                const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
                const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
                Tensor& m = m_[i];
                Tensor& v = v_[i];
                for (int k = 0; k < p.value.size(); ++k) {
                    const double g = p.grad[k];
                    m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
                    v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
                    const double mhat = m[k] / bc1;
                    const double vhat = v[k] / bc2;
                    p.value[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                }
            }
            p.zero_grad();
        }
    }

    void zero_grad() {
        for (Parameter* p : params_) p->zero_grad();
    }

private:
    std::vector<Parameter*> params_;
    OptimizerKind kind_;
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

} // namespace mmkgr
