// Adam with decoupled weight decay and optional global-norm gradient clipping.
#pragma once

#include <cmath>
#include <vector>

#include "sapt/errors.hpp"
#include "sapt/value.hpp"

namespace sapt {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 0.0;  // 0 disables clipping
};

class AdamW {
  public:
    AdamW(std::vector<Value> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), 0.0);
            v_[i].assign(params_[i].numel(), 0.0);
        }
    }

    const std::vector<Value>& params() const { return params_; }

    void zero_grad() {
        for (Value& p : params_) p.zero_grad();
    }

    // One update from the gradients currently held by the parameters.
    // Parameters frozen after construction are a contract violation.
    void step() {
        for (const Value& p : params_) {
            if (!p.requires_grad()) {
                throw ContractError("AdamW::step: parameter was frozen; frozen blocks reject gradient application");
            }
        }
        ++t_;
        double scale = 1.0;
        if (cfg_.clip_norm > 0.0) {
            double sq = 0.0;
            for (const Value& p : params_) {
                if (!p.has_grad()) continue;
                for (double g : p.grad()) sq += g * g;
            }
            const double norm = std::sqrt(sq);
            if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Value& p = params_[i];
            auto& data = p.data();
            if (cfg_.weight_decay > 0.0) {
                for (double& x : data) x -= cfg_.lr * cfg_.weight_decay * x;
            }
            if (!p.has_grad()) continue;  // parameter untouched by this loss
            const auto& grad = p.grad();
            for (std::size_t j = 0; j < data.size(); ++j) {
                const double g = grad[j] * scale;
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

  private:
    std::vector<Value> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamWConfig cfg_;
    long long t_ = 0;
};

}  // namespace sapt
