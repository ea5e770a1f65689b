#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "disen/params.hpp"

namespace disen {

struct AdamConfig {
    double base_lr = 0.005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;  // L2 on weight matrices only, added to gradients
    double lr_decay = 0.1;
    int lr_decay_every = 3;  // epochs between decay steps
};

inline double lr_at(const AdamConfig& cfg, int epoch) {
    int steps = cfg.lr_decay_every > 0 ? epoch / cfg.lr_decay_every : 0;
    return cfg.base_lr * std::pow(cfg.lr_decay, steps);
}

// Adam with stepwise lr decay. Weight decay is classic L2 folded into the
// gradient, applied to matrices and higher-rank tensors but not biases or
// other vectors.
template <class Real>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    long long step_count() const { return t_; }

    void step(ParamStore<Real>& params, int epoch) {
        if (m_.empty()) {
            for (auto& [name, v] : params) {
                m_.emplace_back(v.shape());
                u_.emplace_back(v.shape());
            }
        }
        ++t_;
        double lr = lr_at(cfg_, epoch);
        double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        std::size_t pi = 0;
        for (auto& [name, v] : params) {
            auto& val = v.node().value;
            auto& grad = v.node().grad;
            bool decay = cfg_.weight_decay > 0 && val.rank() >= 2;
            for (std::size_t i = 0; i < val.numel(); ++i) {
                double g = double(grad.data[i]);
                if (!std::isfinite(g))
                    throw std::runtime_error("Adam: non-finite gradient in " + name);
                if (decay) g += cfg_.weight_decay * double(val.data[i]);
                double m = cfg_.beta1 * double(m_[pi].data[i]) + (1.0 - cfg_.beta1) * g;
                double u = cfg_.beta2 * double(u_[pi].data[i]) + (1.0 - cfg_.beta2) * g * g;
                m_[pi].data[i] = m;
                u_[pi].data[i] = u;
                double mh = m / bc1;
                double uh = u / bc2;
                val.data[i] = Real(double(val.data[i]) - lr * mh / (std::sqrt(uh) + cfg_.eps));
            }
            ++pi;
        }
    }

    // Optimizer state access for checkpointing.
    std::vector<Tensor<double>>& first_moments() { return m_; }
    std::vector<Tensor<double>>& second_moments() { return u_; }
    const std::vector<Tensor<double>>& first_moments() const { return m_; }
    const std::vector<Tensor<double>>& second_moments() const { return u_; }
    void set_state(std::vector<Tensor<double>> m, std::vector<Tensor<double>> u, long long t) {
        m_ = std::move(m);
        u_ = std::move(u);
        t_ = t;
    }

private:
    AdamConfig cfg_;
    long long t_ = 0;
    std::vector<Tensor<double>> m_;
    std::vector<Tensor<double>> u_;
};

}  // namespace disen
