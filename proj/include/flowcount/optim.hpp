#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"

namespace flowcount {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0)) throw DomainError("optimizer: learning rate must be > 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw DomainError("optimizer: betas must be in [0,1)");
        if (!(epsilon > 0.0)) throw DomainError("optimizer: epsilon must be > 0");
    }
};

/// Adaptive-moment optimizer with bias correction.
template <typename T>
class Adam {
public:
    Adam(const ParameterSet<T>& params, AdamConfig config) : config_(config), m_(params), v_(params) {
        config_.validate();
    }

    const AdamConfig& config() const noexcept { return config_; }
    long steps() const noexcept { return t_; }

    void step(ParameterSet<T>& params, const GradientSet<T>& grads) {
        ++t_;
        const double b1 = config_.beta1, b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& w = params[i].values;
            const auto& g = grads.grads[i];
            auto& m = m_.grads[i];
            auto& v = v_.grads[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * g[k]);
                v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * static_cast<double>(g[k]) * g[k]);
                const double mh = m[k] / c1, vh = v[k] / c2;
                w[k] = static_cast<T>(w[k] - config_.learning_rate * mh / (std::sqrt(vh) + config_.epsilon));
            }
        }
    }

    /// Moment buffers for checkpointing, in parameter order.
    GradientSet<T>& first_moment() noexcept { return m_; }
    GradientSet<T>& second_moment() noexcept { return v_; }
    void set_steps(long t) noexcept { t_ = t; }

private:
    AdamConfig config_;
    GradientSet<T> m_, v_;
    long t_ = 0;
};

} // namespace flowcount
