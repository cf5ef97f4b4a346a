#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sva/tape.hpp"
#include "sva/tensor.hpp"

namespace sva {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second-moment accumulators, one pair per parameter slot, plus the
/// shared update counter for bias correction.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(const ParamStore& params) { reset(params); }

    void reset(const ParamStore& params) {
        m_.clear();
        v_.clear();
        steps_ = 0;
        for (int s = 0; s < params.size(); ++s) {
            m_.push_back(Tensor::zeros(params.value(s).shape()));
            v_.push_back(Tensor::zeros(params.value(s).shape()));
        }
    }

    /// One update from the gradients currently held in the store. Bias
    /// correction divides the raw moments; eps sits outside the square root.
    void step(ParamStore& params, const AdamConfig& cfg) {
        if (static_cast<int>(m_.size()) != params.size())
            throw ConfigError("adam state does not match parameter store");
        ++steps_;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps_));
        for (int s = 0; s < params.size(); ++s) {
            const auto g = params.grad(s).array();
            auto m = m_[static_cast<std::size_t>(s)].array();
            auto v = v_[static_cast<std::size_t>(s)].array();
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
            params.value(s).array() -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        }
    }

    std::int64_t steps() const { return steps_; }
    void set_steps(std::int64_t n) { steps_ = n; }
    int slots() const { return static_cast<int>(m_.size()); }
    Tensor& m(int s) { return m_[static_cast<std::size_t>(s)]; }
    const Tensor& m(int s) const { return m_[static_cast<std::size_t>(s)]; }
    Tensor& v(int s) { return v_[static_cast<std::size_t>(s)]; }
    const Tensor& v(int s) const { return v_[static_cast<std::size_t>(s)]; }

private:
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::int64_t steps_ = 0;
};

} // namespace sva
