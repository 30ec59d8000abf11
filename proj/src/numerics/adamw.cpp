#include "ciso/numerics/adamw.hpp"

#include <cmath>

namespace ciso::num {

AdamW::AdamW(const NamedParams& params, AdamWConfig config) : config_(config) {
    slots_.reserve(params.size());
    for (const auto& [name, p] : params) {
        slots_.push_back(Slot{name, p, std::vector<double>(p.size(), 0.0), std::vector<double>(p.size(), 0.0)});
    }
}

void AdamW::step() {
    for (const auto& s : slots_) {
        for (double g : s.param.grad_view()) {
            if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in parameter '" + s.name + "'");
        }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    const double decay = 1.0 - config_.lr * config_.weight_decay;
    for (auto& s : slots_) {
        auto p = s.param.values();
        auto g = s.param.grad_view();
        const bool has_grad = !g.empty();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = has_grad ? g[i] : 0.0;
            s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * gi;
            s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * gi * gi;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            p[i] = p[i] * decay - config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
    zero_grad();
}

void AdamW::zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
}

}  // namespace ciso::num
