#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ciso/numerics/tensor.hpp"

namespace ciso::num {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// AdamW with bias correction and decoupled weight decay:
//   p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
public:
    AdamW(const NamedParams& params, AdamWConfig config);

    // Applies one update from the accumulated gradients, then clears them.
    // Throws NonFiniteGradient (naming the parameter) before touching any
    // parameter if a gradient contains NaN or Inf.
    void step();
    void zero_grad();

    std::uint64_t steps() const { return step_; }
    const AdamWConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }

private:
    struct Slot {
        std::string name;
        Tensor param;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot> slots_;
    AdamWConfig config_;
    std::uint64_t step_ = 0;
};

}  // namespace ciso::num
