#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

namespace ciso::features {

// Per-variable Maxent-style feature expansion fitted on the training split.
// For each retained variable v with train range [lo, hi]:
//   linear v, quadratic v^2,
//   forward hinges clamp((v - t) / (hi - t), 0, 1) and reverse hinges
//   clamp((t - v) / (t - lo), 0, 1) at the n_hinge_knots - 1 interior knots
//   t = lo + k (hi - lo) / n_hinge_knots,
//   thresholds 1[v > t] at t = lo + k (hi - lo) / (n_thresholds + 1),
// followed by the products v_i v_j for every unordered pair i < j.
struct MaxentConfig {
    std::size_t n_hinge_knots = 10;
    std::size_t n_thresholds = 10;
    std::size_t n_input = 0;
    std::vector<std::size_t> kept;  // input indices with lo < hi
    std::vector<double> lo;
    std::vector<double> hi;

    std::vector<double> hinge_knots(std::size_t j) const;
    std::vector<double> thresholds(std::size_t j) const;
};

MaxentConfig fit_maxent(const std::vector<std::vector<double>>& train_env, std::size_t n_hinge_knots = 10,
                        std::size_t n_thresholds = 10);

// d * (2 + 2 (n_hinge_knots - 1) + n_thresholds) + d (d - 1) / 2
std::size_t feature_count(const MaxentConfig& cfg);

std::vector<double> expand(std::span<const double> x, const MaxentConfig& cfg);

nlohmann::json to_json(const MaxentConfig& cfg);
MaxentConfig maxent_from_json(const nlohmann::json& j);

}  // namespace ciso::features
