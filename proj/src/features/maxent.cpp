#include "ciso/features/maxent.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace ciso::features {

std::vector<double> MaxentConfig::hinge_knots(std::size_t j) const {
    std::vector<double> t;
    for (std::size_t k = 1; k < n_hinge_knots; ++k) {
        t.push_back(lo[j] + static_cast<double>(k) * (hi[j] - lo[j]) / static_cast<double>(n_hinge_knots));
    }
    return t;
}

std::vector<double> MaxentConfig::thresholds(std::size_t j) const {
    std::vector<double> t;
    for (std::size_t k = 1; k <= n_thresholds; ++k) {
        t.push_back(lo[j] + static_cast<double>(k) * (hi[j] - lo[j]) / static_cast<double>(n_thresholds + 1));
    }
    return t;
}

MaxentConfig fit_maxent(const std::vector<std::vector<double>>& train_env, std::size_t n_hinge_knots,
                        std::size_t n_thresholds) {
    if (train_env.empty()) throw std::invalid_argument("fit_maxent needs at least one training row");
    if (n_hinge_knots < 1) throw std::invalid_argument("n_hinge_knots must be >= 1");
    MaxentConfig cfg;
    cfg.n_hinge_knots = n_hinge_knots;
    cfg.n_thresholds = n_thresholds;
    cfg.n_input = train_env.front().size();
    for (std::size_t k = 0; k < cfg.n_input; ++k) {
        double lo = train_env.front()[k], hi = lo;
        for (const auto& row : train_env) {
            if (row.size() != cfg.n_input) throw std::invalid_argument("ragged env matrix");
            lo = std::min(lo, row[k]);
            hi = std::max(hi, row[k]);
        }
        if (!(lo < hi)) continue;
        cfg.kept.push_back(k);
        cfg.lo.push_back(lo);
        cfg.hi.push_back(hi);
    }
    return cfg;
}

std::size_t feature_count(const MaxentConfig& cfg) {
    const std::size_t d = cfg.kept.size();
    const std::size_t hinges = cfg.n_hinge_knots > 0 ? cfg.n_hinge_knots - 1 : 0;
    return d * (2 + 2 * hinges + cfg.n_thresholds) + d * (d - (d > 0 ? 1 : 0)) / 2;
}

std::vector<double> expand(std::span<const double> x, const MaxentConfig& cfg) {
    if (x.size() != cfg.n_input) {
        throw std::invalid_argument("expand: got " + std::to_string(x.size()) + " variables, expected " +
                                    std::to_string(cfg.n_input));
    }
    const std::size_t d = cfg.kept.size();
    std::vector<double> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = std::clamp(x[cfg.kept[j]], cfg.lo[j], cfg.hi[j]);

    std::vector<double> out;
    out.reserve(feature_count(cfg));
    for (std::size_t j = 0; j < d; ++j) {
        const double lo = cfg.lo[j], hi = cfg.hi[j];
        out.push_back(v[j]);
        out.push_back(v[j] * v[j]);
        const auto knots = cfg.hinge_knots(j);
        for (double t : knots) out.push_back(std::clamp((v[j] - t) / (hi - t), 0.0, 1.0));
        for (double t : knots) out.push_back(std::clamp((t - v[j]) / (t - lo), 0.0, 1.0));
        for (double t : cfg.thresholds(j)) out.push_back(v[j] > t ? 1.0 : 0.0);
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) out.push_back(v[i] * v[j]);
    }
    return out;
}

nlohmann::json to_json(const MaxentConfig& cfg) {
    return {{"n_hinge_knots", cfg.n_hinge_knots}, {"n_thresholds", cfg.n_thresholds}, {"n_input", cfg.n_input},
            {"kept", cfg.kept}, {"lo", cfg.lo}, {"hi", cfg.hi}};
}

MaxentConfig maxent_from_json(const nlohmann::json& j) {
    MaxentConfig cfg;
    cfg.n_hinge_knots = j.at("n_hinge_knots").get<std::size_t>();
    cfg.n_thresholds = j.at("n_thresholds").get<std::size_t>();
    cfg.n_input = j.at("n_input").get<std::size_t>();
    cfg.kept = j.at("kept").get<std::vector<std::size_t>>();
    cfg.lo = j.at("lo").get<std::vector<double>>();
    cfg.hi = j.at("hi").get<std::vector<double>>();
    return cfg;
}

}  // namespace ciso::features
