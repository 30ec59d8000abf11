#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "ciso/dataio/dataset.hpp"

namespace ciso::data {

Dataset filter_min_presences(const Dataset& ds, std::size_t min_count) {
    if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
    std::vector<std::size_t> counts(ds.n_species(), 0);
    for (const auto& r : ds.records) {
        for (std::size_t c = 0; c < counts.size(); ++c) {
            if (r.available[c] && r.targets[c] > 0.0) ++counts[c];
        }
    }
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] >= min_count) keep.push_back(c);
    }
    if (keep.empty()) {
        throw std::runtime_error("no species has at least " + std::to_string(min_count) + " presences");
    }
    Dataset out;
    out.split = ds.split;
    for (auto c : keep) out.species.push_back(ds.species[c]);
    for (const auto& [name, mask] : ds.group_masks) {
        auto& m = out.group_masks[name];
        for (auto c : keep) m.push_back(mask[c]);
    }
    out.records.reserve(ds.records.size());
    for (const auto& r : ds.records) {
        LocationRecord nr{r.id, r.lat, r.lon, r.env, {}, {}};
        for (auto c : keep) {
            nr.targets.push_back(r.targets[c]);
            nr.available.push_back(r.available[c]);
        }
        out.records.push_back(std::move(nr));
    }
    return out;
}

SplitResult spatial_block_split(const std::vector<LocationRecord>& records, double block_deg,
                                SplitFractions fractions, std::uint64_t seed, bool allow_degenerate) {
    if (!(block_deg > 0.0)) throw std::invalid_argument("block size must be > 0 degrees");
    const double total = fractions.train + fractions.val + fractions.test;
    if (std::abs(total - 1.0) > 1e-9 || fractions.train < 0 || fractions.val < 0 || fractions.test < 0) {
        throw std::invalid_argument("split fractions must be non-negative and sum to 1");
    }

    std::map<std::pair<long long, long long>, std::vector<std::size_t>> blocks;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto key = std::make_pair(static_cast<long long>(std::floor(records[i].lat / block_deg)),
                                        static_cast<long long>(std::floor(records[i].lon / block_deg)));
        blocks[key].push_back(i);
    }

    SplitResult result;
    result.n_blocks = blocks.size();
    if (blocks.size() < 3) {
        if (!allow_degenerate) {
            throw std::runtime_error("spatial block split needs at least 3 nonempty blocks, found " +
                                     std::to_string(blocks.size()));
        }
        result.warnings.push_back("only " + std::to_string(blocks.size()) +
                                  " nonempty block(s); some splits will be empty");
    }

    std::vector<const std::vector<std::size_t>*> order;
    order.reserve(blocks.size());
    for (const auto& [key, members] : blocks) {
        (void)key;
        order.push_back(&members);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const double n = static_cast<double>(records.size());
    const double target[3] = {fractions.train * n, fractions.val * n, fractions.test * n};
    double filled[3] = {0.0, 0.0, 0.0};
    result.tags.assign(records.size(), Split::Train);
    for (const auto* members : order) {
        std::size_t best = 0;
        double best_deficit = target[0] - filled[0];
        for (std::size_t s = 1; s < 3; ++s) {
            const double deficit = target[s] - filled[s];
            if (deficit > best_deficit) {
                best = s;
                best_deficit = deficit;
            }
        }
        for (auto i : *members) result.tags[i] = static_cast<Split>(best);
        filled[best] += static_cast<double>(members->size());
    }
    return result;
}

NormStats fit_norm(const Dataset& ds) {
    NormStats stats;
    const std::size_t n_env = ds.n_env();
    stats.n_input = n_env;
    std::vector<std::size_t> rows;
    if (ds.split.size() == ds.records.size()) {
        rows = ds.indices_of(Split::Train);
    } else {
        rows.resize(ds.records.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }
    for (std::size_t k = 0; k < n_env; ++k) {
        double sum = 0.0;
        std::size_t count = 0;
        for (auto i : rows) {
            const double v = ds.records[i].env[k];
            if (std::isfinite(v)) {
                sum += v;
                ++count;
            }
        }
        if (count == 0) {
            stats.dropped.push_back(k);
            continue;
        }
        const double mu = sum / static_cast<double>(count);
        double ss = 0.0;
        for (auto i : rows) {
            const double v = ds.records[i].env[k];
            if (std::isfinite(v)) ss += (v - mu) * (v - mu);
        }
        const double sd = std::sqrt(ss / static_cast<double>(count));
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mu)))) {
            stats.dropped.push_back(k);
            continue;
        }
        std::size_t missing = 0;
        for (const auto& r : ds.records) missing += std::isfinite(r.env[k]) ? 0 : 1;
        stats.kept.push_back(k);
        stats.mean.push_back(mu);
        stats.std.push_back(sd);
        stats.imputed.push_back(missing);
    }
    return stats;
}

std::vector<double> normalize_env(const std::vector<double>& env, const NormStats& stats) {
    if (env.size() != stats.n_input) {
        throw std::invalid_argument("env vector has " + std::to_string(env.size()) + " values, stats expect " +
                                    std::to_string(stats.n_input));
    }
    std::vector<double> out(stats.kept.size());
    for (std::size_t j = 0; j < stats.kept.size(); ++j) {
        const double v = env[stats.kept[j]];
        out[j] = std::isfinite(v) ? (v - stats.mean[j]) / stats.std[j] : 0.0;
    }
    return out;
}

void apply_norm(Dataset& ds, const NormStats& stats) {
    for (auto& r : ds.records) r.env = normalize_env(r.env, stats);
}

nlohmann::json to_json(const NormStats& s) {
    return {{"kept", s.kept}, {"mean", s.mean},       {"std", s.std},
            {"dropped", s.dropped}, {"imputed", s.imputed}, {"n_input", s.n_input}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
    NormStats s;
    s.kept = j.at("kept").get<std::vector<std::size_t>>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std = j.at("std").get<std::vector<double>>();
    s.dropped = j.at("dropped").get<std::vector<std::size_t>>();
    s.imputed = j.at("imputed").get<std::vector<std::size_t>>();
    s.n_input = j.at("n_input").get<std::size_t>();
    return s;
}

}  // namespace ciso::data
