#include <algorithm>

#include "ciso/dataio/dataset.hpp"

namespace ciso::data {

namespace {

std::size_t lcs_length(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double name_similarity(const std::string& a, const std::string& b) {
    const std::size_t total = a.size() + b.size();
    if (total == 0) return 100.0;
    const std::size_t indel = total - 2 * lcs_length(a, b);
    return 100.0 * static_cast<double>(total - indel) / static_cast<double>(total);
}

std::vector<MergeProposal> fuzzy_merge_species(const std::vector<std::string>& roster, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 100.0)) {
        throw std::invalid_argument("fuzzy threshold must be in [0,100]");
    }
    std::vector<MergeProposal> out;
    for (std::size_t i = 0; i < roster.size(); ++i) {
        for (std::size_t j = i + 1; j < roster.size(); ++j) {
            const auto& a = roster[i];
            const auto& b = roster[j];
            // LCS <= min length bounds the attainable score.
            const double bound = 200.0 * static_cast<double>(std::min(a.size(), b.size())) /
                                 static_cast<double>(std::max<std::size_t>(a.size() + b.size(), 1));
            if (bound <= threshold) continue;
            const double score = name_similarity(a, b);
            if (score > threshold) out.push_back({a, b, score});
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.score > y.score; });
    return out;
}

Dataset merge_targets(const Dataset& ds, const std::vector<std::pair<std::string, std::string>>& approved) {
    Dataset cur = ds;
    for (const auto& [keep_name, absorb_name] : approved) {
        std::size_t keep = 0, absorb = 0;
        try {
            keep = cur.species_index(keep_name);
            absorb = cur.species_index(absorb_name);
        } catch (const std::out_of_range& e) {
            throw std::invalid_argument(std::string("merge pair (") + keep_name + ", " + absorb_name +
                                        "): " + e.what());
        }
        if (keep == absorb) throw std::invalid_argument("merge pair names the same species twice: " + keep_name);

        for (auto& r : cur.records) {
            if (r.available[absorb]) {
                r.targets[keep] = r.available[keep] ? std::max(r.targets[keep], r.targets[absorb]) : r.targets[absorb];
                r.available[keep] = 1;
            }
            r.targets.erase(r.targets.begin() + static_cast<std::ptrdiff_t>(absorb));
            r.available.erase(r.available.begin() + static_cast<std::ptrdiff_t>(absorb));
        }
        for (auto& [name, mask] : cur.group_masks) {
            (void)name;
            mask[keep] = mask[keep] || mask[absorb];
            mask.erase(mask.begin() + static_cast<std::ptrdiff_t>(absorb));
        }
        cur.species.erase(cur.species.begin() + static_cast<std::ptrdiff_t>(absorb));
    }
    return cur;
}

}  // namespace ciso::data
