#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "ciso/metrics/metrics.hpp"

using namespace ciso::metrics;

namespace {

double pair_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!l[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (l[j]) continue;
            den += 1.0;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return num / den;
}

struct Instance {
    std::size_t rows, cols;
    std::vector<double> pred, truth;
    std::vector<std::uint8_t> scored;
    CellGrid grid() const { return {rows, cols, pred, truth, scored}; }
};

Instance random_instance(std::mt19937_64& rng, std::size_t rows, std::size_t cols, bool binary) {
    Instance in{rows, cols, {}, {}, {}};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> coarse(0, 4);  // coarse scores produce ties
    for (std::size_t i = 0; i < rows * cols; ++i) {
        in.pred.push_back(coarse(rng) < 2 ? coarse(rng) / 4.0 : u(rng));
        const double t = u(rng);
        in.truth.push_back(binary ? (t < 0.4 ? 1.0 : 0.0) : (t < 0.5 ? 0.0 : u(rng)));
        in.scored.push_back(u(rng) < 0.85);
    }
    return in;
}

// Best achievable hits over every k-subset is not what we want; instead
// enumerate all k-subsets and pick the one the ranking rule selects:
// maximal prediction sum with ties resolved lexicographically by column.
double enum_topn(const Instance& in, std::size_t r, std::size_t n, std::size_t norm) {
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < in.cols; ++c)
        if (in.scored[r * in.cols + c]) cols.push_back(c);
    const std::size_t m = cols.size(), k = std::min(n, m);
    std::vector<std::size_t> best;
    std::vector<double> best_key;
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
        std::vector<std::size_t> sel;
        for (std::size_t i = 0; i < m; ++i)
            if (mask >> i & 1u) sel.push_back(cols[i]);
        // sorted predictions descending, then negated columns: larger key wins
        std::vector<std::pair<double, double>> key;
        for (auto c : sel) key.push_back({in.pred[r * in.cols + c], -static_cast<double>(c)});
        std::sort(key.rbegin(), key.rend());
        std::vector<double> flat;
        for (auto& [p, c] : key) flat.push_back(p);
        for (auto& [p, c] : key) flat.push_back(c);
        // a valid top-k set contains every column strictly above its minimum
        bool valid = true;
        const auto minp = key.empty() ? 0.0 : key.back().first;
        for (auto c : cols) {
            const bool in_sel = std::find(sel.begin(), sel.end(), c) != sel.end();
            if (!in_sel && in.pred[r * in.cols + c] > minp) valid = false;
        }
        if (!valid) continue;
        // among valid sets prefer lower columns at the tie level
        std::vector<double> neg(sel.begin(), sel.end());
        for (double& v : neg) v = -v;
        if (best.empty() || neg > best_key) {
            best = sel;
            best_key = neg;
        }
    }
    std::size_t hits = 0;
    for (auto c : best) hits += in.truth[r * in.cols + c] > 0.0;
    return static_cast<double>(hits) / static_cast<double>(norm);
}

}  // namespace

TEST_CASE("auc: trivial cases") {
    std::vector<std::uint8_t> l{0, 0, 1, 1};
    CHECK(*auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, l) == 1.0);
    CHECK(*auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, l) == 0.0);
    CHECK(*auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, l) == 0.5);
    CHECK_FALSE(auc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}).has_value());
}

TEST_CASE("auc: pair-counting oracle and rank invariance") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> s;
        std::vector<std::uint8_t> l;
        for (int i = 0; i < 50; ++i) {
            s.push_back(u(rng) < 0.3 ? std::floor(u(rng) * 5) / 5 : u(rng));
            l.push_back(u(rng) < 0.4);
        }
        l[0] = 1;
        l[1] = 0;
        const double a = *auc(s, l);
        CHECK(std::abs(a - pair_auc(s, l)) <= 1e-12);
        std::vector<double> tr;
        for (double v : s) tr.push_back(std::exp(3.0 * v) - 7.0);
        CHECK(std::abs(*auc(tr, l) - a) <= 1e-12);
    }
}

TEST_CASE("macro auc skips degenerate species") {
    Instance in{3, 2, {0.9, 0.1, 0.2, 0.2, 0.8, 0.3}, {1, 0, 0, 0, 1, 0}, {1, 1, 1, 1, 1, 1}};
    auto m = macro_auc(in.grid());
    CHECK(m.value == 1.0);
    CHECK(m.skipped == 1);
    CHECK_FALSE(m.per_species[1].has_value());
}

TEST_CASE("mae / mse") {
    Instance in{2, 2, {0.1, 0.5, 0.7, 0.3}, {0.1, 0.5, 0.7, 0.3}, {1, 1, 1, 1}};
    CHECK(mae(in.grid()) == 0.0);
    for (double& p : in.pred) p += 0.1;
    CHECK(mae(in.grid()) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(mse(in.grid()) == doctest::Approx(0.01).epsilon(1e-12));
    std::fill(in.scored.begin(), in.scored.end(), 0);
    CHECK_THROWS(mae(in.grid()));
    CHECK_THROWS(mse(in.grid()));

    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
        auto r = random_instance(rng, 7, 5, false);
        r.scored[0] = 1;
        double sa = 0, ss = 0;
        int n = 0;
        for (std::size_t i = 0; i < r.pred.size(); ++i) {
            if (!r.scored[i]) continue;
            sa += std::fabs(r.pred[i] - r.truth[i]);
            ss += (r.pred[i] - r.truth[i]) * (r.pred[i] - r.truth[i]);
            ++n;
        }
        const double a = mae(r.grid()), s = mse(r.grid());
        CHECK(std::abs(a - sa / n) <= 1e-12);
        CHECK(std::abs(s - ss / n) <= 1e-12);
        CHECK(s >= a * a - 1e-15);
    }
}

TEST_CASE("top-k: trivial cases") {
    Instance perfect{1, 4, {0.9, 0.0, 0.4, 0.0}, {0.9, 0.0, 0.4, 0.0}, {1, 1, 1, 1}};
    CHECK(topk_adaptive(perfect.grid()).percent == 100.0);
    Instance half{1, 4, {0.9, 0.8, 0.1, 0.0}, {0.5, 0.0, 0.3, 0.0}, {1, 1, 1, 1}};
    CHECK(topk_adaptive(half.grid()).percent == 50.0);
    Instance empty{2, 2, {0.3, 0.2, 0.1, 0.4}, {0, 0, 0.2, 0}, {1, 1, 1, 1}};
    auto tk = topk_adaptive(empty.grid());
    CHECK(tk.skipped_locations == 1);
    CHECK(tk.scored_locations == 1);
    CHECK(tk.percent == 0.0);
    // ties go to the lower column
    Instance tie{1, 3, {0.5, 0.5, 0.5}, {0.0, 0.7, 0.0}, {1, 1, 1}};
    CHECK(topk_adaptive(tie.grid()).percent == 0.0);
    Instance tie2{1, 3, {0.5, 0.5, 0.5}, {0.7, 0.0, 0.0}, {1, 1, 1}};
    CHECK(topk_adaptive(tie2.grid()).percent == 100.0);
}

TEST_CASE("top-k and top-n vs exhaustive enumeration") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        auto in = random_instance(rng, 6, 10, false);
        double total = 0.0, total_n = 0.0;
        std::size_t used = 0;
        for (std::size_t r = 0; r < in.rows; ++r) {
            std::size_t k = 0;
            for (std::size_t c = 0; c < in.cols; ++c) k += in.scored[r * in.cols + c] && in.truth[r * in.cols + c] > 0;
            if (k == 0) continue;
            total += enum_topn(in, r, k, k);
            total_n += enum_topn(in, r, 3, std::min<std::size_t>(3, k));
            ++used;
        }
        auto got = topk_adaptive(in.grid());
        CHECK(got.scored_locations == used);
        if (used == 0) continue;
        CHECK(std::abs(got.percent - 100.0 * total / used) <= 1e-12);
        CHECK(std::abs(topn_fixed(in.grid(), 3).percent - 100.0 * total_n / used) <= 1e-12);
        // shifting every prediction leaves the metric unchanged
        auto shifted = in;
        for (double& p : shifted.pred) p += 0.25;
        CHECK(topk_adaptive(shifted.grid()).percent == got.percent);
    }
}

TEST_CASE("top-n: trivial cases and errors") {
    Instance in{1, 12, {}, {}, std::vector<std::uint8_t>(12, 1)};
    for (int c = 0; c < 12; ++c) {
        in.truth.push_back(c < 3 ? 0.5 : 0.0);
        in.pred.push_back(c < 3 ? 0.9 : 0.1);
    }
    CHECK(topn_fixed(in.grid(), 10).percent == 100.0);
    for (int c = 0; c < 12; ++c) in.pred[c] = c < 3 ? 0.0 : 0.5;
    CHECK(topn_fixed(in.grid(), 3).percent == 0.0);
    CHECK_THROWS(topn_fixed(in.grid(), 30));
}

TEST_CASE("report aggregates and JSON") {
    std::mt19937_64 rng(4);
    auto in = random_instance(rng, 40, 12, false);
    std::vector<std::string> names;
    for (int c = 0; c < 12; ++c) names.push_back("sp" + std::to_string(c));
    auto rep = build_report(in.grid(), names, false);
    CHECK(rep.topk_pct.has_value());
    CHECK(rep.top10_pct.has_value());
    CHECK_FALSE(rep.top30_pct.has_value());
    CHECK_FALSE(rep.auc_pct.has_value());
    double cells = 0, abs_sum = 0;
    for (const auto& s : rep.species) {
        cells += s.cells;
        abs_sum += s.mae * s.cells;
    }
    CHECK(rep.mae_x100 == doctest::Approx(100.0 * abs_sum / cells).epsilon(1e-12));
    auto j = to_json(rep);
    CHECK(j["aggregates"]["top30_pct"].is_null());
    CHECK(j["species"].size() == rep.species.size());

    auto bin = random_instance(rng, 40, 5, true);
    auto brep = build_report(bin.grid(), {"a", "b", "c", "d", "e"}, true);
    REQUIRE(brep.auc_pct.has_value());
    CHECK(*brep.auc_pct >= 0.0);
    CHECK(*brep.auc_pct <= 100.0);
    const auto table = format_table({rep, brep});
    CHECK(table.find("MAE") != std::string::npos);
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}
