#include "ciso/metrics/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ciso::metrics {

void CellGrid::validate() const {
    const std::size_t n = rows * cols;
    if (pred.size() != n || truth.size() != n || scored.size() != n) {
        throw std::invalid_argument("cell grid buffers do not match " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
    }
}

std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (auto l : labels) n_pos += l ? 1 : 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]]) pos_rank_sum += midrank;
        }
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

MacroAuc macro_auc(const CellGrid& g) {
    g.validate();
    MacroAuc out;
    out.per_species.resize(g.cols);
    double total = 0.0;
    std::size_t counted = 0;
    std::vector<double> s;
    std::vector<std::uint8_t> l;
    for (std::size_t c = 0; c < g.cols; ++c) {
        s.clear();
        l.clear();
        bool any = false;
        for (std::size_t r = 0; r < g.rows; ++r) {
            const std::size_t i = r * g.cols + c;
            if (!g.scored[i]) continue;
            any = true;
            s.push_back(g.pred[i]);
            l.push_back(g.truth[i] > 0.0);
        }
        if (!any) continue;
        out.per_species[c] = auc(s, l);
        if (out.per_species[c]) {
            total += *out.per_species[c];
            ++counted;
        } else {
            ++out.skipped;
        }
    }
    if (counted == 0) throw std::invalid_argument("macro AUC: no species with both presences and absences");
    out.value = total / static_cast<double>(counted);
    return out;
}

namespace {

template <typename F>
double cell_mean(const CellGrid& g, F f, const char* what) {
    g.validate();
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < g.scored.size(); ++i) {
        if (!g.scored[i]) continue;
        s += f(g.pred[i] - g.truth[i]);
        ++n;
    }
    if (n == 0) throw std::invalid_argument(std::string(what) + ": no scored cells");
    return s / static_cast<double>(n);
}

// Columns of scored cells in row r ordered by descending prediction, ties by column.
std::vector<std::size_t> ranked_columns(const CellGrid& g, std::size_t r) {
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < g.cols; ++c) {
        if (g.scored[r * g.cols + c]) cols.push_back(c);
    }
    std::stable_sort(cols.begin(), cols.end(), [&](std::size_t a, std::size_t b) {
        return g.pred[r * g.cols + a] > g.pred[r * g.cols + b];
    });
    return cols;
}

}  // namespace

double mae(const CellGrid& g) {
    return cell_mean(g, [](double d) { return d < 0 ? -d : d; }, "mae");
}

double mse(const CellGrid& g) {
    return cell_mean(g, [](double d) { return d * d; }, "mse");
}

TopK topk_adaptive(const CellGrid& g) {
    g.validate();
    TopK out;
    double total = 0.0;
    for (std::size_t r = 0; r < g.rows; ++r) {
        std::size_t k = 0;
        for (std::size_t c = 0; c < g.cols; ++c) {
            const std::size_t i = r * g.cols + c;
            k += g.scored[i] && g.truth[i] > 0.0;
        }
        if (k == 0) {
            ++out.skipped_locations;
            continue;
        }
        const auto ranked = ranked_columns(g, r);
        std::size_t hits = 0;
        for (std::size_t j = 0; j < k; ++j) hits += g.truth[r * g.cols + ranked[j]] > 0.0;
        total += static_cast<double>(hits) / static_cast<double>(k);
        ++out.scored_locations;
    }
    out.percent = out.scored_locations ? 100.0 * total / static_cast<double>(out.scored_locations) : 0.0;
    return out;
}

TopK topn_fixed(const CellGrid& g, std::size_t n) {
    g.validate();
    std::size_t n_targets = 0;
    for (std::size_t c = 0; c < g.cols; ++c) {
        for (std::size_t r = 0; r < g.rows; ++r) {
            if (g.scored[r * g.cols + c]) {
                ++n_targets;
                break;
            }
        }
    }
    if (n == 0 || n > n_targets) {
        throw std::invalid_argument("top-" + std::to_string(n) + " needs at least that many target species, have " +
                                    std::to_string(n_targets));
    }
    TopK out;
    double total = 0.0;
    for (std::size_t r = 0; r < g.rows; ++r) {
        std::size_t positives = 0;
        for (std::size_t c = 0; c < g.cols; ++c) {
            const std::size_t i = r * g.cols + c;
            positives += g.scored[i] && g.truth[i] > 0.0;
        }
        if (positives == 0) {
            ++out.skipped_locations;
            continue;
        }
        const auto ranked = ranked_columns(g, r);
        std::size_t hits = 0;
        for (std::size_t j = 0; j < std::min(n, ranked.size()); ++j) hits += g.truth[r * g.cols + ranked[j]] > 0.0;
        total += static_cast<double>(hits) / static_cast<double>(std::min(n, positives));
        ++out.scored_locations;
    }
    out.percent = out.scored_locations ? 100.0 * total / static_cast<double>(out.scored_locations) : 0.0;
    return out;
}

EvalReport build_report(const CellGrid& g, const std::vector<std::string>& species, bool binary) {
    g.validate();
    if (species.size() != g.cols) throw std::invalid_argument("species names do not match grid columns");
    EvalReport rep;
    rep.binary = binary;
    std::vector<std::uint8_t> row_used(g.rows, 0);
    for (std::size_t c = 0; c < g.cols; ++c) {
        SpeciesRow row;
        row.name = species[c];
        double abs_sum = 0.0, sq_sum = 0.0;
        for (std::size_t r = 0; r < g.rows; ++r) {
            const std::size_t i = r * g.cols + c;
            if (!g.scored[i]) continue;
            row_used[r] = 1;
            ++row.cells;
            row.positives += g.truth[i] > 0.0;
            const double d = g.pred[i] - g.truth[i];
            abs_sum += std::abs(d);
            sq_sum += d * d;
        }
        if (row.cells == 0) continue;
        row.mae = abs_sum / static_cast<double>(row.cells);
        row.mse = sq_sum / static_cast<double>(row.cells);
        rep.cells += row.cells;
        rep.species.push_back(std::move(row));
    }
    rep.locations = static_cast<std::size_t>(std::count(row_used.begin(), row_used.end(), 1));
    rep.mae_x100 = 100.0 * mae(g);
    rep.mse_x100 = 100.0 * mse(g);
    if (binary) {
        const auto m = macro_auc(g);
        rep.auc_pct = 100.0 * m.value;
        rep.skipped_species = m.skipped;
        std::size_t k = 0;
        for (std::size_t c = 0; c < g.cols; ++c) {
            if (k < rep.species.size() && rep.species[k].name == species[c]) rep.species[k++].auc = m.per_species[c];
        }
    } else {
        const auto tk = topk_adaptive(g);
        rep.topk_pct = tk.percent;
        rep.skipped_locations = tk.skipped_locations;
        if (rep.species.size() >= 10) rep.top10_pct = topn_fixed(g, 10).percent;
        if (rep.species.size() >= 30) rep.top30_pct = topn_fixed(g, 30).percent;
    }
    return rep;
}

nlohmann::json to_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json species = nlohmann::json::array();
    for (const auto& s : r.species) {
        species.push_back({{"name", s.name}, {"cells", s.cells}, {"positives", s.positives},
                           {"auc", opt(s.auc)}, {"mae", s.mae}, {"mse", s.mse}});
    }
    return {{"protocol", r.protocol},
            {"conditioned", r.conditioned},
            {"binary", r.binary},
            {"locations", r.locations},
            {"cells", r.cells},
            {"aggregates",
             {{"auc_pct", opt(r.auc_pct)},
              {"mae_x100", r.mae_x100},
              {"mse_x100", r.mse_x100},
              {"topk_pct", opt(r.topk_pct)},
              {"top10_pct", opt(r.top10_pct)},
              {"top30_pct", opt(r.top30_pct)}}},
            {"skipped_species", r.skipped_species},
            {"skipped_locations", r.skipped_locations},
            {"species", species}};
}

std::string format_table(const std::vector<EvalReport>& reports) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-28s %-13s %9s %10s %10s %9s %9s %9s\n", "protocol", "inference", "AUC(%)",
                  "MAE[x1e2]", "MSE[x1e2]", "Top-k(%)", "Top-10", "Top-30");
    os << line;
    auto cell = [](const std::optional<double>& v) {
        char buf[32];
        if (v) {
            std::snprintf(buf, sizeof buf, "%.2f", *v);
        } else {
            std::snprintf(buf, sizeof buf, "-");
        }
        return std::string(buf);
    };
    for (const auto& r : reports) {
        std::snprintf(line, sizeof line, "%-28s %-13s %9s %10.2f %10.2f %9s %9s %9s\n", r.protocol.c_str(),
                      r.conditioned ? "conditioned" : "unconditioned", cell(r.auc_pct).c_str(), r.mae_x100,
                      r.mse_x100, cell(r.topk_pct).c_str(), cell(r.top10_pct).c_str(), cell(r.top30_pct).c_str());
        os << line;
    }
    return os.str();
}

}  // namespace ciso::metrics
