#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace ciso::metrics {

// Row-major [rows x cols] prediction/truth grid; `scored` marks the cells that
// take part (available target of a scored species).
struct CellGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::span<const double> pred;
    std::span<const double> truth;
    std::span<const std::uint8_t> scored;

    void validate() const;
};

// Mann-Whitney AUC with midranks for ties. nullopt when the labels lack a
// positive or a negative.
std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MacroAuc {
    double value = 0.0;  // mean over qualifying species, in [0,1]
    std::vector<std::optional<double>> per_species;
    std::size_t skipped = 0;
};
// Per-column AUC over scored cells with label truth > 0.
MacroAuc macro_auc(const CellGrid& g);

// Mean over scored cells. Throws std::invalid_argument on an empty cell set.
double mae(const CellGrid& g);
double mse(const CellGrid& g);

struct TopK {
    double percent = 0.0;
    std::size_t scored_locations = 0;
    std::size_t skipped_locations = 0;
};

// Per location k = #{scored cells with truth > 0}; the k highest predictions
// (ties to the lower column) are compared with the positives.
TopK topk_adaptive(const CellGrid& g);
// Fixed n; hits normalized by min(n, #positives). Throws if n exceeds the
// number of scored species.
TopK topn_fixed(const CellGrid& g, std::size_t n);

struct SpeciesRow {
    std::string name;
    std::size_t cells = 0;
    std::size_t positives = 0;
    std::optional<double> auc;
    double mae = 0.0;
    double mse = 0.0;
};

struct EvalReport {
    std::string protocol;
    bool conditioned = false;
    bool binary = false;
    std::vector<SpeciesRow> species;
    std::size_t locations = 0;
    std::size_t cells = 0;
    std::optional<double> auc_pct;
    double mae_x100 = 0.0;
    double mse_x100 = 0.0;
    std::optional<double> topk_pct;
    std::optional<double> top10_pct;
    std::optional<double> top30_pct;
    std::size_t skipped_species = 0;
    std::size_t skipped_locations = 0;
};

// Fills per-species rows and aggregates for the given grid.
EvalReport build_report(const CellGrid& g, const std::vector<std::string>& species, bool binary);

nlohmann::json to_json(const EvalReport& r);
// Fixed-width table in the layout of the paper-style results tables.
std::string format_table(const std::vector<EvalReport>& reports);

}  // namespace ciso::metrics
