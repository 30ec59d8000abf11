#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace ciso::data {

enum class Split : std::uint8_t { Train, Val, Test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct LocationRecord {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
    std::vector<double> env;               // NaN marks a missing value before normalization
    std::vector<double> targets;           // meaningful only where available
    std::vector<std::uint8_t> available;   // one flag per roster species
};

struct Dataset {
    std::vector<std::string> species;
    std::map<std::string, std::vector<std::uint8_t>> group_masks;
    std::vector<LocationRecord> records;
    std::vector<Split> split;  // empty until assigned

    std::size_t n_species() const { return species.size(); }
    std::size_t n_env() const { return records.empty() ? 0 : records.front().env.size(); }
    std::size_t species_index(const std::string& name) const;  // throws std::out_of_range
    std::vector<std::size_t> indices_of(Split s) const;
    // True when every available target is exactly 0 or 1.
    bool is_binary() const;
};

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RowError : public std::runtime_error {
public:
    RowError(const std::string& id, const std::string& what)
        : std::runtime_error("row '" + id + "': " + what), id_(id) {}
    const std::string& id() const { return id_; }

private:
    std::string id_;
};

// Sidecar configuration: optional roster order and named species groups.
struct SchemaConfig {
    std::vector<std::string> species;
    std::map<std::string, std::vector<std::string>> groups;
};

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t rejected_coordinates = 0;
    bool had_split_column = false;
};

SchemaConfig load_schema_config(const std::string& path);
void save_schema_config(const SchemaConfig& cfg, const std::string& path);
SchemaConfig schema_of(const Dataset& ds);

// CSV layout: id,lat,lon,env_0..env_{n-1},sp_<name>...[,split]
Dataset read_dataset(std::istream& in, const SchemaConfig& cfg, LoadReport* report = nullptr);
Dataset load_dataset(const std::string& path, const SchemaConfig& cfg, LoadReport* report = nullptr);
void write_dataset(const Dataset& ds, std::ostream& out);
void save_dataset(const Dataset& ds, const std::string& path);

// ---- species name reconciliation -------------------------------------------

// Normalized indel similarity in [0,100]:
//   100 * (|a| + |b| - indel(a,b)) / (|a| + |b|), indel = |a| + |b| - 2 LCS(a,b).
double name_similarity(const std::string& a, const std::string& b);

struct MergeProposal {
    std::string a;
    std::string b;
    double score = 0.0;
};

// Pairs scoring strictly above `threshold`, highest score first.
std::vector<MergeProposal> fuzzy_merge_species(const std::vector<std::string>& roster, double threshold);

// Each (keep, absorb) pair folds `absorb` into `keep`: values combine by max
// (logical OR for presence data), availability by OR.
Dataset merge_targets(const Dataset& ds, const std::vector<std::pair<std::string, std::string>>& approved);

// ---- filtering and splitting -----------------------------------------------

Dataset filter_min_presences(const Dataset& ds, std::size_t min_count);

struct SplitFractions {
    double train = 0.7;
    double val = 0.15;
    double test = 0.15;
};

struct SplitResult {
    std::vector<Split> tags;
    std::size_t n_blocks = 0;
    std::vector<std::string> warnings;
};

// Groups records into (floor(lat/deg), floor(lon/deg)) blocks, shuffles the
// blocks with `seed`, and hands each block to the split with the largest
// remaining record deficit. Fewer than three nonempty blocks is an error unless
// `allow_degenerate` is set, in which case the greedy result is returned with a
// warning.
SplitResult spatial_block_split(const std::vector<LocationRecord>& records, double block_deg,
                                SplitFractions fractions, std::uint64_t seed, bool allow_degenerate = false);

// ---- normalization -----------------------------------------------------------

struct NormStats {
    std::vector<std::size_t> kept;     // input variable indices retained, in order
    std::vector<double> mean;          // per kept variable
    std::vector<double> std;           // per kept variable, > 0
    std::vector<std::size_t> dropped;  // zero-variance or all-missing variables
    std::vector<std::size_t> imputed;  // missing cells filled with the train mean, per kept variable
    std::size_t n_input = 0;
};

NormStats fit_norm(const Dataset& ds);
// Replaces each record's env by the normalized kept variables.
void apply_norm(Dataset& ds, const NormStats& stats);
std::vector<double> normalize_env(const std::vector<double>& env, const NormStats& stats);

nlohmann::json to_json(const NormStats& s);
NormStats norm_stats_from_json(const nlohmann::json& j);
nlohmann::json split_to_json(const Dataset& ds);

}  // namespace ciso::data
