#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ciso/dataio/dataset.hpp"
#include "json.hpp"

namespace ciso::synth {

// Generative community model. Species c is present with probability
//   sigmoid(theta_c . env + bias_c + sum_j W[c][j] 1[j present] + eps),
// eps ~ N(0, noise^2), sampled in topological order of the graph j -> c
// (W[c][j] != 0).
struct SynthSpec {
    std::size_t n_species = 10;
    std::size_t n_env = 5;
    std::size_t n_locations = 5000;
    std::vector<std::vector<double>> theta;  // [C][E]
    std::vector<double> bias;                // [C]
    std::vector<std::vector<double>> W;      // [C][C]
    double noise = 0.0;
    bool rates = false;          // present cells get Beta(a, b) encounter rates
    double rate_alpha = 2.0;
    double rate_beta = 2.0;
    double missingness = 0.0;    // per-cell probability of unavailability
    double block_deg = 1.0;      // spatial block size for the split
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<std::size_t>> groups;

    // Throws std::invalid_argument for bad sizes, non-finite weights, or a cycle.
    void validate() const;
    // Topological order of the interaction graph.
    std::vector<std::size_t> order() const;
};

nlohmann::json to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

// Roots are the first half of the roster, children the second half. Child
// i has parents (i - h) and (i - h + 1) mod h with weights of magnitude
// U[strength, strength + 2] and random sign (strength 0 -> W = 0). Groups
// "roots" and "children" are defined.
SynthSpec planted_spec(std::size_t n_species, std::size_t n_env, std::size_t n_locations, double strength,
                       std::uint64_t seed);

// Locations in [30,50] x [-120,-70] degrees, env ~ U[-1,1]^E, split by
// spatial blocks.
data::Dataset generate(const SynthSpec& spec);

// Exact P(c present | env, revealed) by enumeration of all 2^C joint states.
// revealed[c]: nullopt = unknown. Throws when C > 12.
std::vector<double> bayes_conditional(const SynthSpec& spec, std::span<const double> env,
                                      std::span<const std::optional<bool>> revealed);

// Presence probability marginalized over the noise term.
double noisy_sigmoid(double a, double noise);

struct OracleReport {
    std::size_t locations = 0;
    double marginal_mae = 0.0;     // over target cells, nothing revealed
    double conditional_mae = 0.0;  // target cells, condition species revealed
};

// Oracle MAE on a split, scoring `targets` and revealing `condition` (true
// presence = target > 0). Unavailable cells are neither revealed nor scored.
OracleReport oracle_mae(const SynthSpec& spec, const data::Dataset& ds, data::Split split,
                        std::span<const std::uint8_t> condition, std::span<const std::uint8_t> targets);

}  // namespace ciso::synth
