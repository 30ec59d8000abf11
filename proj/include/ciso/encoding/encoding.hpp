#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ciso/numerics/adamw.hpp"
#include "ciso/numerics/tensor.hpp"

namespace ciso::enc {

enum class EncodingMode { Discrete, Linear, Periodic };

std::string to_string(EncodingMode m);
EncodingMode encoding_from_string(const std::string& s);

enum class StateTag : std::uint8_t { Unknown, Absent, Present };

// Revealed status of one species at one location. `bin` is meaningful for
// Present in discrete mode (1..n_b); `value` carries the raw rate.
struct StateAssignment {
    StateTag tag = StateTag::Unknown;
    int bin = 0;
    double value = 0.0;

    static StateAssignment unknown() { return {}; }
    bool operator==(const StateAssignment&) const = default;
};

// r == 0 -> Absent; r > 0 -> Present(ceil(r * n_b)). Throws for r outside
// [0,1] or n_b < 1.
StateAssignment bin_rate(double r, int n_b);

// Index into the (n_b + 2)-entry state vocabulary:
// 0 unknown, 1 absent, 1 + b for Present(b).
std::size_t state_index(const StateAssignment& s);

// Learned state vectors shared across species.
//   discrete:  table rows [u, a, p_1 .. p_{n_b}]
//   linear:    rows [u, a] plus r -> W r + b0
//   periodic:  rows [u, a] plus r -> Lin(concat(sin(2 pi f r), cos(2 pi f r)))
class StateEncoder {
public:
    StateEncoder(EncodingMode mode, int n_b, std::size_t dim, std::mt19937_64& rng);

    EncodingMode mode() const { return mode_; }
    int n_bins() const { return n_b_; }
    std::size_t dim() const { return dim_; }

    // One row of width dim per assignment.
    num::Tensor encode(std::span<const StateAssignment> states) const;

    num::NamedParams parameters(const std::string& prefix) const;
    std::size_t parameter_count() const;

private:
    EncodingMode mode_;
    int n_b_;
    std::size_t dim_;
    num::Tensor table_;
    num::Tensor proj_w_;     // linear: [1,d]; periodic: [d,d]
    num::Tensor proj_b_;     // [d]
    num::Tensor frequency_;  // periodic: [1, d/2]
};

// t_c = s_c + e_c. species [C,d]; states [B*C,d] -> tokens [B,C,d].
num::Tensor species_tokens(const num::Tensor& species, const num::Tensor& states, std::size_t batch);

// i.i.d. N(0, 1/d) initialization used for embedding tables.
num::Tensor embedding_table(std::size_t rows, std::size_t dim, std::mt19937_64& rng);

}  // namespace ciso::enc
