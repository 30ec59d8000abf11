#include "ciso/encoding/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ciso/numerics/ops.hpp"

namespace ciso::enc {

std::string to_string(EncodingMode m) {
    switch (m) {
        case EncodingMode::Discrete: return "discrete";
        case EncodingMode::Linear: return "linear";
        case EncodingMode::Periodic: return "periodic";
    }
    return "?";
}

EncodingMode encoding_from_string(const std::string& s) {
    if (s == "discrete" || s == "bins") return EncodingMode::Discrete;
    if (s == "linear") return EncodingMode::Linear;
    if (s == "periodic") return EncodingMode::Periodic;
    throw std::invalid_argument("unknown encoding mode '" + s + "'");
}

StateAssignment bin_rate(double r, int n_b) {
    if (n_b < 1) throw std::invalid_argument("n_b must be >= 1");
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("encounter rate " + std::to_string(r) + " outside [0,1]");
    if (r == 0.0) return {StateTag::Absent, 0, 0.0};
    const int bin = static_cast<int>(std::ceil(r * static_cast<double>(n_b)));
    return {StateTag::Present, std::clamp(bin, 1, n_b), r};
}

std::size_t state_index(const StateAssignment& s) {
    switch (s.tag) {
        case StateTag::Unknown: return 0;
        case StateTag::Absent: return 1;
        case StateTag::Present: return 1 + static_cast<std::size_t>(s.bin);
    }
    return 0;
}

num::Tensor embedding_table(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    num::Tensor t({rows, dim}, 0.0, true);
    for (double& v : t.values()) v = n(rng);
    return t;
}

StateEncoder::StateEncoder(EncodingMode mode, int n_b, std::size_t dim, std::mt19937_64& rng)
    : mode_(mode), n_b_(n_b), dim_(dim) {
    if (n_b < 1) throw std::invalid_argument("n_b must be >= 1");
    const std::size_t rows = mode == EncodingMode::Discrete ? static_cast<std::size_t>(n_b) + 2 : 2;
    table_ = embedding_table(rows, dim, rng);
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
    std::normal_distribution<double> n(0.0, sd);
    if (mode == EncodingMode::Linear) {
        proj_w_ = num::Tensor({1, dim}, 0.0, true);
        for (double& v : proj_w_.values()) v = n(rng);
        proj_b_ = num::Tensor({dim}, 0.0, true);
        for (double& v : proj_b_.values()) v = n(rng);
    } else if (mode == EncodingMode::Periodic) {
        if (dim % 2 != 0) throw std::invalid_argument("periodic encoding needs an even dimension");
        frequency_ = num::Tensor({1, dim / 2}, 0.0, true);
        std::uniform_real_distribution<double> u(0.0, std::log(4.0 * n_b));
        for (double& v : frequency_.values()) v = std::exp(u(rng));
        proj_w_ = num::Tensor({dim, dim}, 0.0, true);
        for (double& v : proj_w_.values()) v = n(rng);
        proj_b_ = num::Tensor({dim}, 0.0, true);
    }
}

num::Tensor StateEncoder::encode(std::span<const StateAssignment> states) const {
    std::vector<std::size_t> base(states.size());
    std::vector<std::size_t> value_rows;
    std::vector<double> values;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const auto& s = states[i];
        if (mode_ == EncodingMode::Discrete) {
            if (s.tag == StateTag::Present && (s.bin < 1 || s.bin > n_b_)) {
                throw std::invalid_argument("state bin " + std::to_string(s.bin) + " outside 1.." + std::to_string(n_b_));
            }
            base[i] = state_index(s);
        } else {
            base[i] = s.tag == StateTag::Absent ? 1 : 0;
            if (s.tag == StateTag::Present) {
                value_rows.push_back(i);
                values.push_back(s.value);
            }
        }
    }
    num::Tensor out = num::gather_rows(table_, base);
    if (value_rows.empty()) return out;

    num::Tensor r({value_rows.size(), 1}, values);
    num::Tensor projected;
    if (mode_ == EncodingMode::Linear) {
        projected = num::add(num::matmul(r, proj_w_), proj_b_);
    } else {
        num::Tensor phase = num::scale(num::matmul(r, frequency_), 2.0 * std::numbers::pi);
        num::Tensor feats = num::concat_last(num::sin(phase), num::cos(phase));
        projected = num::add(num::matmul(feats, proj_w_), proj_b_);
    }
    return num::replace_rows(out, value_rows, projected);
}

num::NamedParams StateEncoder::parameters(const std::string& prefix) const {
    num::NamedParams p{{prefix + ".table", table_}};
    if (mode_ == EncodingMode::Linear) {
        p.emplace_back(prefix + ".linear.w", proj_w_);
        p.emplace_back(prefix + ".linear.b", proj_b_);
    } else if (mode_ == EncodingMode::Periodic) {
        p.emplace_back(prefix + ".periodic.freq", frequency_);
        p.emplace_back(prefix + ".periodic.w", proj_w_);
        p.emplace_back(prefix + ".periodic.b", proj_b_);
    }
    return p;
}

std::size_t StateEncoder::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters("s")) n += t.size();
    return n;
}

num::Tensor species_tokens(const num::Tensor& species, const num::Tensor& states, std::size_t batch) {
    if (species.rank() != 2) throw num::DimensionError("species table must be [C,d]");
    const std::size_t C = species.dim(0), d = species.dim(1);
    if (states.size() != batch * C * d) {
        throw num::DimensionError("states " + num::shape_str(states.shape()) + " do not cover " +
                                  std::to_string(batch) + " x " + std::to_string(C) + " species");
    }
    return num::add(num::reshape(states, {batch, C, d}), species);
}

}  // namespace ciso::enc
