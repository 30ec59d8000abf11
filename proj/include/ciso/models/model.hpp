#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ciso/encoding/encoding.hpp"
#include "ciso/features/maxent.hpp"
#include "ciso/numerics/adamw.hpp"
#include "ciso/numerics/tensor.hpp"
#include "json.hpp"

namespace ciso::model {

enum class Family { Linear, Maxent, Mlp, MlpPP, Ciso };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct ModelSpec {
    Family family = Family::Ciso;
    std::size_t n_species = 0;
    std::size_t n_env = 0;
    std::size_t hidden_dim = 256;
    // Linear layers of the MLP including its output layer (3 = two hidden).
    // Deeper variants use 2 * hidden_dim for every hidden layer.
    std::size_t mlp_depth = 3;
    std::size_t transformer_layers = 3;
    std::size_t heads = 4;
    std::size_t ff_dim = 0;  // 0 -> 11 * hidden_dim
    int n_b = 4;
    enc::EncodingMode encoding = enc::EncodingMode::Discrete;
    double dropout = 0.1;

    bool uses_states() const { return family == Family::MlpPP || family == Family::Ciso; }
    std::size_t feed_forward_dim() const { return ff_dim ? ff_dim : 11 * hidden_dim; }
    std::vector<std::size_t> mlp_hidden_widths() const;
    // Throws std::invalid_argument on an inconsistent spec.
    void validate() const;
};

nlohmann::json to_json(const ModelSpec& s);
ModelSpec spec_from_json(const nlohmann::json& j);

// MLP++ state input: per species a one-hot of width n_b + 2 over
// [unknown, absent, bin 1 .. bin n_b]. Returns [batch, n_species * (n_b + 2)].
num::Tensor onehot_states(std::span<const enc::StateAssignment> states, std::size_t batch, std::size_t n_species,
                          int n_b);

struct ForwardOptions {
    bool train = false;               // enables dropout
    std::mt19937_64* rng = nullptr;   // required when train && dropout > 0
    std::vector<num::Tensor>* attention = nullptr;  // receives [B*heads, L, L] per block
};

class Model {
public:
    // `maxent` is required for Family::Maxent and must match n_env.
    Model(ModelSpec spec, std::uint64_t seed, std::optional<features::MaxentConfig> maxent = std::nullopt);

    const ModelSpec& spec() const { return spec_; }
    const std::optional<features::MaxentConfig>& maxent() const { return maxent_; }
    std::size_t input_dim() const;

    // env: [B, n_env] normalized predictors. states: B * n_species entries,
    // row-major (ignored by state-free families, may be empty for them).
    // Returns probabilities [B, n_species].
    num::Tensor forward(const num::Tensor& env, std::span<const enc::StateAssignment> states,
                        const ForwardOptions& opt = {}) const;

    num::NamedParams parameters() const;
    std::size_t parameter_count() const;

    // Parameter values only; names must match this model's registry.
    nlohmann::json parameters_json() const;
    void load_parameters(const nlohmann::json& j);

private:
    struct Dense {
        num::Tensor w;  // [in, out]
        num::Tensor b;  // [out]
    };
    struct Block {
        num::Tensor ln1_g, ln1_b, ln2_g, ln2_b;
        Dense q, k, v, o, ff1, ff2;
    };

    Dense dense(std::size_t in, std::size_t out, std::mt19937_64& rng);
    num::Tensor apply(const Dense& d, const num::Tensor& x) const;
    num::Tensor trunk(const num::Tensor& x, std::size_t layers) const;
    num::Tensor ciso_forward(const num::Tensor& env, std::span<const enc::StateAssignment> states,
                             const ForwardOptions& opt) const;
    num::Tensor block_forward(const Block& blk, const num::Tensor& x, std::size_t batch, std::size_t len,
                              const ForwardOptions& opt) const;

    ModelSpec spec_;
    std::optional<features::MaxentConfig> maxent_;
    std::vector<Dense> mlp_;  // linear/maxent: one layer; mlp/mlp++: full stack; ciso: trunk only
    num::Tensor species_;     // ciso [C, d]
    std::optional<enc::StateEncoder> states_;
    std::vector<Block> blocks_;
    num::Tensor final_g_, final_b_;
    num::Tensor readout_w_;  // [C, d]
    num::Tensor readout_b_;  // [C]
};

// Full checkpoint: spec, parameters, normalization stats, Maxent config,
// roster. Written with a fixed key order so identical models give identical
// bytes.
struct Checkpoint {
    ModelSpec spec;
    std::vector<std::string> species;
    nlohmann::json norm_stats;  // dataio NormStats JSON
    std::uint64_t seed = 0;
    nlohmann::json extra = nlohmann::json::object();
};

inline constexpr int kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& m, const Checkpoint& meta);
void save_checkpoint(const std::string& path, const Model& m, const Checkpoint& meta);
// Throws std::runtime_error on a version mismatch or malformed file.
std::pair<Model, Checkpoint> load_checkpoint(const std::string& path);
std::pair<Model, Checkpoint> parse_checkpoint(const std::string& text);

}  // namespace ciso::model
