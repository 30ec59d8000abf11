#include "ciso/models/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ciso/numerics/ops.hpp"

namespace ciso::model {

using num::Tensor;

std::string to_string(Family f) {
    switch (f) {
        case Family::Linear: return "linear";
        case Family::Maxent: return "maxent";
        case Family::Mlp: return "mlp";
        case Family::MlpPP: return "mlp++";
        case Family::Ciso: return "ciso";
    }
    return "?";
}

Family family_from_string(const std::string& s) {
    if (s == "linear") return Family::Linear;
    if (s == "maxent") return Family::Maxent;
    if (s == "mlp") return Family::Mlp;
    if (s == "mlp++" || s == "mlppp") return Family::MlpPP;
    if (s == "ciso") return Family::Ciso;
    throw std::invalid_argument("unknown model family '" + s + "'");
}

std::vector<std::size_t> ModelSpec::mlp_hidden_widths() const {
    const std::size_t hidden = mlp_depth - 1;
    const std::size_t w = mlp_depth > 3 ? 2 * hidden_dim : hidden_dim;
    return std::vector<std::size_t>(hidden, w);
}

void ModelSpec::validate() const {
    if (n_species == 0) throw std::invalid_argument("model spec: n_species must be positive");
    if (n_env == 0) throw std::invalid_argument("model spec: n_env must be positive");
    if (hidden_dim == 0) throw std::invalid_argument("model spec: hidden_dim must be positive");
    if (n_b < 1) throw std::invalid_argument("model spec: n_b must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model spec: dropout must be in [0,1)");
    if ((family == Family::Mlp || family == Family::MlpPP || family == Family::Ciso) && mlp_depth < 2) {
        throw std::invalid_argument("model spec: mlp_depth must be >= 2");
    }
    if (family == Family::Ciso) {
        if (heads == 0 || hidden_dim % heads != 0) {
            throw std::invalid_argument("model spec: hidden_dim " + std::to_string(hidden_dim) +
                                        " not divisible by heads " + std::to_string(heads));
        }
        if (encoding == enc::EncodingMode::Periodic && hidden_dim % 2 != 0) {
            throw std::invalid_argument("model spec: periodic encoding needs an even hidden_dim");
        }
    }
}

nlohmann::json to_json(const ModelSpec& s) {
    return {{"family", to_string(s.family)},
            {"n_species", s.n_species},
            {"n_env", s.n_env},
            {"hidden_dim", s.hidden_dim},
            {"mlp_depth", s.mlp_depth},
            {"transformer_layers", s.transformer_layers},
            {"heads", s.heads},
            {"ff_dim", s.feed_forward_dim()},
            {"n_b", s.n_b},
            {"encoding", enc::to_string(s.encoding)},
            {"dropout", s.dropout}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.family = family_from_string(j.at("family").get<std::string>());
    s.n_species = j.at("n_species").get<std::size_t>();
    s.n_env = j.at("n_env").get<std::size_t>();
    s.hidden_dim = j.value("hidden_dim", s.hidden_dim);
    s.mlp_depth = j.value("mlp_depth", s.mlp_depth);
    s.transformer_layers = j.value("transformer_layers", s.transformer_layers);
    s.heads = j.value("heads", s.heads);
    s.ff_dim = j.value("ff_dim", std::size_t{0});
    s.n_b = j.value("n_b", s.n_b);
    s.encoding = enc::encoding_from_string(j.value("encoding", std::string("discrete")));
    s.dropout = j.value("dropout", s.dropout);
    s.validate();
    return s;
}

Model::Dense Model::dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Dense d{Tensor({in, out}, 0.0, true), Tensor({out}, 0.0, true)};
    for (double& v : d.w.values()) v = u(rng);
    for (double& v : d.b.values()) v = u(rng);
    return d;
}

Model::Model(ModelSpec spec, std::uint64_t seed, std::optional<features::MaxentConfig> maxent)
    : spec_(std::move(spec)), maxent_(std::move(maxent)) {
    spec_.validate();
    if (spec_.family == Family::Maxent) {
        if (!maxent_) throw std::invalid_argument("maxent model needs a fitted MaxentConfig");
        if (maxent_->n_input != spec_.n_env) throw std::invalid_argument("MaxentConfig does not match n_env");
    } else {
        maxent_.reset();
    }
    std::mt19937_64 rng(seed);
    const std::size_t C = spec_.n_species, d = spec_.hidden_dim;

    switch (spec_.family) {
        case Family::Linear:
        case Family::Maxent:
            mlp_.push_back(dense(input_dim(), C, rng));
            break;
        case Family::Mlp:
        case Family::MlpPP: {
            std::size_t in = input_dim();
            for (std::size_t w : spec_.mlp_hidden_widths()) {
                mlp_.push_back(dense(in, w, rng));
                in = w;
            }
            mlp_.push_back(dense(in, C, rng));
            break;
        }
        case Family::Ciso: {
            // environmental encoder: the MLP trunk ending in width d
            auto widths = spec_.mlp_hidden_widths();
            widths.back() = d;
            std::size_t in = spec_.n_env;
            for (std::size_t w : widths) {
                mlp_.push_back(dense(in, w, rng));
                in = w;
            }
            species_ = enc::embedding_table(C, d, rng);
            states_.emplace(spec_.encoding, spec_.n_b, d, rng);
            const std::size_t ff = spec_.feed_forward_dim();
            for (std::size_t l = 0; l < spec_.transformer_layers; ++l) {
                Block b;
                b.ln1_g = Tensor({d}, 1.0, true);
                b.ln1_b = Tensor({d}, 0.0, true);
                b.ln2_g = Tensor({d}, 1.0, true);
                b.ln2_b = Tensor({d}, 0.0, true);
                b.q = dense(d, d, rng);
                b.k = dense(d, d, rng);
                b.v = dense(d, d, rng);
                b.o = dense(d, d, rng);
                b.ff1 = dense(d, ff, rng);
                b.ff2 = dense(ff, d, rng);
                blocks_.push_back(std::move(b));
            }
            final_g_ = Tensor({d}, 1.0, true);
            final_b_ = Tensor({d}, 0.0, true);
            const Dense head = dense(d, C, rng);
            // stored per species as rows
            readout_w_ = Tensor({C, d}, 0.0, true);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t c = 0; c < C; ++c) readout_w_[c * d + i] = head.w[i * C + c];
            readout_b_ = head.b;
            break;
        }
    }
    for (auto& [name, t] : parameters()) t.set_name(name);
}

std::size_t Model::input_dim() const {
    switch (spec_.family) {
        case Family::Maxent: return features::feature_count(*maxent_);
        case Family::MlpPP: return spec_.n_env + spec_.n_species * static_cast<std::size_t>(spec_.n_b + 2);
        default: return spec_.n_env;
    }
}

Tensor Model::apply(const Dense& d, const Tensor& x) const { return num::add(num::matmul(x, d.w), d.b); }

Tensor Model::trunk(const Tensor& x, std::size_t layers) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers; ++i) h = num::relu(apply(mlp_[i], h));
    return h;
}

Tensor onehot_states(std::span<const enc::StateAssignment> states, std::size_t batch, std::size_t C, int n_b) {
    if (states.size() != batch * C) throw num::DimensionError("state count does not match batch x species");
    const std::size_t w = static_cast<std::size_t>(n_b + 2);
    Tensor out({batch, C * w}, 0.0);
    for (std::size_t i = 0; i < batch * C; ++i) {
        const auto& s = states[i];
        if (s.tag == enc::StateTag::Present && (s.bin < 1 || s.bin > n_b)) {
            throw std::invalid_argument("state bin " + std::to_string(s.bin) + " outside 1.." + std::to_string(n_b));
        }
        out[i * w + enc::state_index(s)] = 1.0;
    }
    return out;
}

Tensor Model::forward(const Tensor& env, std::span<const enc::StateAssignment> states,
                      const ForwardOptions& opt) const {
    if (env.rank() != 2 || env.dim(1) != spec_.n_env) {
        throw num::DimensionError("env batch " + num::shape_str(env.shape()) + " does not have " +
                                  std::to_string(spec_.n_env) + " columns");
    }
    const std::size_t B = env.dim(0);
    if (spec_.uses_states() && states.size() != B * spec_.n_species) {
        throw num::DimensionError("expected " + std::to_string(B * spec_.n_species) + " state entries, got " +
                                  std::to_string(states.size()));
    }
    if (opt.train && spec_.dropout > 0.0 && opt.rng == nullptr && spec_.family == Family::Ciso) {
        throw std::invalid_argument("training forward needs an rng for dropout");
    }
    switch (spec_.family) {
        case Family::Linear: return num::sigmoid(apply(mlp_[0], env));
        case Family::Maxent: {
            const std::size_t F = input_dim();
            Tensor x({B, F}, 0.0);
            for (std::size_t b = 0; b < B; ++b) {
                auto f = features::expand(env.values().subspan(b * spec_.n_env, spec_.n_env), *maxent_);
                std::copy(f.begin(), f.end(), x.values().begin() + static_cast<std::ptrdiff_t>(b * F));
            }
            return num::sigmoid(apply(mlp_[0], x));
        }
        case Family::Mlp:
        case Family::MlpPP: {
            Tensor x = spec_.family == Family::MlpPP ? num::concat_last(env, onehot_states(states, B, spec_.n_species, spec_.n_b)) : env;
            return num::sigmoid(apply(mlp_.back(), trunk(x, mlp_.size() - 1)));
        }
        case Family::Ciso: return ciso_forward(env, states, opt);
    }
    return {};
}

Tensor Model::block_forward(const Block& blk, const Tensor& x, std::size_t B, std::size_t L,
                            const ForwardOptions& opt) const {
    const std::size_t d = spec_.hidden_dim, H = spec_.heads, dh = d / H;
    const double p = opt.train ? spec_.dropout : 0.0;
    auto drop = [&](const Tensor& t) { return p > 0.0 ? num::dropout(t, p, *opt.rng) : t; };
    auto split = [&](const Tensor& t) {
        return num::reshape(num::swap_axes12(num::reshape(t, {B, L, H, dh})), {B * H, L, dh});
    };

    Tensor a = num::reshape(num::layer_norm(x, blk.ln1_g, blk.ln1_b), {B * L, d});
    Tensor q = split(apply(blk.q, a));
    Tensor k = split(apply(blk.k, a));
    Tensor v = split(apply(blk.v, a));
    Tensor att = num::softmax_rows(num::scale(num::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh))));
    if (opt.attention) opt.attention->push_back(att);
    Tensor ctx = num::bmm(drop(att), v);
    ctx = num::reshape(num::swap_axes12(num::reshape(ctx, {B, H, L, dh})), {B * L, d});
    Tensor h = num::add(x, num::reshape(drop(apply(blk.o, ctx)), {B, L, d}));

    Tensor f = num::reshape(num::layer_norm(h, blk.ln2_g, blk.ln2_b), {B * L, d});
    f = apply(blk.ff2, drop(num::gelu(apply(blk.ff1, f))));
    return num::add(h, num::reshape(drop(f), {B, L, d}));
}

Tensor Model::ciso_forward(const Tensor& env, std::span<const enc::StateAssignment> states,
                           const ForwardOptions& opt) const {
    const std::size_t B = env.dim(0), C = spec_.n_species, d = spec_.hidden_dim;
    Tensor z = trunk(env, mlp_.size());
    Tensor tokens = enc::species_tokens(species_, states_->encode(states), B);
    Tensor seq = num::concat_axis1(num::reshape(z, {B, 1, d}), tokens);
    for (const auto& blk : blocks_) seq = block_forward(blk, seq, B, C + 1, opt);
    Tensor h = num::slice_axis1(num::layer_norm(seq, final_g_, final_b_), 1, C);
    return num::sigmoid(num::add(num::sum_last(num::mul(h, readout_w_)), readout_b_));
}

num::NamedParams Model::parameters() const {
    num::NamedParams p;
    auto add_dense = [&](const std::string& name, const Dense& d) {
        p.emplace_back(name + ".w", d.w);
        p.emplace_back(name + ".b", d.b);
    };
    const std::string stack = spec_.family == Family::Ciso ? "env" : "mlp";
    for (std::size_t i = 0; i < mlp_.size(); ++i) add_dense(stack + "." + std::to_string(i), mlp_[i]);
    if (spec_.family != Family::Ciso) return p;
    p.emplace_back("species", species_);
    for (auto& e : states_->parameters("state")) p.push_back(std::move(e));
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        const std::string pre = "block" + std::to_string(l);
        p.emplace_back(pre + ".ln1.g", b.ln1_g);
        p.emplace_back(pre + ".ln1.b", b.ln1_b);
        add_dense(pre + ".attn.q", b.q);
        add_dense(pre + ".attn.k", b.k);
        add_dense(pre + ".attn.v", b.v);
        add_dense(pre + ".attn.o", b.o);
        p.emplace_back(pre + ".ln2.g", b.ln2_g);
        p.emplace_back(pre + ".ln2.b", b.ln2_b);
        add_dense(pre + ".ff1", b.ff1);
        add_dense(pre + ".ff2", b.ff2);
    }
    p.emplace_back("final_ln.g", final_g_);
    p.emplace_back("final_ln.b", final_b_);
    p.emplace_back("readout.w", readout_w_);
    p.emplace_back("readout.b", readout_b_);
    return p;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.size();
    return n;
}

nlohmann::json Model::parameters_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [name, t] : parameters()) {
        arr.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"values", std::vector<double>(t.values().begin(), t.values().end())}});
    }
    return arr;
}

void Model::load_parameters(const nlohmann::json& j) {
    auto params = parameters();
    if (!j.is_array() || j.size() != params.size()) {
        throw std::runtime_error("checkpoint has " + std::to_string(j.size()) + " parameter tensors, model expects " +
                                 std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        const auto& e = j[i];
        if (e.at("name").get<std::string>() != name) {
            throw std::runtime_error("checkpoint parameter '" + e.at("name").get<std::string>() + "' where '" + name +
                                     "' was expected");
        }
        auto vals = e.at("values").get<std::vector<double>>();
        if (vals.size() != t.size()) throw std::runtime_error("checkpoint parameter '" + name + "' has wrong size");
        std::copy(vals.begin(), vals.end(), t.values().begin());
    }
}

std::string serialize_checkpoint(const Model& m, const Checkpoint& meta) {
    nlohmann::json j;
    j["format"] = "ciso-checkpoint";
    j["version"] = kCheckpointVersion;
    j["spec"] = to_json(m.spec());
    j["species"] = meta.species;
    j["norm_stats"] = meta.norm_stats;
    j["seed"] = meta.seed;
    j["maxent"] = m.maxent() ? features::to_json(*m.maxent()) : nlohmann::json(nullptr);
    j["extra"] = meta.extra;
    j["parameters"] = m.parameters_json();
    return j.dump() + "\n";
}

void save_checkpoint(const std::string& path, const Model& m, const Checkpoint& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out << serialize_checkpoint(m, meta);
}

std::pair<Model, Checkpoint> parse_checkpoint(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
    }
    if (j.value("format", "") != "ciso-checkpoint") throw std::runtime_error("not a checkpoint file");
    if (j.value("version", 0) != kCheckpointVersion) {
        throw std::runtime_error("checkpoint version " + std::to_string(j.value("version", 0)) + " unsupported");
    }
    Checkpoint meta;
    meta.spec = spec_from_json(j.at("spec"));
    meta.species = j.at("species").get<std::vector<std::string>>();
    meta.norm_stats = j.at("norm_stats");
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.extra = j.value("extra", nlohmann::json::object());
    std::optional<features::MaxentConfig> mx;
    if (!j.at("maxent").is_null()) mx = features::maxent_from_json(j.at("maxent"));
    Model m(meta.spec, meta.seed, mx);
    m.load_parameters(j.at("parameters"));
    return {std::move(m), std::move(meta)};
}

std::pair<Model, Checkpoint> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace ciso::model
