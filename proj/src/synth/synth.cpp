#include "ciso/synth/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace ciso::synth {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Hermite {
    std::vector<double> x, w;
};

// Gauss-Hermite nodes/weights (weight exp(-x^2)) by Newton iteration on the
// orthonormal recurrence.
Hermite gauss_hermite(int n) {
    Hermite h{std::vector<double>(n), std::vector<double>(n)};
    const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
    double z = 0.0;
    for (int i = 0; i < (n + 1) / 2; ++i) {
        if (i == 0) {
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
        } else if (i == 1) {
            z -= 1.14 * std::pow(n, 0.426) / z;
        } else if (i == 2) {
            z = 1.86 * z - 0.86 * h.x[0];
        } else if (i == 3) {
            z = 1.91 * z - 0.91 * h.x[1];
        } else {
            z = 2.0 * z - h.x[i - 2];
        }
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = pim4, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-14) break;
        }
        h.x[i] = z;
        h.x[n - 1 - i] = -z;
        h.w[i] = 2.0 / (pp * pp);
        h.w[n - 1 - i] = h.w[i];
    }
    return h;
}

const Hermite& hermite40() {
    static const Hermite h = gauss_hermite(40);
    return h;
}

double logit_base(const SynthSpec& s, std::size_t c, std::span<const double> env) {
    double a = s.bias[c];
    for (std::size_t e = 0; e < s.n_env; ++e) a += s.theta[c][e] * env[e];
    return a;
}

}  // namespace

double noisy_sigmoid(double a, double noise) {
    if (noise <= 0.0) return sigmoid(a);
    const auto& h = hermite40();
    double p = 0.0;
    for (std::size_t i = 0; i < h.x.size(); ++i) p += h.w[i] * sigmoid(a + std::sqrt(2.0) * noise * h.x[i]);
    return p / std::sqrt(std::numbers::pi);
}

void SynthSpec::validate() const {
    if (n_species == 0 || n_env == 0) throw std::invalid_argument("synth: need species and env variables");
    if (theta.size() != n_species || bias.size() != n_species || W.size() != n_species) {
        throw std::invalid_argument("synth: parameter sizes do not match n_species");
    }
    for (std::size_t c = 0; c < n_species; ++c) {
        if (theta[c].size() != n_env || W[c].size() != n_species) throw std::invalid_argument("synth: ragged weights");
        if (!std::isfinite(bias[c])) throw std::invalid_argument("synth: non-finite bias");
        for (double v : theta[c])
            if (!std::isfinite(v)) throw std::invalid_argument("synth: non-finite env weight");
        for (double v : W[c])
            if (!std::isfinite(v)) throw std::invalid_argument("synth: non-finite interaction weight");
        if (W[c][c] != 0.0) throw std::invalid_argument("synth: self-interaction on species " + std::to_string(c));
    }
    if (noise < 0.0) throw std::invalid_argument("synth: noise must be >= 0");
    if (missingness < 0.0 || missingness >= 1.0) throw std::invalid_argument("synth: missingness must be in [0,1)");
    if (rates && (rate_alpha <= 0.0 || rate_beta <= 0.0)) throw std::invalid_argument("synth: bad Beta parameters");
    for (const auto& [name, idx] : groups)
        for (auto i : idx)
            if (i >= n_species) throw std::invalid_argument("synth: group '" + name + "' index out of range");
    order();
}

std::vector<std::size_t> SynthSpec::order() const {
    const std::size_t C = n_species;
    std::vector<std::size_t> indeg(C, 0), out;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < C; ++j) indeg[c] += W[c][j] != 0.0;
    std::vector<std::uint8_t> done(C, 0);
    // Kahn's algorithm, smallest ready index first
    while (out.size() < C) {
        std::size_t next = C;
        for (std::size_t c = 0; c < C; ++c) {
            if (!done[c] && indeg[c] == 0) {
                next = c;
                break;
            }
        }
        if (next == C) throw std::invalid_argument("synth: interaction graph has a cycle");
        done[next] = 1;
        out.push_back(next);
        for (std::size_t c = 0; c < C; ++c)
            if (W[c][next] != 0.0) --indeg[c];
    }
    return out;
}

nlohmann::json to_json(const SynthSpec& s) {
    return {{"n_species", s.n_species}, {"n_env", s.n_env},       {"n_locations", s.n_locations},
            {"theta", s.theta},         {"bias", s.bias},         {"W", s.W},
            {"noise", s.noise},         {"rates", s.rates},       {"rate_alpha", s.rate_alpha},
            {"rate_beta", s.rate_beta}, {"missingness", s.missingness}, {"block_deg", s.block_deg},
            {"seed", s.seed},           {"groups", s.groups}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    if (j.contains("strength")) {
        s = planted_spec(j.value("n_species", s.n_species), j.value("n_env", s.n_env),
                         j.value("n_locations", s.n_locations), j.at("strength").get<double>(),
                         j.value("seed", std::uint64_t{0}));
    } else {
        s.n_species = j.at("n_species").get<std::size_t>();
        s.n_env = j.at("n_env").get<std::size_t>();
        s.n_locations = j.at("n_locations").get<std::size_t>();
        s.theta = j.at("theta").get<std::vector<std::vector<double>>>();
        s.bias = j.at("bias").get<std::vector<double>>();
        s.W = j.at("W").get<std::vector<std::vector<double>>>();
        s.seed = j.value("seed", s.seed);
        s.groups = j.value("groups", s.groups);
    }
    s.noise = j.value("noise", s.noise);
    s.rates = j.value("rates", s.rates);
    s.rate_alpha = j.value("rate_alpha", s.rate_alpha);
    s.rate_beta = j.value("rate_beta", s.rate_beta);
    s.missingness = j.value("missingness", s.missingness);
    s.block_deg = j.value("block_deg", s.block_deg);
    s.validate();
    return s;
}

SynthSpec planted_spec(std::size_t n_species, std::size_t n_env, std::size_t n_locations, double strength,
                       std::uint64_t seed) {
    if (n_species < 2) throw std::invalid_argument("planted_spec needs at least two species");
    SynthSpec s;
    s.n_species = n_species;
    s.n_env = n_env;
    s.n_locations = n_locations;
    s.seed = seed;
    std::mt19937_64 rng(seed ^ 0x5EEDULL);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> mag(strength, strength + 2.0);
    std::bernoulli_distribution sign(0.5);
    s.theta.assign(n_species, std::vector<double>(n_env));
    s.bias.assign(n_species, 0.0);
    s.W.assign(n_species, std::vector<double>(n_species, 0.0));
    for (auto& row : s.theta)
        for (double& v : row) v = 1.5 * g(rng);
    for (double& b : s.bias) b = 0.5 * g(rng);
    const std::size_t h = n_species / 2;
    for (std::size_t c = h; c < n_species; ++c) {
        const std::size_t i = c - h;
        std::vector<std::size_t> parents{i % h};
        if (h > 1) parents.push_back((i + 1) % h);
        double total = 0.0;
        for (std::size_t p : parents) {
            const double w = strength > 0.0 ? (sign(rng) ? 1.0 : -1.0) * mag(rng) : 0.0;
            s.W[c][p] = w;
            total += w;
        }
        // centre the child's logit over its parents' states
        s.bias[c] -= total / 2.0;
    }
    for (std::size_t c = 0; c < n_species; ++c) s.groups[c < h ? "roots" : "children"].push_back(c);
    s.validate();
    return s;
}

data::Dataset generate(const SynthSpec& spec) {
    spec.validate();
    const std::size_t C = spec.n_species, E = spec.n_env;
    const auto topo = spec.order();
    data::Dataset ds;
    for (std::size_t c = 0; c < C; ++c) ds.species.push_back("sp" + std::to_string(c));
    for (const auto& [name, idx] : spec.groups) {
        std::vector<std::uint8_t> m(C, 0);
        for (auto i : idx) m[i] = 1;
        ds.group_masks[name] = m;
    }
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    std::gamma_distribution<double> ga(spec.rate_alpha, 1.0), gb(spec.rate_beta, 1.0);
    for (std::size_t n = 0; n < spec.n_locations; ++n) {
        data::LocationRecord r;
        r.id = "syn" + std::to_string(n);
        r.lat = 30.0 + 20.0 * u(rng);
        r.lon = -120.0 + 50.0 * u(rng);
        r.env.resize(E);
        for (double& v : r.env) v = 2.0 * u(rng) - 1.0;
        std::vector<std::uint8_t> present(C, 0);
        for (std::size_t c : topo) {
            double a = logit_base(spec, c, r.env);
            for (std::size_t j = 0; j < C; ++j) a += spec.W[c][j] * present[j];
            if (spec.noise > 0.0) a += spec.noise * g(rng);
            present[c] = u(rng) < sigmoid(a);
        }
        r.targets.resize(C);
        r.available.resize(C);
        for (std::size_t c = 0; c < C; ++c) {
            double t = present[c];
            if (spec.rates && present[c]) {
                const double x = ga(rng), y = gb(rng);
                t = std::max(x / (x + y), 1e-6);
            }
            r.targets[c] = t;
            r.available[c] = spec.missingness > 0.0 ? u(rng) >= spec.missingness : 1;
        }
        ds.records.push_back(std::move(r));
    }
    auto split = data::spatial_block_split(ds.records, spec.block_deg, {}, spec.seed, true);
    ds.split = std::move(split.tags);
    return ds;
}

std::vector<double> bayes_conditional(const SynthSpec& spec, std::span<const double> env,
                                      std::span<const std::optional<bool>> revealed) {
    const std::size_t C = spec.n_species;
    if (C > 12) throw std::invalid_argument("bayes_conditional enumerates 2^C states; C = " + std::to_string(C) + " > 12");
    if (env.size() != spec.n_env || revealed.size() != C) throw std::invalid_argument("bayes_conditional: size mismatch");
    std::vector<double> base(C);
    for (std::size_t c = 0; c < C; ++c) base[c] = logit_base(spec, c, env);
    std::vector<double> marg(C, 0.0);
    double z = 0.0;
    for (std::uint32_t s = 0; s < (1u << C); ++s) {
        bool ok = true;
        for (std::size_t c = 0; c < C && ok; ++c) {
            if (revealed[c] && *revealed[c] != static_cast<bool>(s >> c & 1u)) ok = false;
        }
        if (!ok) continue;
        double p = 1.0;
        for (std::size_t c = 0; c < C; ++c) {
            double a = base[c];
            for (std::size_t j = 0; j < C; ++j) {
                if (spec.W[c][j] != 0.0 && (s >> j & 1u)) a += spec.W[c][j];
            }
            const double q = noisy_sigmoid(a, spec.noise);
            p *= (s >> c & 1u) ? q : 1.0 - q;
        }
        z += p;
        for (std::size_t c = 0; c < C; ++c)
            if (s >> c & 1u) marg[c] += p;
    }
    for (double& m : marg) m /= z;
    return marg;
}

OracleReport oracle_mae(const SynthSpec& spec, const data::Dataset& ds, data::Split split,
                        std::span<const std::uint8_t> condition, std::span<const std::uint8_t> targets) {
    const std::size_t C = spec.n_species;
    OracleReport rep;
    double sm = 0.0, sc = 0.0;
    std::size_t cells = 0;
    for (std::size_t i : ds.indices_of(split)) {
        const auto& r = ds.records[i];
        std::vector<std::optional<bool>> none(C), rev(C);
        for (std::size_t c = 0; c < C; ++c) {
            if (condition[c] && r.available[c]) rev[c] = r.targets[c] > 0.0;
        }
        const auto pm = bayes_conditional(spec, r.env, none);
        const auto pc = bayes_conditional(spec, r.env, rev);
        for (std::size_t c = 0; c < C; ++c) {
            if (!targets[c] || !r.available[c]) continue;
            const double y = r.targets[c] > 0.0 ? 1.0 : 0.0;
            sm += std::abs(pm[c] - y);
            sc += std::abs(pc[c] - y);
            ++cells;
        }
        ++rep.locations;
    }
    if (cells == 0) throw std::invalid_argument("oracle_mae: no scored cells");
    rep.marginal_mae = sm / static_cast<double>(cells);
    rep.conditional_mae = sc / static_cast<double>(cells);
    return rep;
}

}  // namespace ciso::synth
