#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "ciso/synth/synth.hpp"

using namespace ciso;
using namespace ciso::synth;

namespace {

SynthSpec flat_pair(double w, std::size_t n) {
    SynthSpec s;
    s.n_species = 2;
    s.n_env = 1;
    s.n_locations = n;
    s.theta = {{0.0}, {0.0}};
    s.bias = {0.0, -2.5};
    s.W = {{0.0, 0.0}, {w, 0.0}};
    s.seed = 42;
    return s;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Counts {
    double b_given_a = 0, b_given_not_a = 0;
};

Counts conditional_freq(const data::Dataset& ds) {
    double na = 0, nba = 0, nn = 0, nbn = 0;
    for (const auto& r : ds.records) {
        if (r.targets[0] > 0) {
            ++na;
            nba += r.targets[1] > 0;
        } else {
            ++nn;
            nbn += r.targets[1] > 0;
        }
    }
    return {nba / na, nbn / nn};
}

}  // namespace

TEST_CASE("planted interaction shows in co-occurrence frequencies") {
    auto ds = generate(flat_pair(5.0, 100000));
    auto f = conditional_freq(ds);
    CHECK(f.b_given_a == doctest::Approx(sig(2.5)).epsilon(0.02));
    CHECK(f.b_given_not_a == doctest::Approx(sig(-2.5)).epsilon(0.05));
    CHECK(f.b_given_a > 5 * f.b_given_not_a);
}

TEST_CASE("no interaction: conditionally independent") {
    auto ds = generate(flat_pair(0.0, 100000));
    auto f = conditional_freq(ds);
    // both estimate sigmoid(-2.5) ~ 0.076 from ~50k draws each; 4 sigma ~ 0.005
    CHECK(std::abs(f.b_given_a - f.b_given_not_a) < 0.006);
}

TEST_CASE("availability follows missingness") {
    auto s = flat_pair(0.0, 20000);
    auto ds = generate(s);
    for (const auto& r : ds.records) CHECK((r.available[0] && r.available[1]));
    s.missingness = 0.3;
    ds = generate(s);
    double miss = 0;
    for (const auto& r : ds.records) miss += (r.available[0] == 0) + (r.available[1] == 0);
    CHECK(miss / 40000.0 == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("generator validation") {
    auto s = flat_pair(1.0, 10);
    s.W[0][1] = 1.0;  // 0 <- 1 <- 0
    CHECK_THROWS_WITH(s.validate(), doctest::Contains("cycle"));
    s = flat_pair(1.0, 10);
    s.bias.pop_back();
    CHECK_THROWS(s.validate());
    auto big = planted_spec(14, 2, 10, 3.0, 1);
    std::vector<double> env{0.1, 0.2};
    std::vector<std::optional<bool>> rev(14);
    CHECK_THROWS(bayes_conditional(big, env, rev));
}

TEST_CASE("planted spec structure and dataset shape") {
    auto s = planted_spec(10, 5, 400, 3.0, 7);
    for (std::size_t c = 5; c < 10; ++c) {
        int parents = 0;
        for (std::size_t j = 0; j < 10; ++j) {
            if (s.W[c][j] != 0.0) {
                ++parents;
                CHECK(j < 5);
                CHECK(std::abs(s.W[c][j]) >= 3.0);
            }
        }
        CHECK(parents == 2);
    }
    auto ds = generate(s);
    CHECK(ds.records.size() == 400);
    CHECK(ds.split.size() == 400);
    CHECK(ds.is_binary());
    CHECK(ds.group_masks.at("roots") == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0, 0, 0});
    for (const auto& r : ds.records)
        for (double e : r.env) CHECK((e >= -1.0 && e <= 1.0));
    auto again = generate(s);
    CHECK(again.records[17].targets == ds.records[17].targets);
    CHECK(synth_spec_from_json(to_json(s)).W == s.W);

    s.rates = true;
    auto rates = generate(s);
    CHECK_FALSE(rates.is_binary());
    for (const auto& r : rates.records)
        for (double t : r.targets) CHECK((t >= 0.0 && t <= 1.0));
}

TEST_CASE("bayes oracle: marginals and monotonicity") {
    auto s = planted_spec(6, 3, 10, 3.0, 3);
    std::vector<double> env{0.3, -0.4, 0.9};
    std::vector<std::optional<bool>> none(6);
    auto p = bayes_conditional(s, env, none);
    for (std::size_t c = 0; c < 3; ++c) {
        double a = s.bias[c];
        for (std::size_t e = 0; e < 3; ++e) a += s.theta[c][e] * env[e];
        CHECK(p[c] == doctest::Approx(sig(a)).epsilon(1e-12));
    }
    for (std::size_t c = 3; c < 6; ++c) {
        for (std::size_t j = 0; j < 3; ++j) {
            if (s.W[c][j] == 0.0) continue;
            auto on = none, off = none;
            on[j] = true;
            off[j] = false;
            const double pon = bayes_conditional(s, env, on)[c], poff = bayes_conditional(s, env, off)[c];
            CHECK((s.W[c][j] > 0 ? pon > poff : pon < poff));
        }
    }
    auto rev = none;
    rev[0] = true;
    CHECK(bayes_conditional(s, env, rev)[0] == 1.0);
}

TEST_CASE("bayes oracle matches Monte Carlo on a 3-species chain") {
    SynthSpec s;
    s.n_species = 3;
    s.n_env = 2;
    s.theta = {{0.5, -1.0}, {1.0, 0.3}, {-0.4, 0.8}};
    s.bias = {0.2, -1.0, 0.5};
    s.W = {{0, 0, 0}, {3.0, 0, 0}, {0, -2.5, 0}};
    s.noise = 0.7;
    const std::vector<double> env{0.4, -0.6};
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u;
    std::normal_distribution<double> g;
    const int N = 200000;
    double n2 = 0, n0 = 0, n2_given_0 = 0;
    for (int i = 0; i < N; ++i) {
        bool x[3];
        for (int c = 0; c < 3; ++c) {
            double a = s.bias[c] + s.theta[c][0] * env[0] + s.theta[c][1] * env[1] + s.noise * g(rng);
            for (int j = 0; j < 3; ++j) a += s.W[c][j] * x[j] * (j < c);
            x[c] = u(rng) < sig(a);
        }
        n2 += x[2];
        if (x[0]) {
            ++n0;
            n2_given_0 += x[2];
        }
    }
    std::vector<std::optional<bool>> none(3), rev(3);
    rev[0] = true;
    const double p = bayes_conditional(s, env, none)[2];
    const double pc = bayes_conditional(s, env, rev)[2];
    CHECK(std::abs(n2 / N - p) < 3.0 * std::sqrt(p * (1 - p) / N));
    CHECK(std::abs(n2_given_0 / n0 - pc) < 3.0 * std::sqrt(pc * (1 - pc) / n0));
}

TEST_CASE("noisy sigmoid quadrature") {
    CHECK(noisy_sigmoid(0.7, 0.0) == sig(0.7));
    CHECK(noisy_sigmoid(0.0, 2.0) == doctest::Approx(0.5).epsilon(1e-12));
    // fine trapezoid oracle
    for (double a : {-2.0, 0.5, 3.0}) {
        for (double s : {0.3, 1.0, 2.0}) {
            double acc = 0.0;
            const double h = 1e-3;
            for (double z = -10; z <= 10; z += h) acc += sig(a + s * z) * std::exp(-0.5 * z * z);
            acc *= h / std::sqrt(2 * 3.14159265358979323846);
            CHECK(noisy_sigmoid(a, s) == doctest::Approx(acc).epsilon(1e-7));
        }
    }
}

TEST_CASE("oracle conditional MAE does not exceed marginal MAE") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto s = planted_spec(8, 3, 600, 3.0, seed);
        auto ds = generate(s);
        std::vector<std::uint8_t> cond(8, 0), targ(8, 0);
        for (int c = 0; c < 4; ++c) cond[c] = 1;
        for (int c = 4; c < 8; ++c) targ[c] = 1;
        auto rep = oracle_mae(s, ds, data::Split::Test, cond, targ);
        CHECK(rep.conditional_mae <= rep.marginal_mae);
        CHECK(rep.locations == ds.indices_of(data::Split::Test).size());
    }
}
