#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "ciso/colocate/colocate.hpp"

using namespace ciso;
using namespace ciso::geo;

namespace {

// Point `km` kilometres due north of p.
LatLon north_of(LatLon p, double km) { return {p.lat + km / kEarthRadiusKm * 180.0 / std::numbers::pi, p.lon}; }

data::Dataset make(const std::string& prefix, const std::vector<LatLon>& pts, std::size_t n_species = 1) {
    data::Dataset ds;
    for (std::size_t c = 0; c < n_species; ++c) ds.species.push_back(prefix + "_sp" + std::to_string(c));
    for (std::size_t i = 0; i < pts.size(); ++i) {
        data::LocationRecord r{prefix + std::to_string(i), pts[i].lat, pts[i].lon, {0.0}, {}, {}};
        for (std::size_t c = 0; c < n_species; ++c) {
            r.targets.push_back(static_cast<double>((i + c) % 3) / 2.0);
            r.available.push_back(1);
        }
        ds.records.push_back(r);
    }
    return ds;
}

// O(|A||B|) reference join.
std::vector<CoLocation> brute_join(const std::vector<LatLon>& a, const std::vector<LatLon>& b, double radius) {
    std::vector<CoLocation> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        std::size_t best = b.size();
        double bd = 0.0;
        for (std::size_t j = 0; j < b.size(); ++j) {
            const double d = haversine_km(a[i], b[j]);
            if (d <= radius && (best == b.size() || d < bd)) {
                best = j;
                bd = d;
            }
        }
        if (best != b.size()) out.push_back({i, best, "", "", bd});
    }
    return out;
}

std::vector<LatLon> random_cluster(std::mt19937_64& rng, std::size_t n, LatLon c, double span_deg) {
    std::uniform_real_distribution<double> u(-span_deg, span_deg);
    std::vector<LatLon> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({c.lat + u(rng), c.lon + u(rng)});
    return out;
}

}  // namespace

TEST_CASE("haversine closed forms") {
    CHECK(haversine_km({12.3, 45.6}, {12.3, 45.6}) == 0.0);
    const double one_degree = 2.0 * std::numbers::pi * kEarthRadiusKm / 360.0;
    CHECK(haversine_km({0, 0}, {0, 1}) == doctest::Approx(one_degree).epsilon(1e-12));
    CHECK(haversine_km({0, 0}, {0, 1}) == doctest::Approx(111.195).epsilon(1e-5));
    CHECK(haversine_km({0, 0}, {0, 180}) == doctest::Approx(std::numbers::pi * kEarthRadiusKm).epsilon(1e-12));
    CHECK(haversine_km({90, 0}, {-90, 0}) == doctest::Approx(20015.1).epsilon(1e-5));
    CHECK(haversine_km({10, 20}, {-30, 40}) == doctest::Approx(haversine_km({-30, 40}, {10, 20})).epsilon(1e-15));
}

TEST_CASE("ball tree: single point and duplicates") {
    BallTree one({{1.0, 2.0}});
    CHECK(one.leaf_count() == 1);
    CHECK(one.validate());
    CHECK(one.query_radius({1.0, 2.0}, 0.0).size() == 1);

    BallTree dup({{1.0, 2.0}, {1.0, 2.0}, {5.0, 5.0}});
    auto hits = dup.query_radius({1.0, 2.0}, 0.5);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].index == 0);
    CHECK(hits[1].index == 1);
    auto nn = dup.nearest_within({1.0, 2.0}, 0.5);
    REQUIRE(nn);
    CHECK(nn->index == 0);  // tie -> smaller index

    CHECK_THROWS(BallTree(std::vector<LatLon>{}));
}

TEST_CASE("ball tree: radius queries equal a linear scan") {
    std::mt19937_64 rng(17);
    auto pts = random_cluster(rng, 1000, {45.0, -100.0}, 0.3);
    BallTree tree(pts, 32);
    CHECK(tree.validate());
    CHECK(tree.leaf_count() > 1);
    auto queries = random_cluster(rng, 200, {45.0, -100.0}, 0.35);
    for (double radius : {0.5, 2.0, 10.0}) {
        for (const auto& q : queries) {
            std::vector<std::size_t> expect;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                if (haversine_km(q, pts[i]) <= radius) expect.push_back(i);
            }
            auto got = tree.query_radius(q, radius);
            REQUIRE(got.size() == expect.size());
            for (std::size_t k = 0; k < got.size(); ++k) CHECK(got[k].index == expect[k]);
        }
    }
}

TEST_CASE("ball tree: global spread and dateline points") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> lat(-89.0, 89.0), lon(-180.0, 180.0);
    std::vector<LatLon> pts;
    for (int i = 0; i < 600; ++i) pts.push_back({lat(rng), lon(rng)});
    pts.push_back({10.0, 179.999});
    pts.push_back({10.0, -179.999});
    BallTree tree(pts, 8);
    CHECK(tree.validate());
    auto hits = tree.query_radius({10.0, 180.0}, 1.0);
    REQUIRE(hits.size() == 2);
    for (int t = 0; t < 100; ++t) {
        const LatLon q{lat(rng), lon(rng)};
        std::size_t expect = 0;
        for (const auto& p : pts) expect += haversine_km(q, p) <= 800.0;
        CHECK(tree.query_radius(q, 800.0).size() == expect);
    }
}

TEST_CASE("colocate: closest rule and radius") {
    const LatLon a0{40.0, -75.0};
    SUBCASE("one B point at 0.5 km") {
        auto pairs = colocate(make("a", {a0}), make("b", {north_of(a0, 0.5)}));
        REQUIRE(pairs.size() == 1);
        CHECK(pairs[0].distance_km == doctest::Approx(0.5).epsilon(1e-9));
    }
    SUBCASE("B point at 2 km with radius 1") {
        CHECK(colocate(make("a", {a0}), make("b", {north_of(a0, 2.0)})).empty());
    }
    SUBCASE("two candidates pick the closer one") {
        auto pairs = colocate(make("a", {a0}), make("b", {north_of(a0, 0.8), north_of(a0, 0.3)}));
        REQUIRE(pairs.size() == 1);
        CHECK(pairs[0].b_id == "b1");
        CHECK(pairs[0].distance_km == doctest::Approx(0.3).epsilon(1e-9));
    }
    SUBCASE("radius boundary is closed") {
        const LatLon b = north_of(a0, 1.0);
        const double d = haversine_km(a0, b);
        CHECK(colocate(make("a", {a0}), make("b", {b}), d).size() == 1);
    }
}

TEST_CASE("colocate: asymmetry counterexample") {
    const LatLon p{0.0, 0.0};
    auto A = make("a", {p, north_of(p, 0.5)});
    auto B = make("b", {north_of(p, 0.3)});
    auto ab = colocate(A, B);
    auto ba = colocate(B, A);
    CHECK(ab.size() == 2);  // both A points claim the single B point
    CHECK(ba.size() == 1);
    CHECK(ba[0].b_id == "a1");
}

TEST_CASE("colocate: hand-enumerated grid") {
    // Ten A sites 2 km apart along a meridian; B sites 0.4 km north of the even
    // ones and 1.5 km north of the odd ones -> exactly five pairs.
    std::vector<LatLon> a, b;
    for (int i = 0; i < 10; ++i) {
        a.push_back(north_of({30.0, 10.0}, 2.0 * i));
        b.push_back(north_of(a.back(), i % 2 == 0 ? 0.4 : 1.5));
    }
    auto pairs = colocate(make("a", a), make("b", b));
    REQUIRE(pairs.size() == 5);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        CHECK(pairs[k].a_index == 2 * k);
        CHECK(pairs[k].b_index == 2 * k);
    }
}

TEST_CASE("colocate: equals the brute-force join and is repeatable") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        auto a = random_cluster(rng, 800, {48.0, 2.0}, 0.2);
        auto b = random_cluster(rng, 1200, {48.0, 2.0}, 0.2);
        // exact duplicates of a few B sites exercise the tie rule
        for (int k = 0; k < 20; ++k) b.push_back(b[static_cast<std::size_t>(k) * 7]);
        auto got = colocate(make("a", a), make("b", b));
        auto expect = brute_join(a, b, 1.0);
        REQUIRE(got.size() == expect.size());
        for (std::size_t k = 0; k < got.size(); ++k) {
            CHECK(got[k].a_index == expect[k].a_index);
            CHECK(got[k].b_index == expect[k].b_index);
            CHECK(std::abs(got[k].distance_km - expect[k].distance_km) <= 1e-9);
        }
        auto again = colocate(make("a", a), make("b", b));
        for (std::size_t k = 0; k < got.size(); ++k) CHECK(again[k].b_index == got[k].b_index);
    }
}

TEST_CASE("pair CSV layout") {
    std::vector<CoLocation> pairs{{0, 3, "a0", "b3", 0.25}};
    std::ostringstream os;
    write_pairs_csv(pairs, os);
    CHECK(os.str() == "a_id,b_id,distance_km\na0,b3,0.25\n");
}

TEST_CASE("attach: combined roster, copied targets, split restriction") {
    const LatLon p{0.0, 0.0};
    auto A = make("a", {p, north_of(p, 5.0), north_of(p, 10.0), north_of(p, 20.0)}, 2);
    auto B = make("b", {north_of(p, 0.2), north_of(p, 10.1)}, 3);
    B.records[1].available[2] = 0;
    A.split = {data::Split::Train, data::Split::Train, data::Split::Val, data::Split::Test};
    A.group_masks["birds"] = {1, 0};
    B.group_masks["plants"] = {1, 1, 0};
    auto pairs = colocate(A, B);
    REQUIRE(pairs.size() == 2);
    auto C = attach(A, B, pairs);
    CHECK(C.species.size() == 5);
    CHECK(C.species[2] == "b_sp0");
    // a0 paired (train), a1 unpaired train kept, a2 paired val, a3 unpaired test dropped
    REQUIRE(C.records.size() == 3);
    CHECK(C.records[0].id == "a0");
    CHECK(C.records[1].id == "a1");
    CHECK(C.records[2].id == "a2");
    CHECK(C.split == std::vector<data::Split>{data::Split::Train, data::Split::Train, data::Split::Val});
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(C.records[0].targets[2 + c] == B.records[0].targets[c]);
        CHECK(C.records[0].available[2 + c] == 1);
        CHECK(C.records[1].available[2 + c] == 0);
    }
    CHECK(C.records[2].available[4] == 0);  // B-side unavailability copied verbatim
    CHECK(C.group_masks.at("birds") == std::vector<std::uint8_t>{1, 0, 0, 0, 0});
    CHECK(C.group_masks.at("plants") == std::vector<std::uint8_t>{0, 0, 1, 1, 0});
    CHECK(C.group_masks.at("dataset_b") == std::vector<std::uint8_t>{0, 0, 1, 1, 1});

    auto clash = make("a", {p});
    CHECK_THROWS(attach(A, clash, {}));
}
