#include <catch_amalgamated.hpp>

#include <random>

#include "model.hpp"
#include "model_json.hpp"

using namespace qtazrp;
using Catch::Matchers::WithinRel;

TEST_CASE("rate profile bounds and lookups") {
    const RateProfile p(0.5, 1.0, {{2, 1.5}, {-1, 0.75}});
    CHECK(p.a(2) == 1.5);
    CHECK(p.a(-1) == 0.75);
    CHECK(p.a(100) == 1.0);
    CHECK(p.a_min() == 0.75);
    CHECK(p.a_max() == 1.5);
    CHECK_THAT(p.b(2), WithinRel(0.75, 1e-15));
    CHECK_THAT(p.b_max(), WithinRel(0.75, 1e-15));
    const auto bs = p.b_range(-1, 2);
    REQUIRE(bs.size() == 4);
    CHECK(p.b_range(3, 2).empty());

    CHECK_THROWS_AS(RateProfile(0.5, 1.0, {{0, 3.0}}, 0.5, 2.0), DomainError);
    CHECK_THROWS_AS(RateProfile(0.5, 1.0, {}, 1.5, 2.0), DomainError);
    CHECK_THROWS_AS(RateProfile(0.5, 0.0), DomainError);
    CHECK_THROWS_AS(RateProfile(1.5, 1.0), DomainError);

    const std::vector<double> a{0.6, 1.9};
    const auto r = RateProfile(0.5, 1.0, {}, 0.5, 2.0).with_rates(3, a);
    CHECK(r.a(3) == 0.6);
    CHECK(r.a(4) == 1.9);
    CHECK(r.a_min() == 0.5);
    const std::vector<double> out_of_range{2.5};
    CHECK_THROWS_AS(RateProfile(0.5, 1.0, {}, 0.5, 2.0).with_rates(0, out_of_range), DomainError);
}

TEST_CASE("particle configurations") {
    const ParticleConfig x({3, 3, 1, -2});
    CHECK(x.size() == 4);
    const auto n = x.occupation();
    CHECK(n.at(3) == 2);
    CHECK(n.at(-2) == 1);
    CHECK_THROWS_AS(ParticleConfig({1, 2}), DomainError);
    CHECK_THROWS_AS(ParticleConfig({kSiteMax + 1}), DomainError);
    CHECK(ParticleConfig::all_at(3, 5) == ParticleConfig({5, 5, 5}));

    const auto s = StepConfig::initial(3);
    CHECK_NOTHROW(s.validate());
    CHECK_THROWS_AS(StepConfig::initial(0), DomainError);
    StepConfig bad{2, {1, -1}, true};
    CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("jump rates") {
    const RateProfile p(0.5, 2.0);
    CHECK_THAT(jump_rate(p, 0, 1), WithinRel(1.0, 1e-15));
    CHECK_THAT(jump_rate(p, 0, 3), WithinRel(2.0 * (1 - 0.125), 1e-15));
    CHECK(jump_rate(p, 0, kInfiniteOccupancy) == 2.0);
    CHECK_THROWS_AS(jump_rate(p, 0, 0), DomainError);
}

TEST_CASE("spacing map: gaps equal occupations and the inverse recovers them") {
    std::mt19937_64 g(7);
    std::uniform_int_distribution<int> count(0, 3), site(-6, 6);
    for (int trial = 0; trial < 200; ++trial) {
        std::map<Site, long> occ;
        for (int i = 0; i < 5; ++i) {
            const long c = count(g);
            if (c) occ[site(g)] = c;
        }
        const Site k0 = site(g);
        const auto t = zrp_to_tasep(occ, k0);
        CHECK_NOTHROW(t.validate());
        CHECK(t.position(0) == k0);
        for (long k = t.first_label + 1; k <= t.last_label(); ++k) {
            const auto it = occ.find(k);
            const long n = it == occ.end() ? 0 : it->second;
            CHECK(t.position(k - 1) - t.position(k) - 1 == n);
        }
        CHECK(finite_zrp_to_tasep_inverse(t) == occ);
    }
}

TEST_CASE("step spacing map") {
    const std::map<Site, long> occ{{1, 2}, {3, 1}};
    const auto t = step_zrp_to_tasep(occ, 4);
    REQUIRE(t.y == std::vector<Site>{4, 1, 0, -2});
    CHECK_FALSE(t.right_dense);
    CHECK_FALSE(t.occupied(5));
    CHECK(t.occupied(4));
    CHECK_FALSE(t.occupied(2));
    CHECK(t.occupied(-7));
    CHECK(t.position(5) == -4);
    CHECK_THROWS_AS(t.position(-1), DomainError);
    CHECK_THROWS_AS(step_zrp_to_tasep({{0, 1}}, 0), DomainError);
}

TEST_CASE("height function counts crossings minus occupied plus empty sites") {
    const auto t = step_zrp_to_tasep({{1, 2}, {3, 1}}, 4);  // occupied: 4, 1, 0, -2, -3, ...
    const long c = 4;
    // direct count over [0, k] for k >= 0
    for (Site k = 0; k <= 6; ++k) {
        long h = c;
        for (Site s = 0; s <= k; ++s) h += t.occupied(s) ? -1 : 1;
        CHECK(height_function(t, c, k + 0.5) == h);
    }
    CHECK(height_function(t, c, -0.5) == c);
    // going left undoes the steps: site -1 is empty, site -2 occupied
    CHECK(height_function(t, c, -1.5) == c - 1);
    CHECK(height_function(t, c, -2.5) == c);
    CHECK_THROWS_AS(height_function(t, c, 0.25), DomainError);
}

TEST_CASE("duality event count") {
    const std::vector<Jump> traj{{0, 0.1}, {1, 0.2}, {0, 0.5}, {3, 0.9}};
    CHECK(duality_event_count(traj) == 2);
}

TEST_CASE("profile JSON round trip and strict schema") {
    const RateProfile p(0.3, 1.2, {{-3, 0.9}, {4, 1.7}}, 0.5, 2.0);
    const auto j = to_json(p);
    const auto r = rate_profile_from_json(j);
    CHECK(r.q().value() == 0.3);
    CHECK(r.a(-3) == 0.9);
    CHECK(r.a(4) == 1.7);
    CHECK(r.a_min() == 0.5);
    CHECK(r.a_max() == 2.0);

    auto extra = j;
    extra["colour"] = "blue";
    CHECK_THROWS_AS(rate_profile_from_json(extra), ConfigError);
    auto badkey = j;
    badkey["overrides"] = {{"x1", 1.0}};
    CHECK_THROWS_AS(rate_profile_from_json(badkey), ConfigError);
    auto badq = j;
    badq["q"] = 1.5;
    CHECK_THROWS_AS(rate_profile_from_json(badq), ConfigError);
    CHECK_THROWS_AS(rate_profile_from_json(nlohmann::json::array()), ConfigError);

    CHECK(particle_config_from_json(nlohmann::json::parse("[2, 1, 1]")) == ParticleConfig({2, 1, 1}));
    CHECK_THROWS_AS(particle_config_from_json(nlohmann::json::parse("[1, 2]")), ConfigError);
    CHECK_THROWS_AS(particle_config_from_json(nlohmann::json::parse("{\"a\": 1}")), ConfigError);
}
