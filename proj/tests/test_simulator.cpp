#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "simulator.hpp"

using namespace qtazrp;

namespace {

double z_score(double p_hat, double p, long n) {
    const double se = std::sqrt(p * (1 - p) / static_cast<double>(n));
    return se > 0 ? std::abs(p_hat - p) / se : std::abs(p_hat - p) * 1e12;
}

}  // namespace

TEST_CASE("per-sample streams are deterministic and distinct") {
    Rng a(5, 3), b(5, 3), c(5, 4);
    for (int i = 0; i < 10; ++i) {
        const double u = a.open_uniform();
        CHECK(u == b.open_uniform());
        CHECK(u > 0.0);
        CHECK(u < 1.0);
    }
    Rng a2(5, 3);
    int same = 0;
    for (int i = 0; i < 10; ++i) same += a2.open_uniform() == c.open_uniform();
    CHECK(same == 0);
}

TEST_CASE("zero horizon leaves the state unchanged") {
    const RateProfile p(0.5, 1.0);
    Rng r(1, 0);
    const ParticleConfig Y({2, 2, 0});
    const auto s = simulate_finite(p, Y, 0.0, r, true);
    CHECK(s.final_state == Y);
    CHECK(s.trajectory.empty());
    CHECK(simulate_step(p, 2, 0.0, r) == std::vector<Site>{0, 0});
    CHECK_THROWS_AS(simulate_finite(p, Y, -1.0, r), DomainError);
    CHECK_THROWS_AS(simulate_step(p, 0, 1.0, r), DomainError);
}

TEST_CASE("a single particle performs a Poisson walk") {
    const RateProfile p(0.5, 1.3);
    const double t = 1.5, mu = 0.5 * 1.3 * t;  // rate b = (1 - q) a
    const long n = 20000;
    std::vector<long> hist(12, 0);
    for (long i = 0; i < n; ++i) {
        Rng r(11, static_cast<std::uint64_t>(i));
        const long d = simulate_finite(p, ParticleConfig({4}), t, r).final_state[0] - 4;
        ++hist[static_cast<std::size_t>(std::min<long>(d, 11))];
    }
    for (long k = 0; k < 6; ++k)
        CHECK(z_score(static_cast<double>(hist[k]) / n, oracle::poisson_pmf(k, mu), n) < 4.0);
}

TEST_CASE("two-particle simulation matches the master equation") {
    const RateProfile p(0.4, 1.0, {{0, 1.6}, {1, 0.7}});
    const ParticleConfig Y({0, 0});
    const double t = 0.8;
    const auto sol = oracle::master_equation(p, Y, t, oracle::poisson_window(1.6 * t, 1e-12));
    const long n = 20000;
    std::map<std::vector<Site>, long> counts;
    for (long i = 0; i < n; ++i) {
        Rng r(23, static_cast<std::uint64_t>(i));
        ++counts[simulate_finite(p, Y, t, r).final_state.positions()];
    }
    int checked = 0;
    for (const auto& [x, pr] : sol.prob) {
        if (pr < 0.02) continue;
        CHECK(z_score(static_cast<double>(counts[x]) / n, pr, n) < 4.0);
        ++checked;
    }
    CHECK(checked >= 3);
}

TEST_CASE("master equation conserves mass and starts at the initial state") {
    const RateProfile p(0.5, 1.0, {{1, 1.8}});
    const ParticleConfig Y({1, 0, 0});
    const auto s0 = oracle::master_equation(p, Y, 0.0, 5);
    CHECK(s0.at(Y.positions()) == 1.0);
    const auto s = oracle::master_equation(p, Y, 0.7, oracle::poisson_window(1.8 * 0.7, 1e-13));
    double mass = s.lost_mass;
    for (const auto& [x, pr] : s.prob) mass += pr;
    CHECK(std::abs(mass - 1.0) < 1e-12);
    CHECK(s.lost_mass < 1e-11);
}

TEST_CASE("step initial condition: the first departure is exponential") {
    const RateProfile p(0.5, 1.0, {{0, 0.9}});
    const double t = 1.2;
    const long n = 20000;
    long moved = 0;
    for (long i = 0; i < n; ++i) {
        Rng r(31, static_cast<std::uint64_t>(i));
        moved += simulate_step(p, 1, t, r)[0] > 0;
    }
    CHECK(z_score(static_cast<double>(moved) / n, 1.0 - std::exp(-0.9 * t), n) < 4.0);
}

TEST_CASE("exclusion step process: the leading particle is a Poisson walk") {
    const RateProfile p(0.5, 1.0, {{0, 1.4}});
    const double t = 1.0;
    const long n = 20000;
    long at_least_two = 0;
    for (long i = 0; i < n; ++i) {
        Rng r(41, static_cast<std::uint64_t>(i));
        const auto y = simulate_tasep_step(p, 3, t, r);
        for (std::size_t k = 1; k < y.size(); ++k) REQUIRE(y[k - 1] > y[k]);
        at_least_two += y[0] >= 2;
    }
    CHECK(z_score(static_cast<double>(at_least_two) / n, oracle::poisson_tail(2, 1.4 * t), n) < 4.0);
}

TEST_CASE("recorded trajectory accounts for the total displacement") {
    const RateProfile p(0.3, 1.0);
    Rng r(2, 9);
    const ParticleConfig Y({1, 1, 0});
    const auto s = simulate_finite(p, Y, 3.0, r, true);
    long moved = 0;
    for (std::size_t i = 0; i < Y.size(); ++i) moved += s.final_state[i] - Y[i];
    CHECK(static_cast<long>(s.trajectory.size()) == moved);
    for (std::size_t i = 1; i < s.trajectory.size(); ++i) CHECK(s.trajectory[i].time > s.trajectory[i - 1].time);
}

TEST_CASE("estimates do not depend on the worker count") {
    const RateProfile p(0.5, 1.0);
    auto sampler = [&](std::uint64_t i) {
        Rng r(77, i);
        return simulate_step(p, 2, 2.0, r)[1];
    };
    const std::vector<long> Ms{0, 1, 2, 3};
    const auto a = estimate_distribution(sampler, Ms, 3000, 1);
    const auto b = estimate_distribution(sampler, Ms, 3000, 3);
    CHECK(a.counts == b.counts);
    CHECK(a.p_hat(0) >= a.p_hat(1));
    CHECK(a.standard_error(0) > 0.0);
    CHECK_THROWS_AS(estimate_distribution(sampler, Ms, 0, 1), DomainError);
}
