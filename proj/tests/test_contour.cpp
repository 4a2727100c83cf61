#include <catch_amalgamated.hpp>

#include <cmath>

#include "contour.hpp"
#include "oracles.hpp"
#include "quadrature.hpp"

using namespace qtazrp;
using Catch::Matchers::WithinAbs;

TEST_CASE("trapezoid and Gauss-Legendre rules") {
    const Circle c{cplx(0.3, 0.0), 1.5, 128};
    CHECK(std::abs(circle_integral([](cplx w) { return 1.0 / w; }, c) - 1.0) < 1e-14);
    CHECK(std::abs(circle_integral([](cplx w) { return w * w; }, c)) < 1e-14);
    CHECK(std::abs(circle_integral([](cplx w) { return 1.0 / (w - 2.5); }, c)) < 1e-12);
    CHECK_THROWS_AS(circle_integral([](cplx w) { return w; }, Circle{0.0, 1.0, 12}), DomainError);

    const auto& gl = gauss_legendre(6);
    double s = 0.0;
    for (std::size_t i = 0; i < gl.x.size(); ++i) s += gl.w[i] * std::pow(gl.x[i], 10);
    CHECK_THAT(s, WithinAbs(2.0 / 11.0, 1e-14));

    // exp-image of a log-plane circle: winds once around e^sigma, not around 0
    const Nodes nd = log_circle_nodes(std::log(0.8), 1.0, 64);
    cplx around_b = 0.0, around_0 = 0.0;
    for (std::size_t k = 0; k < nd.size(); ++k) {
        around_b += nd.dw[k] / (nd.w[k] - 0.8);
        around_0 += nd.dw[k] / nd.w[k];
    }
    CHECK(std::abs(around_b - 1.0) < 1e-12);
    CHECK(std::abs(around_0) < 1e-12);
}

TEST_CASE("one particle: transition probability is a Poisson weight") {
    const RateProfile p(0.5, 1.2);
    const double t = 0.9;
    for (Site x = 2; x <= 7; ++x) {
        const auto v = transition_probability(ParticleConfig({2}), ParticleConfig({x}), t, p);
        // a lone particle jumps at rate b = (1 - q) a
        CHECK_THAT(v.value, WithinAbs(oracle::poisson_pmf(x - 2, 0.6 * t), 1e-13));
        CHECK_NOTHROW(certify(v));
    }
    CHECK_THAT(transition_probability(ParticleConfig({2}), ParticleConfig({1}), t, p).value, WithinAbs(0.0, 1e-13));
}

TEST_CASE("transition probability against the master equation, inhomogeneous rates") {
    const RateProfile p(0.4, 1.0, {{-1, 0.6}, {0, 1.7}, {1, 0.8}, {2, 1.3}});
    const ParticleConfig Y({0, -1});
    const double t = 0.6;
    const auto sol = oracle::master_equation(p, Y, t, oracle::poisson_window(1.7 * t, 1e-13));
    double worst = 0.0, mass = 0.0;
    for (const auto& [x, pr] : sol.prob) {
        const auto v = transition_probability(Y, ParticleConfig(x), t, p);
        worst = std::max(worst, std::abs(v.value - pr));
        mass += v.value;
    }
    CHECK(worst < 1e-10);
    CHECK_THAT(mass, WithinAbs(1.0, 1e-10));
}

TEST_CASE("zero time gives the identity") {
    const RateProfile p(0.5, 1.0);
    const ParticleConfig Y({1, 1, 0});
    CHECK_THAT(transition_probability(Y, Y, 0.0, p).value, WithinAbs(1.0, 1e-12));
    CHECK_THAT(transition_probability(Y, ParticleConfig({2, 1, 0}), 0.0, p).value, WithinAbs(0.0, 1e-12));
    CHECK_THAT(dist_leftmost(Y, -1, 0.0, p).value, WithinAbs(1.0, 1e-12));
    CHECK_THAT(dist_leftmost(Y, 0, 0.0, p).value, WithinAbs(0.0, 1e-12));
}

TEST_CASE("one particle: tail formulas are Poisson tails") {
    const RateProfile p(0.5, 0.9);
    const double t = 1.4;
    const ParticleConfig Y({1});
    for (Site M = 0; M <= 5; ++M) {
        const double tail = oracle::poisson_tail(M, 0.45 * t);  // x > M iff at least M jumps from site 1
        CHECK_THAT(dist_leftmost(Y, M, t, p).value, WithinAbs(tail, 1e-11));
        CHECK_THAT(dist_rightmost(Y, M, t, p).value, WithinAbs(1.0 - tail, 1e-9));
        CHECK_THAT(dist_tagged_right(Y, 1, M, t, p).value, WithinAbs(tail, 1e-11));
        CHECK_THAT(dist_tagged_left(Y, 1, M, t, p).value, WithinAbs(1.0 - tail, 1e-9));
    }
}

TEST_CASE("tagged formulas: complementarity, extremes and the master equation") {
    const RateProfile p(0.5, 1.0, {{0, 1.4}, {1, 0.7}, {2, 1.1}});
    const ParticleConfig Y({1, 0});
    const double t = 0.7;
    const auto sol = oracle::master_equation(p, Y, t, oracle::poisson_window(1.4 * t, 1e-13));
    for (Site M = 0; M <= 3; ++M) {
        for (int n = 1; n <= 2; ++n) {
            double direct = 0.0;
            for (const auto& [x, pr] : sol.prob)
                if (x[static_cast<std::size_t>(n - 1)] > M) direct += pr;
            const double right = dist_tagged_right(Y, n, M, t, p).value;
            // the left formula counts labels from the left: n' = N - n + 1
            const double left = dist_tagged_left(Y, 3 - n, M, t, p).value;
            CHECK_THAT(right, WithinAbs(direct, 1e-10));
            CHECK_THAT(left + right, WithinAbs(1.0, 1e-9));
        }
        CHECK_THAT(dist_tagged_right(Y, 2, M, t, p).value, WithinAbs(dist_leftmost(Y, M, t, p).value, 1e-12));
        CHECK_THAT(dist_tagged_left(Y, 2, M, t, p).value, WithinAbs(dist_rightmost(Y, M, t, p).value, 1e-9));
    }
}

TEST_CASE("contour relations hold to quadrature accuracy") {
    const RateProfile p(0.5, 1.0, {{0, 1.3}, {1, 0.8}, {2, 1.5}});
    CHECK(contour_relation_residual(ParticleConfig({1, 0}), 2, 0.5, p) < 1e-8);
    CHECK(contour_relation_residual(ParticleConfig({0}), 1, 0.5, p) < 1e-8);
}

TEST_CASE("particles started together: finite formula against the master equation") {
    const RateProfile p(0.5, 1.0, {{0, 1.2}, {1, 0.7}, {2, 1.6}});
    const int N = 3;
    const double t = 0.8;
    const auto sol = oracle::master_equation(p, ParticleConfig::all_at(N, 0), t, oracle::poisson_window(1.6 * t, 1e-13));
    for (int m = 1; m <= N; ++m)
        for (Site M = 0; M <= 2; ++M) {
            double direct = 0.0;
            for (const auto& [x, pr] : sol.prob)
                if (x[static_cast<std::size_t>(m - 1)] > M) direct += pr;
            const auto r = dist_step_finite(N, m, M, t, p, 1e-9);
            CHECK_THAT(r.prob.value, WithinAbs(direct, 1e-8));
        }
    CHECK_THROWS_AS(dist_step_finite(2, 3, 0, 1.0, p), DomainError);
}

TEST_CASE("option and domain validation") {
    const RateProfile p(0.5, 1.0);
    const ParticleConfig Y({1, 0});
    ContourOptions bad;
    bad.nodes = 24;
    CHECK_THROWS_AS(transition_probability(Y, Y, 1.0, p, bad), DomainError);
    ContourOptions small;
    small.n_max = 1;
    CHECK_THROWS_AS(transition_probability(Y, Y, 1.0, p, small), DomainError);
    CHECK_THROWS_AS(transition_probability(Y, ParticleConfig({1}), 1.0, p), DomainError);
    CHECK_THROWS_AS(transition_probability(Y, Y, -0.5, p), DomainError);
    CHECK_THROWS_AS(transition_probability(ParticleConfig(), ParticleConfig(), 1.0, p), DomainError);
    ContourOptions radius;
    radius.radius = 0.1;  // does not enclose b = 0.5
    CHECK_THROWS_AS(dist_leftmost(Y, 0, 1.0, p, radius), ConfigError);

    ExactProbability loose{0.5, 1e-6, 0.0, "test"};
    CHECK_THROWS_AS(certify(loose), InvariantViolation);
    ExactProbability imag{0.5, 0.0, 1e-3, "test"};
    CHECK_THROWS_AS(certify(imag), InvariantViolation);
    ExactProbability outside{1.5, 0.0, 0.0, "test"};
    CHECK_THROWS_AS(certify(outside), InvariantViolation);
}
