#include <catch_amalgamated.hpp>

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <limits>
#include <vector>

#include "qalgebra.hpp"

using namespace qtazrp;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using rational = boost::multiprecision::cpp_rational;

namespace {

// [m]_q! as a product of 1 + q + ... + q^{k-1}, no division.
rational factorial_by_sums(int m, const rational& q) {
    rational r(1);
    for (int k = 1; k <= m; ++k) {
        rational s(0), p(1);
        for (int i = 0; i < k; ++i) {
            s += p;
            p *= q;
        }
        r *= s;
    }
    return r;
}

// Gaussian binomial via the Pascal rule [n,k] = [n-1,k-1] + q^k [n-1,k].
rational binomial_by_pascal(int n, int k, const rational& q) {
    std::vector<std::vector<rational>> t(n + 1, std::vector<rational>(n + 1, rational(0)));
    for (int a = 0; a <= n; ++a) {
        t[a][0] = 1;
        for (int b = 1; b <= a; ++b) t[a][b] = t[a - 1][b - 1] + ipow(q, b) * (b <= a - 1 ? t[a - 1][b] : rational(0));
    }
    return t[n][k];
}

// log Gamma_q(x) = (1-x) log(1-q) + sum_k [log(1-q^{k+1}) - log(1-q^{k+x})]
long double log_qgamma(long double x, long double q) {
    long double s = (1 - x) * std::log1p(-q);
    for (int k = 0; k < 20000; ++k) s += std::log1p(-std::pow(q, k + 1)) - std::log1p(-std::pow(q, k + x));
    return s;
}

}  // namespace

TEST_CASE("q parameter is confined to (0,1)") {
    CHECK_THROWS_AS(QParam(0.0), DomainError);
    CHECK_THROWS_AS(QParam(1.0), DomainError);
    CHECK_THROWS_AS(QParam(-0.3), DomainError);
    CHECK_THROWS_AS(QParam(std::numeric_limits<double>::quiet_NaN()), DomainError);
    CHECK(QParam(0.5).value() == 0.5);
}

TEST_CASE("q-factorial matches the exact sum-product form") {
    const rational q(3, 7);
    for (int m = 0; m <= 12; ++m) {
        CHECK(q_factorial_t<rational>(m, q) == factorial_by_sums(m, q));
        CHECK_THAT(q_factorial(m, QParam(3.0 / 7.0)), WithinRel(static_cast<double>(factorial_by_sums(m, q)), 1e-13));
    }
    CHECK_THROWS_AS(q_factorial(-1, QParam(0.5)), DomainError);
}

TEST_CASE("q-binomial satisfies the Pascal rule exactly") {
    const rational q(2, 5);
    for (int n = 0; n <= 10; ++n)
        for (int k = 0; k <= n; ++k) {
            CHECK(q_binomial_t<rational>(n, k, q) == binomial_by_pascal(n, k, q));
            CHECK(q_binomial_t<rational>(n, k, q) == q_binomial_t<rational>(n, n - k, q));
        }
    CHECK_THROWS_AS(q_binomial(3, 4, QParam(0.5)), DomainError);
}

TEST_CASE("q-binomial theorem at x = 1") {
    // sum_k q^{k(k-1)/2} [n,k] = prod_{i<n} (1 + q^i)
    const rational q(1, 3);
    for (int n = 0; n <= 9; ++n) {
        rational lhs(0), rhs(1);
        for (int k = 0; k <= n; ++k) lhs += ipow(q, k * (k - 1) / 2) * q_binomial_t<rational>(n, k, q);
        for (int i = 0; i < n; ++i) rhs *= 1 + ipow(q, i);
        CHECK(lhs == rhs);
    }
}

TEST_CASE("weight W is the product of q-factorials of occupations") {
    const QParam q(0.5);
    const std::vector<long> x{3, 3, 1, 0, 0, 0};
    CHECK_THAT(weight_W(x, q), WithinRel(q_factorial(2, q) * q_factorial(3, q), 1e-15));
    const std::vector<long> distinct{4, 2, 1};
    CHECK(weight_W(distinct, q) == 1.0);
}

TEST_CASE("subset coefficients for small sets") {
    const rational q(1, 2);
    const std::vector<int> one{1};
    CHECK(coeff_c_t<rational>(one, 1, q) == -1);
    CHECK(coeff_c_tilde_t<rational>(one, 1, q) == rational(-1, 2));
    // S = {1,2}, n = 2: exponent 1 - 4 + 3 = 0, [1,1] = 1, even n
    const std::vector<int> two{1, 2};
    CHECK(coeff_c_t<rational>(two, 2, q) == 1);
    // S = {2,3}, n = 1: exponent -2 + 5 = 3, sign -, [1,0] = 1
    const std::vector<int> s23{2, 3};
    CHECK(coeff_c_t<rational>(s23, 1, q) == rational(-1, 8));
    CHECK_THROWS_AS(coeff_c(two, 3, QParam(0.5)), DomainError);
}

TEST_CASE("pair factors and the inversion product") {
    const QParam q(0.4);
    const cplx a(0.3, 0.2), b(-0.5, 0.7);
    CHECK(std::abs(s_factor(a, b, q) - (-(0.4 * b - a) / (0.4 * a - b))) < 1e-15);
    const std::vector<cplx> w{a, b};
    const std::vector<int> id{0, 1}, swap{1, 0};
    CHECK(std::abs(a_sigma(id, w, q) - 1.0) < 1e-15);
    CHECK(std::abs(a_sigma(swap, w, q) - s_factor(a, b, q)) < 1e-15);
    CHECK(std::abs(b_r(w, q) - (a - b) / (0.4 * a - b)) < 1e-15);
    const std::vector<int> bad{0, 0};
    CHECK_THROWS_AS(a_sigma(bad, w, q), DomainError);
    const std::vector<cplx> pole{cplx(1.0), cplx(0.4)};
    CHECK_THROWS_AS(b_r(pole, q), SingularError);
}

TEST_CASE("elementary symmetric sums agree with subset enumeration") {
    const std::vector<double> x{0.5, -1.25, 2.0, 0.75, 3.5};
    const auto e = elementary_symmetric(x);
    const std::size_t n = x.size();
    std::vector<double> brute(n + 1, 0.0);
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        double p = 1.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1u) p *= x[i];
        brute[static_cast<std::size_t>(__builtin_popcount(mask))] += p;
    }
    for (std::size_t k = 0; k <= n; ++k) CHECK_THAT(e[k], WithinAbs(brute[k], 1e-12));
}

TEST_CASE("q-digamma and its derivatives against finite differences of log Gamma_q") {
    for (double q : {0.3, 0.6}) {
        for (double theta : {0.4, 1.0, 3.5}) {
            const long double h = 1e-4L;
            const auto lg = [&](long double x) { return log_qgamma(x, q); };
            const double psi_fd = static_cast<double>((lg(theta + h) - lg(theta - h)) / (2 * h));
            const auto d = q_digamma_suite(theta, QParam(q));
            CHECK_THAT(d.psi, WithinAbs(psi_fd, 1e-7));
            const double hh = 1e-4;
            const auto dp = q_digamma_suite(theta + hh, QParam(q));
            const auto dm = q_digamma_suite(theta - hh, QParam(q));
            CHECK_THAT(d.psi1, WithinRel((dp.psi - dm.psi) / (2 * hh), 1e-6));
            CHECK_THAT(d.psi2, WithinRel((dp.psi1 - dm.psi1) / (2 * hh), 1e-6));
        }
    }
    CHECK_THROWS_AS(q_digamma_suite(0.0, QParam(0.5)), DomainError);
}

TEST_CASE("scaling constants") {
    const QParam q(0.5);
    const auto s = scaling_constants(1.5, 1.0, q);
    const auto d = q_digamma_suite(1.5, q);
    const double lq = std::log(0.5);
    CHECK_THAT(s.kappa, WithinRel(d.psi1 / (lq * lq * std::pow(0.5, 1.5)), 1e-14));
    CHECK(s.kappa > 1.0 / (1.0 - 0.5));
    CHECK(s.chi > 0.0);
    CHECK_FALSE(s.g.has_value());
    CHECK_FALSE(s.sigma.has_value());
    const auto s2 = scaling_constants(1.5, 0.4, q);
    REQUIRE(s2.g.has_value());
    REQUIRE(s2.sigma.has_value());
    CHECK(s2.kappa == s.kappa);
    CHECK_THROWS_AS(scaling_constants(1.0, 1.5, q), DomainError);
    CHECK_THROWS_AS(scaling_constants(1.0, 0.0, q), DomainError);
    // kappa decreases in theta
    double prev = std::numeric_limits<double>::infinity();
    for (double theta = 0.2; theta < 10.0; theta += 0.7) {
        const double k = scaling_constants(theta, 1.0, q).kappa;
        CHECK(k < prev);
        prev = k;
    }
}
