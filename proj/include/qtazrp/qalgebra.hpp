#pragma once

// q-deformed combinatorics, the rational kernels S, A_sigma, B_r, the subset
// coefficients of the tagged-particle formulas, and the q-digamma based
// scaling constants.
//
// The combinatorial functions are templates over the scalar type so the same
// code runs in double and in exact rational arithmetic (tests use
// boost::multiprecision::cpp_rational as the mirror).

#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace qtazrp {

using cplx = std::complex<double>;

class QParam {
public:
    explicit QParam(double q) : q_(q) {
        if (!(q > 0.0 && q < 1.0))
            throw DomainError("q must lie in the open interval (0,1), got " + std::to_string(q));
    }
    double value() const { return q_; }
    operator double() const { return q_; }

private:
    double q_;
};

// x^e for integer e (negative allowed), exact for rational T.
template <class T>
T ipow(const T& x, long e) {
    T base = e < 0 ? T(1) / x : x;
    unsigned long k = e < 0 ? static_cast<unsigned long>(-e) : static_cast<unsigned long>(e);
    T r(1);
    while (k) {
        if (k & 1u) r *= base;
        base *= base;
        k >>= 1u;
    }
    return r;
}

template <class T>
T q_factorial_t(int m, const T& q) {
    if (m < 0) throw DomainError("q_factorial: m must be nonnegative");
    T r(1), qk(1);
    for (int k = 1; k <= m; ++k) {
        qk *= q;
        r *= (T(1) - qk) / (T(1) - q);
    }
    return r;
}

template <class T>
T q_binomial_t(int n, int k, const T& q) {
    if (k < 0 || k > n) throw DomainError("q_binomial: need 0 <= k <= n");
    // product form, one factor per k, avoids the three factorials
    T r(1);
    for (int i = 1; i <= k; ++i) r *= (T(1) - ipow(q, n - k + i)) / (T(1) - ipow(q, i));
    return r;
}

inline double q_factorial(int m, QParam q) { return q_factorial_t<double>(m, q.value()); }
inline double q_binomial(int n, int k, QParam q) { return q_binomial_t<double>(n, k, q.value()); }

// Occupation counts n_k of a position sequence.
template <class Int>
std::map<Int, int> occupation_counts(std::span<const Int> positions) {
    std::map<Int, int> n;
    for (Int x : positions) ++n[x];
    return n;
}

template <class T, class Int>
T weight_W_t(std::span<const Int> positions, const T& q) {
    T r(1);
    for (const auto& [site, cnt] : occupation_counts(positions)) r *= q_factorial_t<T>(cnt, q);
    return r;
}

inline double weight_W(std::span<const long> positions, QParam q) {
    return weight_W_t<double, long>(positions, q.value());
}

namespace detail {
inline void check_pole(cplx num, cplx den, const char* what) {
    if (std::abs(den) < 1e-12 * (1.0 + std::abs(num)))
        throw SingularError(std::string(what) + ": evaluation on a pole");
}
}  // namespace detail

// S(wa, wb) = -(q wb - wa) / (q wa - wb)
inline cplx s_factor(cplx wa, cplx wb, QParam q) {
    const cplx num = -(q.value() * wb - wa);
    const cplx den = q.value() * wa - wb;
    detail::check_pole(num, den, "s_factor");
    return num / den;
}

// Product of S(w_alpha, w_beta) over inversions (beta, alpha) = (sigma(i), sigma(j)),
// i < j, sigma(i) > sigma(j). sigma is a 0-based permutation.
inline cplx a_sigma(std::span<const int> sigma, std::span<const cplx> w, QParam q) {
    const std::size_t n = sigma.size();
    if (w.size() != n) throw DomainError("a_sigma: size mismatch");
    std::vector<bool> seen(n, false);
    for (int s : sigma) {
        if (s < 0 || static_cast<std::size_t>(s) >= n || seen[s])
            throw DomainError("a_sigma: not a permutation");
        seen[s] = true;
    }
    cplx r = 1.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (sigma[i] > sigma[j]) r *= s_factor(w[sigma[j]], w[sigma[i]], q);
    return r;
}

// B_r(w) = prod_{i<j} (w_i - w_j) / (q w_i - w_j)
inline cplx b_r(std::span<const cplx> w, QParam q) {
    cplx r = 1.0;
    for (std::size_t i = 0; i < w.size(); ++i)
        for (std::size_t j = i + 1; j < w.size(); ++j) {
            const cplx num = w[i] - w[j];
            const cplx den = q.value() * w[i] - w[j];
            detail::check_pole(num, den, "b_r");
            r *= num / den;
        }
    return r;
}

// c_S(n) and c~_S(n); S holds 1-based labels.
template <class T>
T coeff_c_t(std::span<const int> S, int n, const T& q) {
    const long r = static_cast<long>(S.size());
    if (n < 1 || n > r) throw DomainError("coeff_c: need 1 <= n <= |S|");
    long sum_s = 0;
    for (int s : S) sum_s += s;
    const long e = static_cast<long>(n) * (n - 1) / 2 - static_cast<long>(n) * r + sum_s;
    T v = ipow(q, e) * q_binomial_t<T>(static_cast<int>(r - 1), n - 1, q);
    return (n % 2) ? T(-v) : v;
}

template <class T>
T coeff_c_tilde_t(std::span<const int> S, int n, const T& q) {
    const long r = static_cast<long>(S.size());
    if (n < 1 || n > r) throw DomainError("coeff_c_tilde: need 1 <= n <= |S|");
    long sum_s = 0;
    for (int s : S) sum_s += s;
    const long e = static_cast<long>(n) * (n - 1) / 2 + r * (r - 1) / 2 + sum_s;
    T v = ipow(q, e) * q_binomial_t<T>(static_cast<int>(r - 1), n - 1, q);
    return (n % 2) ? T(-v) : v;
}

inline double coeff_c(std::span<const int> S, int n, QParam q) { return coeff_c_t<double>(S, n, q.value()); }
inline double coeff_c_tilde(std::span<const int> S, int n, QParam q) {
    return coeff_c_tilde_t<double>(S, n, q.value());
}

struct SubsetCoefficient {
    int r;
    int n;
    long sum_s;
    double value;
};

// Elementary symmetric sums e_0..e_N of (x_1..x_N).
inline std::vector<double> elementary_symmetric(std::span<const double> x) {
    std::vector<double> e(x.size() + 1, 0.0);
    e[0] = 1.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t k = i + 1; k >= 1; --k) e[k] += e[k - 1] * x[i];
    return e;
}

// ---- q-digamma and the scaling constants ----

struct QDigamma {
    double psi;
    double psi1;
    double psi2;
};

inline QDigamma q_digamma_suite(double theta, QParam q, double rel_tol = 1e-15, long max_terms = 1000000) {
    if (!(theta > 0.0)) throw DomainError("q_digamma_suite: theta must be positive");
    const double lq = std::log(q.value());
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    double x = std::pow(q.value(), theta);
    bool converged = false;
    for (long k = 0; k < max_terms; ++k) {
        const double om = 1.0 - x;
        const double t0 = x / om;
        const double t1 = x / (om * om);
        const double t2 = x * (1.0 + x) / (om * om * om);
        s0 += t0;
        s1 += t1;
        s2 += t2;
        if (t0 < rel_tol * s0 && t1 < rel_tol * s1 && t2 < rel_tol * s2) {
            converged = true;
            break;
        }
        x *= q.value();
    }
    if (!converged) throw NumericFailure("q_digamma_suite: series did not converge");
    return {-std::log1p(-q.value()) + lq * s0, lq * lq * s1, lq * lq * lq * s2};
}

struct ScalingConstants {
    double theta;
    double alpha;
    double kappa;
    double f;
    double chi;
    // undefined at alpha = 1 (log_q alpha = 0 is a pole of the q-digamma)
    std::optional<double> g;
    std::optional<double> sigma;
};

inline ScalingConstants scaling_constants(double theta, double alpha, QParam q) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("scaling_constants: alpha must lie in (0,1]");
    const double lq = std::log(q.value());
    const double qt = std::pow(q.value(), theta);
    const QDigamma d = q_digamma_suite(theta, q);
    ScalingConstants c{};
    c.theta = theta;
    c.alpha = alpha;
    c.kappa = d.psi1 / (lq * lq * qt);
    c.f = d.psi1 / (lq * lq) - d.psi / lq - std::log1p(-q.value()) / lq;
    c.chi = 0.5 * (d.psi1 * lq - d.psi2);
    if (alpha < 1.0) {
        const QDigamma da = q_digamma_suite(std::log(alpha) / lq, q);
        c.g = d.psi1 / (lq * lq) * alpha / qt - da.psi / lq - std::log1p(-q.value()) / lq;
        c.sigma = d.psi1 * alpha / qt - da.psi1;
    }
    return c;
}

}  // namespace qtazrp
