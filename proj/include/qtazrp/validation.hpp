#pragma once

// The cross-validation battery: every formula against an independent oracle
// (master equation, residues, finite-N sums, Monte Carlo, kernel identities).
// Shared by the acceptance test binary and the `validate` CLI command.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "contour.hpp"
#include "fredholm.hpp"
#include "model.hpp"
#include "oracles.hpp"
#include "qalgebra.hpp"
#include "simulator.hpp"

namespace qtazrp::validation {

struct Options {
    long samples = 100000;
    std::uint64_t seed = 20240611;
    unsigned workers = 1;
};

struct CheckResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

// Every certified quantity computed by the checks, for the certification criterion.
struct Certificate {
    std::string what;
    double delta;
    double tol;
};

class Suite {
public:
    explicit Suite(Options o) : opt_(o) {}

    std::vector<CheckResult> run(const std::function<void(const CheckResult&)>& report = {}) {
        std::vector<CheckResult> out;
        auto go = [&](int id, const char* name, auto&& fn) {
            CheckResult r;
            r.id = id;
            r.name = name;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                std::ostringstream detail;
                r.pass = fn(detail);
                r.detail = detail.str();
            } catch (const std::exception& e) {
                r.pass = false;
                r.detail = std::string("exception: ") + e.what();
            }
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (report) report(r);
            out.push_back(r);
        };
        go(1, "transition probability vs master equation", [&](auto& d) { return transition_oracle(d); });
        go(2, "tagged-particle formulas: complementarity and extremes", [&](auto& d) { return tagged_consistency(d); });
        go(3, "contour-relation identities", [&](auto& d) { return contour_relations(d); });
        go(4, "symmetrization identity", [&](auto& d) { return symmetrization(d); });
        go(5, "step Fredholm m=1 vs finite N=30 and simulation", [&](auto& d) { return step_fredholm(d); });
        go(6, "rate-permutation invariance of step_distribution", [&](auto& d) { return permutation_invariance(d); });
        go(7, "zeta integral: residues vs quadrature", [&](auto& d) { return zeta_residues(d); });
        go(8, "finite-n convergence to the limiting determinant", [&](auto& d) { return convergence(d); });
        go(9, "three-way limiting kernel equality", [&](auto& d) { return kernel_equality(d); });
        go(10, "quadrature certification under node doubling", [&](auto& d) { return certification(d); });
        go(11, "simulator: Poisson law and duality", [&](auto& d) { return simulator_checks(d); });
        go(12, "scaling constants", [&](auto& d) { return constants(d); });
        return out;
    }

private:
    Options opt_;
    std::vector<Certificate> certs_;

    static constexpr double kCircleTol = 1e-9;
    static constexpr double kLineTol = 1e-6;

    void cert(const std::string& what, double delta, double tol) { certs_.push_back({what, delta, tol}); }
    void cert(const std::string& what, const ExactProbability& p, double tol = kCircleTol) {
        cert(what, p.node_doubling_delta, tol);
        cert(what + " (imag)", p.imag_residual, 1e-9);
    }
    void cert(const std::string& what, const DetValue& v, double tol) { cert(what, v.grid_refinement_delta, tol); }

    std::mt19937_64 rng_for(int criterion) const { return std::mt19937_64(opt_.seed * 1000003ULL + criterion); }

    // a_x uniform in [0.5, 2] on sites lo..hi, default 1.
    static RateProfile random_profile(std::mt19937_64& g, double q, Site lo, Site hi) {
        std::uniform_real_distribution<double> U(0.5, 2.0);
        std::map<Site, double> ov;
        for (Site x = lo; x <= hi; ++x) ov[x] = U(g);
        return RateProfile(q, 1.0, ov, 0.5, 2.0);
    }

    static ParticleConfig random_config(std::mt19937_64& g, int N, Site lo, Site hi) {
        std::uniform_int_distribution<Site> U(lo, hi);
        std::vector<Site> y(static_cast<std::size_t>(N));
        for (auto& v : y) v = U(g);
        std::sort(y.rbegin(), y.rend());
        return ParticleConfig(y);
    }

    // 1. Transition probabilities against the master equation, and their total mass.
    bool transition_oracle(std::ostream& d) {
        auto g = rng_for(1);
        // N = 3 uses q <= 0.4 so that the automatic 64-node grid certifies
        const double qs[] = {0.35, 0.5, 0.65};
        double worst = 0.0, worst_mass = 0.0;
        long states = 0;
        bool ok = true;
        for (int N = 1; N <= 3; ++N)
            for (double t : {0.2, 1.0}) {
                const double q = N == 3 ? (t < 0.5 ? 0.3 : 0.4) : qs[(N + static_cast<int>(t * 5)) % 3];
                const auto Y = random_config(g, N, -1, 2);
                const auto p = random_profile(g, q, -2, 40);
                const long D = oracle::poisson_window(p.a_max() * t, 1e-12);
                const auto sol = oracle::master_equation(p, Y, t, D);
                ContourOptions o;
                o.workers = opt_.workers;
                double mass = 0.0;
                for (const auto& [x, pr] : sol.prob) {
                    const auto v = transition_probability(Y, ParticleConfig(x), t, p, o);
                    cert("transition N=" + std::to_string(N), v);
                    worst = std::max(worst, std::abs(v.value - pr));
                    mass += v.value;
                    ++states;
                }
                // the truncated window misses at most the Poisson tail (< 1e-12)
                const double mass_err = std::abs(mass - 1.0);
                worst_mass = std::max(worst_mass, mass_err);
                ok = ok && mass_err < 1e-10;
            }
        ok = ok && worst < 1e-7;
        d << "states=" << states << " max|P-master|=" << worst << " max|sum-1|=" << worst_mass;
        return ok;
    }

    // 2. Right and left formulas at complementary indices; the extreme cases.
    bool tagged_consistency(std::ostream& d) {
        auto g = rng_for(2);
        const auto p = random_profile(g, 0.5, -3, 12);
        const auto Y = random_config(g, 3, -1, 2);
        const double t = 0.8;
        ContourOptions o;
        o.workers = opt_.workers;
        double comp = 0.0, ext_right = 0.0, ext_left = 0.0;
        for (Site M = -2; M <= 6; ++M) {
            std::vector<ExactProbability> R(4), L(4);
            for (int n = 1; n <= 3; ++n) {
                R[n] = dist_tagged_right(Y, n, M, t, p, o);
                L[n] = dist_tagged_left(Y, n, M, t, p, o);
                cert("dist_tagged_right", R[n]);
                cert("dist_tagged_left", L[n]);
            }
            for (int n = 1; n <= 3; ++n) comp = std::max(comp, std::abs(L[n].value + R[3 - n + 1].value - 1.0));
            const auto lm = dist_leftmost(Y, M, t, p, o);
            const auto rm = dist_rightmost(Y, M, t, p, o);
            cert("dist_leftmost", lm);
            cert("dist_rightmost", rm);
            ext_right = std::max(ext_right, std::abs(R[3].value - lm.value));
            ext_left = std::max(ext_left, std::abs(L[3].value - rm.value));
        }
        d << "max|left+right-1|=" << comp << " |right(n=N)-leftmost|=" << ext_right << " |left(n=N)-rightmost|=" << ext_left;
        return comp < 1e-8 && ext_right < 1e-10 && ext_left < 1e-10;
    }

    // 3. Identical-contour and nested-contour integrals expressed through each other.
    bool contour_relations(std::ostream& d) {
        auto g = rng_for(3);
        double worst = 0.0;
        ContourOptions o;
        o.workers = opt_.workers;
        for (int N = 1; N <= 3; ++N)
            for (Site M : {0L, 2L, 4L}) {
                const auto p = random_profile(g, 0.5, -2, 8);
                const auto Y = random_config(g, N, -1, 1);
                worst = std::max(worst, contour_relation_residual(Y, M, 0.7, p, o));
            }
        d << "max residual=" << worst;
        return worst < 1e-6;
    }

    // 4. sum_sigma A_sigma(w) = [n]_q! B_n(w).
    bool symmetrization(std::ostream& d) {
        auto g = rng_for(4);
        std::uniform_real_distribution<double> U(-2.0, 2.0), Q(0.2, 0.8);
        double worst = 0.0;
        for (int n = 1; n <= 6; ++n)
            for (int trial = 0; trial < 100; ++trial) {
                const QParam q(Q(g));
                std::vector<cplx> w(static_cast<std::size_t>(n));
                for (auto& v : w) v = cplx(U(g), U(g));
                std::vector<int> sigma(static_cast<std::size_t>(n));
                std::iota(sigma.begin(), sigma.end(), 0);
                cplx lhs = 0.0;
                do {
                    lhs += a_sigma(sigma, w, q);
                } while (std::next_permutation(sigma.begin(), sigma.end()));
                const cplx rhs = q_factorial(n, q) * b_r(w, q);
                worst = std::max(worst, std::abs(lhs - rhs) / std::abs(rhs));
            }
        d << "max relative error=" << worst << " (n<=6, 100 points each)";
        return worst < 1e-10;
    }

    // 5. P(x_1 <= M) = det(I + K_{M,t}) against N = 30 particles and simulation.
    bool step_fredholm(std::ostream& d) {
        auto g = rng_for(5);
        const auto p = random_profile(g, 0.5, 0, 12);
        double worst_finite = 0.0, worst_z = 0.0, worst_route = 0.0;
        bool ok = true;
        for (double t : {1.0, 3.0}) {
            const long n = opt_.samples;
            const std::uint64_t seed = opt_.seed + static_cast<std::uint64_t>(t * 1000);
            std::vector<long> Ms(9);
            std::iota(Ms.begin(), Ms.end(), 0L);
            const auto tab = estimate_distribution(
                [&](std::uint64_t i) {
                    Rng r(seed, i);
                    return simulate_step(p, 1, t, r)[0];
                },
                Ms, n, opt_.workers);
            for (long M : Ms) {
                const auto det = det_K_Mt(1.0, M, t, p);
                cert("det_K_Mt", det, kCircleTol);
                const double P_le = det.value.real();
                const auto sd = step_distribution(1, M, t, p, std::nullopt, {}, opt_.workers);
                cert("step_distribution", sd);
                worst_route = std::max(worst_route, std::abs(sd.value - (1.0 - P_le)));
                const auto fin = dist_step_finite(30, 1, M, t, p, 1e-7, opt_.workers);
                cert("dist_step_finite", fin.prob.node_doubling_delta, 1e-7);
                worst_finite = std::max(worst_finite, std::abs((1.0 - fin.prob.value) - P_le));
                const double exact = 1.0 - P_le;
                const double se = std::sqrt(std::max(exact * (1.0 - exact), 0.0) / static_cast<double>(n));
                const double z = se > 0 ? std::abs(tab.p_hat(M) - exact) / se : (tab.p_hat(M) == exact ? 0.0 : 1e9);
                worst_z = std::max(worst_z, z);
            }
        }
        ok = worst_finite < 1e-6 && worst_z < 3.0 && worst_route < 1e-8;
        d << "max|det-finite(N=30)|=" << worst_finite << " max|zeta route-det|=" << worst_route
          << " max MC z-score=" << worst_z << " (" << opt_.samples << " samples)";
        return ok;
    }

    // 6. step_distribution is symmetric in (b_0, ..., b_M).
    bool permutation_invariance(std::ostream& d) {
        auto g = rng_for(6);
        const Site M = 4;
        const double t = 4.0;
        const int m = 2;
        std::vector<double> a{0.5, 2.0, 1.0, 1.0, 1.5};  // spiked low and high rates
        const RateProfile base(0.5, 1.0, {}, 0.5, 2.0);
        const auto ref = step_distribution(m, M, t, base.with_rates(0, a), std::nullopt, {}, opt_.workers);
        cert("step_distribution", ref);
        double worst = 0.0;
        for (int k = 0; k < 10; ++k) {
            std::shuffle(a.begin(), a.end(), g);
            const auto v = step_distribution(m, M, t, base.with_rates(0, a), std::nullopt, {}, opt_.workers);
            cert("step_distribution", v);
            worst = std::max(worst, std::abs(v.value - ref.value));
        }
        d << "P(x_2>4)=" << ref.value << " max deviation over 10 permutations=" << worst;
        return worst < 1e-9;
    }

    // 7. Residues at zeta = q^{-j} against the trapezoid rule on the zeta circle.
    bool zeta_residues(std::ostream& d) {
        auto g = rng_for(7);
        const auto p = random_profile(g, 0.5, 0, 10);
        double worst = 0.0;
        for (int m = 1; m <= 3; ++m)
            for (Site M : {0L, 3L, 6L}) {
                const auto quad = step_distribution(m, M, 2.0, p, std::nullopt, {}, opt_.workers);
                const auto res = step_distribution_residues(m, M, 2.0, p);
                cert("step_distribution", quad);
                cert("step_distribution_residues", res);
                worst = std::max(worst, std::abs(quad.value - res.value));
            }
        d << "max|quadrature-residues|=" << worst;
        return worst < 1e-8;
    }

    // 8. |det(I + zeta K_{M,t}) - limit| decreases along n = 50, 100, 200, 400.
    bool convergence(std::ostream& d) {
        bool ok = true;
        double worst_slope = -1e9;
        int cases = 0;
        auto one = [&](double tau, const std::vector<double>& betas, double zeta) {
            const auto s = asymptotic_convergence_study({50, 100, 200, 400}, 0.5, tau, betas, zeta);
            cert("limiting_det", s.limit_delta, kLineTol);
            for (const auto& r : s.rows) cert("scaled_finite_det", r.refinement_delta, kLineTol);
            ok = ok && s.strictly_decreasing() && s.loglog_slope < 0.0;
            worst_slope = std::max(worst_slope, s.loglog_slope);
            ++cases;
        };
        for (double tau : {-1.0, 0.0, 1.0})
            for (double zeta : {0.5, 1.0}) one(tau, {}, zeta);
        for (double zeta : {0.5, 1.0}) one(0.0, {1.0}, zeta);
        d << cases << " cases strictly decreasing, largest fitted log-log slope=" << worst_slope;
        return ok;
    }

    // 9. Vertical-line, half-line and Gaussian forms of the limiting determinant.
    bool kernel_equality(std::ostream& d) {
        double worst = 0.0;
        for (double tau : {-1.5, -0.75, 0.0, 0.75, 1.5})
            for (double zeta : {-1.0, -0.5, 0.5, 1.0, 2.0}) {
                const auto a = limiting_det(zeta, 0.5, tau);
                const auto b = halfline_det(zeta, tau, 0.5);
                const auto c = mehler_det(zeta, tau, 0.5);
                cert("limiting_det", a, kLineTol);
                cert("halfline_det", b, kLineTol);
                cert("mehler_det", c, kLineTol);
                worst = std::max({worst, std::abs(a.value - b.value), std::abs(a.value - c.value), std::abs(b.value - c.value)});
            }
        d << "max pairwise difference over 5x5 (tau, zeta)=" << worst;
        return worst < 1e-6;
    }

    // 10. Every certificate collected by checks 1-9.
    bool certification(std::ostream& d) {
        std::size_t bad = 0;
        double worst_ratio = 0.0;
        std::string worst_what;
        for (const auto& c : certs_) {
            const double ratio = c.delta / c.tol;
            if (!(c.delta < c.tol)) ++bad;
            if (ratio > worst_ratio) {
                worst_ratio = ratio;
                worst_what = c.what;
            }
        }
        d << certs_.size() << " certified values, " << bad << " violations, worst delta/tol=" << worst_ratio << " ("
          << worst_what << ")";
        return bad == 0 && !certs_.empty();
    }

    // 11. Poisson law of a single particle; duality with the exclusion process.
    bool simulator_checks(std::ostream& d) {
        const long n = opt_.samples;
        // chi-square on the displacement of one particle, b t = 1.5
        const auto hom = RateProfile::homogeneous(0.5, 1.5);
        const double t = 2.0, mu = hom.b(0) * t;
        std::vector<long> disp(static_cast<std::size_t>(n));
        parallel_for(disp.size(), opt_.workers, [&](std::size_t i) {
            Rng r(opt_.seed + 11, i);
            disp[i] = simulate_finite(hom, ParticleConfig({0}), t, r).final_state[0];
        });
        int K = 0;
        while (n * oracle::poisson_tail(K + 1, mu) >= 5.0) ++K;  // last bin {>= K} keeps expectation >= 5
        std::vector<double> obs(static_cast<std::size_t>(K) + 1, 0.0);
        for (long v : disp) obs[static_cast<std::size_t>(std::min<long>(v, K))] += 1.0;
        double chi2 = 0.0;
        for (int k = 0; k <= K; ++k) {
            const double e = n * (k < K ? oracle::poisson_pmf(k, mu) : oracle::poisson_tail(K, mu));
            chi2 += (obs[static_cast<std::size_t>(k)] - e) * (obs[static_cast<std::size_t>(k)] - e) / e;
        }
        const double pval = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(K), chi2));

        // duality: per-sample map identity and an independent exclusion-process simulation
        auto g = rng_for(11);
        const auto p = random_profile(g, 0.5, 0, 10);
        const double td = 2.0;
        constexpr int kM = 3, kX = 4;
        std::vector<std::array<long, (kM + 1) * (kX + 1)>> zrp(static_cast<std::size_t>(n)), tas(static_cast<std::size_t>(n));
        std::vector<char> map_ok(static_cast<std::size_t>(n), 1);
        parallel_for(static_cast<std::size_t>(n), opt_.workers, [&](std::size_t i) {
            Rng r(opt_.seed + 12, i);
            std::vector<Jump> traj;
            const auto x = simulate_step(p, kM, td, r, &traj);
            // occupations of sites >= 1 from the jump record
            std::map<Site, long> occ;
            for (const auto& j : traj) {
                if (j.site > 0 && --occ[j.site] == 0) occ.erase(j.site);
                ++occ[j.site + 1];
            }
            const auto y = step_zrp_to_tasep(occ, duality_event_count(traj));
            Rng r2(opt_.seed + 13, i);
            const auto yt = simulate_tasep_step(p, kX, td, r2);
            for (int m = 1; m <= kM; ++m)
                for (int xx = 0; xx <= kX; ++xx) {
                    const bool ev = x[static_cast<std::size_t>(m - 1)] > xx;
                    const bool dual = y.position(xx) + xx >= m;
                    if (ev != dual) map_ok[i] = 0;
                    zrp[i][static_cast<std::size_t>(m * (kX + 1) + xx)] = ev;
                    tas[i][static_cast<std::size_t>(m * (kX + 1) + xx)] = yt[static_cast<std::size_t>(xx)] + xx >= m;
                }
        });
        const long map_fail = std::count(map_ok.begin(), map_ok.end(), 0);
        double worst_z = 0.0;
        for (int m = 1; m <= kM; ++m)
            for (int xx = 0; xx <= kX; ++xx) {
                const auto k = static_cast<std::size_t>(m * (kX + 1) + xx);
                double a = 0, b = 0;
                for (long i = 0; i < n; ++i) {
                    a += static_cast<double>(zrp[static_cast<std::size_t>(i)][k]);
                    b += static_cast<double>(tas[static_cast<std::size_t>(i)][k]);
                }
                a /= static_cast<double>(n);
                b /= static_cast<double>(n);
                const double pool = 0.5 * (a + b);
                const double se = std::sqrt(2.0 * pool * (1.0 - pool) / static_cast<double>(n));
                const double z = se > 0 ? std::abs(a - b) / se : (a == b ? 0.0 : 1e9);
                worst_z = std::max(worst_z, z);
            }
        d << "chi2=" << chi2 << " (df=" << K << ", p=" << pval << "); duality map mismatches=" << map_fail
          << ", max z(ZRP vs exclusion)=" << worst_z;
        return pval > 0.01 && map_fail == 0 && worst_z < 3.0;
    }

    // 12. kappa decreasing towards 1/(1-q), chi > 0, psi' against central differences
    // (step 1e-4; relative to max(1, |psi'|) since psi' ~ 1/theta^2 near 0).
    bool constants(std::ostream& d) {
        bool ok = true;
        double worst_fd = 0.0, last_gap = 0.0;
        for (double qv : {0.3, 0.5, 0.7}) {
            const QParam q(qv);
            double prev = std::numeric_limits<double>::infinity();
            for (int i = 0; i <= 200; ++i) {
                const double theta = 0.1 + (20.0 - 0.1) * i / 200.0;
                const auto c = scaling_constants(theta, 1.0, q);
                ok = ok && c.kappa < prev && c.kappa > 1.0 / (1.0 - qv) && c.chi > 0.0;
                prev = c.kappa;
                const double h = 1e-4;
                const double fd = (q_digamma_suite(theta + h, q).psi - q_digamma_suite(theta - h, q).psi) / (2 * h);
                const double psi1 = q_digamma_suite(theta, q).psi1;
                worst_fd = std::max(worst_fd, std::abs(fd - psi1) / std::max(1.0, std::abs(psi1)));
            }
            last_gap = std::max(last_gap, (prev - 1.0 / (1.0 - qv)) * (1.0 - qv));
        }
        // kappa(20) within a relative 1e-2 of its limit for q <= 0.7 (q^20 ~ 8e-4)
        ok = ok && worst_fd < 1e-6 && last_gap < 1e-2;
        d << "kappa decreasing with kappa(20)(1-q)-1 <= " << last_gap << ", chi>0, max relative |psi'-FD|=" << worst_fd;
        return ok;
    }
};

inline std::vector<CheckResult> run_all(const Options& o, const std::function<void(const CheckResult&)>& report = {}) {
    Suite s(o);
    return s.run(report);
}

}  // namespace qtazrp::validation
