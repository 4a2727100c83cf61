#pragma once

// Exact finite-N formulas as contour integrals: the transition probability,
// the tagged-particle distributions on the centred circle and on nested
// contours, the relations between the two contour families, and the
// specialisation to N particles started at the origin.
//
// r-fold integrals are tensor-product trapezoid sums; the pairwise factors
// (B_r or S) are tabulated once per contour pair. Every reported value is
// recomputed on the half-resolution grid and the change is kept as the
// node-doubling delta.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "qalgebra.hpp"
#include "quadrature.hpp"

namespace qtazrp {

struct ExactProbability {
    double value = 0.0;
    double node_doubling_delta = 0.0;
    double imag_residual = 0.0;
    std::string method;

    double reported() const { return std::clamp(value, 0.0, 1.0); }
};

// Throws InvariantViolation unless the value is certified.
inline void certify(const ExactProbability& p, double doubling_tol = 1e-9, double imag_tol = 1e-9) {
    if (!std::isfinite(p.value)) throw NumericFailure(p.method + ": non-finite value");
    if (p.node_doubling_delta >= doubling_tol)
        throw InvariantViolation(p.method + ": node-doubling delta " + num(p.node_doubling_delta) +
                                 " exceeds " + num(doubling_tol));
    if (p.imag_residual >= imag_tol)
        throw InvariantViolation(p.method + ": imaginary residue " + num(p.imag_residual));
    const double eps = std::max(1e-8, 10.0 * p.node_doubling_delta);
    if (p.value < -eps || p.value > 1.0 + eps)
        throw InvariantViolation(p.method + ": value " + num(p.value) + " is not a probability");
}

struct ContourOptions {
    int nodes = 0;                   // per axis (0: automatic); the certificate uses nodes/2
    std::optional<double> radius;    // centred circle; chosen automatically if empty
    unsigned workers = 1;
    int n_max = 5;                   // largest N accepted
    int max_fold = 5;                // largest r-fold integral accepted
    double family_margin = 0.5;      // log-plane margin of nested families
    double max_tensor = 33554432.0;  // cap on nodes^r for automatic node counts (2^25)
};

// prod'_{k=lo}^{hi} b_k / (b_k - w), with the empty (hi = lo-1) and
// reciprocal (hi < lo-1) conventions.
inline cplx product_ratio(const RateProfile& p, cplx w, Site lo, Site hi) {
    cplx r = 1.0;
    if (hi >= lo) {
        for (Site k = lo; k <= hi; ++k) {
            const double b = p.b(k);
            detail::check_pole(b, b - w, "product_ratio");
            r *= b / (b - w);
        }
    } else if (hi < lo - 1) {
        for (Site k = hi + 1; k <= lo - 1; ++k) {
            const double b = p.b(k);
            r *= (b - w) / b;
        }
    }
    return r;
}

namespace detail {

// Sum over the tensor grid of prod_d vals[d][k_d] * prod_{a<d} pair[d][a][k_a * n_d + k_d].
// A null pair table stands for the constant 1. Zero partial products prune the subtree.
class TensorSum {
public:
    using Table = std::vector<cplx>;

    TensorSum(std::vector<const std::vector<cplx>*> vals, std::vector<std::vector<const Table*>> pair)
        : vals_(std::move(vals)), pair_(std::move(pair)) {}

    cplx run(unsigned workers) const {
        const std::size_t r = vals_.size();
        if (r == 0) return 1.0;
        const std::size_t n0 = vals_[0]->size();
        std::vector<cplx> partial(n0, 0.0);
        parallel_for(n0, workers, [&](std::size_t k0) {
            const cplx v = (*vals_[0])[k0];
            if (v == 0.0) return;
            std::vector<std::size_t> idx(r);
            std::vector<std::vector<cplx>> rows(r);
            idx[0] = k0;
            partial[k0] = v * rec(1, idx, rows);
        });
        cplx s = 0.0;
        for (const cplx& v : partial) s += v;
        return s;
    }

private:
    // rows[d] holds vals[d][k] times the pair factors against the fixed outer indices.
    cplx rec(std::size_t d, std::vector<std::size_t>& idx, std::vector<std::vector<cplx>>& rows) const {
        const std::size_t r = vals_.size();
        if (d == r) return 1.0;
        const std::vector<cplx>& vd = *vals_[d];
        const std::size_t nd = vd.size();
        std::vector<cplx>& row = rows[d];
        row.assign(vd.begin(), vd.end());
        cplx* __restrict out = row.data();
        for (std::size_t a = 0; a < d; ++a)
            if (const Table* t = pair_[d][a]) {
                const cplx* __restrict in = t->data() + idx[a] * nd;
                for (std::size_t k = 0; k < nd; ++k) out[k] *= in[k];
            }
        cplx s = 0.0;
        if (d + 1 == r) {
            for (std::size_t k = 0; k < nd; ++k) s += out[k];
            return s;
        }
        for (std::size_t k = 0; k < nd; ++k) {
            const cplx v = row[k];
            if (v == 0.0) continue;
            idx[d] = k;
            s += v * rec(d + 1, idx, rows);
        }
        return s;
    }

    std::vector<const std::vector<cplx>*> vals_;
    std::vector<std::vector<const Table*>> pair_;
};

// (wa - wb) / (q wa - wb) for wa in A, wb in B, row-major over A.
inline std::vector<cplx> b_pair_table(const Nodes& A, const Nodes& B, double q) {
    std::vector<cplx> t(A.size() * B.size());
    for (std::size_t i = 0; i < A.size(); ++i)
        for (std::size_t j = 0; j < B.size(); ++j) {
            const cplx num = A.w[i] - B.w[j];
            const cplx den = q * A.w[i] - B.w[j];
            check_pole(num, den, "B_r pair factor");
            t[i * B.size() + j] = num / den;
        }
    return t;
}

inline std::vector<cplx> s_pair_table(const Nodes& A, const Nodes& B, QParam q) {
    std::vector<cplx> t(A.size() * B.size());
    for (std::size_t i = 0; i < A.size(); ++i)
        for (std::size_t j = 0; j < B.size(); ++j) t[i * B.size() + j] = s_factor(A.w[i], B.w[j], q);
    return t;
}

// prod'_{lo}^{hi} b/(b-w) * exp(-w t) [/ w] * dw at every node.
inline std::vector<cplx> factor_values(const RateProfile& p, Site lo, Site hi, double t, const Nodes& nd, bool over_w) {
    std::vector<cplx> v(nd.size());
    for (std::size_t k = 0; k < nd.size(); ++k) {
        const cplx w = nd.w[k];
        cplx f = product_ratio(p, w, lo, hi) * std::exp(-w * t) * nd.dw[k];
        if (over_w) f /= w;
        if (!std::isfinite(f.real()) || !std::isfinite(f.imag())) throw NumericFailure("integrand overflow on the contour");
        v[k] = f;
    }
    return v;
}

struct FactorRange {
    Site lo;
    Site hi;
};

// Largest pole b_k inside any forward range and largest b_k touched at all.
inline std::pair<double, double> pole_extent(const RateProfile& p, const std::vector<FactorRange>& ranges) {
    double inner = 0.0, touched = 0.0;
    for (const auto& r : ranges) {
        if (r.hi >= r.lo)
            for (Site k = r.lo; k <= r.hi; ++k) inner = std::max(inner, p.b(k));
        for (Site k = std::min(r.lo, r.hi + 1); k <= std::max(r.hi, r.lo - 1); ++k) touched = std::max(touched, p.b(k));
    }
    return {inner, std::max(inner, touched)};
}

// Circle for integrands prod_j prod'_j(w_j) e^{-w_j t} [/ w_j] (times pair
// factors with poles at w_j = q w_i when `pairs`). Candidates are circles
// through -l and r on the real axis (l > 0, r beyond every enclosed b_k, so 0
// and the b_k are inside and q C lies inside C); each is scored by
//   sum_j max_C log|integrand_j| + max(n log rho, log 1e-16),
// rho the largest ratio |pole - c| / R of an enclosed singularity, which
// balances cancellation against trapezoid aliasing. For large t this shifts
// the circle right, where e^{-wt} is small.
struct CircleChoice {
    double center = 0.0;
    double radius = 1.0;
};

inline CircleChoice choose_circle(const RateProfile& p, const std::vector<FactorRange>& ranges, double t, int n, double q,
                                  bool over_w, bool pairs) {
    auto [inner, touched] = pole_extent(p, ranges);
    Site lo = std::numeric_limits<Site>::max(), hi = std::numeric_limits<Site>::min();
    double inner_min = std::numeric_limits<double>::infinity();
    for (const auto& r : ranges) {
        lo = std::min({lo, r.lo, r.hi + 1});
        hi = std::max({hi, r.hi, r.lo - 1});
        for (Site k = r.lo; k <= r.hi; ++k) inner_min = std::min(inner_min, p.b(k));
    }
    const std::vector<double> bs = hi >= lo ? p.b_range(lo, hi) : std::vector<double>{};
    const double scale = std::max({inner, touched, 1e-3});
    const double r_min = std::max(1.02 * inner, 0.02 * scale);
    const double r_max = std::max(2.0 * touched + 1.0, 3.0 * r_min);
    const double l_min = 0.02 * scale, l_max = std::max(2.0 * scale + 1.0, 3.0 * r_min);
    constexpr int kGrid = 16, kAngles = 17;
    auto geo = [](double a, double b, int i) { return a * std::pow(b / a, static_cast<double>(i) / (kGrid - 1)); };

    std::vector<double> logs(bs.size() + 1);
    auto score = [&](double c, double R) {
        double total = 0.0;
        std::vector<double> best(ranges.size(), -std::numeric_limits<double>::infinity());
        for (int a = 0; a < kAngles; ++a) {
            const cplx w = c + std::polar(R, std::numbers::pi * a / (kAngles - 1));
            logs[0] = 0.0;
            for (std::size_t k = 0; k < bs.size(); ++k) logs[k + 1] = logs[k] + std::log(bs[k] / std::abs(bs[k] - w));
            double common = -t * w.real();
            if (over_w) common -= std::log(std::abs(w));
            for (std::size_t j = 0; j < ranges.size(); ++j) {
                const auto& r = ranges[j];
                double v = common;
                if (r.hi >= r.lo)
                    v += logs[static_cast<std::size_t>(r.hi - lo + 1)] - logs[static_cast<std::size_t>(r.lo - lo)];
                else if (r.hi < r.lo - 1)
                    v -= logs[static_cast<std::size_t>(r.lo - lo)] - logs[static_cast<std::size_t>(r.hi + 1 - lo)];
                best[j] = std::max(best[j], v);
            }
        }
        for (double v : best) total += v;
        double rho = 0.0;
        if (inner > 0.0) rho = std::max({rho, std::abs(inner - c) / R, std::abs(inner_min - c) / R});
        if (over_w) rho = std::max(rho, std::abs(c) / R);
        if (pairs) rho = std::max(rho, q + (1.0 - q) * std::abs(c) / R);
        if (rho > 0.0) total += std::max(n * std::log(rho), std::log(1e-16));
        return total;
    };

    CircleChoice bestc{0.0, r_min};
    double best = std::numeric_limits<double>::infinity();
    auto consider = [&](double l, double r) {
        const double c = 0.5 * (r - l), R = 0.5 * (r + l);
        const double v = score(c, R);
        if (v < best) {
            best = v;
            bestc = {c, R};
        }
    };
    for (int i = 0; i < kGrid; ++i) {
        const double r = geo(r_min, r_max, i);
        consider(r, r);  // centred
        for (int k = 0; k < kGrid; ++k) consider(geo(l_min, l_max, k), r);
    }
    return bestc;
}

inline CircleChoice pick_circle(const std::optional<double>& radius, const RateProfile& p, const std::vector<FactorRange>& ranges,
                                double t, int n, bool over_w, bool pairs) {
    if (radius) {
        auto [inner, touched] = pole_extent(p, ranges);
        if (!(*radius > inner)) throw ConfigError("circle radius must exceed every enclosed b_k");
        return {0.0, *radius};
    }
    return choose_circle(p, ranges, t, n, p.q().value(), over_w, pairs);
}

inline void require_nonempty(const ParticleConfig& Y, const ContourOptions& o) {
    if (Y.size() == 0) throw DomainError("need at least one particle");
    if (static_cast<int>(Y.size()) > o.n_max) throw DomainError("N exceeds the configured maximum");
    if (static_cast<int>(Y.size()) > o.max_fold) throw DomainError("N exceeds the r-fold integral cap");
    if (o.nodes != 0 && (o.nodes < 16 || o.nodes > 256 || (o.nodes & (o.nodes - 1)) != 0))
        throw DomainError("node count must be a power of two in [16, 256]");
}

// Explicit node count, or an automatic one: on a single circle the pair
// factors have poles at w_j = q w_i, inside the circle by the factor q, so the
// trapezoid error decays like q^n; the half-resolution certificate needs
// q^{n/2} <= 1e-12. The result is capped by per_axis_cap and by o.max_tensor
// for the r-fold product grid (never below 16).
inline int resolve_nodes(const ContourOptions& o, int r, int per_axis_cap, double q = 0.0) {
    if (o.nodes != 0) return o.nodes;
    int n = 16;
    if (q > 0.0) {
        const double half = std::log(1e-12) / std::log(q);
        while (n < per_axis_cap && n / 2 < half) n *= 2;
    } else {
        n = per_axis_cap;
    }
    while (n > 16 && std::pow(static_cast<double>(n), r) > o.max_tensor) n /= 2;
    return n;
}

inline constexpr int kCircleAxisCap = 128;
inline constexpr int kNestedAxisCap = 256;

template <class Eval>
ExactProbability certified(Eval&& eval, int nodes, std::string method) {
    const cplx hi = eval(nodes);
    const cplx lo = eval(nodes / 2);
    ExactProbability r;
    r.value = hi.real();
    r.imag_residual = std::abs(hi.imag());
    r.node_doubling_delta = std::abs(hi - lo);
    r.method = std::move(method);
    if (!std::isfinite(r.value)) throw NumericFailure(r.method + ": non-finite result");
    return r;
}

// Visit all r-subsets of {1..N} (1-based, ascending).
template <class F>
void for_each_subset(int N, int r, F&& f) {
    std::vector<int> s(static_cast<std::size_t>(r));
    std::iota(s.begin(), s.end(), 1);
    for (;;) {
        f(std::span<const int>(s));
        int i = r - 1;
        while (i >= 0 && s[static_cast<std::size_t>(i)] == N - r + i + 1) --i;
        if (i < 0) return;
        ++s[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < r; ++j) s[static_cast<std::size_t>(j)] = s[static_cast<std::size_t>(j - 1)] + 1;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Nested contour families

// One element of a nested family: a circle in the w plane, or the exp-image of
// a circle in the log w plane (centre `center.real()`, radius `radius`).
struct LoopContour {
    enum class Shape { circle, log_circle };
    Shape shape = Shape::log_circle;
    cplx center{0.0, 0.0};
    double radius = 1.0;

    Nodes nodes(int n) const {
        return shape == Shape::circle ? circle_nodes(center, radius, n) : log_circle_nodes(center.real(), radius, n);
    }
    bool encloses(double b) const {
        if (shape == Shape::circle) return std::abs(cplx(b) - center) < radius;
        return b > 0.0 && std::abs(std::log(b) - center.real()) < radius;
    }
    bool excludes_zero() const {
        return shape == Shape::circle ? std::abs(center) > radius : radius < std::numbers::pi;
    }
    // does this contour enclose q * other (same shape assumed)?
    bool encloses_scaled(const LoopContour& other, double q) const {
        if (shape == Shape::circle) return std::abs(center - q * other.center) + q * other.radius < radius;
        return std::abs(center.real() - (other.center.real() + std::log(q))) + other.radius < radius;
    }
};

struct NestedContourFamily {
    std::vector<LoopContour> loops;

    std::size_t size() const { return loops.size(); }

    // Checks enclosure of every b, exclusion of 0, the q-nesting, and that
    // nodes keep at least delta away from every pole at the given resolution.
    void validate(const std::vector<double>& bs, double q, double delta, int nodes) const {
        for (std::size_t j = 0; j < loops.size(); ++j) {
            const auto& c = loops[j];
            if (!c.excludes_zero()) throw ConfigError("nested family: contour " + std::to_string(j + 1) + " encloses 0");
            for (double b : bs)
                if (!c.encloses(b)) throw ConfigError("nested family: contour " + std::to_string(j + 1) + " misses b = " + std::to_string(b));
            for (std::size_t i = 0; i < j; ++i)
                if (!c.encloses_scaled(loops[i], q))
                    throw ConfigError("nested family: contour " + std::to_string(j + 1) + " does not enclose q * contour " +
                                      std::to_string(i + 1));
        }
        std::vector<Nodes> nd;
        for (const auto& c : loops) nd.push_back(c.nodes(nodes));
        for (std::size_t j = 0; j < nd.size(); ++j) {
            for (const cplx& w : nd[j].w) {
                for (double b : bs)
                    if (std::abs(w - b) < delta) throw ConfigError("nested family: node within delta of a pole b_k");
                if (std::abs(w) < delta) throw ConfigError("nested family: node within delta of 0");
            }
            for (std::size_t i = 0; i < j; ++i)
                for (const cplx& wi : nd[i].w)
                    for (const cplx& wj : nd[j].w)
                        if (std::abs(q * wi - wj) < delta) throw ConfigError("nested family: node within delta of a B_r pole");
        }
    }
};

enum class FamilyKind { log_circle, circle };

// Constructive nested family for poles bs.
//  log_circle: s-plane circles with centre sigma_j = sigma_{j-1} + log(q)/2 and
//    radius rho_j = rho_{j-1} + |sigma_j - sigma_{j-1} - log q| + m, starting
//    from the smallest circle around [log b_min, log b_max] widened by m; m is
//    reduced if needed to keep rho < pi.
//  circle: common centre c0 = 1.5 b_max, r_1 the midpoint of (c0 - b_min, c0),
//    r_j the midpoint of ((1-q) c0 + q r_{j-1}, c0).
inline NestedContourFamily nested_family_build(const std::vector<double>& bs, QParam qp, int count, double margin,
                                               FamilyKind kind = FamilyKind::log_circle) {
    if (bs.empty()) throw ConfigError("nested family: no poles in scope");
    if (count < 1) throw ConfigError("nested family: count must be positive");
    const double q = qp.value();
    const double bmin = *std::min_element(bs.begin(), bs.end());
    const double bmax = *std::max_element(bs.begin(), bs.end());
    if (!(bmin > 0.0)) throw ConfigError("nested family: poles must be positive");
    NestedContourFamily fam;
    if (kind == FamilyKind::log_circle) {
        const double lam = -std::log(q);
        const double half = 0.5 * (std::log(bmax) - std::log(bmin));
        constexpr double kRhoCap = 3.0;  // keeps the curve away from the negative axis
        const double m = std::min(margin, (kRhoCap - half - (count - 1) * 0.5 * lam) / count);
        if (!(m > 0.02))
            throw ConfigError("nested family infeasible: log b spread " + std::to_string(2 * half) + " and -log q " +
                              std::to_string(lam) + " leave no room for " + std::to_string(count) + " contours");
        double sigma = 0.5 * (std::log(bmax) + std::log(bmin));
        double rho = half + m;
        fam.loops.push_back({LoopContour::Shape::log_circle, sigma, rho});
        for (int j = 1; j < count; ++j) {
            const double s2 = sigma - 0.5 * lam;
            rho = rho + std::abs(s2 - sigma + lam) + m;
            sigma = s2;
            fam.loops.push_back({LoopContour::Shape::log_circle, sigma, rho});
        }
    } else {
        const double c0 = 1.5 * bmax;
        double r = 0.5 * ((c0 - bmin) + c0);
        fam.loops.push_back({LoopContour::Shape::circle, c0, r});
        for (int j = 1; j < count; ++j) {
            r = 0.5 * (((1.0 - q) * c0 + q * r) + c0);
            fam.loops.push_back({LoopContour::Shape::circle, c0, r});
        }
        const double gap = c0 - r;  // distance of the outermost contour from 0
        if (gap < margin * 1e-3) throw ConfigError("nested family infeasible: contours collapse onto 0 (q too close to 1)");
    }
    return fam;
}

namespace detail {
// Poles in scope of the tagged-particle formulas: b_k for every site touched by
// prod'_{y_j}^{M}.
inline std::vector<double> scope_b(const RateProfile& p, const ParticleConfig& Y, Site M) {
    const Site lo = std::min(*std::min_element(Y.span().begin(), Y.span().end()), M + 1);
    const Site hi = std::max(*std::max_element(Y.span().begin(), Y.span().end()), M);
    return p.b_range(lo, hi);
}

inline NestedContourFamily default_family(const RateProfile& p, const ParticleConfig& Y, Site M, int count,
                                          const ContourOptions& o) {
    const auto bs = scope_b(p, Y, M);
    auto fam = nested_family_build(bs, p.q(), count, o.family_margin);
    fam.validate(bs, p.q().value(), 1e-6, resolve_nodes(o, count, kNestedAxisCap));
    return fam;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Transition probability P_Y(X; t)

inline ExactProbability transition_probability(const ParticleConfig& Y, const ParticleConfig& X, double t,
                                               const RateProfile& p, const ContourOptions& o = {}) {
    detail::require_nonempty(Y, o);
    if (X.size() != Y.size()) throw DomainError("transition_probability: |X| != |Y|");
    if (!(t >= 0.0)) throw DomainError("transition_probability: negative time");
    const int N = static_cast<int>(Y.size());
    std::vector<detail::FactorRange> ranges;
    for (int j = 0; j < N; ++j) ranges.push_back({Y[static_cast<std::size_t>(j)], X[static_cast<std::size_t>(j)]});

    double pref = 1.0 / weight_W(X.span(), p.q());
    for (Site x : X.positions()) pref *= -1.0 / p.b(x);

    const int nodes = detail::resolve_nodes(o, N, detail::kCircleAxisCap, p.q().value());
    const auto C = detail::pick_circle(o.radius, p, ranges, t, nodes / 2, false, N > 1);
    auto eval = [&](int n) -> cplx {
        const Nodes nd = circle_nodes(C.center, C.radius, n);
        const auto S = detail::s_pair_table(nd, nd, p.q());
        std::vector<int> sigma(static_cast<std::size_t>(N));
        std::iota(sigma.begin(), sigma.end(), 0);
        cplx total = 0.0;
        do {
            std::vector<int> inv(static_cast<std::size_t>(N));
            for (int j = 0; j < N; ++j) inv[static_cast<std::size_t>(sigma[static_cast<std::size_t>(j)])] = j;
            // variable v = sigma(j) carries prod'_{y_v}^{x_j} and every w_v carries e^{-w_v t}
            std::vector<std::vector<cplx>> vals(static_cast<std::size_t>(N));
            for (int v = 0; v < N; ++v)
                vals[static_cast<std::size_t>(v)] = detail::factor_values(
                    p, Y[static_cast<std::size_t>(v)], X[static_cast<std::size_t>(inv[static_cast<std::size_t>(v)])], t, nd, false);
            std::vector<const std::vector<cplx>*> vp;
            for (auto& v : vals) vp.push_back(&v);
            // pair (alpha < beta) contributes S(w_alpha, w_beta) when it is an inversion
            std::vector<std::vector<const std::vector<cplx>*>> pair(static_cast<std::size_t>(N));
            for (int b = 0; b < N; ++b) {
                pair[static_cast<std::size_t>(b)].assign(static_cast<std::size_t>(b), nullptr);
                for (int a = 0; a < b; ++a)
                    if (inv[static_cast<std::size_t>(a)] > inv[static_cast<std::size_t>(b)])
                        pair[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = &S;
            }
            total += detail::TensorSum(std::move(vp), std::move(pair)).run(o.workers);
        } while (std::next_permutation(sigma.begin(), sigma.end()));
        return pref * total;
    };
    return detail::certified(eval, nodes, "transition_probability");
}

// ---------------------------------------------------------------------------
// Tagged-particle distributions

namespace detail {

// Per particle values of h_j(w) = prod'_{y_j}^{M} b/(b-w) e^{-wt} / w * dw on the given nodes.
inline std::vector<std::vector<cplx>> h_values(const RateProfile& p, const ParticleConfig& Y, Site M, double t, const Nodes& nd) {
    std::vector<std::vector<cplx>> v;
    for (Site y : Y.positions()) v.push_back(factor_values(p, y, M, t, nd, true));
    return v;
}

inline std::vector<FactorRange> h_ranges(const ParticleConfig& Y, Site M) {
    std::vector<FactorRange> r;
    for (Site y : Y.positions()) r.push_back({y, M});
    return r;
}

// r-fold integral of B_r prod h over one circle for the particles listed in S (1-based).
inline cplx same_circle_term(const std::vector<std::vector<cplx>>& h, const std::vector<cplx>& B, std::span<const int> S,
                             unsigned workers) {
    const std::size_t r = S.size();
    std::vector<const std::vector<cplx>*> vp;
    for (int s : S) vp.push_back(&h[static_cast<std::size_t>(s - 1)]);
    std::vector<std::vector<const std::vector<cplx>*>> pair(r);
    for (std::size_t b = 0; b < r; ++b) pair[b].assign(b, &B);
    return TensorSum(std::move(vp), std::move(pair)).run(workers);
}

// r-fold integral with the i-th variable on the i-th nested contour.
struct NestedGrid {
    std::vector<Nodes> nodes;
    std::vector<std::vector<std::vector<cplx>>> pair;  // pair[j][i] for i < j

    NestedGrid(const NestedContourFamily& fam, int n, double q) {
        for (const auto& c : fam.loops) nodes.push_back(c.nodes(n));
        pair.resize(nodes.size());
        for (std::size_t j = 0; j < nodes.size(); ++j)
            for (std::size_t i = 0; i < j; ++i) pair[j].push_back(b_pair_table(nodes[i], nodes[j], q));
    }

    // hv[j][i]: particle j on contour i
    cplx term(const std::vector<std::vector<std::vector<cplx>>>& hv, std::span<const int> S, unsigned workers) const {
        const std::size_t r = S.size();
        std::vector<const std::vector<cplx>*> vp;
        for (std::size_t i = 0; i < r; ++i) vp.push_back(&hv[static_cast<std::size_t>(S[i] - 1)][i]);
        std::vector<std::vector<const std::vector<cplx>*>> pp(r);
        for (std::size_t b = 0; b < r; ++b)
            for (std::size_t a = 0; a < b; ++a) pp[b].push_back(&pair[b][a]);
        return TensorSum(std::move(vp), std::move(pp)).run(workers);
    }
};

inline std::vector<std::vector<std::vector<cplx>>> nested_h_values(const RateProfile& p, const ParticleConfig& Y, Site M,
                                                                   double t, const NestedGrid& g) {
    std::vector<std::vector<std::vector<cplx>>> hv;
    for (Site y : Y.positions()) {
        std::vector<std::vector<cplx>> per;
        for (const auto& nd : g.nodes) per.push_back(factor_values(p, y, M, t, nd, true));
        hv.push_back(std::move(per));
    }
    return hv;
}

}  // namespace detail

// P_Y(x_n(t) > M) on the centred circle.
inline ExactProbability dist_tagged_right(const ParticleConfig& Y, int n, Site M, double t, const RateProfile& p,
                                          const ContourOptions& o = {}) {
    detail::require_nonempty(Y, o);
    const int N = static_cast<int>(Y.size());
    if (n < 1 || n > N) throw DomainError("dist_tagged_right: need 1 <= n <= N");
    const auto ranges = detail::h_ranges(Y, M);
    const int nodes = detail::resolve_nodes(o, N, detail::kCircleAxisCap, p.q().value());
    const auto C = detail::pick_circle(o.radius, p, ranges, t, nodes / 2, true, N > 1);
    auto eval = [&](int nn) -> cplx {
        const Nodes nd = circle_nodes(C.center, C.radius, nn);
        const auto h = detail::h_values(p, Y, M, t, nd);
        const auto B = detail::b_pair_table(nd, nd, p.q().value());
        cplx total = 0.0;
        for (int r = n; r <= N; ++r)
            detail::for_each_subset(N, r, [&](std::span<const int> S) {
                const double c = coeff_c(S, n, p.q());
                total += (r % 2 ? -1.0 : 1.0) * c * detail::same_circle_term(h, B, S, o.workers);
            });
        return total;
    };
    return detail::certified(eval, nodes, "dist_tagged_right");
}

// P_Y(x_{N-n+1}(t) <= M) on nested contours.
inline ExactProbability dist_tagged_left(const ParticleConfig& Y, int n, Site M, double t, const RateProfile& p,
                                         const ContourOptions& o = {},
                                         const std::optional<NestedContourFamily>& family = std::nullopt) {
    detail::require_nonempty(Y, o);
    const int N = static_cast<int>(Y.size());
    if (n < 1 || n > N) throw DomainError("dist_tagged_left: need 1 <= n <= N");
    const NestedContourFamily fam = family ? *family : detail::default_family(p, Y, M, N, o);
    if (static_cast<int>(fam.size()) < N) throw ConfigError("dist_tagged_left: family smaller than the largest subset");
    const double q = p.q().value();
    auto eval = [&](int nn) -> cplx {
        const detail::NestedGrid g(fam, nn, q);
        const auto hv = detail::nested_h_values(p, Y, M, t, g);
        cplx total = 0.0;
        for (int r = n; r <= N; ++r)
            detail::for_each_subset(N, r, [&](std::span<const int> S) {
                const double c = coeff_c_tilde(S, n, p.q()) * std::pow(q, -static_cast<double>(r) * N);
                total += c * g.term(hv, S, o.workers);
            });
        return total;
    };
    return detail::certified(eval, detail::resolve_nodes(o, N, detail::kNestedAxisCap), "dist_tagged_left");
}

// P_Y(x_N(t) > M): single N-fold integral of B_N prod h on the centred circle.
inline ExactProbability dist_leftmost(const ParticleConfig& Y, Site M, double t, const RateProfile& p,
                                      const ContourOptions& o = {}) {
    detail::require_nonempty(Y, o);
    const int N = static_cast<int>(Y.size());
    const auto ranges = detail::h_ranges(Y, M);
    std::vector<int> all(static_cast<std::size_t>(N));
    std::iota(all.begin(), all.end(), 1);
    const int nodes = detail::resolve_nodes(o, N, detail::kCircleAxisCap, p.q().value());
    const auto C = detail::pick_circle(o.radius, p, ranges, t, nodes / 2, true, N > 1);
    auto eval = [&](int nn) -> cplx {
        const Nodes nd = circle_nodes(C.center, C.radius, nn);
        const auto h = detail::h_values(p, Y, M, t, nd);
        const auto B = detail::b_pair_table(nd, nd, p.q().value());
        return detail::same_circle_term(h, B, all, o.workers);
    };
    return detail::certified(eval, nodes, "dist_leftmost");
}

// P_Y(x_1(t) <= M) = (-1)^N q^{N(N-1)/2} times the N-fold nested integral.
inline ExactProbability dist_rightmost(const ParticleConfig& Y, Site M, double t, const RateProfile& p,
                                       const ContourOptions& o = {},
                                       const std::optional<NestedContourFamily>& family = std::nullopt) {
    detail::require_nonempty(Y, o);
    const int N = static_cast<int>(Y.size());
    const NestedContourFamily fam = family ? *family : detail::default_family(p, Y, M, N, o);
    if (static_cast<int>(fam.size()) < N) throw ConfigError("dist_rightmost: family smaller than N");
    const double q = p.q().value();
    const double pref = (N % 2 ? -1.0 : 1.0) * std::pow(q, 0.5 * N * (N - 1));
    std::vector<int> all(static_cast<std::size_t>(N));
    std::iota(all.begin(), all.end(), 1);
    auto eval = [&](int nn) -> cplx {
        const detail::NestedGrid g(fam, nn, q);
        const auto hv = detail::nested_h_values(p, Y, M, t, g);
        return pref * g.term(hv, all, o.workers);
    };
    return detail::certified(eval, detail::resolve_nodes(o, N, detail::kNestedAxisCap), "dist_rightmost");
}

// Both relations between the centred-circle and nested integrals of
// B_N prod h; returns the larger absolute residual.
//   identical = sum_{I} q^{sum I - (2N - l + 1) l / 2} nested(I)            (empty I -> 1)
//   nested    = sum_{I} (-1)^{N-l} q^{sum I - l - N(N-1)/2} identical(I)    (empty I -> (-1)^N q^{-N(N-1)/2})
inline double contour_relation_residual(const ParticleConfig& Y, Site M, double t, const RateProfile& p,
                                        const ContourOptions& o = {},
                                        const std::optional<NestedContourFamily>& family = std::nullopt) {
    detail::require_nonempty(Y, o);
    const int N = static_cast<int>(Y.size());
    if (N > 3) throw DomainError("contour_relation_residual: N <= 3 only");
    const NestedContourFamily fam = family ? *family : detail::default_family(p, Y, M, N, o);
    const double q = p.q().value();
    const int nn = detail::resolve_nodes(o, N, detail::kNestedAxisCap);
    const auto C = detail::pick_circle(o.radius, p, detail::h_ranges(Y, M), t, nn / 2, true, N > 1);
    const Nodes nd = circle_nodes(C.center, C.radius, nn);
    const auto h = detail::h_values(p, Y, M, t, nd);
    const auto B = detail::b_pair_table(nd, nd, q);
    const detail::NestedGrid g(fam, nn, q);
    const auto hv = detail::nested_h_values(p, Y, M, t, g);

    std::vector<int> all(static_cast<std::size_t>(N));
    std::iota(all.begin(), all.end(), 1);
    const cplx ident_full = detail::same_circle_term(h, B, all, o.workers);
    const cplx nested_full = g.term(hv, all, o.workers);

    const double half = 0.5 * N * (N - 1);
    cplx rhs1 = 1.0;
    cplx rhs2 = (N % 2 ? -1.0 : 1.0) * std::pow(q, -half);
    for (int l = 1; l <= N; ++l)
        detail::for_each_subset(N, l, [&](std::span<const int> I) {
            const double sumI = std::accumulate(I.begin(), I.end(), 0.0);
            rhs1 += std::pow(q, sumI - 0.5 * (2 * N - l + 1) * l) * g.term(hv, I, o.workers);
            rhs2 += ((N - l) % 2 ? -1.0 : 1.0) * std::pow(q, sumI - l - half) * detail::same_circle_term(h, B, I, o.workers);
        });
    return std::max(std::abs(ident_full - rhs1), std::abs(nested_full - rhs2));
}

// ---------------------------------------------------------------------------
// N particles started at the origin

struct StepFiniteResult {
    ExactProbability prob;
    int terms = 0;                 // number of r values used
    std::vector<int> nodes_per_r;  // final node count of each r-fold integral
};

// P_{0^N}(x_m(t) > M). With equal starting points all r-subsets give the same
// integral, P_{0^r}(x_r > M), so the subset sum collapses to
//   sum_r (-1)^{r+m} q^{m(m-1)/2 - m r} qbinom(r-1, m-1) e_r(q, ..., q^N) P_{0^r}(x_r > M).
// Terms are dropped once the remaining weights (times the bound 1) fall below
// tol; each r-fold integral is refined until its weighted change is below tol.
inline StepFiniteResult dist_step_finite(int N, int m, Site M, double t, const RateProfile& p, double tol = 1e-7,
                                         unsigned workers = 1) {
    if (N < 1 || m < 1 || m > N) throw DomainError("dist_step_finite: need 1 <= m <= N");
    const double q = p.q().value();
    std::vector<double> qs(static_cast<std::size_t>(N));
    for (int s = 1; s <= N; ++s) qs[static_cast<std::size_t>(s - 1)] = std::pow(q, s);
    const auto e = elementary_symmetric(qs);
    std::vector<double> weight(static_cast<std::size_t>(N) + 1, 0.0);
    for (int r = m; r <= N; ++r)
        weight[static_cast<std::size_t>(r)] = ((r + m) % 2 ? -1.0 : 1.0) * std::pow(q, 0.5 * m * (m - 1) - double(m) * r) *
                                              q_binomial(r - 1, m - 1, p.q()) * e[static_cast<std::size_t>(r)];
    StepFiniteResult res;
    double value = 0.0, delta = 0.0, imag = 0.0;
    static constexpr int kLadder[] = {8, 12, 16, 20, 24, 28, 32, 40, 48, 64, 96, 128};
    auto tail_from = [&](int r) {
        double tail = 0.0;
        for (int s = r; s <= N; ++s) tail += std::abs(weight[static_cast<std::size_t>(s)]);
        return tail;
    };
    // The dropped tail and the settled terms share the tolerance budget. Terms
    // run from high r down: the expensive ones take what they need within the
    // cost cap and the cheap low-r terms absorb the rest.
    int last = m;
    while (last <= N && tail_from(last) >= 0.5 * tol) ++last;
    double budget = 0.5 * tol;
    res.nodes_per_r.assign(static_cast<std::size_t>(std::max(0, last - m)), 0);
    for (int r = last - 1; r >= m; --r) {
        const double term_tol = budget / (r - m + 1);
        const double wr = weight[static_cast<std::size_t>(r)];
        const ParticleConfig Y = ParticleConfig::all_at(static_cast<std::size_t>(r), 0);
        const auto ranges = detail::h_ranges(Y, M);
        std::vector<int> all(static_cast<std::size_t>(r));
        std::iota(all.begin(), all.end(), 1);
        auto eval = [&](int nn) {
            const auto C = detail::choose_circle(p, ranges, t, nn, q, true, r > 1);
            const Nodes nd = circle_nodes(C.center, C.radius, nn);
            const auto h = detail::h_values(p, Y, M, t, nd);
            const auto B = detail::b_pair_table(nd, nd, q);
            return detail::same_circle_term(h, B, all, workers);
        };
        cplx prev = eval(kLadder[0]);
        cplx cur = prev;
        int used = kLadder[0];
        double change = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < std::size(kLadder); ++i) {
            if (std::pow(static_cast<double>(kLadder[i]), r) > 1.5e9) break;
            prev = cur;
            cur = eval(kLadder[i]);
            used = kLadder[i];
            change = std::abs(wr) * std::abs(cur - prev);
            if (change < term_tol) break;
        }
        budget -= change;
        if (budget < 0.0)
            throw NumericFailure("dist_step_finite: r = " + std::to_string(r) + " integral did not settle within the cost cap");
        value += wr * cur.real();
        imag += std::abs(wr * cur.imag());
        delta += change;
        res.nodes_per_r[static_cast<std::size_t>(r - m)] = used;
        ++res.terms;
    }
    res.prob.value = value;
    res.prob.node_doubling_delta = delta;
    res.prob.imag_residual = imag;
    res.prob.method = "dist_step_finite";
    return res;
}

}  // namespace qtazrp
