#pragma once

// Nystrom evaluation of Fredholm determinants: the finite-time kernel of the
// step initial condition, its scaling limit on a vertical line, and the
// equivalent half-line and Gaussian (Mehler type) kernels; the zeta contour
// integral that turns det(I + zeta K) into the distribution of x_m.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "contour.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"

namespace qtazrp {

struct DetValue {
    cplx value{1.0, 0.0};
    double grid_refinement_delta = 0.0;
};

// Quadrature grid for a Nystrom discretisation.
//   circle:        trapezoid on a circle, `nodes` a power of two
//   vertical_line: x = line_re - i y, |y| <= half_height, oriented downward
//   half_line:     [start, start + length] on the real axis
//   polyline:      oriented closed or open polyline through `vertices`
// Lines use composite Gauss-Legendre panels; the half-resolution grid used for
// the refinement delta halves the node count (or the nodes per panel).
struct NystromGrid {
    enum class Kind { circle, vertical_line, half_line, polyline };
    Kind kind = Kind::circle;
    Circle circle{};
    double line_re = -1.0;
    double half_height = 10.0;
    double start = 0.0;
    double length = 1.0;
    std::vector<cplx> vertices;
    double panel_length = 1.0;
    int nodes = 200;      // total nodes (circle/lines) or nodes per panel (polyline)
    double prune = 0.0;   // polyline: drop nodes whose row weight is below prune * max

    static NystromGrid make_circle(double radius, int nodes) {
        NystromGrid g;
        g.kind = Kind::circle;
        g.circle = {0.0, radius, nodes};
        g.nodes = nodes;
        return g;
    }
    static NystromGrid make_vertical_line(double half_height = 10.0, int nodes = 200, double re = -1.0) {
        NystromGrid g;
        g.kind = Kind::vertical_line;
        g.half_height = half_height;
        g.nodes = nodes;
        g.line_re = re;
        return g;
    }
    static NystromGrid make_half_line(double start, double length, int nodes) {
        NystromGrid g;
        g.kind = Kind::half_line;
        g.start = start;
        g.length = length;
        g.nodes = nodes;
        return g;
    }
    static NystromGrid make_polyline(std::vector<cplx> vertices, double panel_length, int per_panel, double prune) {
        NystromGrid g;
        g.kind = Kind::polyline;
        g.vertices = std::move(vertices);
        g.panel_length = panel_length;
        g.nodes = per_panel;
        g.prune = prune;
        return g;
    }

    NystromGrid halved() const {
        NystromGrid g = *this;
        g.nodes = std::max(kind == Kind::circle ? 8 : 2, nodes / 2);
        g.circle.nodes = g.nodes;
        return g;
    }

    // Nodes with weights; contour kinds carry 1/(2 pi i), the half line plain dx.
    Nodes build() const {
        switch (kind) {
            case Kind::circle:
                circle.validate();
                return circle_nodes(circle);
            case Kind::vertical_line: {
                if (!(half_height > 0.0)) throw DomainError("vertical line: half height must be positive");
                const int panels = std::max(1, nodes / 20);
                const int per = std::max(2, nodes / panels);
                return polyline_nodes({cplx(line_re, half_height), cplx(line_re, -half_height)}, 2.0 * half_height / panels + 1e-12,
                                      per, 1.0 / (2.0 * std::numbers::pi * kI));
            }
            case Kind::half_line: {
                if (!(length > 0.0)) throw DomainError("half line: length must be positive");
                const int panels = std::max(1, nodes / 20);
                const int per = std::max(2, nodes / panels);
                return polyline_nodes({cplx(start), cplx(start + length)}, length / panels + 1e-12, per, 1.0);
            }
            case Kind::polyline:
                return polyline_nodes(vertices, panel_length, nodes, 1.0 / (2.0 * std::numbers::pi * kI));
        }
        throw DomainError("unknown grid kind");
    }
};

namespace detail {

inline cplx lu_det(const Eigen::MatrixXcd& A) {
    if (A.rows() == 0) return 1.0;
    const cplx d = Eigen::PartialPivLU<Eigen::MatrixXcd>(A).determinant();
    if (!std::isfinite(d.real()) || !std::isfinite(d.imag())) throw NumericFailure("determinant overflow");
    return d;
}

// det(I + zeta * [k(x_j, x_k) dw_k]) where k(x_j, x_k) = row(x_j) * pair(x_j, x_k).
template <class Row, class Pair>
cplx nystrom_matrix_det(const Nodes& nd, cplx zeta, Row&& row, Pair&& pair, double prune = 0.0) {
    const std::size_t n0 = nd.size();
    std::vector<cplx> f(n0);
    double fmax = 0.0;
    for (std::size_t j = 0; j < n0; ++j) {
        f[j] = row(nd.w[j]);
        if (!std::isfinite(f[j].real()) || !std::isfinite(f[j].imag())) throw NumericFailure("kernel overflow on the grid");
        fmax = std::max(fmax, std::abs(f[j] * nd.dw[j]));
    }
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < n0; ++j)
        if (prune <= 0.0 || std::abs(f[j] * nd.dw[j]) > prune * fmax) keep.push_back(j);
    const auto n = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Identity(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        const std::size_t j = keep[static_cast<std::size_t>(a)];
        for (Eigen::Index b = 0; b < n; ++b) {
            const std::size_t k = keep[static_cast<std::size_t>(b)];
            A(a, b) += zeta * f[j] * pair(nd.w[j], nd.w[k]) * nd.dw[k];
        }
    }
    return lu_det(A);
}

template <class Eval>
DetValue refined(Eval&& eval, const NystromGrid& g) {
    DetValue d;
    d.value = eval(g);
    d.grid_refinement_delta = std::abs(d.value - eval(g.halved()));
    return d;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Kernels

struct KernelSpec {
    enum class Kind { finite_time, limiting, mehler, halfline };
    Kind kind = Kind::finite_time;
    // finite_time
    std::optional<RateProfile> profile;
    long M = 0;
    double t = 0.0;
    // limiting / mehler / halfline
    double q = 0.5;
    double tau = 0.0;
    std::vector<double> betas;  // empty means l = -1

    static KernelSpec finite(const RateProfile& p, long M, double t) {
        if (M < 0 || !(t >= 0.0)) throw DomainError("finite-time kernel needs M >= 0 and t >= 0");
        KernelSpec k;
        k.kind = Kind::finite_time;
        k.profile = p;
        k.M = M;
        k.t = t;
        k.q = p.q().value();
        return k;
    }
    static KernelSpec limiting(double q, double tau, std::vector<double> betas = {}) {
        QParam{q};
        for (double b : betas)
            if (!(b > 0.0)) throw DomainError("limiting kernel needs every beta_k > 0");
        KernelSpec k;
        k.kind = Kind::limiting;
        k.q = q;
        k.tau = tau;
        k.betas = std::move(betas);
        return k;
    }
    static KernelSpec mehler(double q, double tau) {
        QParam{q};
        KernelSpec k;
        k.kind = Kind::mehler;
        k.q = q;
        k.tau = tau;
        return k;
    }
    static KernelSpec halfline(double q, double tau) {
        QParam{q};
        KernelSpec k;
        k.kind = Kind::halfline;
        k.q = q;
        k.tau = tau;
        return k;
    }
};

// gamma(w) = prod_k beta_k / (beta_k - w)
inline cplx gamma_factor(const std::vector<double>& betas, cplx w) {
    cplx g = 1.0;
    for (double b : betas) g *= b / (b - w);
    return g;
}

// Saddle-point exponent f(w) = w + log(1 - w) (principal branch, cut on [1, inf)).
inline cplx saddle_f(cplx w) { return w + std::log(1.0 - w); }

inline cplx nystrom_det_raw(const KernelSpec& k, cplx zeta, const NystromGrid& g) {
    if (zeta == 0.0) return 1.0;
    const Nodes nd = g.build();
    const double q = k.q;
    switch (k.kind) {
        case KernelSpec::Kind::finite_time: {
            if (g.kind != NystromGrid::Kind::circle && g.kind != NystromGrid::Kind::polyline)
                throw DomainError("finite-time kernel needs a closed contour grid");
            const RateProfile& p = *k.profile;
            const auto bs = p.b_range(0, k.M);
            auto row = [&](cplx w) {
                cplx v = std::exp(-w * k.t);
                for (double b : bs) {
                    detail::check_pole(b, b - w, "K_{M,t}");
                    v *= b / (b - w);
                }
                return v;
            };
            auto pair = [&](cplx w, cplx w2) { return 1.0 / (q * w2 - w); };
            return detail::nystrom_matrix_det(nd, zeta, row, pair, g.prune);
        }
        case KernelSpec::Kind::limiting: {
            if (g.kind != NystromGrid::Kind::vertical_line) throw DomainError("limiting kernel needs a vertical-line grid");
            // K(z, w) = e^{w^2/2 + tau w} gamma(w) / (w - q z): the row index is z,
            // the column carries the w-dependent factor.
            const Nodes& n2 = nd;
            const auto n = static_cast<Eigen::Index>(n2.size());
            std::vector<cplx> col(n2.size());
            for (std::size_t j = 0; j < n2.size(); ++j) {
                const cplx w = n2.w[j];
                col[j] = std::exp(0.5 * w * w + k.tau * w) * gamma_factor(k.betas, w) * n2.dw[j];
            }
            Eigen::MatrixXcd A = Eigen::MatrixXcd::Identity(n, n);
            for (Eigen::Index a = 0; a < n; ++a)
                for (Eigen::Index b = 0; b < n; ++b)
                    A(a, b) += zeta * col[static_cast<std::size_t>(b)] /
                               (n2.w[static_cast<std::size_t>(b)] - q * n2.w[static_cast<std::size_t>(a)]);
            return detail::lu_det(A);
        }
        case KernelSpec::Kind::halfline: {
            if (g.kind != NystromGrid::Kind::half_line) throw DomainError("half-line kernel needs a half-line grid");
            const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi);
            auto row = [](cplx) { return cplx(1.0); };
            auto pair = [&](cplx x, cplx y) {
                const double d = x.real() - q * y.real() + k.tau;
                return cplx(c * std::exp(-0.5 * d * d));
            };
            return detail::nystrom_matrix_det(nd, zeta, row, pair);
        }
        case KernelSpec::Kind::mehler: {
            if (g.kind != NystromGrid::Kind::half_line) throw DomainError("Mehler kernel needs a half-line grid");
            const double c = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * (1.0 + q));
            const double a = (1.0 + q * q) / ((1.0 + q) * (1.0 + q)) / 4.0;
            const double bq = q / ((1.0 + q) * (1.0 + q));
            auto row = [](cplx) { return cplx(1.0); };
            auto pair = [&](cplx x, cplx y) {
                const double z = x.real(), z2 = y.real();
                return cplx(c * std::exp(-a * (z * z + z2 * z2) + bq * z * z2));
            };
            return detail::nystrom_matrix_det(nd, zeta, row, pair);
        }
    }
    throw DomainError("unknown kernel kind");
}

inline DetValue nystrom_det(const KernelSpec& k, cplx zeta, const NystromGrid& g) {
    return detail::refined([&](const NystromGrid& gg) { return nystrom_det_raw(k, zeta, gg); }, g);
}

// ---------------------------------------------------------------------------
// Finite time

// Circle for K_{M,t} from the same scan as the contour formulas: it encloses
// 0 and b_0..b_M with centre c < radius, so qGamma lies inside Gamma.
inline NystromGrid default_finite_grid(const RateProfile& p, long M, double t, int nodes = 128) {
    const auto C = detail::choose_circle(p, {{0, M}}, t, nodes / 2, p.q().value(), false, true);
    NystromGrid g = NystromGrid::make_circle(C.radius, nodes);
    g.circle.center = C.center;
    return g;
}

inline DetValue det_K_Mt(cplx zeta, long M, double t, const RateProfile& p, const std::optional<NystromGrid>& g = std::nullopt) {
    const NystromGrid grid = g ? *g : default_finite_grid(p, M, t);
    if (grid.kind == NystromGrid::Kind::circle) {
        double bmax = 0.0;
        for (double b : p.b_range(0, M)) bmax = std::max(bmax, b);
        const cplx c = grid.circle.center;
        const double R = grid.circle.radius;
        if (c.imag() != 0.0 || !(std::abs(c) < R) || !(std::abs(bmax - c) < R))
            throw ConfigError("det_K_Mt: the circle must have a real centre and enclose 0 and b_0..b_M");
    }
    return nystrom_det(KernelSpec::finite(p, M, t), zeta, grid);
}

struct ZetaCircle {
    std::optional<double> radius;  // default 1.5 q^{1-m}
    int nodes = 128;
};

// (1/2 pi i) \oint dzeta/zeta D(zeta) / prod_{j<m} (1 - q^j zeta) by the
// trapezoid rule, D evaluated per node. delta combines the zeta-grid halving
// with the determinant-grid refinement supplied by D_half.
template <class D>
ExactProbability zeta_integral(int m, double q, const ZetaCircle& zc, D&& det, D&& det_half, unsigned workers,
                               std::string method) {
    if (m < 1) throw DomainError("zeta integral: need m >= 1");
    const double R = zc.radius.value_or(1.5 * std::pow(q, 1 - m));
    if (!(R > std::pow(q, 1 - m))) throw ConfigError("zeta circle must enclose 1, 1/q, ..., q^{1-m}");
    if (zc.nodes < 16) throw DomainError("zeta circle needs at least 16 nodes");
    auto integrate = [&](int n, auto& dfun) {
        std::vector<cplx> vals(static_cast<std::size_t>(n));
        parallel_for(vals.size(), workers, [&](std::size_t k) {
            const cplx z = std::polar(R, kTwoPi * static_cast<double>(k) / n);
            cplx den = 1.0;
            for (int j = 0; j < m; ++j) den *= 1.0 - std::pow(q, j) * z;
            // dz/(2 pi i z) = dtheta/(2 pi) on the circle
            vals[k] = dfun(z) / den / static_cast<double>(n);
        });
        cplx s = 0.0;
        for (const cplx& v : vals) s += v;
        return s;
    };
    const cplx full = integrate(zc.nodes, det);
    const cplx coarse_zeta = integrate(zc.nodes / 2, det);
    const cplx coarse_det = integrate(zc.nodes, det_half);
    ExactProbability r;
    r.value = full.real();
    r.imag_residual = std::abs(full.imag());
    r.node_doubling_delta = std::max(std::abs(full - coarse_zeta), std::abs(full - coarse_det));
    r.method = std::move(method);
    return r;
}

// P(x_m(t) > M) for the step initial condition.
inline ExactProbability step_distribution(int m, long M, double t, const RateProfile& p,
                                          const std::optional<NystromGrid>& g = std::nullopt, const ZetaCircle& zc = {},
                                          unsigned workers = 1) {
    const NystromGrid grid = g ? *g : default_finite_grid(p, M, t);
    const KernelSpec k = KernelSpec::finite(p, M, t);
    const NystromGrid half = grid.halved();
    std::function<cplx(cplx)> d = [&](cplx z) { return nystrom_det_raw(k, z, grid); };
    std::function<cplx(cplx)> dh = [&](cplx z) { return nystrom_det_raw(k, z, half); };
    return zeta_integral(m, p.q().value(), zc, d, dh, workers, "step_distribution");
}

// Same probability through the residues at zeta = 0 and zeta = q^{-j}:
//   1 - sum_{j<m} det(I + q^{-j} K) / prod_{i != j, i < m} (1 - q^{i-j}).
template <class D>
cplx zeta_residue_sum(int m, double q, D&& det) {
    cplx s = 1.0;
    for (int j = 0; j < m; ++j) {
        double den = 1.0;
        for (int i = 0; i < m; ++i)
            if (i != j) den *= 1.0 - std::pow(q, i - j);
        s -= det(cplx(std::pow(q, -j))) / den;
    }
    return s;
}

inline ExactProbability step_distribution_residues(int m, long M, double t, const RateProfile& p,
                                                   const std::optional<NystromGrid>& g = std::nullopt) {
    const NystromGrid grid = g ? *g : default_finite_grid(p, M, t);
    const KernelSpec k = KernelSpec::finite(p, M, t);
    const cplx full = zeta_residue_sum(m, p.q().value(), [&](cplx z) { return nystrom_det_raw(k, z, grid); });
    const cplx half = zeta_residue_sum(m, p.q().value(), [&](cplx z) { return nystrom_det_raw(k, z, grid.halved()); });
    ExactProbability r;
    r.value = full.real();
    r.imag_residual = std::abs(full.imag());
    r.node_doubling_delta = std::abs(full - half);
    r.method = "step_distribution_residues";
    return r;
}

// ---------------------------------------------------------------------------
// Scaling limit

inline DetValue limiting_det(cplx zeta, double q, double tau, const std::vector<double>& betas = {},
                             const NystromGrid& g = NystromGrid::make_vertical_line()) {
    return nystrom_det(KernelSpec::limiting(q, tau, betas), zeta, g);
}

// Limit of P(x_m(t) > M) under M = n + l + 1, t = n - tau sqrt(n). The finite
// determinants det(I + zeta K_{M,t}) converge to det(I - zeta K) for the kernel
// K of limiting_det, so the zeta integral uses limiting_det at -zeta.
inline ExactProbability limiting_step_distribution(int m, double q, double tau, const std::vector<double>& betas = {},
                                                   const NystromGrid& g = NystromGrid::make_vertical_line(),
                                                   const ZetaCircle& zc = {}, unsigned workers = 1) {
    const KernelSpec k = KernelSpec::limiting(q, tau, betas);
    const NystromGrid half = g.halved();
    std::function<cplx(cplx)> d = [&](cplx z) { return nystrom_det_raw(k, -z, g); };
    std::function<cplx(cplx)> dh = [&](cplx z) { return nystrom_det_raw(k, -z, half); };
    return zeta_integral(m, q, zc, d, dh, workers, "limiting_step_distribution");
}

// Window [s, s + L] on which the Gaussian kernels are negligible beyond 1e-14.
inline NystromGrid mehler_grid(double q, double tau, int min_nodes = 200) {
    const double s = tau * (1.0 + q) / (1.0 - q);
    const double z_end = std::max(s + 1.0, (1.0 + q) / (1.0 - q) * std::sqrt(2.0 * std::log(1e14)) + 1.0);
    const double L = z_end - s;
    const int nodes = std::max(min_nodes, 20 * static_cast<int>(std::ceil(L / 2.0)));
    return NystromGrid::make_half_line(s, L, nodes);
}

inline NystromGrid halfline_grid(double q, double tau, int min_nodes = 200) {
    const double L = (std::sqrt(2.0 * std::log(1e14)) + 1.0 + std::max(0.0, -tau)) / (1.0 - q) + 2.0;
    const int nodes = std::max(min_nodes, 20 * static_cast<int>(std::ceil(L / 2.0)));
    return NystromGrid::make_half_line(0.0, L, nodes);
}

// det(I + zeta Khat chi_{(tau(1+q)/(1-q), inf)})
inline DetValue mehler_det(cplx zeta, double tau, double q, const std::optional<NystromGrid>& g = std::nullopt) {
    const NystromGrid grid = g ? *g : mehler_grid(q, tau);
    const double s = tau * (1.0 + q) / (1.0 - q);
    if (grid.kind != NystromGrid::Kind::half_line || std::abs(grid.start - s) > 1e-12)
        throw ConfigError("mehler_det: grid must start at tau(1+q)/(1-q)");
    return nystrom_det(KernelSpec::mehler(q, tau), zeta, grid);
}

// det(I + zeta Ktilde) on (0, inf)
inline DetValue halfline_det(cplx zeta, double tau, double q, const std::optional<NystromGrid>& g = std::nullopt) {
    const NystromGrid grid = g ? *g : halfline_grid(q, tau);
    if (grid.kind != NystromGrid::Kind::half_line || grid.start != 0.0) throw ConfigError("halfline_det: grid must start at 0");
    return nystrom_det(KernelSpec::halfline(q, tau), zeta, grid);
}

// Finite-n determinant det(I + zeta K_{M,t}) at M = n + l + 1, t = n - tau sqrt(n),
// b_k = beta_k / sqrt(n) (k <= l), b_k = 1 otherwise, evaluated in u = sqrt(n) w
// on the rectangle with downward left edge Re u = -1, |Im u| <= sqrt(n) and right
// edge Re u = 2 sqrt(n).
inline DetValue scaled_finite_det(cplx zeta, long n, double q, double tau, const std::vector<double>& betas = {},
                                  int per_panel = 16, double prune = 1e-18) {
    if (n < 1) throw DomainError("scaled_finite_det: n must be positive");
    const double sn = std::sqrt(static_cast<double>(n));
    const double t = static_cast<double>(n) - tau * sn;
    if (!(t > 0.0)) throw DomainError("scaled_finite_det: t = n - tau sqrt(n) must be positive");
    QParam{q};
    const std::vector<cplx> V{cplx(-1.0, sn), cplx(-1.0, -sn), cplx(2.0 * sn, -sn), cplx(2.0 * sn, sn), cplx(-1.0, sn)};
    const NystromGrid g = NystromGrid::make_polyline(V, 1.0, per_panel, prune);
    const double np1 = static_cast<double>(n) + 1.0;
    auto eval = [&](const NystromGrid& gg) {
        const Nodes nd = gg.build();
        auto row = [&](cplx u) {
            return std::exp(-u * t / sn - np1 * std::log(1.0 - u / sn)) * gamma_factor(betas, u);
        };
        auto pair = [&](cplx u, cplx v) { return 1.0 / (q * v - u); };
        return detail::nystrom_matrix_det(nd, zeta, row, pair, gg.prune);
    };
    return detail::refined(eval, g);
}

struct ConvergenceRow {
    long n;
    cplx det_n;
    double deviation;
    double refinement_delta;
};

struct ConvergenceStudy {
    cplx det_limit;
    double limit_delta;
    std::vector<ConvergenceRow> rows;
    double loglog_slope;  // least-squares slope of log deviation vs log n

    bool strictly_decreasing() const {
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (!(rows[i].deviation < rows[i - 1].deviation)) return false;
        return true;
    }
};

inline ConvergenceStudy asymptotic_convergence_study(const std::vector<long>& n_list, double q, double tau,
                                                     const std::vector<double>& betas, cplx zeta) {
    ConvergenceStudy s{};
    const DetValue lim = limiting_det(-zeta, q, tau, betas);
    s.det_limit = lim.value;
    s.limit_delta = lim.grid_refinement_delta;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (long n : n_list) {
        const DetValue d = scaled_finite_det(zeta, n, q, tau, betas);
        const double dev = std::abs(d.value - lim.value);
        s.rows.push_back({n, d.value, dev, d.grid_refinement_delta});
        const double x = std::log(static_cast<double>(n)), y = std::log(dev);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double k = static_cast<double>(n_list.size());
    s.loglog_slope = k > 1 ? (k * sxy - sx * sy) / (k * sxx - sx * sx) : 0.0;
    return s;
}

}  // namespace qtazrp
