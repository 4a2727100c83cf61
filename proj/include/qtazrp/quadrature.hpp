#pragma once

// Quadrature building blocks: trapezoid nodes on circles (in w and in log w),
// Gauss-Legendre rules and composite panels along polylines.
//
// Every node set stores the weight dw/(2 pi i) so that a contour integral
// (1/2 pi i) \oint f(w) dw is simply sum_k f(w_k) dw_k.

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "qalgebra.hpp"

namespace qtazrp {

struct Nodes {
    std::vector<cplx> w;
    std::vector<cplx> dw;  // includes the 1/(2 pi i) factor
    std::size_t size() const { return w.size(); }
};

inline constexpr cplx kI{0.0, 1.0};
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Positively oriented circle |w - center| = radius.
struct Circle {
    cplx center{0.0, 0.0};
    double radius = 1.0;
    int nodes = 64;

    void validate() const {
        if (!(radius > 0.0)) throw DomainError("circle radius must be positive");
        if (nodes < 8 || (nodes & (nodes - 1)) != 0) throw DomainError("circle node count must be a power of two >= 8");
    }
};

inline Nodes circle_nodes(cplx center, double radius, int n) {
    Nodes r;
    r.w.resize(static_cast<std::size_t>(n));
    r.dw.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const cplx e = std::polar(1.0, kTwoPi * k / n);
        r.w[static_cast<std::size_t>(k)] = center + radius * e;
        r.dw[static_cast<std::size_t>(k)] = radius * e / static_cast<double>(n);
    }
    return r;
}

inline Nodes circle_nodes(const Circle& c) { return circle_nodes(c.center, c.radius, c.nodes); }

// Image under exp of the circle |s - sigma| = rho in the log plane. For
// rho < pi this is a simple closed curve around exp(sigma) not enclosing 0.
inline Nodes log_circle_nodes(double sigma, double rho, int n) {
    Nodes r;
    r.w.resize(static_cast<std::size_t>(n));
    r.dw.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const cplx e = std::polar(1.0, kTwoPi * k / n);
        const cplx w = std::exp(sigma + rho * e);
        r.w[static_cast<std::size_t>(k)] = w;
        r.dw[static_cast<std::size_t>(k)] = w * rho * e / static_cast<double>(n);
    }
    return r;
}

// (1/2 pi i) \oint_c f(w) dw by the trapezoid rule.
template <class F>
cplx circle_integral(F&& f, const Circle& c) {
    c.validate();
    const Nodes nd = circle_nodes(c);
    cplx s = 0.0;
    for (std::size_t k = 0; k < nd.size(); ++k) {
        const cplx v = f(nd.w[k]);
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) throw NumericFailure("circle_integral: non-finite integrand");
        s += v * nd.dw[k];
    }
    return s;
}

// Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n; cached per n.
struct GaussLegendre {
    std::vector<double> x;
    std::vector<double> w;
};

inline const GaussLegendre& gauss_legendre(int n) {
    if (n < 1) throw DomainError("gauss_legendre: need n >= 1");
    static std::mutex mu;
    static std::map<int, GaussLegendre> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    GaussLegendre g;
    g.x.resize(static_cast<std::size_t>(n));
    g.w.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it2 = 0; it2 < 100; ++it2) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        // recompute the derivative at the converged root
        double p0 = 1.0, p1 = 0.0;
        for (int k = 1; k <= n; ++k) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
        }
        dp = n * (z * p0 - p1) / (z * z - 1.0);
        const double wt = 2.0 / ((1.0 - z * z) * dp * dp);
        g.x[static_cast<std::size_t>(i)] = -z;
        g.x[static_cast<std::size_t>(n - 1 - i)] = z;
        g.w[static_cast<std::size_t>(i)] = wt;
        g.w[static_cast<std::size_t>(n - 1 - i)] = wt;
    }
    return cache.emplace(n, std::move(g)).first->second;
}

// Composite Gauss-Legendre along the oriented polyline v_0 -> v_1 -> ...;
// each edge is split into panels of length <= panel_length with `per_panel`
// nodes. `scale` multiplies the weights (e.g. 1/(2 pi i) for contour integrals).
inline Nodes polyline_nodes(const std::vector<cplx>& vertices, double panel_length, int per_panel, cplx scale) {
    if (vertices.size() < 2) throw DomainError("polyline needs at least two vertices");
    const GaussLegendre& g = gauss_legendre(per_panel);
    Nodes r;
    for (std::size_t e = 0; e + 1 < vertices.size(); ++e) {
        const cplx a = vertices[e], b = vertices[e + 1];
        const double len = std::abs(b - a);
        const int panels = std::max(1, static_cast<int>(std::ceil(len / panel_length - 1e-12)));
        for (int p = 0; p < panels; ++p) {
            const cplx pa = a + (b - a) * (static_cast<double>(p) / panels);
            const cplx pb = a + (b - a) * (static_cast<double>(p + 1) / panels);
            for (std::size_t k = 0; k < g.x.size(); ++k) {
                r.w.push_back(0.5 * (pa + pb) + 0.5 * (pb - pa) * g.x[k]);
                r.dw.push_back(0.5 * (pb - pa) * g.w[k] * scale);
            }
        }
    }
    return r;
}

}  // namespace qtazrp
