#pragma once

// States of the zero range process and its dual exclusion process, the rate
// profile, the particle/spacing map and the height function.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "qalgebra.hpp"

namespace qtazrp {

using Site = long;

inline constexpr Site kSiteMin = -(Site(1) << 31);
inline constexpr Site kSiteMax = (Site(1) << 31) - 1;
inline constexpr long kInfiniteOccupancy = std::numeric_limits<long>::max();

inline void check_site(Site x) {
    if (x < kSiteMin || x > kSiteMax) throw DomainError("site index outside the supported window");
}

// Site-dependent rates a_x: a default value plus finitely many overrides, all
// confined to [a_min, a_max].
class RateProfile {
public:
    RateProfile(double q, double default_a, std::map<Site, double> overrides = {},
                std::optional<double> a_min = std::nullopt, std::optional<double> a_max = std::nullopt)
        : q_(q), default_a_(default_a), overrides_(std::move(overrides)) {
        double lo = default_a, hi = default_a;
        for (const auto& [x, a] : overrides_) {
            check_site(x);
            lo = std::min(lo, a);
            hi = std::max(hi, a);
        }
        a_min_ = a_min.value_or(lo);
        a_max_ = a_max.value_or(hi);
        if (!(a_min_ > 0.0) || !(a_max_ >= a_min_) || !std::isfinite(a_max_))
            throw DomainError("rate bounds must satisfy 0 < a_min <= a_max < inf");
        if (default_a_ < a_min_ || default_a_ > a_max_)
            throw DomainError("default rate outside [a_min, a_max]");
        for (const auto& [x, a] : overrides_)
            if (!(a >= a_min_ && a <= a_max_))
                throw DomainError("rate at site " + std::to_string(x) + " outside [a_min, a_max]");
    }

    static RateProfile homogeneous(double q, double a) { return RateProfile(q, a); }

    QParam q() const { return q_; }
    double default_a() const { return default_a_; }
    const std::map<Site, double>& overrides() const { return overrides_; }
    double a_min() const { return a_min_; }
    double a_max() const { return a_max_; }

    double a(Site x) const {
        auto it = overrides_.find(x);
        return it == overrides_.end() ? default_a_ : it->second;
    }
    double b(Site x) const { return (1.0 - q_.value()) * a(x); }
    double b_max() const { return (1.0 - q_.value()) * a_max_; }

    // b_lo..b_hi as a vector (empty when hi < lo)
    std::vector<double> b_range(Site lo, Site hi) const {
        std::vector<double> r;
        for (Site x = lo; x <= hi; ++x) r.push_back(b(x));
        return r;
    }

    // Same profile with a_x for x = lo..hi replaced by values (bounds kept).
    RateProfile with_rates(Site lo, std::span<const double> a_values) const {
        auto ov = overrides_;
        for (std::size_t i = 0; i < a_values.size(); ++i) ov[lo + static_cast<Site>(i)] = a_values[i];
        return RateProfile(q_.value(), default_a_, std::move(ov), a_min_, a_max_);
    }

private:
    QParam q_;
    double default_a_;
    std::map<Site, double> overrides_;
    double a_min_ = 0.0;
    double a_max_ = 0.0;
};

// Weakly decreasing positions x_1 >= ... >= x_N (label 1 is the rightmost).
class ParticleConfig {
public:
    ParticleConfig() = default;
    explicit ParticleConfig(std::vector<Site> positions) : x_(std::move(positions)) {
        for (Site v : x_) check_site(v);
        for (std::size_t i = 1; i < x_.size(); ++i)
            if (x_[i] > x_[i - 1]) throw DomainError("positions must be weakly decreasing");
    }
    static ParticleConfig all_at(std::size_t n, Site x) { return ParticleConfig(std::vector<Site>(n, x)); }

    std::size_t size() const { return x_.size(); }
    Site operator[](std::size_t i) const { return x_[i]; }
    const std::vector<Site>& positions() const { return x_; }
    std::span<const Site> span() const { return x_; }

    std::map<Site, long> occupation() const {
        std::map<Site, long> n;
        for (Site v : x_) ++n[v];
        return n;
    }

    bool operator==(const ParticleConfig&) const = default;

private:
    std::vector<Site> x_;
};

// Step initial condition: labels 1..m are tracked, site 0 may still hold the
// infinite reservoir of untracked particles below them.
struct StepConfig {
    int tracked = 0;
    std::vector<Site> positions;
    bool origin_infinite = true;

    static StepConfig initial(int m) {
        if (m < 1) throw DomainError("step configuration needs m >= 1");
        return {m, std::vector<Site>(static_cast<std::size_t>(m), 0), true};
    }

    void validate() const {
        if (tracked < 1 || positions.size() != static_cast<std::size_t>(tracked))
            throw DomainError("step configuration: tracked count mismatch");
        for (std::size_t i = 1; i < positions.size(); ++i)
            if (positions[i] > positions[i - 1]) throw DomainError("step configuration: not weakly decreasing");
        if (origin_infinite)
            for (Site v : positions)
                if (v < 0) throw DomainError("step configuration: tracked particle left of the reservoir");
    }
};

inline double jump_rate(const RateProfile& p, Site x, long count) {
    if (count <= 0) throw DomainError("jump_rate: empty site");
    if (count == kInfiniteOccupancy) return p.a(x);
    return p.a(x) * (1.0 - std::pow(p.q().value(), static_cast<double>(count)));
}

// Exclusion-process configuration: explicit strictly decreasing positions of
// labels first_label, first_label+1, ...; beyond the window the particles are
// densely packed (gap 1) on the left, and on the right either densely packed
// or absent.
struct TasepConfig {
    long first_label = 0;
    std::vector<Site> y;
    bool right_dense = true;
    bool left_dense = true;

    void validate() const {
        for (std::size_t i = 1; i < y.size(); ++i)
            if (y[i - 1] - y[i] < 1) throw DomainError("TASEP positions must be strictly decreasing");
    }

    long last_label() const { return first_label + static_cast<long>(y.size()) - 1; }

    Site position(long label) const {
        if (y.empty()) throw DomainError("empty TASEP window");
        if (label < first_label) {
            if (!right_dense) throw DomainError("label beyond the rightmost particle");
            return y.front() + (first_label - label);
        }
        if (label > last_label()) return y.back() - (label - last_label());
        return y[static_cast<std::size_t>(label - first_label)];
    }

    bool occupied(Site site) const {
        if (y.empty()) throw DomainError("empty TASEP window");
        if (site > y.front()) return right_dense;
        if (site < y.back()) return left_dense;
        return std::binary_search(y.rbegin(), y.rend(), site);
    }
};

// y_{k-1} - y_k = n_k + 1 with y_0 = k0. The window covers labels from the
// leftmost occupied site minus one up to the rightmost occupied site (and 0).
inline TasepConfig zrp_to_tasep(const std::map<Site, long>& occupation, Site k0) {
    Site lo = 0, hi = 0;
    for (const auto& [k, n] : occupation) {
        if (n < 0) throw DomainError("negative occupation");
        if (n == 0) continue;
        lo = std::min(lo, k);
        hi = std::max(hi, k);
    }
    auto n_at = [&](Site k) {
        auto it = occupation.find(k);
        return it == occupation.end() ? 0L : it->second;
    };
    TasepConfig t;
    t.first_label = lo - 1;
    const long last = hi;
    std::vector<Site> y(static_cast<std::size_t>(last - t.first_label + 1));
    y[static_cast<std::size_t>(0 - t.first_label)] = k0;
    for (long k = 1; k <= last; ++k) {
        const auto i = static_cast<std::size_t>(k - t.first_label);
        y[i] = y[i - 1] - n_at(k) - 1;
    }
    for (long k = -1; k >= t.first_label; --k) {
        const auto i = static_cast<std::size_t>(k - t.first_label);
        y[i] = y[i + 1] + n_at(k + 1) + 1;
    }
    t.y = std::move(y);
    return t;
}

inline std::map<Site, long> finite_zrp_to_tasep_inverse(const TasepConfig& t) {
    std::map<Site, long> n;
    for (std::size_t i = 1; i < t.y.size(); ++i) {
        const long gap = t.y[i - 1] - t.y[i] - 1;
        if (gap > 0) n[t.first_label + static_cast<long>(i)] = gap;
    }
    return n;
}

// Step case: occupations of sites >= 1 plus the number of departures from 0.
// The result has a rightmost particle y_0 = k0 + departures and no right tail.
inline TasepConfig step_zrp_to_tasep(const std::map<Site, long>& occupation_pos, long departures, Site k0 = 0) {
    Site hi = 0;
    for (const auto& [k, n] : occupation_pos) {
        if (k < 1) throw DomainError("step map: occupations must be on sites >= 1");
        if (n > 0) hi = std::max(hi, k);
    }
    TasepConfig t;
    t.first_label = 0;
    t.right_dense = false;
    t.y.push_back(k0 + departures);
    for (Site k = 1; k <= hi; ++k) {
        auto it = occupation_pos.find(k);
        const long n = it == occupation_pos.end() ? 0 : it->second;
        t.y.push_back(t.y.back() - n - 1);
    }
    return t;
}

// h at x = k + 1/2: h(-1/2) = crossings, steps -1 over occupied sites, +1 over empty ones.
inline long height_function(const TasepConfig& t, long crossings, double x) {
    const double fl = std::floor(x);
    if (x - fl != 0.5) throw DomainError("height_function: x must be a half-integer");
    const Site k = static_cast<Site>(fl);
    auto inc = [&](Site site) { return t.occupied(site) ? -1L : 1L; };
    long h = crossings;
    if (k >= 0)
        for (Site s = 0; s <= k; ++s) h += inc(s);
    else
        for (Site s = k + 1; s <= -1; ++s) h -= inc(s);
    return h;
}

struct Jump {
    Site site;  // departure site
    double time;
};

inline long duality_event_count(std::span<const Jump> trajectory) {
    return static_cast<long>(std::count_if(trajectory.begin(), trajectory.end(),
                                           [](const Jump& j) { return j.site == 0; }));
}

}  // namespace qtazrp
