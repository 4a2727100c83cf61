#pragma once

// Exact continuous-time simulation (direct Gillespie method) of the zero range
// process, finite and step initial conditions, plus the dual exclusion process
// for the duality check, and Monte Carlo distribution estimates.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace qtazrp {

// Per-sample stream: the engine for sample i of a run seeded with `seed`.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                         static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        eng_.seed(ss);
    }
    // uniform on the open interval (0,1)
    double open_uniform() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }
    double exponential(double rate) { return -std::log(open_uniform()) / rate; }

private:
    std::mt19937_64 eng_;
};

struct SimResult {
    ParticleConfig final_state;
    std::vector<Jump> trajectory;
};

namespace detail {
// Pick index i with probability rates[i]/total.
inline std::size_t pick(const std::vector<double>& rates, double total, Rng& rng) {
    double u = rng.open_uniform() * total;
    for (std::size_t i = 0; i < rates.size(); ++i) {
        u -= rates[i];
        if (u < 0.0) return i;
    }
    return rates.size() - 1;
}
}  // namespace detail

// Finite system. The top (smallest label) particle at the firing site moves to
// x+1, where it lands below the particles already there, so positions stay
// weakly decreasing in the label.
inline SimResult simulate_finite(const RateProfile& p, const ParticleConfig& initial, double t, Rng& rng,
                                 bool record = false) {
    if (initial.size() == 0) throw DomainError("simulate_finite: need N >= 1");
    if (!(t >= 0.0)) throw DomainError("simulate_finite: negative horizon");
    std::vector<Site> x = initial.positions();
    std::vector<Jump> traj;
    std::vector<std::size_t> top;  // index of the top particle of each occupied site
    std::vector<double> rates;
    double now = 0.0;
    for (;;) {
        top.clear();
        rates.clear();
        double total = 0.0;
        for (std::size_t i = 0; i < x.size();) {
            std::size_t j = i;
            while (j < x.size() && x[j] == x[i]) ++j;
            top.push_back(i);
            rates.push_back(jump_rate(p, x[i], static_cast<long>(j - i)));
            total += rates.back();
            i = j;
        }
        now += rng.exponential(total);
        if (now > t) break;
        const std::size_t i = top[detail::pick(rates, total, rng)];
        if (record) traj.push_back({x[i], now});
        ++x[i];
        check_site(x[i]);
    }
    return {ParticleConfig(std::move(x)), std::move(traj)};
}

// Step initial condition. Site 0 fires at rate a_0 for the whole horizon; each
// firing releases the next label onto site 1. Every released particle is
// simulated because it changes the occupations (and hence the rates) of the
// sites it passes. Returns x_1..x_m (labels not yet released sit at 0).
inline std::vector<Site> simulate_step(const RateProfile& p, int m, double t, Rng& rng,
                                       std::vector<Jump>* trajectory = nullptr) {
    if (m < 1) throw DomainError("simulate_step: need m >= 1");
    if (!(t >= 0.0)) throw DomainError("simulate_step: negative horizon");
    std::vector<Site> x;  // released particles, label order
    std::vector<std::size_t> top;
    std::vector<double> rates;
    double now = 0.0;
    const double a0 = p.a(0);
    for (;;) {
        top.clear();
        rates.clear();
        top.push_back(x.size());  // sentinel: the reservoir
        rates.push_back(a0);
        double total = a0;
        for (std::size_t i = 0; i < x.size();) {
            std::size_t j = i;
            while (j < x.size() && x[j] == x[i]) ++j;
            top.push_back(i);
            rates.push_back(jump_rate(p, x[i], static_cast<long>(j - i)));
            total += rates.back();
            i = j;
        }
        now += rng.exponential(total);
        if (now > t) break;
        const std::size_t k = detail::pick(rates, total, rng);
        if (trajectory) trajectory->push_back({k == 0 ? Site(0) : x[top[k]], now});
        if (k == 0)
            x.push_back(1);
        else
            ++x[top[k]];
    }
    std::vector<Site> out(static_cast<std::size_t>(m), 0);
    for (std::size_t i = 0; i < out.size() && i < x.size(); ++i) out[i] = x[i];
    return out;
}

// Dual exclusion process from its step initial condition y_k(0) = -k,
// k = 0..K. Particle 0 jumps at rate a_0, particle k >= 1 at
// a_k (1 - q^{y_{k-1} - y_k - 1}). Returns y_0..y_K at time t.
inline std::vector<Site> simulate_tasep_step(const RateProfile& p, int K, double t, Rng& rng) {
    if (K < 0) throw DomainError("simulate_tasep_step: need K >= 0");
    std::vector<Site> y(static_cast<std::size_t>(K) + 1);
    for (int k = 0; k <= K; ++k) y[static_cast<std::size_t>(k)] = -k;
    std::vector<double> rates(y.size());
    const double q = p.q().value();
    double now = 0.0;
    for (;;) {
        double total = 0.0;
        for (std::size_t k = 0; k < y.size(); ++k) {
            const Site s = static_cast<Site>(k);
            rates[k] = k == 0 ? p.a(0) : p.a(s) * (1.0 - std::pow(q, static_cast<double>(y[k - 1] - y[k] - 1)));
            total += rates[k];
        }
        now += rng.exponential(total);
        if (now > t) break;
        ++y[detail::pick(rates, total, rng)];
    }
    return y;
}

// Monte Carlo table for the events {value > M}.
struct EmpiricalTable {
    long samples = 0;
    std::map<long, long> counts;

    double p_hat(long M) const {
        auto it = counts.find(M);
        if (it == counts.end() || samples == 0) return 0.0;
        return static_cast<double>(it->second) / static_cast<double>(samples);
    }
    double standard_error(long M) const {
        const double p = p_hat(M);
        return samples ? std::sqrt(p * (1.0 - p) / static_cast<double>(samples)) : 0.0;
    }
    void merge(const EmpiricalTable& o) {
        samples += o.samples;
        for (const auto& [M, c] : o.counts) counts[M] += c;
    }
};

// sample(i) draws the observable of sample i (deterministic in i);
// counts[M] = #{i : sample(i) > M} for each M in Ms.
template <class Sampler>
EmpiricalTable estimate_distribution(Sampler&& sample, const std::vector<long>& Ms, long samples, unsigned workers = 1) {
    if (samples < 1) throw DomainError("estimate_distribution: need samples >= 1");
    std::vector<long> values(static_cast<std::size_t>(samples));
    parallel_for(values.size(), workers, [&](std::size_t i) { values[i] = sample(static_cast<std::uint64_t>(i)); });
    EmpiricalTable tab;
    tab.samples = samples;
    for (long M : Ms) tab.counts[M] = 0;
    for (long v : values)
        for (long M : Ms)
            if (v > M) ++tab.counts[M];
    return tab;
}

}  // namespace qtazrp
