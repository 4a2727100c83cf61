#pragma once

// Independent reference computations used to cross-check the contour and
// Fredholm formulas: the master equation of the finite system on a truncated
// state space (solved by uniformization) and Poisson laws.

#include <cmath>
#include <map>
#include <vector>

#include <boost/math/distributions/poisson.hpp>

#include "errors.hpp"
#include "model.hpp"

namespace qtazrp::oracle {

inline double poisson_pmf(long k, double mu) {
    if (k < 0) return 0.0;
    if (mu == 0.0) return k == 0 ? 1.0 : 0.0;
    return boost::math::pdf(boost::math::poisson_distribution<double>(mu), static_cast<double>(k));
}

// P(Poisson(mu) >= k)
inline double poisson_tail(long k, double mu) {
    if (k <= 0) return 1.0;
    if (mu == 0.0) return 0.0;
    return boost::math::cdf(boost::math::complement(boost::math::poisson_distribution<double>(mu), static_cast<double>(k - 1)));
}

// Smallest D with P(Poisson(mu) > D) < eps.
inline long poisson_window(double mu, double eps) {
    long D = 0;
    while (poisson_tail(D + 1, mu) >= eps) ++D;
    return D;
}

// Distribution at time t of the finite system started from Y, on the states
// with every position in [y_j, y_1 + D]. Mass that would leave the window is
// dropped and reported.
struct MasterSolution {
    std::map<std::vector<Site>, double> prob;
    double lost_mass = 0.0;

    double at(const std::vector<Site>& x) const {
        auto it = prob.find(x);
        return it == prob.end() ? 0.0 : it->second;
    }
};

inline MasterSolution master_equation(const RateProfile& p, const ParticleConfig& Y, double t, long D, double tol = 1e-15) {
    const std::size_t N = Y.size();
    if (N == 0) throw DomainError("master_equation: empty configuration");
    const Site cap = Y[0] + D;
    std::map<std::vector<Site>, std::size_t> index;
    std::vector<std::vector<Site>> states;
    struct Edge {
        std::size_t to;  // states.size() marks the sink
        double rate;
    };
    std::vector<std::vector<Edge>> out;
    std::vector<double> exit_rate;

    index[Y.positions()] = 0;
    states.push_back(Y.positions());
    for (std::size_t s = 0; s < states.size(); ++s) {
        const std::vector<Site> x = states[s];
        std::vector<Edge> edges;
        double total = 0.0;
        for (std::size_t i = 0; i < N;) {
            std::size_t j = i;
            while (j < N && x[j] == x[i]) ++j;
            const double rate = jump_rate(p, x[i], static_cast<long>(j - i));
            total += rate;
            std::vector<Site> y = x;
            ++y[i];
            if (y[i] > cap) {
                edges.push_back({std::size_t(-1), rate});
            } else {
                auto [it, fresh] = index.emplace(y, states.size());
                if (fresh) states.push_back(y);
                edges.push_back({it->second, rate});
            }
            i = j;
        }
        out.push_back(std::move(edges));
        exit_rate.push_back(total);
    }
    const std::size_t S = states.size();
    double lambda = 0.0;
    for (double r : exit_rate) lambda = std::max(lambda, r);
    lambda *= 1.0001;

    std::vector<double> v(S, 0.0), acc(S, 0.0), nxt(S);
    v[0] = 1.0;
    double sink = 0.0, sink_acc = 0.0;
    const double mu = lambda * t;
    double w = std::exp(-mu), cum = 0.0;
    for (long k = 0;; ++k) {
        if (k > 0) w *= mu / static_cast<double>(k);
        for (std::size_t s = 0; s < S; ++s) acc[s] += w * v[s];
        sink_acc += w * sink;
        cum += w;
        if (1.0 - cum < tol && static_cast<double>(k) > mu) break;
        if (k > 100000) throw NumericFailure("master_equation: uniformization did not converge");
        std::fill(nxt.begin(), nxt.end(), 0.0);
        for (std::size_t s = 0; s < S; ++s) {
            if (v[s] == 0.0) continue;
            nxt[s] += v[s] * (1.0 - exit_rate[s] / lambda);
            for (const Edge& e : out[s]) {
                const double f = v[s] * e.rate / lambda;
                if (e.to == std::size_t(-1))
                    sink += f;
                else
                    nxt[e.to] += f;
            }
        }
        v.swap(nxt);
    }
    MasterSolution sol;
    for (std::size_t s = 0; s < S; ++s) sol.prob[states[s]] = acc[s];
    sol.lost_mass = sink_acc;
    return sol;
}

}  // namespace qtazrp::oracle
