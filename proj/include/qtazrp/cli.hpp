#pragma once

// Experiment configurations for the command-line tool: schema checks,
// dispatch to the library, CSV and JSON-envelope rendering. Kept out of the
// tool's main() so the parsing rules can be unit tested.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "contour.hpp"
#include "errors.hpp"
#include "fredholm.hpp"
#include "model_json.hpp"
#include "qalgebra.hpp"
#include "simulator.hpp"
#include "validation.hpp"

namespace qtazrp::cli {

using nlohmann::json;

inline const std::set<std::string> kCommands{"simulate", "exact", "step-dist", "limit-dist", "converge", "validate",
                                             "constants"};

inline constexpr std::uint64_t kDefaultSeed = 20240611;

struct ExperimentConfig {
    std::string command;
    json params = json::object();
    std::uint64_t seed = kDefaultSeed;
    std::optional<std::string> out;
};

// Command-line flags; each one, when given, wins over the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::optional<int> nodes;
    std::optional<long> samples;
    std::optional<std::string> out;
};

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<json>> rows;
    json summary = json::object();
    std::vector<std::string> failures;  // invariant failures; rows are still reported
};

// ---- field access ----

template <class T>
T field(const json& j, const std::string& key, const std::string& what) {
    if (!j.contains(key)) throw ConfigError(what + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(what + ": field '" + key + "' has the wrong type");
    }
}

template <class T>
T field_or(const json& j, const std::string& key, T fallback, const std::string& what) {
    return j.contains(key) ? field<T>(j, key, what) : fallback;
}

inline ExperimentConfig parse_config(const json& j) {
    reject_unknown_keys(j, {"command", "params", "seed", "out"}, "config");
    ExperimentConfig c;
    c.command = field<std::string>(j, "command", "config");
    if (!kCommands.count(c.command)) throw ConfigError("config: unknown command '" + c.command + "'");
    if (j.contains("params")) {
        if (!j.at("params").is_object()) throw ConfigError("config: 'params' must be an object");
        c.params = j.at("params");
    }
    if (j.contains("seed")) {
        const json& sj = j.at("seed");
        if (!sj.is_number_integer() || (!sj.is_number_unsigned() && sj.get<long long>() < 0))
            throw ConfigError("config: 'seed' must be a nonnegative integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("out")) c.out = field<std::string>(j, "out", "config");
    return c;
}

inline ExperimentConfig apply(ExperimentConfig c, const Overrides& o) {
    if (o.seed) c.seed = *o.seed;
    if (o.out) c.out = *o.out;
    return c;
}

inline json echo(const ExperimentConfig& c) {
    json j{{"command", c.command}, {"params", c.params}, {"seed", c.seed}};
    if (c.out) j["out"] = *c.out;
    return j;
}

// [lo, hi] inclusive
inline std::vector<long> m_range(const json& p, const std::string& what) {
    const auto r = field<std::vector<long>>(p, "M_range", what);
    if (r.size() != 2 || r[1] < r[0]) throw ConfigError(what + ": M_range must be [lo, hi] with lo <= hi");
    if (r[1] - r[0] > 100000) throw ConfigError(what + ": M_range too long");
    std::vector<long> Ms;
    for (long M = r[0]; M <= r[1]; ++M) Ms.push_back(M);
    return Ms;
}

inline double positive_time(const json& p, const std::string& what) {
    const double t = field<double>(p, "t", what);
    if (!(t >= 0.0) || !std::isfinite(t)) throw ConfigError(what + ": t must be a finite nonnegative number");
    return t;
}

inline RateProfile profile_of(const json& p, const std::string& what) {
    if (!p.contains("profile")) throw ConfigError(what + ": missing field 'profile'");
    return rate_profile_from_json(p.at("profile"));
}

inline ZetaCircle zeta_circle_of(const json& p, const std::string& what) {
    ZetaCircle zc;
    if (!p.contains("zeta_circle")) return zc;
    const json& z = p.at("zeta_circle");
    reject_unknown_keys(z, {"radius", "nodes"}, what + ".zeta_circle");
    if (z.contains("radius")) zc.radius = field<double>(z, "radius", what);
    zc.nodes = field_or<int>(z, "nodes", zc.nodes, what);
    return zc;
}

// Records a failed certificate instead of aborting, so the rows still reach the output.
inline void check(Table& tab, const ExactProbability& v, double tol, const std::string& where) {
    try {
        certify(v, tol);
    } catch (const InvariantViolation& e) {
        tab.failures.push_back(where + ": " + e.what());
    }
}

inline void check(Table& tab, const DetValue& v, double tol, const std::string& where) {
    if (!(v.grid_refinement_delta < tol))
        tab.failures.push_back(where + ": grid refinement delta " + num(v.grid_refinement_delta) +
                               " exceeds " + num(tol));
}

inline constexpr double kCircleTol = 1e-9;
inline constexpr double kLineTol = 1e-6;

// ---- commands ----

inline Table run_simulate(const ExperimentConfig& c, const Overrides& o) {
    const std::string what = "simulate";
    const json& p = c.params;
    reject_unknown_keys(p, {"profile", "t", "M_range", "samples", "m", "Y", "n"}, what);
    const RateProfile prof = profile_of(p, what);
    const double t = positive_time(p, what);
    const auto Ms = m_range(p, what);
    const long samples = o.samples.value_or(field_or<long>(p, "samples", 100000, what));
    if (samples < 1) throw ConfigError(what + ": samples must be positive");
    const unsigned workers = o.workers.value_or(1);
    const bool step = p.contains("m");
    if (step == p.contains("Y")) throw ConfigError(what + ": give exactly one of 'm' (step) or 'Y' (finite)");
    std::function<long(std::uint64_t)> sampler;
    if (step) {
        const int m = field<int>(p, "m", what);
        if (m < 1) throw ConfigError(what + ": m must be >= 1");
        if (p.contains("n")) throw ConfigError(what + ": 'n' applies to finite initial conditions only");
        sampler = [&, m](std::uint64_t i) {
            Rng r(c.seed, i);
            return static_cast<long>(simulate_step(prof, m, t, r)[static_cast<std::size_t>(m - 1)]);
        };
    } else {
        const ParticleConfig Y = particle_config_from_json(p.at("Y"));
        const int n = field<int>(p, "n", what);
        if (n < 1 || n > static_cast<int>(Y.size())) throw ConfigError(what + ": n must be a label 1..N");
        sampler = [&, Y, n](std::uint64_t i) {
            Rng r(c.seed, i);
            return static_cast<long>(simulate_finite(prof, Y, t, r).final_state[static_cast<std::size_t>(n - 1)]);
        };
    }
    const auto tab = estimate_distribution(sampler, Ms, samples, workers);
    Table out;
    out.columns = {"M", "p_hat", "stderr", "samples"};
    for (long M : Ms) out.rows.push_back({M, tab.p_hat(M), tab.standard_error(M), tab.samples});
    out.summary["event"] = "x > M";
    return out;
}

inline Table run_exact(const ExperimentConfig& c, const Overrides& o) {
    const std::string what = "exact";
    const json& p = c.params;
    reject_unknown_keys(p, {"formula", "profile", "t", "Y", "X", "n", "M_range", "quadrature"}, what);
    const std::string formula = field<std::string>(p, "formula", what);
    const RateProfile prof = profile_of(p, what);
    const double t = positive_time(p, what);
    if (!p.contains("Y")) throw ConfigError(what + ": missing field 'Y'");
    const ParticleConfig Y = particle_config_from_json(p.at("Y"));
    ContourOptions opt;
    if (p.contains("quadrature")) {
        const json& q = p.at("quadrature");
        reject_unknown_keys(q, {"nodes", "radius", "family_margin"}, what + ".quadrature");
        opt.nodes = field_or<int>(q, "nodes", 0, what);
        if (q.contains("radius")) opt.radius = field<double>(q, "radius", what);
        opt.family_margin = field_or<double>(q, "family_margin", opt.family_margin, what);
    }
    if (o.nodes) opt.nodes = *o.nodes;
    opt.workers = o.workers.value_or(1);

    Table out;
    if (formula == "transition") {
        if (p.contains("n") || p.contains("M_range")) throw ConfigError(what + ": transition takes 'X', not 'n'/'M_range'");
        const json xs = p.contains("X") ? p.at("X") : json();
        if (!xs.is_array() || xs.empty()) throw ConfigError(what + ": 'X' must be a nonempty list of configurations");
        out.columns = {"X", "value", "node_doubling_delta", "imag_residual", "method"};
        for (const auto& xj : xs) {
            const ParticleConfig X = particle_config_from_json(xj);
            const auto v = transition_probability(Y, X, t, prof, opt);
            std::string label;
            for (Site s : X.positions()) label += (label.empty() ? "" : " ") + std::to_string(s);
            check(out, v, kCircleTol, "X=" + label);
            out.rows.push_back({label, v.value, v.node_doubling_delta, v.imag_residual, v.method});
        }
        return out;
    }
    if (p.contains("X")) throw ConfigError(what + ": 'X' applies to the transition formula only");
    const auto Ms = m_range(p, what);
    const bool tagged = formula == "tagged_right" || formula == "tagged_left";
    if (!tagged && formula != "leftmost" && formula != "rightmost")
        throw ConfigError(what + ": unknown formula '" + formula + "'");
    if (tagged != p.contains("n")) throw ConfigError(what + ": 'n' is required exactly for the tagged formulas");
    const int n = tagged ? field<int>(p, "n", what) : 0;
    out.columns = {"M", "value", "node_doubling_delta", "imag_residual", "method"};
    for (long M : Ms) {
        ExactProbability v;
        if (formula == "tagged_right") v = dist_tagged_right(Y, n, M, t, prof, opt);
        else if (formula == "tagged_left") v = dist_tagged_left(Y, n, M, t, prof, opt);
        else if (formula == "leftmost") v = dist_leftmost(Y, M, t, prof, opt);
        else v = dist_rightmost(Y, M, t, prof, opt);
        check(out, v, kCircleTol, "M=" + std::to_string(M));
        out.rows.push_back({M, v.value, v.node_doubling_delta, v.imag_residual, v.method});
    }
    out.summary["event"] = "x_n > M";
    return out;
}

inline Table run_step_dist(const ExperimentConfig& c, const Overrides& o) {
    const std::string what = "step-dist";
    const json& p = c.params;
    reject_unknown_keys(p, {"profile", "m", "t", "M_range", "route", "grid_nodes", "zeta_circle"}, what);
    const RateProfile prof = profile_of(p, what);
    const int m = field<int>(p, "m", what);
    if (m < 1) throw ConfigError(what + ": m must be >= 1");
    const double t = positive_time(p, what);
    const auto Ms = m_range(p, what);
    const std::string route = field_or<std::string>(p, "route", "zeta", what);
    if (route != "zeta" && route != "residues") throw ConfigError(what + ": route must be 'zeta' or 'residues'");
    const int nodes = o.nodes.value_or(field_or<int>(p, "grid_nodes", 128, what));
    const ZetaCircle zc = zeta_circle_of(p, what);
    const unsigned workers = o.workers.value_or(1);
    Table out;
    out.columns = {"M", "p", "delta", "imag_residual", "method"};
    for (long M : Ms) {
        const NystromGrid g = default_finite_grid(prof, M, t, nodes);
        const auto v = route == "zeta" ? step_distribution(m, M, t, prof, g, zc, workers)
                                       : step_distribution_residues(m, M, t, prof, g);
        check(out, v, kCircleTol, "M=" + std::to_string(M));
        out.rows.push_back({M, v.value, v.node_doubling_delta, v.imag_residual, v.method});
    }
    out.summary["event"] = "x_m > M";
    return out;
}

inline std::vector<double> number_or_list(const json& p, const std::string& key, const std::string& what) {
    if (!p.contains(key)) throw ConfigError(what + ": missing field '" + key + "'");
    if (p.at(key).is_number()) return {p.at(key).get<double>()};
    return field<std::vector<double>>(p, key, what);
}

inline NystromGrid line_grid_of(const json& p, const Overrides& o, const std::string& what) {
    NystromGrid g = NystromGrid::make_vertical_line();
    if (p.contains("grid")) {
        const json& gj = p.at("grid");
        reject_unknown_keys(gj, {"half_height", "nodes"}, what + ".grid");
        g = NystromGrid::make_vertical_line(field_or<double>(gj, "half_height", 10.0, what),
                                            field_or<int>(gj, "nodes", 200, what));
    }
    if (o.nodes) g = NystromGrid::make_vertical_line(g.half_height, *o.nodes);
    return g;
}

inline Table run_limit_dist(const ExperimentConfig& c, const Overrides& o) {
    const std::string what = "limit-dist";
    const json& p = c.params;
    reject_unknown_keys(p, {"q", "m", "tau", "betas", "grid", "zeta_circle"}, what);
    const double q = QParam(field<double>(p, "q", what)).value();
    const int m = field_or<int>(p, "m", 1, what);
    if (m < 1) throw ConfigError(what + ": m must be >= 1");
    const auto taus = number_or_list(p, "tau", what);
    const auto betas = field_or<std::vector<double>>(p, "betas", {}, what);
    const NystromGrid g = line_grid_of(p, o, what);
    const ZetaCircle zc = zeta_circle_of(p, what);
    const unsigned workers = o.workers.value_or(1);
    Table out;
    out.columns = {"tau", "p", "delta", "imag_residual", "method"};
    for (double tau : taus) {
        const auto v = limiting_step_distribution(m, q, tau, betas, g, zc, workers);
        check(out, v, kLineTol, "tau=" + std::to_string(tau));
        out.rows.push_back({tau, v.value, v.node_doubling_delta, v.imag_residual, v.method});
    }
    out.summary["event"] = "x_m(n - tau sqrt n) > n + l + 1, n -> infinity";
    return out;
}

inline Table run_converge(const ExperimentConfig& c, const Overrides&) {
    const std::string what = "converge";
    const json& p = c.params;
    reject_unknown_keys(p, {"q", "tau", "betas", "zeta", "n_list"}, what);
    const double q = QParam(field<double>(p, "q", what)).value();
    const double tau = field<double>(p, "tau", what);
    const auto betas = field_or<std::vector<double>>(p, "betas", {}, what);
    cplx zeta = 1.0;
    if (p.contains("zeta")) {
        const json& z = p.at("zeta");
        if (z.is_number()) zeta = z.get<double>();
        else {
            const auto v = field<std::vector<double>>(p, "zeta", what);
            if (v.size() != 2) throw ConfigError(what + ": zeta must be a number or [re, im]");
            zeta = {v[0], v[1]};
        }
    }
    const auto ns = field<std::vector<long>>(p, "n_list", what);
    if (ns.empty()) throw ConfigError(what + ": n_list must be nonempty");
    for (long n : ns)
        if (n < 1) throw ConfigError(what + ": n_list entries must be positive");
    const auto s = asymptotic_convergence_study(ns, q, tau, betas, zeta);
    Table out;
    out.columns = {"n", "deviation", "det_re", "det_im", "refinement_delta"};
    for (const auto& r : s.rows) out.rows.push_back({r.n, r.deviation, r.det_n.real(), r.det_n.imag(), r.refinement_delta});
    out.summary = {{"det_limit_re", s.det_limit.real()},
                   {"det_limit_im", s.det_limit.imag()},
                   {"limit_delta", s.limit_delta},
                   {"loglog_slope", s.loglog_slope},
                   {"strictly_decreasing", s.strictly_decreasing()}};
    return out;
}

inline Table run_validate(const ExperimentConfig& c, const Overrides& o,
                          const std::function<void(const validation::CheckResult&)>& report = {}) {
    const std::string what = "validate";
    const json& p = c.params;
    reject_unknown_keys(p, {"samples"}, what);
    validation::Options vo;
    vo.samples = o.samples.value_or(field_or<long>(p, "samples", vo.samples, what));
    if (vo.samples < 100) throw ConfigError(what + ": samples must be >= 100");
    vo.seed = c.seed;
    vo.workers = o.workers.value_or(1);
    Table out;
    out.columns = {"id", "name", "pass", "detail", "seconds"};
    int passed = 0;
    for (const auto& r : validation::run_all(vo, report)) {
        out.rows.push_back({r.id, r.name, r.pass, r.detail, r.seconds});
        if (r.pass) ++passed;
        else out.failures.push_back("check " + std::to_string(r.id) + " failed: " + r.name);
    }
    out.summary = {{"passed", passed}, {"total", out.rows.size()}};
    return out;
}

inline Table run_constants(const ExperimentConfig& c, const Overrides&) {
    const std::string what = "constants";
    const json& p = c.params;
    reject_unknown_keys(p, {"q", "alpha", "theta"}, what);
    const QParam q(field<double>(p, "q", what));
    const double alpha = field_or<double>(p, "alpha", 1.0, what);
    std::vector<double> thetas;
    if (!p.contains("theta")) throw ConfigError(what + ": missing field 'theta'");
    const json& th = p.at("theta");
    if (th.is_object()) {
        reject_unknown_keys(th, {"from", "to", "count"}, what + ".theta");
        const double a = field<double>(th, "from", what), b = field<double>(th, "to", what);
        const int k = field<int>(th, "count", what);
        if (k < 1 || k > 1000000) throw ConfigError(what + ": theta.count out of range");
        for (int i = 0; i < k; ++i) thetas.push_back(k == 1 ? a : a + (b - a) * i / (k - 1));
    } else {
        thetas = number_or_list(p, "theta", what);
    }
    Table out;
    out.columns = {"theta", "kappa", "f", "chi", "g", "sigma"};
    for (double theta : thetas) {
        const auto s = scaling_constants(theta, alpha, q);
        out.rows.push_back({theta, s.kappa, s.f, s.chi, s.g ? json(*s.g) : json(nullptr),
                            s.sigma ? json(*s.sigma) : json(nullptr)});
    }
    out.summary["alpha"] = alpha;
    return out;
}

inline Table run(const ExperimentConfig& c, const Overrides& o = {},
                 const std::function<void(const validation::CheckResult&)>& report = {}) {
    try {
        if (c.command == "simulate") return run_simulate(c, o);
        if (c.command == "exact") return run_exact(c, o);
        if (c.command == "step-dist") return run_step_dist(c, o);
        if (c.command == "limit-dist") return run_limit_dist(c, o);
        if (c.command == "converge") return run_converge(c, o);
        if (c.command == "validate") return run_validate(c, o, report);
        if (c.command == "constants") return run_constants(c, o);
    } catch (const json::exception& e) {
        throw ConfigError(c.command + ": " + e.what());
    }
    throw ConfigError("unknown command '" + c.command + "'");
}

// ---- output ----

inline int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e)) return 2;
    if (dynamic_cast<const NumericFailure*>(&e) || dynamic_cast<const SingularError*>(&e)) return 3;
    if (dynamic_cast<const InvariantViolation*>(&e)) return 4;
    return 1;
}

// Shortest round-trip decimal, independent of the locale.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string csv_cell(const json& v) {
    if (v.is_null()) return "";
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return v.dump();
    if (v.is_number()) return format_number(v.get<double>());
    const std::string s = v.is_string() ? v.get<std::string>() : v.dump();
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + "\"";
}

inline std::string to_csv(const Table& t) {
    std::ostringstream os;
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
    os << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_cell(row[i]);
        os << '\n';
    }
    return os.str();
}

inline json envelope(const ExperimentConfig& c, const Table& t, const std::string& build, double wall_seconds) {
    json rows = json::array();
    for (const auto& row : t.rows) {
        json r = json::object();
        for (std::size_t i = 0; i < row.size(); ++i) r[t.columns[i]] = row[i];
        rows.push_back(std::move(r));
    }
    return {{"inputs", echo(c)},
            {"build", build},
            {"columns", t.columns},
            {"rows", rows},
            {"summary", t.summary},
            {"failures", t.failures},
            {"status", t.failures.empty() ? "ok" : "invariant_failure"},
            {"wall_seconds", wall_seconds}};
}

inline json error_envelope(const json& inputs, const std::string& build, const std::exception& e) {
    return {{"inputs", inputs}, {"build", build}, {"status", "error"}, {"exit_code", exit_code(e)}, {"error", e.what()}};
}

}  // namespace qtazrp::cli
