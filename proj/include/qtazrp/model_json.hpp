#pragma once

// JSON form of the model types:
//   RateProfile    {"q", "default_a", "overrides": {"site": a}, "a_min", "a_max"}
//   ParticleConfig [x_1, ..., x_N]

#include <set>
#include <string>

#include "json.hpp"

#include "model.hpp"

namespace qtazrp {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& what) {
    if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError(what + ": unknown field '" + k + "'");
}

inline nlohmann::json to_json(const RateProfile& p) {
    nlohmann::json ov = nlohmann::json::object();
    for (const auto& [x, a] : p.overrides()) ov[std::to_string(x)] = a;
    return {{"q", p.q().value()}, {"default_a", p.default_a()}, {"overrides", ov},
            {"a_min", p.a_min()}, {"a_max", p.a_max()}};
}

inline RateProfile rate_profile_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {"q", "default_a", "overrides", "a_min", "a_max"}, "profile");
    try {
        std::map<Site, double> ov;
        if (j.contains("overrides"))
            for (const auto& [k, v] : j.at("overrides").items()) {
                std::size_t used = 0;
                const long site = std::stol(k, &used);
                if (used != k.size()) throw ConfigError("profile: bad site key '" + k + "'");
                ov[site] = v.get<double>();
            }
        std::optional<double> lo, hi;
        if (j.contains("a_min")) lo = j.at("a_min").get<double>();
        if (j.contains("a_max")) hi = j.at("a_max").get<double>();
        return RateProfile(j.at("q").get<double>(), j.at("default_a").get<double>(), std::move(ov), lo, hi);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("profile: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw ConfigError("profile: site keys must be integers");
    } catch (const DomainError& e) {
        throw ConfigError(std::string("profile: ") + e.what());
    }
}

inline nlohmann::json to_json(const ParticleConfig& x) { return x.positions(); }

inline ParticleConfig particle_config_from_json(const nlohmann::json& j) {
    try {
        return ParticleConfig(j.get<std::vector<Site>>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    }
}

}  // namespace qtazrp
