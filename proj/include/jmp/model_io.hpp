#pragma once

#include "jmp/errors.hpp"
#include "jmp/qmodel.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace jmp {

// Model config schema:
//   { "n_states": int, "conservative": bool, "cemetery": "none"|"explosion"|"kill",
//     "transitions": [ {"from": int, "to": int, "profile": PROFILE} ],
//     "kill": [ {"state": int, "profile": PROFILE} ] }
//   PROFILE = {"kind": "constant"|"piecewise-constant"|"piecewise-linear",
//              "breakpoints": [number...], "values": [number...]}
// "cemetery" and "kill" are optional; "conservative" defaults to true.

namespace detail {

using json = nlohmann::json;

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ConfigError(path + "/" + key, "missing required field");
    return *it;
}

inline long long as_index(const json& v, const std::string& path, long long upper) {
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
    const long long i = v.get<long long>();
    if (i < 0 || i >= upper)
        throw ConfigError(path, "index " + std::to_string(i) + " out of range [0, " +
                                    std::to_string(upper) + ")");
    return i;
}

inline std::vector<double> number_array(const json& obj, const std::string& key,
                                        const std::string& path, bool nonnegative) {
    auto it = obj.find(key);
    if (it == obj.end()) return {};
    const std::string here = path + "/" + key;
    if (!it->is_array()) throw ConfigError(here, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < it->size(); ++i) {
        const auto& v = (*it)[i];
        const std::string p = here + "/" + std::to_string(i);
        if (!v.is_number()) throw ConfigError(p, "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ConfigError(p, "must be finite");
        if (nonnegative && d < 0.0) throw ConfigError(p, "rate must be nonnegative, got " + v.dump());
        out.push_back(d);
    }
    return out;
}

inline TimeProfile parse_profile(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    const auto& kind = require(j, "kind", path);
    if (!kind.is_string()) throw ConfigError(path + "/kind", "expected a string");
    const std::string k = kind.get<std::string>();
    TimeProfile::Kind pk;
    if (k == "constant")
        pk = TimeProfile::Kind::constant;
    else if (k == "piecewise-constant")
        pk = TimeProfile::Kind::piecewise_constant;
    else if (k == "piecewise-linear")
        pk = TimeProfile::Kind::piecewise_linear;
    else
        throw ConfigError(path + "/kind", "unknown profile kind '" + k + "'");
    if (!j.contains("values")) throw ConfigError(path + "/values", "missing required field");
    auto bps = number_array(j, "breakpoints", path, true);
    auto vals = number_array(j, "values", path, true);
    try {
        return TimeProfile(pk, std::move(bps), std::move(vals));
    } catch (const DomainError& e) {
        throw ConfigError(path, e.what());
    }
}

inline json profile_to_json(const TimeProfile& p) {
    json j;
    j["kind"] = std::string(to_string(p.kind()));
    j["breakpoints"] = p.breakpoints();
    j["values"] = p.values();
    return j;
}

}  // namespace detail

inline QModel model_from_json(const nlohmann::json& j) {
    using detail::require;
    if (!j.is_object()) throw ConfigError("", "model config must be an object");
    const auto& ns = require(j, "n_states", "");
    if (!ns.is_number_integer() || ns.get<long long>() < 1)
        throw ConfigError("/n_states", "expected a positive integer");
    StateSpace space{static_cast<std::size_t>(ns.get<long long>()), false};

    bool conservative = true;
    if (auto it = j.find("conservative"); it != j.end()) {
        if (!it->is_boolean()) throw ConfigError("/conservative", "expected a boolean");
        conservative = it->get<bool>();
    }
    CemeteryRole role = CemeteryRole::none;
    if (auto it = j.find("cemetery"); it != j.end()) {
        if (!it->is_string()) throw ConfigError("/cemetery", "expected a string");
        const auto s = it->get<std::string>();
        if (s == "explosion")
            role = CemeteryRole::explosion;
        else if (s == "kill")
            role = CemeteryRole::kill;
        else if (s != "none")
            throw ConfigError("/cemetery", "expected none, explosion or kill");
        space.has_cemetery = role != CemeteryRole::none;
    }
    const auto upper = static_cast<long long>(space.size());

    std::vector<Transition> transitions;
    if (auto it = j.find("transitions"); it != j.end()) {
        if (!it->is_array()) throw ConfigError("/transitions", "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string p = "/transitions/" + std::to_string(i);
            const auto& t = (*it)[i];
            if (!t.is_object()) throw ConfigError(p, "expected an object");
            const auto from = detail::as_index(require(t, "from", p), p + "/from", upper);
            const auto to = detail::as_index(require(t, "to", p), p + "/to", upper);
            if (from == to) throw ConfigError(p + "/to", "self-transition is not allowed");
            if (space.has_cemetery && static_cast<State>(from) == space.cemetery())
                throw ConfigError(p + "/from", "the cemetery cannot have outgoing rates");
            transitions.push_back({static_cast<State>(from), static_cast<State>(to),
                                   detail::parse_profile(require(t, "profile", p), p + "/profile")});
        }
    }
    std::vector<KillRate> kills;
    if (auto it = j.find("kill"); it != j.end()) {
        if (!it->is_array()) throw ConfigError("/kill", "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string p = "/kill/" + std::to_string(i);
            const auto& k = (*it)[i];
            if (!k.is_object()) throw ConfigError(p, "expected an object");
            const auto s = detail::as_index(require(k, "state", p), p + "/state",
                                            static_cast<long long>(space.n_states));
            auto prof = detail::parse_profile(require(k, "profile", p), p + "/profile");
            if (conservative && !prof.rate().identically_zero())
                throw ConfigError(p, "kill rate given for a model declared conservative");
            kills.push_back({static_cast<State>(s), std::move(prof)});
        }
    }
    try {
        return QModel(space, std::move(transitions), std::move(kills), role);
    } catch (const DomainError& e) {
        throw ConfigError("", e.what());
    }
}

inline nlohmann::json model_to_json(const QModel& m) {
    nlohmann::json j;
    j["n_states"] = m.space().n_states;
    j["conservative"] = m.conservative();
    switch (m.cemetery_role()) {
    case CemeteryRole::none: break;
    case CemeteryRole::explosion: j["cemetery"] = "explosion"; break;
    case CemeteryRole::kill: j["cemetery"] = "kill"; break;
    }
    j["transitions"] = nlohmann::json::array();
    for (const auto& t : m.transitions())
        j["transitions"].push_back(
            {{"from", t.from}, {"to", t.to}, {"profile", detail::profile_to_json(t.profile)}});
    if (!m.kills().empty()) {
        j["kill"] = nlohmann::json::array();
        for (const auto& k : m.kills())
            j["kill"].push_back({{"state", k.state}, {"profile", detail::profile_to_json(k.profile)}});
    }
    return j;
}

inline QModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open model file");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path, std::string("invalid JSON: ") + e.what());
    }
    return model_from_json(j);
}

}  // namespace jmp
