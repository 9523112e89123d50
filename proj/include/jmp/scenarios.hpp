#pragma once

#include "jmp/errors.hpp"
#include "jmp/model_io.hpp"
#include "jmp/qmodel.hpp"
#include "jmp/simulator.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace jmp {

/// A pinned reference value for one kernel entry (or a row defect when
/// `col` is `defect_column`), with where it came from.
struct ExpectedValue {
    static constexpr State defect_column = std::numeric_limits<State>::max();

    State row = 0;
    State col = 0;
    double value = 0.0;
    double tolerance = 1e-6;
    std::string origin;  ///< "by construction" or "independent oracle"
    std::string oracle;

    std::string label() const {
        return "P[" + std::to_string(row) + "][" + (col == defect_column ? std::string("defect") : std::to_string(col)) +
               "]";
    }
};

struct Scenario {
    std::string id;
    std::string description;
    nlohmann::json model;
    double u = 0.0;
    double t = 1.0;
    SimulationConfig sim;
    std::vector<ExpectedValue> expected;
    bool regular = true;  ///< bounded rates, conservative, no explosion mass

    QModel build_model() const { return model_from_json(model); }

    /// The model the simulator runs: the conservative completion.
    QModel simulation_model() const { return make_conservative(build_model()); }
};

namespace scenario_models {

inline nlohmann::json profile_json(const TimeProfile& p) { return detail::profile_to_json(p); }

inline nlohmann::json transition(State from, State to, const TimeProfile& p) {
    return {{"from", from}, {"to", to}, {"profile", profile_json(p)}};
}

/// Pure birth n -> n+1 on states 0..top with rate rate(n). With `kill_top`
/// the top state leaks its rate(top) out of the space (explosion proxy);
/// otherwise the top state is absorbing.
inline nlohmann::json pure_birth(std::size_t top, const std::function<TimeProfile(std::size_t)>& rate, bool kill_top) {
    nlohmann::json j;
    j["n_states"] = top + 1;
    j["conservative"] = !kill_top;
    j["transitions"] = nlohmann::json::array();
    for (std::size_t n = 0; n < top; ++n) j["transitions"].push_back(transition(n, n + 1, rate(n)));
    if (kill_top) j["kill"] = nlohmann::json::array({{{"state", top}, {"profile", profile_json(rate(top))}}});
    return j;
}

/// q_n = (n+1)^2 truncated at `top`, with the top state killed.
inline nlohmann::json explosive_birth(std::size_t top) {
    return pure_birth(top, [](std::size_t n) { return TimeProfile::constant(double((n + 1) * (n + 1))); }, true);
}

}  // namespace scenario_models

/// Explosion probability of the untruncated (n+1)^2 pure birth within a
/// horizon tau: P(sum_n E_n / (n+1)^2 <= tau) = 1 - 2 sum_k (-1)^(k+1) e^{-k^2 tau}.
inline double explosive_birth_limit_defect(double tau) {
    double s = 0.0;
    for (int k = 1; k < 200; ++k) {
        const double term = std::exp(-double(k) * k * tau);
        s += (k % 2 ? 2.0 : -2.0) * term;
        if (term < 1e-300) break;
    }
    return 1.0 - s;
}

inline std::vector<Scenario> bundled_scenarios() {
    using scenario_models::transition;
    std::vector<Scenario> out;
    const std::uint64_t seed = 20261015;
    auto base_sim = [&](std::size_t n, double u, double t) {
        SimulationConfig c;
        c.initial = point_mass(n, 0);
        c.start_time = u;
        c.horizon = t;
        c.n_paths = 100000;
        c.seed = seed;
        c.jump_cap = 10000;
        return c;
    };

    {
        Scenario s;
        s.id = "zero-rate";
        s.description = "three states, no transitions";
        s.model = {{"n_states", 3}, {"conservative", true}, {"transitions", nlohmann::json::array()}};
        s.u = 0.5;
        s.t = 1.5;
        s.sim = base_sim(3, s.u, s.t);
        s.expected = {{0, 0, 1.0, 1e-12, "by construction", "no rates: identity"},
                      {1, 2, 0.0, 1e-12, "by construction", "no rates: identity"}};
        out.push_back(std::move(s));
    }
    {
        Scenario s;
        s.id = "two-state-symmetric";
        s.description = "0 <-> 1 at constant rate 1";
        s.model = {{"n_states", 2},
                   {"conservative", true},
                   {"transitions",
                    {transition(0, 1, TimeProfile::constant(1.0)), transition(1, 0, TimeProfile::constant(1.0))}}};
        s.u = 0.5;
        s.t = 0.5 + std::numbers::ln2;
        s.sim = base_sim(2, s.u, s.t);
        s.expected = {{0, 0, 0.625, 1e-6, "independent oracle", "2x2 matrix exponential: (1+e^{-2 ln 2})/2"},
                      {0, 1, 0.375, 1e-6, "independent oracle", "2x2 matrix exponential"}};
        out.push_back(std::move(s));
    }
    {
        Scenario s;
        s.id = "two-state-piecewise";
        s.description = "0->1 jumps from 1 to 3 at t=1; 1->0 falls linearly from 2 to 0.5 on [0.5,1.5]";
        s.model = {{"n_states", 2},
                   {"conservative", true},
                   {"transitions",
                    {transition(0, 1, TimeProfile::piecewise_constant({1.0}, {1.0, 3.0})),
                     transition(1, 0, TimeProfile::piecewise_linear({0.5, 1.5}, {2.0, 0.5}))}}};
        s.u = 0.25;
        s.t = 1.75;
        s.sim = base_sim(2, s.u, s.t);
        s.expected = {{0, 0, 0.19556151337395694, 1e-6, "independent oracle", "DOP853 at rtol 1e-13, breakpoint restarts"},
                      {1, 1, 0.8120735808449028, 1e-6, "independent oracle", "DOP853 at rtol 1e-13, breakpoint restarts"}};
        out.push_back(std::move(s));
    }
    {
        Scenario s;
        s.id = "poisson-nonhomogeneous";
        s.description = "counting process with rate 1 before t=1 and 3 after, truncated at 25 (absorbing)";
        s.model = scenario_models::pure_birth(
            25, [](std::size_t) { return TimeProfile::piecewise_constant({1.0}, {1.0, 3.0}); }, false);
        s.u = 0.5;
        s.t = 1.5;
        s.sim = base_sim(26, s.u, s.t);
        const double e2 = std::exp(-2.0);
        s.expected = {{0, 0, e2, 1e-6, "independent oracle", "Poisson e^{-L} L^k / k!, L = 2"},
                      {0, 1, 2.0 * e2, 1e-6, "independent oracle", "Poisson e^{-L} L^k / k!, L = 2"},
                      {0, 2, 2.0 * e2, 1e-6, "independent oracle", "Poisson e^{-L} L^k / k!, L = 2"},
                      {0, 3, 4.0 / 3.0 * e2, 1e-6, "independent oracle", "Poisson e^{-L} L^k / k!, L = 2"}};
        out.push_back(std::move(s));
    }
    {
        Scenario s;
        s.id = "birth-death-bounded";
        s.description = "8 states, birth rising linearly 0.5 -> 1.5 over [0,2], death rate 1";
        nlohmann::json tr = nlohmann::json::array();
        for (State k = 0; k < 8; ++k) {
            if (k + 1 < 8) tr.push_back(transition(k, k + 1, TimeProfile::piecewise_linear({0.0, 2.0}, {0.5, 1.5})));
            if (k > 0) tr.push_back(transition(k, k - 1, TimeProfile::constant(1.0)));
        }
        s.model = {{"n_states", 8}, {"conservative", true}, {"transitions", tr}};
        s.u = 0.2;
        s.t = 1.7;
        s.sim = base_sim(8, s.u, s.t);
        s.expected = {{0, 0, 0.4223352554783821, 1e-6, "independent oracle", "DOP853 at rtol 1e-13"},
                      {3, 3, 0.2450655106135462, 1e-6, "independent oracle", "DOP853 at rtol 1e-13"}};
        out.push_back(std::move(s));
    }
    {
        Scenario s;
        s.id = "explosive-pure-birth";
        s.description = "pure birth q_n = (n+1)^2 truncated at 20, top state killed";
        s.model = scenario_models::explosive_birth(20);
        s.u = 0.1;
        s.t = 2.0;
        s.sim = base_sim(22, s.u, s.t);  // conservative completion adds the cemetery
        s.expected = {{0, 0, 0.14956861922263506, 1e-6, "independent oracle", "survival e^{-1.9}"},
                      {0, ExpectedValue::defect_column, 0.7152906484670958, 1e-6, "independent oracle",
                       "expm of the truncated generator"}};
        s.regular = false;
        out.push_back(std::move(s));
    }
    {
        Scenario s;
        s.id = "single-state-kill";
        s.description = "one state killed at rate 1 before t=1 and 3 after";
        s.model = {{"n_states", 1},
                   {"conservative", false},
                   {"transitions", nlohmann::json::array()},
                   {"kill",
                    {{{"state", 0},
                      {"profile", scenario_models::profile_json(TimeProfile::piecewise_constant({1.0}, {1.0, 3.0}))}}}}};
        s.u = 0.5;
        s.t = 1.5;
        s.sim = base_sim(2, s.u, s.t);
        s.expected = {{0, 0, std::exp(-2.0), 1e-8, "independent oracle", "survival e^{-L}, L = 2"},
                      {0, ExpectedValue::defect_column, 1.0 - std::exp(-2.0), 1e-8, "independent oracle", "1 - e^{-L}"}};
        s.regular = false;
        out.push_back(std::move(s));
    }
    return out;
}

inline nlohmann::json scenario_to_json(const Scenario& s) {
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& e : s.expected)
        ex.push_back({{"row", e.row},
                      {"col", e.col == ExpectedValue::defect_column ? nlohmann::json("defect") : nlohmann::json(e.col)},
                      {"value", e.value},
                      {"tolerance", e.tolerance},
                      {"origin", e.origin},
                      {"oracle", e.oracle}});
    return {{"id", s.id},
            {"description", s.description},
            {"model", s.model},
            {"u", s.u},
            {"t", s.t},
            {"regular", s.regular},
            {"simulation",
             {{"initial", s.sim.initial},
              {"start_time", s.sim.start_time},
              {"horizon", s.sim.horizon},
              {"n_paths", s.sim.n_paths},
              {"seed", s.sim.seed},
              {"jump_cap", s.sim.jump_cap}}},
            {"expected", ex}};
}

inline Scenario scenario_from_json(const nlohmann::json& j, const std::string& path = "") {
    try {
        Scenario s;
        s.id = j.at("id").get<std::string>();
        s.description = j.value("description", "");
        s.model = j.at("model");
        s.u = j.at("u").get<double>();
        s.t = j.at("t").get<double>();
        s.regular = j.value("regular", true);
        const auto& sim = j.at("simulation");
        s.sim.initial = sim.at("initial").get<std::vector<double>>();
        s.sim.start_time = sim.at("start_time").get<double>();
        s.sim.horizon = sim.at("horizon").get<double>();
        s.sim.n_paths = sim.at("n_paths").get<std::size_t>();
        s.sim.seed = sim.at("seed").get<std::uint64_t>();
        s.sim.jump_cap = sim.at("jump_cap").get<std::size_t>();
        for (const auto& e : j.at("expected")) {
            ExpectedValue ev;
            ev.row = e.at("row").get<State>();
            ev.col = e.at("col").is_string() ? ExpectedValue::defect_column : e.at("col").get<State>();
            ev.value = e.at("value").get<double>();
            ev.tolerance = e.at("tolerance").get<double>();
            ev.origin = e.value("origin", "");
            ev.oracle = e.value("oracle", "");
            s.expected.push_back(ev);
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path, std::string("invalid scenario: ") + e.what());
    }
}

}  // namespace jmp
