// jmpkit: solve, simulate and verify jump-process models from the command line.
//
// Exit codes: 0 success, 1 a verification check failed, 2 usage or
// configuration error, 3 numerical failure.

#include "jmp/errors.hpp"
#include "jmp/feller.hpp"
#include "jmp/io.hpp"
#include "jmp/kolmogorov.hpp"
#include "jmp/model_io.hpp"
#include "jmp/qmodel.hpp"
#include "jmp/scenarios.hpp"
#include "jmp/simulator.hpp"
#include "jmp/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

enum Exit { ok = 0, check_failed = 1, usage = 2, numerical = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string model_path;
    std::string scenario_id;
    std::string scenarios_file;
    unsigned threads = 0;
};

std::vector<jmp::Scenario> load_scenarios(const std::string& file) {
    if (file.empty()) return jmp::bundled_scenarios();
    std::ifstream in(file);
    if (!in) throw jmp::ConfigError(file, "cannot open scenario file");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw jmp::ConfigError(file, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_array()) throw jmp::ConfigError(file, "expected an array of scenarios");
    std::vector<jmp::Scenario> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(jmp::scenario_from_json(j[i], file + "#/" + std::to_string(i)));
    return out;
}

const jmp::Scenario& find_scenario(const std::vector<jmp::Scenario>& all, const std::string& id) {
    for (const auto& s : all)
        if (s.id == id) return s;
    throw UsageError("unknown scenario '" + id + "'");
}

/// The model document and its source, from --model or --scenario.
struct ModelSource {
    nlohmann::json doc;
    std::optional<jmp::Scenario> scenario;
};

ModelSource resolve_model(const Common& c) {
    if (c.model_path.empty() == c.scenario_id.empty()) throw UsageError("give exactly one of --model or --scenario");
    ModelSource src;
    if (!c.scenario_id.empty()) {
        src.scenario = find_scenario(load_scenarios(c.scenarios_file), c.scenario_id);
        src.doc = src.scenario->model;
        return src;
    }
    std::ifstream in(c.model_path);
    if (!in) throw jmp::ConfigError(c.model_path, "cannot open model file");
    try {
        in >> src.doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw jmp::ConfigError(c.model_path, std::string("invalid JSON: ") + e.what());
    }
    return src;
}

jmp::QModel parse_model(const ModelSource& src, const Common& c) {
    try {
        return jmp::model_from_json(src.doc);
    } catch (const jmp::ConfigError& e) {
        const std::string where = c.model_path.empty() ? "scenario " + c.scenario_id : c.model_path;
        throw jmp::ConfigError(where + e.path(), std::string(e.what()).substr(e.path().size() + 2));
    }
}

std::string config_hash(const nlohmann::json& canonical) { return jmp::hex64(jmp::fnv1a(canonical.dump())); }

/// Writes to `path`, or stdout for "-" / empty. Output is assembled in memory
/// and written once.
void emit(const std::string& path, const std::string& body) {
    if (path.empty() || path == "-") {
        std::cout << body;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write " + path);
    out << body;
}

// ---------------------------------------------------------------------------

struct SolveArgs {
    std::string route = "feller";
    std::optional<double> u, t;
    double tol = 1e-9;
    std::string out = "-";
};

int cmd_solve(const Common& c, const SolveArgs& a) {
    const auto src = resolve_model(c);
    const jmp::QModel model = parse_model(src, c);
    const double u = a.u ? *a.u : src.scenario ? src.scenario->u : 0.0;
    const double t = a.t ? *a.t : src.scenario ? src.scenario->t : 1.0;
    if (!(u < t)) throw UsageError("need u < t");
    if (!(a.tol > 0.0)) throw UsageError("--tol must be positive");

    const auto start = std::chrono::steady_clock::now();
    jmp::Kernel k;
    std::string tail = "n/a";
    if (a.route == "feller") {
        jmp::FellerOptions fo;
        fo.tail_tol = a.tol;
        const auto r = jmp::feller_sum(model, u, t, fo);
        k = r.kernel;
        tail = jmp::format_double(r.stack.tail_bound.maxCoeff());
    } else {
        jmp::OdeOptions oo;
        oo.rtol = a.tol;
        oo.atol = a.tol * 1e-3;
        k = a.route == "backward" ? jmp::solve_backward(model, t, u, oo).at(u) : jmp::solve_forward(model, u, t, oo).at(t);
    }
    const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const nlohmann::json canonical{{"command", "solve"}, {"model", src.doc}, {"route", a.route}, {"u", u}, {"t", t},
                                   {"tol", a.tol}};
    std::ostringstream os;
    jmp::write_kernel_csv(os, k,
                          {{"command", "solve"},
                           {"config_hash", config_hash(canonical)},
                           {"seed", "none"},
                           {"route", a.route},
                           {"tol", jmp::format_double(a.tol)},
                           {"tail_bound", tail},
                           {"runtime_s", jmp::format_double(runtime)}});
    emit(a.out, os.str());
    return ok;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::optional<std::size_t> paths;
    std::optional<std::uint64_t> seed;
    std::optional<double> u, horizon;
    std::optional<std::size_t> jump_cap;
    std::size_t x0 = 0;
    double z = 3.0;
    std::string out = "sim";
    bool no_dump = false;
};

int cmd_simulate(const Common& c, const SimulateArgs& a) {
    const auto src = resolve_model(c);
    const jmp::QModel model = jmp::make_conservative(parse_model(src, c));
    jmp::SimulationConfig cfg;
    if (src.scenario) cfg = src.scenario->sim;
    if (a.paths) cfg.n_paths = *a.paths;
    if (a.seed) cfg.seed = *a.seed;
    if (a.u) cfg.start_time = *a.u;
    if (a.horizon) cfg.horizon = *a.horizon;
    if (a.jump_cap) cfg.jump_cap = *a.jump_cap;
    if (!src.scenario || a.x0 != 0) {
        if (a.x0 >= model.space().n_states) throw UsageError("--x0 is not a state of the model");
        cfg.initial = jmp::point_mass(model.size(), a.x0);
    }
    cfg.threads = c.threads;
    cfg.validate(model.size());

    const auto paths = jmp::simulate_paths(model, cfg);
    jmp::TransitionCounter counter(model.size(), cfg.start_time, cfg.horizon);
    for (const auto& p : paths) counter.add(p);

    // thread count is deliberately not part of the hash: output does not depend on it
    const nlohmann::json canonical{{"command", "simulate"},  {"model", src.doc},        {"n_paths", cfg.n_paths},
                                   {"seed", cfg.seed},       {"start", cfg.start_time}, {"horizon", cfg.horizon},
                                   {"jump_cap", cfg.jump_cap}, {"initial", cfg.initial}};
    const std::string hash = config_hash(canonical);

    std::ostringstream kernel_csv;
    jmp::write_empirical_csv(kernel_csv, counter.result(), a.z,
                             {{"command", "simulate"},
                              {"config_hash", hash},
                              {"seed", std::to_string(cfg.seed)},
                              {"n_paths", std::to_string(cfg.n_paths)},
                              {"jump_cap", std::to_string(cfg.jump_cap)}});
    emit(a.out + ".kernel.csv", kernel_csv.str());
    if (!a.no_dump) {
        std::ostringstream dump;
        jmp::write_path_dump(dump, cfg, hash, paths);
        emit(a.out + ".paths.jsonl", dump.str());
    }
    return ok;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
    std::string scenario = "all";
    std::string out = "reports";
    bool no_mc = false;
};

int cmd_verify(const Common& c, const VerifyArgs& a) {
    const auto all = load_scenarios(c.scenarios_file);
    std::vector<jmp::Scenario> chosen;
    if (a.scenario == "all")
        chosen = all;
    else
        chosen.push_back(find_scenario(all, a.scenario));

    jmp::VerifyOptions opt;
    opt.monte_carlo = !a.no_mc;
    std::vector<jmp::Report> reports;
    std::size_t n_checks = 0, n_failed = 0;
    for (auto sc : chosen) {
        sc.sim.threads = c.threads;
        auto rep = jmp::verify_scenario(sc, opt);
        for (const auto* f : rep.failures())
            std::cerr << "FAIL " << sc.id << ": " << f->name() << " (measured " << jmp::format_double(f->measured())
                      << ", tolerance " << jmp::format_double(f->tolerance()) << ")\n";
        n_checks += rep.checks.size();
        n_failed += rep.failures().size();
        std::cout << sc.id << ": " << rep.checks.size() - rep.failures().size() << "/" << rep.checks.size()
                  << " checks passed\n";
        reports.push_back(std::move(rep));
    }

    std::filesystem::create_directories(a.out);
    nlohmann::json scen = nlohmann::json::array();
    for (const auto& s : chosen) scen.push_back(jmp::scenario_to_json(s));
    const std::string hash = config_hash({{"command", "verify"}, {"scenarios", scen}, {"mc", !a.no_mc}});
    for (auto& rep : reports) {
        const std::string file = (std::filesystem::path(a.out) / (rep.scenario + ".json")).string();
        rep.artifacts.push_back(file);
        nlohmann::json j = jmp::report_to_json(rep);
        j["tool"] = jmp::tool_version;
        j["config_hash"] = hash;
        j["seed"] = find_scenario(chosen, rep.scenario).sim.seed;
        emit(file, j.dump(2) + "\n");
    }
    std::ostringstream csv;
    csv << "# jmpkit " << jmp::tool_version << "\n# config_hash=" << hash << "\n";
    jmp::write_reports_csv(csv, reports);
    emit((std::filesystem::path(a.out) / "summary.csv").string(), csv.str());

    std::cout << n_checks - n_failed << "/" << n_checks << " checks passed\n";
    return n_failed == 0 ? ok : check_failed;
}

int cmd_scenarios(const std::string& out) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : jmp::bundled_scenarios()) j.push_back(jmp::scenario_to_json(s));
    emit(out, j.dump(2) + "\n");
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"jmpkit: transition functions and simulation of time-inhomogeneous jump processes"};
    app.set_version_flag("--version", jmp::tool_version);
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub, bool with_model) {
        if (with_model) {
            sub->add_option("--model", common.model_path, "Model JSON file");
            sub->add_option("--scenario", common.scenario_id, "Bundled scenario id (alternative to --model)");
        }
        sub->add_option("--scenarios", common.scenarios_file, "Scenario library JSON (default: bundled library)");
        sub->add_option("--threads", common.threads,
                        "Worker threads for simulation (0: $JMP_THREADS or hardware concurrency)")
            ->capture_default_str();
    };

    SolveArgs solve;
    auto* s = app.add_subcommand("solve", "Compute the minimal transition function P(u,.;t,.) as CSV");
    add_common(s, true);
    s->add_option("--route", solve.route, "feller | backward | forward")
        ->check(CLI::IsMember({"feller", "backward", "forward"}))
        ->capture_default_str();
    s->add_option("--u", solve.u, "Start time (default: scenario value or 0)");
    s->add_option("--t", solve.t, "End time (default: scenario value or 1)");
    s->add_option("--tol", solve.tol, "Series tail tolerance, or ODE relative tolerance")->capture_default_str();
    s->add_option("--out", solve.out, "Output CSV ('-' for stdout)")->capture_default_str();

    SimulateArgs sim;
    auto* m = app.add_subcommand("simulate", "Simulate paths; write a path dump and an empirical kernel");
    add_common(m, true);
    m->add_option("--paths", sim.paths, "Number of paths (default: scenario value or 1000)");
    m->add_option("--seed", sim.seed, "RNG seed (default: scenario value or 1)");
    m->add_option("--u", sim.u, "Start time (default: scenario value or 0)");
    m->add_option("--horizon", sim.horizon, "Simulation horizon (default: scenario value or 1)");
    m->add_option("--jump-cap", sim.jump_cap, "Jumps after which a path counts as exploded (default 10000)");
    m->add_option("--x0", sim.x0, "Initial state")->capture_default_str();
    m->add_option("--z", sim.z, "Standard errors in the CI half-width columns")->capture_default_str();
    m->add_option("--out", sim.out, "Output prefix: <out>.kernel.csv and <out>.paths.jsonl")->capture_default_str();
    m->add_flag("--no-dump", sim.no_dump, "Skip the path dump");

    VerifyArgs ver;
    auto* v = app.add_subcommand("verify", "Run the verification suite; exit 0 iff every check passes");
    add_common(v, false);
    v->add_option("--scenario", ver.scenario, "Scenario id or 'all'")->capture_default_str();
    v->add_option("--out", ver.out, "Report directory")->capture_default_str();
    v->add_flag("--no-mc", ver.no_mc, "Skip the Monte Carlo checks");

    std::string scen_out = "-";
    auto* l = app.add_subcommand("scenarios", "Print the bundled scenario library as JSON");
    l->add_option("--out", scen_out, "Output file ('-' for stdout)")->capture_default_str();

    app.footer("Environment: JMP_THREADS sets the default simulation thread count.\n"
               "Exit codes: 0 ok, 1 check failure, 2 usage/config error, 3 numerical failure.");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : usage;
    }

    try {
        if (s->parsed()) return cmd_solve(common, solve);
        if (m->parsed()) return cmd_simulate(common, sim);
        if (v->parsed()) return cmd_verify(common, ver);
        if (l->parsed()) return cmd_scenarios(scen_out);
    } catch (const jmp::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    } catch (const jmp::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    } catch (const jmp::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return numerical;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return numerical;
    }
    return usage;
}
