#pragma once

#include "jmp/errors.hpp"
#include "jmp/feller.hpp"
#include "jmp/io.hpp"
#include "jmp/kernel.hpp"
#include "jmp/kolmogorov.hpp"
#include "jmp/qmodel.hpp"
#include "jmp/scenarios.hpp"
#include "jmp/simulator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace jmp {

/// One measured quantity against a pinned tolerance. Pass/fail is derived
/// from the comparison and cannot be set directly.
class Check {
public:
    enum class Relation { at_most, at_least };

    static Check at_most(std::string name, double measured, double tolerance, std::string basis) {
        return Check(std::move(name), measured, tolerance, Relation::at_most, std::move(basis));
    }
    static Check at_least(std::string name, double measured, double tolerance, std::string basis) {
        return Check(std::move(name), measured, tolerance, Relation::at_least, std::move(basis));
    }

    const std::string& name() const noexcept { return name_; }
    double measured() const noexcept { return measured_; }
    double tolerance() const noexcept { return tolerance_; }
    Relation relation() const noexcept { return relation_; }
    const std::string& basis() const noexcept { return basis_; }

    bool passed() const noexcept {
        if (std::isnan(measured_)) return false;
        return relation_ == Relation::at_most ? measured_ <= tolerance_ : measured_ >= tolerance_;
    }

private:
    Check(std::string name, double measured, double tolerance, Relation rel, std::string basis)
        : name_(std::move(name)), measured_(measured), tolerance_(tolerance), relation_(rel), basis_(std::move(basis)) {}

    std::string name_;
    double measured_;
    double tolerance_;
    Relation relation_;
    std::string basis_;
};

struct Report {
    std::string scenario;
    std::vector<Check> checks;
    std::vector<std::string> notes;
    std::vector<std::string> artifacts;

    void add(Check c) { checks.push_back(std::move(c)); }
    void add(const std::vector<Check>& cs) { checks.insert(checks.end(), cs.begin(), cs.end()); }

    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed(); });
    }

    std::vector<const Check*> failures() const {
        std::vector<const Check*> out;
        for (const auto& c : checks)
            if (!c.passed()) out.push_back(&c);
        return out;
    }
};

struct VerifyOptions {
    double route_tol = 1e-6;
    /// Slack for the minimality sandwich and fixed-point residuals: covers
    /// quadrature and ODE error.
    double sandwich_tol = 1e-7;
    /// The witness inequality compounds quadrature error of the partial sums
    /// and of the defect, so it gets the looser route tolerance.
    double witness_tol = 1e-6;
    double ck_tol_regular = 1e-8;
    double ck_tol_irregular = 1e-6;
    std::size_t dominating_trials = 100;
    std::uint64_t trial_seed = 7;
    double perturbation = 1e-3;
    double perturbation_residual = 1e-4;
    double regular_defect_tol = 1e-8;
    std::vector<double> boundary_deltas{1e-2, 1e-3, 1e-4};
    bool monte_carlo = true;
    double mc_sigmas = 3.0;
    FellerOptions feller{};
    OdeOptions ode{};
};

// ---------------------------------------------------------------------------

/// max-abs of P(u,s) P(s,t) - P(u,t).
inline double chapman_kolmogorov_residual(const Kernel& us, const Kernel& st, const Kernel& ut) {
    if (us.cols() != st.rows() || us.rows() != ut.rows() || st.cols() != ut.cols())
        throw DomainError("chapman_kolmogorov_residual: dimension mismatch");
    if (!(us.u < us.t && us.t == st.u && st.u < st.t && us.u == ut.u && st.t == ut.t))
        throw DomainError("chapman_kolmogorov_residual: kernels must span (u,s), (s,t), (u,t) with u < s < t");
    return (us.matrix * st.matrix - ut.matrix).cwiseAbs().maxCoeff();
}

/// Three routes to P(u, . ; t, .) and their pairwise distances.
struct RouteKernels {
    FellerResult feller;
    Kernel backward;
    Kernel forward;
};

inline RouteKernels solve_all_routes(const QModel& model, double u, double t, const VerifyOptions& opt = {}) {
    RouteKernels r{feller_sum(model, u, t, opt.feller), {}, {}};
    r.backward = solve_backward(model, t, u, opt.ode).at(u);
    r.forward = solve_forward(model, u, t, opt.ode).at(t);
    return r;
}

inline std::vector<Check> check_route_agreement(const RouteKernels& r, const VerifyOptions& opt = {}) {
    const std::string basis = "Feller series, backward and forward equations give the same minimal solution";
    return {Check::at_most("route feller-backward", max_abs_diff(r.feller.kernel.matrix, r.backward.matrix),
                           opt.route_tol, basis),
            Check::at_most("route feller-forward", max_abs_diff(r.feller.kernel.matrix, r.forward.matrix), opt.route_tol,
                           basis),
            Check::at_most("route backward-forward", max_abs_diff(r.backward.matrix, r.forward.matrix), opt.route_tol,
                           basis)};
}

/// Largest positive part of a - b.
inline double max_excess(const Matrix& a, const Matrix& b) { return std::max(0.0, (a - b).maxCoeff()); }

/// Minimality of the Feller series among nonnegative solutions:
///  (a) partial sums are nondecreasing and lie below both ODE solutions;
///  (b) both ODE solutions lie below the last partial sum plus the tail bound;
///  (c) the integral operator of the backward equation maps any candidate
///      dominating the n-th partial sum to something dominating the (n+1)-th.
inline std::vector<Check> check_minimality(const QModel& model, double u, double t, const VerifyOptions& opt = {}) {
    const std::string basis = "Feller series is the minimal nonnegative solution";
    std::vector<Check> out;
    FellerOptions fo = opt.feller;
    fo.route = FellerRoute::backward;
    const auto fr = feller_sum(model, u, t, fo);
    const Matrix back = solve_backward(model, t, u, opt.ode).at(u).matrix;
    const Matrix fwd = solve_forward(model, u, t, opt.ode).at(t).matrix;

    double min_term = 0.0, above_ode = 0.0;
    for (std::size_t n = 0; n < fr.stack.terms.size(); ++n) {
        min_term = std::min(min_term, fr.stack.terms[n].matrix.minCoeff());
        above_ode = std::max({above_ode, max_excess(fr.stack.partial_sums[n].matrix, back),
                              max_excess(fr.stack.partial_sums[n].matrix, fwd)});
    }
    out.push_back(Check::at_most("minimality: partial sums nondecreasing (most negative term)", -min_term,
                                 opt.sandwich_tol, basis));
    out.push_back(Check::at_most("minimality: partial sums below ODE solutions", above_ode, opt.sandwich_tol, basis));
    const Matrix upper = fr.kernel.matrix + fr.stack.tail_bound.replicate(1, fr.kernel.cols());
    out.push_back(Check::at_most("minimality: ODE solutions below partial sum + tail",
                                 std::max(max_excess(back, upper), max_excess(fwd, upper)), opt.sandwich_tol, basis));

    // (c) randomized dominating candidates, spread over n
    const auto& grid = fr.family.grid;
    const std::size_t n_terms = fr.stack.terms.size();
    std::mt19937_64 rng(opt.trial_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    KernelFamily term{KernelFamily::Anchor::upper, grid, p0_family(model, grid, KernelFamily::Anchor::upper)};
    KernelFamily partial = term;
    std::size_t passed = 0, done = 0;
    double worst = 0.0;
    const auto rows = partial.values.front().rows(), cols = partial.values.front().cols();
    for (std::size_t n = 0; done < opt.dominating_trials; ++n) {
        const std::size_t level = std::min(n, n_terms - 1);
        auto next_term = pn_backward_family(model, term);
        KernelFamily next_partial = partial;
        for (std::size_t k = 0; k < grid.size(); ++k) next_partial.values[k] += next_term[k];
        const std::size_t remaining_levels = n_terms > level ? n_terms - level : 1;
        const std::size_t here = level + 1 >= n_terms
                                     ? opt.dominating_trials - done
                                     : std::max<std::size_t>(1, (opt.dominating_trials - done) / remaining_levels);
        for (std::size_t trial = 0; trial < here && done < opt.dominating_trials; ++trial, ++done) {
            const double scale = std::pow(10.0, -6.0 + 5.0 * unit(rng));
            const Matrix amp = scale * Matrix::NullaryExpr(rows, cols, [&] { return unit(rng); });
            const double omega = 20.0 * unit(rng), phase = 6.283185307179586 * unit(rng);
            KernelFamily cand = partial;
            for (std::size_t k = 0; k < grid.size(); ++k)
                cand.values[k] += amp * (1.0 + 0.5 * std::sin(omega * grid[k] + phase));
            const auto mapped = backward_integral_map(model, cand);
            double deficit = 0.0;
            for (std::size_t k = 0; k < grid.size(); ++k)
                deficit = std::max(deficit, max_excess(next_partial.values[k], mapped[k]));
            worst = std::max(worst, deficit);
            if (deficit <= opt.sandwich_tol) ++passed;
        }
        term.values = std::move(next_term);
        partial = std::move(next_partial);
    }
    out.push_back(Check::at_least("minimality: dominating candidates stay dominating (trials passed)",
                                  static_cast<double>(passed), static_cast<double>(opt.dominating_trials), basis));
    out.push_back(Check::at_most("minimality: worst dominating-candidate deficit", worst, opt.sandwich_tol, basis));
    return out;
}

/// Non-regular witness: put the defect of the minimal solution back on
/// `return_state`. The result has row mass 1, dominates the minimal solution
/// and satisfies C >= T[C]. For an untruncated explosive model it is a second
/// solution (restart after explosion); on a finite truncation the kill makes
/// it a strict supersolution only, so the check is one-sided.
inline std::vector<Check> check_nonuniqueness_witness(const QModel& model, double u, double t, State return_state,
                                                      const VerifyOptions& opt = {}) {
    const std::string basis = "non-regular case: full-mass supersolutions dominate the minimal solution";
    FellerOptions fo = opt.feller;
    fo.route = FellerRoute::backward;
    const auto fr = feller_sum(model, u, t, fo);
    KernelFamily cand = fr.family;
    for (auto& m : cand.values) {
        const Vector d = Vector::Ones(m.rows()) - m.rowwise().sum();
        m.col(static_cast<Eigen::Index>(return_state)) += d.cwiseMax(0.0);
    }
    const auto mapped = backward_integral_map(model, cand);
    double violation = 0.0, dominance = 0.0, mass_gap = 0.0;
    for (std::size_t k = 0; k < cand.values.size(); ++k) {
        violation = std::max(violation, max_excess(mapped[k], cand.values[k]));
        dominance = std::max(dominance, max_excess(fr.family.values[k], cand.values[k]));
        mass_gap = std::max(mass_gap, (cand.values[k].rowwise().sum().array() - 1.0).abs().maxCoeff());
    }
    return {Check::at_least("non-uniqueness: minimal solution defect", fr.kernel.defect().maxCoeff(), 1e-3, basis),
            Check::at_most("non-uniqueness: witness row mass deviation from 1", mass_gap, opt.sandwich_tol, basis),
            Check::at_most("non-uniqueness: witness dominates minimal solution", dominance, 0.0, basis),
            Check::at_most("non-uniqueness: witness satisfies C >= T[C]", violation, opt.witness_tol, basis)};
}

/// Regular case: the minimal solution has no defect and any upward
/// perturbation breaks the integral identity (the perturbed candidate also
/// stops being a sub-probability).
inline std::vector<Check> check_uniqueness_regular(const QModel& model, double u, double t,
                                                   const VerifyOptions& opt = {}) {
    const std::string basis = "bounded conservative Q-function: the minimal solution is the unique one";
    FellerOptions fo = opt.feller;
    fo.route = FellerRoute::backward;
    const auto fr = feller_sum(model, u, t, fo);
    std::vector<Check> out;
    out.push_back(Check::at_most("uniqueness: defect of minimal solution", fr.kernel.defect().cwiseAbs().maxCoeff(),
                                 opt.regular_defect_tol, basis));
    out.push_back(Check::at_most("uniqueness: fixed-point residual of minimal solution",
                                 integral_residual_backward(model, fr.family).cwiseAbs().maxCoeff(), opt.sandwich_tol,
                                 basis));
    const auto n = fr.kernel.rows();
    double min_residual = std::numeric_limits<double>::infinity();
    double min_excess_mass = std::numeric_limits<double>::infinity();
    for (Eigen::Index x = 0; x < n; ++x)
        for (Eigen::Index z = 0; z < n; ++z) {
            KernelFamily cand = fr.family;
            for (auto& m : cand.values) m(x, z) += opt.perturbation;
            min_residual = std::min(min_residual, integral_residual_backward(model, cand).cwiseAbs().maxCoeff());
            min_excess_mass = std::min(min_excess_mass, cand.values.front().row(x).sum() - 1.0);
        }
    out.push_back(Check::at_least("uniqueness: perturbed candidates violate the integral identity (min residual)",
                                  min_residual, opt.perturbation_residual, basis));
    out.push_back(Check::at_least("uniqueness: perturbed candidates exceed unit mass (min excess)", min_excess_mass,
                                  0.5 * opt.perturbation, basis));
    return out;
}

/// Off-diagonal mass of P(u, . ; u + delta, .) is at most the probability of
/// at least one jump, 1 - exp(-q_bound delta).
inline std::vector<Check> check_boundary(const QModel& model, double u, const VerifyOptions& opt = {}) {
    std::vector<Check> out;
    const double qb = model.q_bound();
    for (double delta : opt.boundary_deltas) {
        const auto fr = feller_sum(model, u, u + delta, opt.feller);
        Matrix off = fr.kernel.matrix;
        off.diagonal().setZero();
        const double mass = off.rowwise().sum().maxCoeff();
        const double bound = -std::expm1(-qb * delta);
        out.push_back(Check::at_most("boundary: off-diagonal mass minus bound at delta=" + format_double(delta),
                                     mass - bound, 0.0, "transition function tends to the identity as t -> u"));
    }
    return out;
}

inline std::vector<Check> check_chapman_kolmogorov(const QModel& model, double u, double t, double tol,
                                                   const VerifyOptions& opt = {}) {
    const double s = u + 0.4 * (t - u);
    OdeOptions o = opt.ode;
    o.output_times = {s};
    const auto fwd_u = solve_forward(model, u, t, o);
    const auto fwd_s = solve_forward(model, s, t, opt.ode);
    const double r = chapman_kolmogorov_residual(fwd_u.at(s), fwd_s.at(t), fwd_u.at(t));
    return {Check::at_most("chapman-kolmogorov residual (ODE route)", r, tol, "semigroup property")};
}

/// Monte Carlo kernel against a reference: per-entry |p_hat - p| in units of
/// the binomial standard error sqrt(p (1-p) / n) of the reference.
struct McComparison {
    double max_z = 0.0;
    std::size_t entries = 0;
    std::size_t outside = 0;
};

inline McComparison compare_empirical(const EmpiricalKernel& ek, const Matrix& reference, double sigmas) {
    McComparison c;
    const auto n = std::min(reference.rows(), ek.kernel.rows());
    auto test = [&](double p_hat, double p, std::size_t count) {
        ++c.entries;
        const double diff = std::abs(p_hat - p);
        if (diff <= 1e-12) return;
        const double p_clamped = std::clamp(p, 0.0, 1.0);
        const double se = std::sqrt(p_clamped * (1.0 - p_clamped) / static_cast<double>(count));
        const double z = se > 0.0 ? diff / se : std::numeric_limits<double>::infinity();
        c.max_z = std::max(c.max_z, z);
        if (z > sigmas) ++c.outside;
    };
    for (Eigen::Index x = 0; x < n; ++x) {
        const std::size_t count = ek.counts[static_cast<std::size_t>(x)];
        if (count == 0) continue;
        for (Eigen::Index y = 0; y < reference.cols(); ++y) test(ek.kernel.matrix(x, y), reference(x, y), count);
        test(ek.defect[x], 1.0 - reference.row(x).sum(), count);
    }
    return c;
}

/// Simulates the conservative completion and compares with the solver kernel
/// of the completion at (start_time, horizon).
inline std::vector<Check> check_monte_carlo(const Scenario& sc, const Kernel& reference, const VerifyOptions& opt) {
    const QModel sim_model = sc.simulation_model();
    TransitionCounter counter(sim_model.size(), sc.sim.start_time, sc.sim.horizon);
    const auto pairs = simulate_map(sim_model, sc.sim, [&](const PathSample& p) {
        return std::pair<State, State>{p.state_at(sc.sim.start_time), p.state_at(sc.sim.horizon)};
    });
    for (const auto& [a, b] : pairs) counter.add(a, b);
    const auto cmp = compare_empirical(counter.result(), reference.matrix, opt.mc_sigmas);
    return {Check::at_most("monte carlo: entries outside " + format_double(opt.mc_sigmas) + " sigma",
                           static_cast<double>(cmp.outside), 0.0, "jump process has the minimal transition function")};
}

// ---------------------------------------------------------------------------

struct SweepResult {
    std::vector<std::size_t> levels;
    std::vector<double> defects;
    std::vector<double> successive_differences;
    double max_shared_entry_drop = 0.0;  ///< largest decrease of a shared entry as N grows
    double extrapolated_defect = 0.0;    ///< Richardson under an O(1/N) error model
};

/// Row `x0` of P(u, x0; t, .) over nested truncations (sizes nondecreasing),
/// via the forward equation in vector mode.
inline SweepResult truncation_sweep(const std::vector<std::size_t>& levels, const std::vector<QModel>& models, double u,
                                    double t, State x0 = 0, const OdeOptions& ode = {}) {
    if (levels.size() != models.size() || models.empty()) throw DomainError("truncation_sweep: one model per level");
    SweepResult r;
    r.levels = levels;
    std::vector<Vector> rows;
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (i > 0 && (levels[i] < levels[i - 1] || models[i].size() < models[i - 1].size()))
            throw DomainError("truncation_sweep: truncations must be nested (nondecreasing)");
        Vector mu = Vector::Zero(static_cast<Eigen::Index>(models[i].size()));
        mu[static_cast<Eigen::Index>(x0)] = 1.0;
        const auto sol = solve_forward(models[i], u, mu, t, ode);
        const Kernel& k = sol.at(t);
        rows.push_back(k.matrix.row(0).transpose());
        r.defects.push_back(k.defect()[0]);
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
        r.successive_differences.push_back(std::abs(r.defects[i] - r.defects[i - 1]));
        const auto shared = std::min(models[i - 1].space().n_states, models[i].space().n_states);
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(shared); ++k)
            r.max_shared_entry_drop = std::max(r.max_shared_entry_drop, rows[i - 1][k] - rows[i][k]);
    }
    const std::size_t m = r.defects.size();
    if (m >= 2 && levels[m - 1] > levels[m - 2]) {
        const double n1 = static_cast<double>(levels[m - 2]), n2 = static_cast<double>(levels[m - 1]);
        r.extrapolated_defect = (n2 * r.defects[m - 1] - n1 * r.defects[m - 2]) / (n2 - n1);
    } else {
        r.extrapolated_defect = r.defects.back();
    }
    return r;
}

// ---------------------------------------------------------------------------

inline double expected_measure(const ExpectedValue& e, const Kernel& k) {
    return e.col == ExpectedValue::defect_column ? k.defect()[static_cast<Eigen::Index>(e.row)]
                                                 : k.matrix(static_cast<Eigen::Index>(e.row),
                                                            static_cast<Eigen::Index>(e.col));
}

/// The full check suite for one scenario.
inline Report verify_scenario(const Scenario& sc, const VerifyOptions& opt = {}) {
    Report rep;
    rep.scenario = sc.id;
    const QModel model = sc.build_model();
    const auto routes = solve_all_routes(model, sc.u, sc.t, opt);
    for (const auto& e : sc.expected)
        rep.add(Check::at_most("expected " + e.label() + " [" + e.origin + ": " + e.oracle + "]",
                               std::abs(expected_measure(e, routes.feller.kernel) - e.value), e.tolerance,
                               "pinned reference value"));
    rep.add(check_route_agreement(routes, opt));
    rep.add(check_minimality(model, sc.u, sc.t, opt));
    if (sc.regular) {
        rep.add(check_uniqueness_regular(model, sc.u, sc.t, opt));
        rep.notes.push_back("uniqueness is tested on perturbed candidates only; it samples but does not cover the "
                            "class of [0,1]-valued solutions");
    } else if (model.space().n_states > 1) {
        rep.add(check_nonuniqueness_witness(model, sc.u, sc.t, 0, opt));
        rep.notes.push_back("non-uniqueness witness returns the defect to state 0; the construction is heuristic");
    }
    rep.add(check_chapman_kolmogorov(model, sc.u, sc.t, sc.regular ? opt.ck_tol_regular : opt.ck_tol_irregular, opt));
    rep.add(check_boundary(model, sc.u, opt));
    if (opt.monte_carlo) {
        const QModel completed = sc.simulation_model();
        const Kernel ref = solve_forward(completed, sc.sim.start_time, sc.sim.horizon, opt.ode).at(sc.sim.horizon);
        rep.add(check_monte_carlo(sc, ref, opt));
    }
    return rep;
}

// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const Report& r) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : r.checks)
        checks.push_back({{"name", c.name()},
                          {"status", c.passed() ? "pass" : "fail"},
                          {"measured", c.measured()},
                          {"relation", c.relation() == Check::Relation::at_most ? "<=" : ">="},
                          {"tolerance", c.tolerance()},
                          {"basis", c.basis()}});
    return {{"scenario", r.scenario},
            {"passed", r.all_passed()},
            {"checks", checks},
            {"notes", r.notes},
            {"artifacts", r.artifacts}};
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline void write_reports_csv(std::ostream& os, const std::vector<Report>& reports) {
    os << "scenario,check,value,tolerance,status\n";
    for (const auto& r : reports)
        for (const auto& c : r.checks)
            os << csv_escape(r.scenario) << "," << csv_escape(c.name()) << "," << format_double(c.measured()) << ","
               << format_double(c.tolerance()) << "," << (c.passed() ? "pass" : "fail") << "\n";
}

}  // namespace jmp
