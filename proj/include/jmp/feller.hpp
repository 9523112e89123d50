#pragma once

#include "jmp/errors.hpp"
#include "jmp/kernel.hpp"
#include "jmp/qmodel.hpp"
#include "jmp/quadrature.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace jmp {

enum class FellerRoute { backward, forward };

struct FellerOptions {
    FellerRoute route = FellerRoute::backward;
    double tail_tol = 1e-12;
    std::size_t max_terms = 20000;
    QuadratureOptions quadrature{};
    /// Re-run on the coarsened grid and report |fine - coarse| / 15 as the
    /// quadrature error estimate (Simpson is fourth order).
    bool estimate_quadrature_error = false;
};

/// Terms P^(n)(u, . ; t, .) of the series, their running sums, and a per-row
/// bound on the mass of the terms not yet added.
struct IterateStack {
    double u = 0.0;
    double t = 0.0;
    std::vector<Kernel> terms;
    std::vector<Kernel> partial_sums;
    Vector tail_bound;
};

struct FellerResult {
    Kernel kernel;           ///< last partial sum: under-approximation of the minimal solution
    IterateStack stack;
    KernelFamily family;     ///< partial-sum family on the quadrature grid
    double quadrature_error = std::numeric_limits<double>::quiet_NaN();
};

/// P(exactly-n-jumps) domination: per starting state x, either the subgraph
/// reachable from x is acyclic and P^(n)(u,x;t,.) vanishes for n beyond its
/// longest path, or the jump count is dominated by Poisson(sup q * (t - u))
/// over the reachable states.
class TailBounder {
public:
    TailBounder(const QModel& model, double horizon) {
        const std::size_t n = model.size();
        longest_.assign(n, 0);
        lambda_.assign(n, 0.0);
        // longest path lengths via memoised DFS; cycles mark "unbounded"
        std::vector<int> state(n, 0);  // 0 new, 1 on stack, 2 done
        std::vector<long> len(n, 0);
        auto dfs = [&](auto&& self, State x) -> long {
            if (state[x] == 2) return len[x];
            if (state[x] == 1) return -1;
            state[x] = 1;
            long best = 0;
            for (const auto& e : model.edges(x)) {
                if (e.rate.identically_zero()) continue;
                const long l = self(self, e.to);
                if (l < 0 || best < 0) {
                    best = -1;
                } else {
                    best = std::max(best, l + 1);
                }
            }
            state[x] = 2;
            len[x] = best;
            return best;
        };
        for (State x = 0; x < n; ++x) {
            std::fill(state.begin(), state.end(), 0);
            longest_[x] = dfs(dfs, x);
            const auto reach = reachable_from(model, x);
            double qb = 0.0;
            for (State y = 0; y < n; ++y)
                if (reach[y]) qb = std::max(qb, model.stable_bound(y));
            lambda_[x] = qb * horizon;
        }
    }

    /// Upper bound on sum_{n > terms_done - 1} P^(n)(u, x; t, X) after the
    /// terms 0..terms_done-1 have been summed.
    double row_bound(State x, std::size_t terms_done) const {
        if (terms_done == 0) return 1.0;
        const auto last = static_cast<long>(terms_done - 1);
        if (longest_[x] >= 0 && last >= longest_[x]) return 0.0;
        if (lambda_[x] == 0.0) return 0.0;
        return boost::math::gamma_p(static_cast<double>(terms_done), lambda_[x]);
    }

    Vector bound(std::size_t terms_done) const {
        Vector b(static_cast<Eigen::Index>(longest_.size()));
        for (State x = 0; x < longest_.size(); ++x) b[static_cast<Eigen::Index>(x)] = row_bound(x, terms_done);
        return b;
    }

private:
    std::vector<long> longest_;
    std::vector<double> lambda_;
};

/// P^(0)(u, x; t, {y}) = [x == y] exp(-int_u^t q(x, s) ds), as a row.
inline Vector p0(const QModel& model, double u, State x, double t) {
    if (!(u < t)) throw DomainError("p0 requires u < t");
    Vector row = Vector::Zero(static_cast<Eigen::Index>(model.size()));
    row[static_cast<Eigen::Index>(x)] = std::exp(-model.cumulative_rate(x, u, t));
    return row;
}

/// P^(0) on every node of a grid, anchored as requested.
inline std::vector<Matrix> p0_family(const QModel& model, const TimeGrid& grid, KernelFamily::Anchor anchor) {
    const auto n = static_cast<Eigen::Index>(model.size());
    std::vector<Matrix> out(grid.size(), Matrix::Zero(n, n));
    const auto d = detail::interval_hazards(model, grid);
    Vector acc = Vector::Zero(n);
    if (anchor == KernelFamily::Anchor::upper) {
        for (std::size_t k = grid.size(); k-- > 0;) {
            if (k + 1 < grid.size()) acc += d[k];
            out[k].diagonal() = detail::exp_neg(acc);
        }
    } else {
        for (std::size_t k = 0; k < grid.size(); ++k) {
            if (k > 0) acc += d[k - 1];
            out[k].diagonal() = detail::exp_neg(acc);
        }
    }
    return out;
}

/// One backward Feller step: given P^(n-1)(s, . ; t, .) on the grid, returns
/// P^(n)(s, . ; t, .) on the grid (index 0 is the (u, t) kernel).
inline std::vector<Matrix> pn_backward_family(const QModel& model, const KernelFamily& prev) {
    if (prev.anchor != KernelFamily::Anchor::upper)
        throw PreconditionError("backward recursion needs a family anchored at t");
    return backward_operator(model, prev.grid, prev.values);
}

/// One forward Feller step through the Pi kernel; family anchored at u.
inline std::vector<Matrix> pn_forward_family(const QModel& model, const KernelFamily& prev) {
    if (prev.anchor != KernelFamily::Anchor::lower)
        throw PreconditionError("forward recursion needs a family anchored at u");
    return forward_operator(model, prev.grid, prev.values);
}

inline Kernel pn_backward(const QModel& model, const KernelFamily& prev) {
    auto v = pn_backward_family(model, prev);
    return {prev.grid.front(), prev.grid.back(), std::move(v.front())};
}

inline Kernel pn_forward(const QModel& model, const KernelFamily& prev) {
    auto v = pn_forward_family(model, prev);
    return {prev.grid.front(), prev.grid.back(), std::move(v.back())};
}

/// The first n_terms Feller iterates on a given grid, in the requested route.
inline std::vector<KernelFamily> feller_iterates(const QModel& model, const TimeGrid& grid, FellerRoute route,
                                                 std::size_t n_terms) {
    grid.require_aligned(model);
    const auto anchor = route == FellerRoute::backward ? KernelFamily::Anchor::upper : KernelFamily::Anchor::lower;
    std::vector<KernelFamily> out;
    out.push_back({anchor, grid, p0_family(model, grid, anchor)});
    while (out.size() < n_terms) {
        const auto& prev = out.back();
        auto next = route == FellerRoute::backward ? pn_backward_family(model, prev) : pn_forward_family(model, prev);
        out.push_back({anchor, grid, std::move(next)});
    }
    return out;
}

namespace detail {

inline FellerResult feller_sum_on_grid(const QModel& model, double u, double t, const TimeGrid& grid,
                                       const FellerOptions& opt) {
    const auto anchor =
        opt.route == FellerRoute::backward ? KernelFamily::Anchor::upper : KernelFamily::Anchor::lower;
    const TailBounder tails(model, t - u);
    FellerResult res;
    res.stack.u = u;
    res.stack.t = t;
    KernelFamily term{anchor, grid, p0_family(model, grid, anchor)};
    KernelFamily sum = term;
    auto push = [&](const KernelFamily& f, const KernelFamily& s) {
        res.stack.terms.push_back(f.span_kernel());
        res.stack.partial_sums.push_back(s.span_kernel());
    };
    push(term, sum);
    while (true) {
        const Vector tail = tails.bound(res.stack.terms.size());
        if (tail.maxCoeff() <= opt.tail_tol) {
            res.stack.tail_bound = tail;
            break;
        }
        if (res.stack.terms.size() >= opt.max_terms)
            throw SlowConvergenceError("Feller series tail bound " + std::to_string(tail.maxCoeff()) +
                                           " still above tolerance after " + std::to_string(opt.max_terms) +
                                           " terms",
                                       tail.maxCoeff());
        term.values = opt.route == FellerRoute::backward ? pn_backward_family(model, term)
                                                         : pn_forward_family(model, term);
        for (std::size_t k = 0; k < grid.size(); ++k) sum.values[k] += term.values[k];
        push(term, sum);
    }
    res.kernel = sum.span_kernel();
    res.family = std::move(sum);
    return res;
}

}  // namespace detail

/// Minimal transition function P-bar(u, . ; t, .) as the Feller series, summed
/// until the per-row tail bound is below opt.tail_tol.
inline FellerResult feller_sum(const QModel& model, double u, double t, const FellerOptions& opt = {}) {
    if (!(u < t)) throw DomainError("feller_sum requires u < t");
    if (!(opt.tail_tol > 0.0)) throw DomainError("tail_tol must be positive");
    const TimeGrid grid = TimeGrid::build(model, u, t, opt.quadrature);
    FellerResult res = detail::feller_sum_on_grid(model, u, t, grid, opt);
    if (opt.estimate_quadrature_error && grid.coarsenable()) {
        const FellerResult coarse = detail::feller_sum_on_grid(model, u, t, grid.coarsened(), opt);
        res.quadrature_error = max_abs_diff(res.kernel.matrix, coarse.kernel.matrix) / 15.0;
    }
    return res;
}

}  // namespace jmp
