#pragma once

#include "jmp/errors.hpp"
#include "jmp/feller.hpp"
#include "jmp/kernel.hpp"
#include "jmp/qmodel.hpp"
#include "jmp/quadrature.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace jmp {

struct OdeOptions {
    double rtol = 1e-9;
    double atol = 1e-12;
    /// Step cap h <= step_cap_rate / q_bound keeps the explicit pair well inside
    /// its stability region.
    double step_cap_rate = 0.5;
    std::size_t max_steps = 50'000'000;
    /// Extra times at which the solution is stored (hit exactly). Segment
    /// boundaries and the end points are always stored.
    std::vector<double> output_times;
    /// Also store the solution after every accepted step.
    bool store_steps = false;
};

struct StepStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    double max_error_ratio = 0.0;  ///< largest accepted normalized error estimate
    double max_row_sum = 0.0;      ///< over all accepted steps
    double min_entry = 0.0;        ///< over all accepted steps
};

struct OdeSolution {
    enum class Direction { backward, forward };

    Direction direction = Direction::backward;
    double anchor = 0.0;        ///< t for backward, u for forward
    std::vector<double> grid;   ///< ascending evaluation times
    std::vector<Kernel> kernels;
    StepStats step_stats;

    /// Kernel stored at exactly `time`.
    const Kernel& at(double time) const {
        for (std::size_t i = 0; i < grid.size(); ++i)
            if (grid[i] == time) return kernels[i];
        throw DomainError("no stored solution at time " + std::to_string(time));
    }

    const Kernel& nearest(double time) const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < grid.size(); ++i)
            if (std::abs(grid[i] - time) < std::abs(grid[best] - time)) best = i;
        return kernels[best];
    }
};

/// dP/du = q(x,u) P(u,x;t,.) - sum_{y != x} rate_{x->y}(u) P(u,y;t,.)
inline Matrix backward_rhs(const QModel& model, double u, Side side, const Matrix& p) {
    return total_rates(model, u, side).asDiagonal() * p - rates_times(model, u, side, p);
}

/// dP/dt(., {y}) = -q(y,t) P(., {y}) + sum_{z != y} P(., {z}) rate_{z->y}(t)
inline Matrix forward_rhs(const QModel& model, double t, Side side, const Matrix& p) {
    return times_rates(model, t, side, p) - p * total_rates(model, t, side).asDiagonal();
}

namespace detail {

// Dormand-Prince 5(4) tableau.
struct DoPri {
    static constexpr std::array<double, 7> c{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                            a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                            b6 = 11.0 / 84;
    // b - b*, the embedded fourth-order difference
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                            e6 = 22.0 / 525, e7 = -1.0 / 40;
};

// Integrates y' = f(tau, side, y) from t0 to t1 (either direction), stopping
// exactly at `stops` (sorted in travel order, all strictly between t0 and t1
// or equal to t1). Rates are read with Side::left at the upper end of the
// segment being integrated, so no step evaluates across a discontinuity.
template <class Rhs, class Store>
void integrate(Rhs&& f, Matrix y, double t0, const std::vector<double>& stops, double h_cap, const OdeOptions& opt,
               StepStats& stats, Store&& store) {
    using D = DoPri;
    double t = t0;
    stats.max_row_sum = std::max(stats.max_row_sum, y.rowwise().sum().maxCoeff());
    stats.min_entry = std::min(stats.min_entry, y.minCoeff());
    store(t, y, true);
    double h_abs = 0.0;
    for (double stop : stops) {
        const double dir = stop > t ? 1.0 : -1.0;
        const double seg_lo = std::min(t, stop), seg_hi = std::max(t, stop);
        auto F = [&](double tau, const Matrix& v) {
            return f(tau, tau >= seg_hi ? Side::left : Side::right, v);
        };
        if (h_abs == 0.0) h_abs = std::min(h_cap, 1e-3 * (seg_hi - seg_lo) + 1e-6);
        h_abs = std::min(h_abs, h_cap);
        Matrix k1 = F(t, y);
        while (t != stop) {
            double h = dir * std::min(h_abs, std::abs(stop - t));
            const bool last = std::abs(stop - t) <= h_abs;
            // a sliver segment between two close stops is fine; a shrinking step is not
            if (!last && std::abs(h) < 1e-14 * std::max(1.0, std::abs(t)))
                throw StiffnessError("step size underflow at t=" + std::to_string(t));
            if (stats.accepted + stats.rejected >= opt.max_steps)
                throw StiffnessError("step budget of " + std::to_string(opt.max_steps) + " exhausted at t=" +
                                     std::to_string(t));
            const Matrix k2 = F(t + D::c[1] * h, y + h * (D::a21 * k1));
            const Matrix k3 = F(t + D::c[2] * h, y + h * (D::a31 * k1 + D::a32 * k2));
            const Matrix k4 = F(t + D::c[3] * h, y + h * (D::a41 * k1 + D::a42 * k2 + D::a43 * k3));
            const Matrix k5 = F(t + D::c[4] * h, y + h * (D::a51 * k1 + D::a52 * k2 + D::a53 * k3 + D::a54 * k4));
            const double t_new = last ? stop : t + h;
            const Matrix k6 =
                F(t_new, y + h * (D::a61 * k1 + D::a62 * k2 + D::a63 * k3 + D::a64 * k4 + D::a65 * k5));
            Matrix y_new = y + h * (D::b1 * k1 + D::b3 * k3 + D::b4 * k4 + D::b5 * k5 + D::b6 * k6);
            const Matrix k7 = F(t_new, y_new);
            const Matrix err = h * (D::e1 * k1 + D::e3 * k3 + D::e4 * k4 + D::e5 * k5 + D::e6 * k6 + D::e7 * k7);
            const Matrix scale =
                (opt.atol + opt.rtol * y.cwiseAbs().cwiseMax(y_new.cwiseAbs()).array()).matrix();
            const double ratio = (err.cwiseAbs().array() / scale.array()).maxCoeff();
            const double factor = ratio == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(ratio, -0.2), 0.2, 5.0);
            if (ratio <= 1.0) {
                ++stats.accepted;
                stats.max_error_ratio = std::max(stats.max_error_ratio, ratio);
                t = t_new;
                y = std::move(y_new);
                k1 = k7;
                stats.max_row_sum = std::max(stats.max_row_sum, y.rowwise().sum().maxCoeff());
                stats.min_entry = std::min(stats.min_entry, y.minCoeff());
                store(t, y, t == stop);
                if (!last) h_abs = std::min(h_cap, std::abs(h) * factor);
            } else {
                ++stats.rejected;
                h_abs = std::abs(h) * std::max(0.2, factor);
            }
        }
    }
}

inline std::vector<double> stop_points(const QModel& model, double from, double to, const std::vector<double>& extra) {
    const double lo = std::min(from, to), hi = std::max(from, to);
    std::vector<double> s = model.breakpoints_in(lo, hi);
    for (double x : extra)
        if (x > lo && x < hi) s.push_back(x);
    s.push_back(to);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (to < from) std::reverse(s.begin(), s.end());
    return s;
}

inline double step_cap(const QModel& model, const OdeOptions& opt) {
    const double qb = model.q_bound();
    return qb > 0.0 ? opt.step_cap_rate / qb : std::numeric_limits<double>::infinity();
}

inline void sort_solution(OdeSolution& sol) {
    std::vector<std::size_t> idx(sol.grid.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sol.grid[a] < sol.grid[b]; });
    std::vector<double> g;
    std::vector<Kernel> k;
    for (auto i : idx) {
        g.push_back(sol.grid[i]);
        k.push_back(std::move(sol.kernels[i]));
    }
    sol.grid = std::move(g);
    sol.kernels = std::move(k);
}

}  // namespace detail

/// Backward equation in u from the identity at u = t down to u_min; kernels
/// P(u, . ; t, .) at every segment boundary, output time and (optionally) step.
inline OdeSolution solve_backward(const QModel& model, double t, double u_min, const OdeOptions& opt = {}) {
    if (!(u_min < t)) throw DomainError("solve_backward requires u_min < t");
    if (!(u_min >= 0.0)) throw DomainError("solve_backward requires u_min >= 0");
    OdeSolution sol;
    sol.direction = OdeSolution::Direction::backward;
    sol.anchor = t;
    const auto n = static_cast<Eigen::Index>(model.size());
    const auto stops = detail::stop_points(model, t, u_min, opt.output_times);
    detail::integrate([&](double u, Side side, const Matrix& p) { return backward_rhs(model, u, side, p); },
                      Matrix::Identity(n, n), t, stops, detail::step_cap(model, opt), opt, sol.step_stats,
                      [&](double u, const Matrix& p, bool at_stop) {
                          if (at_stop || opt.store_steps) {
                              sol.grid.push_back(u);
                              sol.kernels.push_back({u, t, p});
                          }
                      });
    detail::sort_solution(sol);
    return sol;
}

/// Forward equation in t from P(u, . ; u, .) = initial (identity, or a row of
/// starting distributions) up to t_max.
inline OdeSolution solve_forward(const QModel& model, double u, const Matrix& initial, double t_max,
                                 const OdeOptions& opt = {}) {
    if (!(u < t_max)) throw DomainError("solve_forward requires u < t_max");
    if (!(u >= 0.0)) throw DomainError("solve_forward requires u >= 0");
    if (initial.cols() != static_cast<Eigen::Index>(model.size()))
        throw DomainError("initial condition has the wrong number of columns");
    OdeSolution sol;
    sol.direction = OdeSolution::Direction::forward;
    sol.anchor = u;
    const auto stops = detail::stop_points(model, u, t_max, opt.output_times);
    detail::integrate([&](double t, Side side, const Matrix& p) { return forward_rhs(model, t, side, p); }, initial,
                      u, stops, detail::step_cap(model, opt), opt, sol.step_stats,
                      [&](double t, const Matrix& p, bool at_stop) {
                          if (at_stop || opt.store_steps) {
                              sol.grid.push_back(t);
                              sol.kernels.push_back({u, t, p});
                          }
                      });
    return sol;
}

inline OdeSolution solve_forward(const QModel& model, double u, double t_max, const OdeOptions& opt = {}) {
    const auto n = static_cast<Eigen::Index>(model.size());
    return solve_forward(model, u, Matrix::Identity(n, n), t_max, opt);
}

/// Vector mode: a single starting distribution mu.
inline OdeSolution solve_forward(const QModel& model, double u, const Vector& mu, double t_max,
                                 const OdeOptions& opt = {}) {
    return solve_forward(model, u, Matrix(mu.transpose()), t_max, opt);
}

/// The right-hand side of the integral form of the backward equation applied
/// to a family anchored at t, at every node:
///   T[C](s_k, x; t, .) = P^(0)(s_k, x; t, .) + int e^{-int q(x)} sum_y rate_{x->y} C(s, y; t, .) ds.
inline std::vector<Matrix> backward_integral_map(const QModel& model, const KernelFamily& candidate) {
    if (candidate.anchor != KernelFamily::Anchor::upper)
        throw PreconditionError("backward residual needs a family anchored at t");
    auto out = backward_operator(model, candidate.grid, candidate.values);
    const auto base = p0_family(model, candidate.grid, KernelFamily::Anchor::upper);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += base[k];
    return out;
}

/// candidate(u) minus the right-hand side of the integral backward equation.
inline Matrix integral_residual_backward(const QModel& model, const KernelFamily& candidate) {
    const auto rhs = backward_integral_map(model, candidate);
    return candidate.values.front() - rhs.front();
}

/// candidate(t) - [ I + int_u^t C(s) R(s) ds - int_u^t C(s) diag(q(s)) ds ] for a
/// family C(s) = P(u, . ; s, .) anchored at u.
inline Matrix integral_residual_forward(const QModel& model, const KernelFamily& candidate) {
    if (candidate.anchor != KernelFamily::Anchor::lower)
        throw PreconditionError("forward residual needs a family anchored at u");
    const auto& grid = candidate.grid;
    grid.require_aligned(model);
    if (candidate.values.size() != grid.size()) throw PreconditionError("family size does not match grid");
    const Matrix integral = integrate_grid(grid, [&](std::size_t j, Side side) {
        return forward_rhs(model, grid[j], side, candidate.values[j]);
    });
    const auto& c0 = candidate.values.front();
    const Matrix id = Matrix::Identity(c0.rows(), c0.cols());
    return candidate.values.back() - (id + integral);
}

}  // namespace jmp
