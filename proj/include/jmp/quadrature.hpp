#pragma once

#include "jmp/kernel.hpp"
#include "jmp/qmodel.hpp"

#include <cmath>
#include <vector>

namespace jmp {

/// R(t) * C where R holds the off-diagonal rates: row x is sum_y rate_{x->y}(t) C(y, .).
inline Matrix rates_times(const QModel& model, double t, Side side, const Matrix& c) {
    Matrix out = Matrix::Zero(c.rows(), c.cols());
    for (State x = 0; x < model.size(); ++x)
        for (const auto& e : model.edges(x)) {
            const double r = e.rate.value(t, side);
            if (r != 0.0) out.row(static_cast<Eigen::Index>(x)) += r * c.row(static_cast<Eigen::Index>(e.to));
        }
    return out;
}

/// C * R(t): column z is sum_y C(., y) rate_{y->z}(t).
inline Matrix times_rates(const QModel& model, double t, Side side, const Matrix& c) {
    Matrix out = Matrix::Zero(c.rows(), c.cols());
    for (State y = 0; y < model.size(); ++y)
        for (const auto& e : model.edges(y)) {
            const double r = e.rate.value(t, side);
            if (r != 0.0) out.col(static_cast<Eigen::Index>(e.to)) += r * c.col(static_cast<Eigen::Index>(y));
        }
    return out;
}

inline Vector total_rates(const QModel& model, double t, Side side) {
    Vector q(static_cast<Eigen::Index>(model.size()));
    for (State x = 0; x < model.size(); ++x) q[static_cast<Eigen::Index>(x)] = model.total_rate(x, t, side);
    return q;
}

namespace detail {

// Exact per-sub-interval cumulative rates: d[j][x] = int_{s_j}^{s_{j+1}} q(x, s) ds.
inline std::vector<Vector> interval_hazards(const QModel& model, const TimeGrid& grid) {
    std::vector<Vector> d(grid.size() - 1, Vector(static_cast<Eigen::Index>(model.size())));
    for (std::size_t j = 0; j + 1 < grid.size(); ++j)
        for (State x = 0; x < model.size(); ++x)
            d[j][static_cast<Eigen::Index>(x)] = model.cumulative_rate(x, grid[j], grid[j + 1]);
    return d;
}

inline Vector exp_neg(const Vector& v) { return (-v.array()).exp().matrix(); }

}  // namespace detail

/// Backward integral operator on a family anchored at t = grid.back():
///
///   out[k](x, .) = int_{s_k}^{t} exp(-int_{s_k}^{s} q(x)) sum_{y != x} rate_{x->y}(s) C(s, y, .) ds.
///
/// The decay factor is carried exactly; the remaining integrand goes through
/// composite Simpson on each segment (a three-point rule closes an odd leftover
/// sub-interval). The operator is linear and monotone up to the -1/12 weight of
/// that closing rule.
inline std::vector<Matrix> backward_operator(const QModel& model, const TimeGrid& grid,
                                             const std::vector<Matrix>& c) {
    grid.require_aligned(model);
    const std::size_t n_nodes = grid.size();
    if (c.size() != n_nodes) throw PreconditionError("family size does not match grid");
    const auto d = detail::interval_hazards(model, grid);
    std::vector<Matrix> out(n_nodes);
    out[n_nodes - 1] = Matrix::Zero(c.back().rows(), c.back().cols());
    for (auto seg = grid.segments().rbegin(); seg != grid.segments().rend(); ++seg) {
        const std::size_t a = seg->first, b = seg->last;
        const double h = (grid[b] - grid[a]) / static_cast<double>(b - a);
        std::vector<Matrix> f(b - a + 1);
        for (std::size_t j = a; j <= b; ++j)
            f[j - a] = rates_times(model, grid[j], j == b ? Side::left : Side::right, c[j]);
        auto F = [&](std::size_t j) -> const Matrix& { return f[j - a]; };
        for (std::size_t k = b; k-- > a;) {
            const Vector e1 = detail::exp_neg(d[k]);
            if ((b - k) % 2 == 0) {
                const Vector e2 = detail::exp_neg(d[k] + d[k + 1]);
                out[k] = (h / 3.0) * (F(k) + (4.0 * e1).asDiagonal() * F(k + 1) + e2.asDiagonal() * F(k + 2)) +
                         e2.asDiagonal() * out[k + 2];
            } else if (k + 2 <= b) {
                const Vector e2 = detail::exp_neg(d[k] + d[k + 1]);
                out[k] = (h / 12.0) * (5.0 * F(k) + (8.0 * e1).asDiagonal() * F(k + 1) - e2.asDiagonal() * F(k + 2)) +
                         e1.asDiagonal() * out[k + 1];
            } else {
                const Vector eb = (d[k - 1].array()).exp().matrix();
                out[k] = (h / 12.0) * (-(eb.asDiagonal() * F(k - 1)) + 8.0 * F(k) + (5.0 * e1).asDiagonal() * F(k + 1)) +
                         e1.asDiagonal() * out[k + 1];
            }
        }
    }
    return out;
}

/// Forward integral operator on a family anchored at u = grid.front():
///
///   out[k](., z) = int_{u}^{s_k} sum_{y != z} C(s, ., y) rate_{y->z}(s) exp(-int_{s}^{s_k} q(z)) ds,
///
/// i.e. sum_y Pi(s, y; s_k, {z}) against C. Mirror image of backward_operator.
inline std::vector<Matrix> forward_operator(const QModel& model, const TimeGrid& grid,
                                            const std::vector<Matrix>& c) {
    grid.require_aligned(model);
    const std::size_t n_nodes = grid.size();
    if (c.size() != n_nodes) throw PreconditionError("family size does not match grid");
    const auto d = detail::interval_hazards(model, grid);
    std::vector<Matrix> out(n_nodes);
    out[0] = Matrix::Zero(c.front().rows(), c.front().cols());
    for (const auto& seg : grid.segments()) {
        const std::size_t a = seg.first, b = seg.last;
        const double h = (grid[b] - grid[a]) / static_cast<double>(b - a);
        std::vector<Matrix> hm(b - a + 1);
        for (std::size_t j = a; j <= b; ++j)
            hm[j - a] = times_rates(model, grid[j], j == b ? Side::left : Side::right, c[j]);
        auto H = [&](std::size_t j) -> const Matrix& { return hm[j - a]; };
        for (std::size_t k = a + 1; k <= b; ++k) {
            const Vector e1 = detail::exp_neg(d[k - 1]);
            if ((k - a) % 2 == 0) {
                const Vector e2 = detail::exp_neg(d[k - 2] + d[k - 1]);
                out[k] = out[k - 2] * e2.asDiagonal() +
                         (h / 3.0) * (H(k - 2) * e2.asDiagonal() + H(k - 1) * (4.0 * e1).asDiagonal() + H(k));
            } else if (k >= a + 2) {
                const Vector e2 = detail::exp_neg(d[k - 2] + d[k - 1]);
                out[k] = out[k - 1] * e1.asDiagonal() +
                         (h / 12.0) * (-(H(k - 2) * e2.asDiagonal()) + H(k - 1) * (8.0 * e1).asDiagonal() + 5.0 * H(k));
            } else {
                const Vector ef = (d[k].array()).exp().matrix();
                out[k] = out[k - 1] * e1.asDiagonal() +
                         (h / 12.0) * (H(k - 1) * (5.0 * e1).asDiagonal() + 8.0 * H(k) - H(k + 1) * ef.asDiagonal());
            }
        }
    }
    return out;
}

/// int over the whole grid of g(j, side) ds, composite Simpson per segment with
/// a three-point closing rule for an odd count. `g` is evaluated with
/// Side::left at each segment's right node.
template <class Integrand>
Matrix integrate_grid(const TimeGrid& grid, Integrand&& g) {
    Matrix acc;
    bool first = true;
    auto add = [&](const Matrix& m) {
        if (first) {
            acc = m;
            first = false;
        } else {
            acc += m;
        }
    };
    for (const auto& seg : grid.segments()) {
        const std::size_t a = seg.first, b = seg.last, m = b - a;
        const double h = (grid[b] - grid[a]) / static_cast<double>(m);
        auto G = [&](std::size_t j) { return g(j, j == b ? Side::left : Side::right); };
        const std::size_t even_end = (m % 2 == 0) ? b : b - 1;
        for (std::size_t k = a; k < even_end; k += 2) add((h / 3.0) * (G(k) + 4.0 * G(k + 1) + G(k + 2)));
        if (even_end != b) add((h / 12.0) * (-G(b - 2) + 8.0 * G(b - 1) + 5.0 * G(b)));
    }
    return acc;
}

}  // namespace jmp
