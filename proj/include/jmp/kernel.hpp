#pragma once

#include "jmp/errors.hpp"
#include "jmp/qmodel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace jmp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Substochastic matrix P(u, x; t, {y}); rows are starting states (or starting
/// distributions), columns target states.
struct Kernel {
    double u = 0.0;
    double t = 0.0;
    Matrix matrix;

    static Kernel identity(std::size_t n, double u, double t) {
        return {u, t, Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))};
    }

    Eigen::Index rows() const noexcept { return matrix.rows(); }
    Eigen::Index cols() const noexcept { return matrix.cols(); }

    /// 1 - row sum: mass lost to explosion or kill.
    Vector defect() const { return Vector::Ones(matrix.rows()) - matrix.rowwise().sum(); }

    bool substochastic(double tol = 1e-10) const {
        return matrix.minCoeff() >= -tol && matrix.maxCoeff() <= 1.0 + tol &&
               defect().minCoeff() >= -tol;
    }
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DomainError("matrix dimension mismatch");
    return (a - b).cwiseAbs().maxCoeff();
}

/// Knobs for the breakpoint-aligned composite quadrature grid.
struct QuadratureOptions {
    /// Lower bound on the total number of sub-intervals across [u, t].
    std::size_t min_subintervals = 256;
    /// Upper bound on h * q_bound, i.e. the step measured in expected jumps.
    double max_step_rate = 0.05;
    std::size_t max_nodes = 4'000'000;
    /// Upper bound on nodes * n_states^2, the size of one kernel family
    /// (2e8 doubles is 1.6 GB).
    double max_family_entries = 2e8;
};

/// Quadrature nodes on [u, t] grouped into segments. Every model breakpoint in
/// ]u, t[ is a segment boundary and each segment is uniformly spaced, so no
/// quadrature panel straddles a discontinuity of the rates.
class TimeGrid {
public:
    struct Segment {
        std::size_t first;  ///< index of the left node
        std::size_t last;   ///< index of the right node

        std::size_t subintervals() const noexcept { return last - first; }
    };

    TimeGrid() = default;

    /// Knots are the segment boundaries (u, interior breakpoints, t); counts the
    /// number of sub-intervals in each segment.
    TimeGrid(const std::vector<double>& knots, const std::vector<std::size_t>& counts) {
        if (knots.size() < 2 || counts.size() + 1 != knots.size())
            throw DomainError("grid needs n+1 knots for n segments");
        nodes_.push_back(knots.front());
        for (std::size_t s = 0; s < counts.size(); ++s) {
            const double a = knots[s], b = knots[s + 1];
            if (!(b > a)) throw DomainError("grid knots must be strictly increasing");
            if (counts[s] < 2) throw DomainError("each grid segment needs at least two sub-intervals");
            const std::size_t first = nodes_.size() - 1;
            for (std::size_t k = 1; k < counts[s]; ++k)
                nodes_.push_back(a + (b - a) * static_cast<double>(k) / static_cast<double>(counts[s]));
            nodes_.push_back(b);
            segments_.push_back({first, nodes_.size() - 1});
        }
    }

    static TimeGrid build(const QModel& model, double u, double t, const QuadratureOptions& opt = {}) {
        if (!(u < t)) throw DomainError("grid requires u < t");
        std::vector<double> knots{u};
        for (double b : model.breakpoints_in(u, t)) knots.push_back(b);
        knots.push_back(t);
        double h = (t - u) / static_cast<double>(std::max<std::size_t>(opt.min_subintervals, 2));
        const double qb = model.q_bound();
        if (qb > 0.0) h = std::min(h, opt.max_step_rate / qb);
        std::vector<std::size_t> counts;
        std::size_t total = 0;
        for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
            auto m = static_cast<std::size_t>(std::ceil((knots[s + 1] - knots[s]) / h - 1e-9));
            m = std::max<std::size_t>(m, 2);
            if (m % 2) ++m;
            counts.push_back(m);
            total += m;
        }
        if (total + 1 > opt.max_nodes)
            throw NumericalError("quadrature grid would need " + std::to_string(total + 1) +
                                 " nodes (limit " + std::to_string(opt.max_nodes) + ")");
        const double n = static_cast<double>(model.size());
        if (static_cast<double>(total + 1) * n * n > opt.max_family_entries)
            throw NumericalError("quadrature grid of " + std::to_string(total + 1) + " nodes for " +
                                 std::to_string(model.size()) + " states exceeds the memory limit");
        return TimeGrid(knots, counts);
    }

    const std::vector<double>& nodes() const noexcept { return nodes_; }
    const std::vector<Segment>& segments() const noexcept { return segments_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    double front() const { return nodes_.front(); }
    double back() const { return nodes_.back(); }
    double operator[](std::size_t i) const { return nodes_[i]; }

    /// Every other node of each segment; available when all segment counts are even and >= 4.
    bool coarsenable() const {
        return std::all_of(segments_.begin(), segments_.end(), [](const Segment& s) {
            return s.subintervals() % 2 == 0 && s.subintervals() >= 4;
        });
    }

    TimeGrid coarsened() const {
        if (!coarsenable()) throw DomainError("grid cannot be coarsened");
        std::vector<double> knots{front()};
        std::vector<std::size_t> counts;
        for (const auto& s : segments_) {
            knots.push_back(nodes_[s.last]);
            counts.push_back(s.subintervals() / 2);
        }
        return TimeGrid(knots, counts);
    }

    /// Throws PreconditionError unless every breakpoint of the model strictly
    /// inside the grid range is a segment boundary and segments are uniform.
    void require_aligned(const QModel& model) const {
        if (segments_.empty()) throw PreconditionError("empty quadrature grid");
        for (double b : model.breakpoints_in(front(), back())) {
            const bool boundary = std::any_of(segments_.begin(), segments_.end(), [&](const Segment& s) {
                return nodes_[s.last] == b;
            });
            if (!boundary)
                throw PreconditionError("quadrature grid is not aligned with rate breakpoint " +
                                        std::to_string(b));
        }
        for (const auto& s : segments_) {
            if (s.subintervals() < 2) throw PreconditionError("grid segment with fewer than 2 sub-intervals");
            const double h = (nodes_[s.last] - nodes_[s.first]) / static_cast<double>(s.subintervals());
            for (std::size_t k = s.first; k < s.last; ++k)
                if (std::abs(nodes_[k + 1] - nodes_[k] - h) > 1e-9 * std::max(1.0, std::abs(h)) + 1e-12)
                    throw PreconditionError("grid segment is not uniformly spaced");
        }
    }

private:
    std::vector<double> nodes_;
    std::vector<Segment> segments_;
};

/// Kernels indexed by a quadrature grid. With `Anchor::upper` entry k is
/// P(s_k, . ; t, .) for t = grid.back(); with `Anchor::lower` it is
/// P(u, . ; s_k, .) for u = grid.front().
struct KernelFamily {
    enum class Anchor { upper, lower };

    Anchor anchor = Anchor::upper;
    TimeGrid grid;
    std::vector<Matrix> values;

    Kernel kernel_at(std::size_t k) const {
        return anchor == Anchor::upper ? Kernel{grid[k], grid.back(), values[k]}
                                       : Kernel{grid.front(), grid[k], values[k]};
    }

    /// The (u, t) kernel spanning the whole grid.
    Kernel span_kernel() const {
        return anchor == Anchor::upper ? kernel_at(0) : kernel_at(grid.size() - 1);
    }
};

}  // namespace jmp
