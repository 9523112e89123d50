#pragma once

#include "jmp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace jmp {

/// Which side of a discontinuity a rate is read from. Profiles are
/// right-continuous, so `right` is the ordinary value; `left` is the limit
/// from below, used when a quadrature panel or ODE step ends on a breakpoint.
enum class Side { right, left };

/// A nonnegative rate function of time on [0, inf) made of affine pieces.
///
/// Piece i covers [start_i, start_{i+1}) with r(s) = value_i + slope_i (s - start_i);
/// the last piece is flat and extends to +inf, which keeps the supremum finite.
/// This is the evaluation engine behind TimeProfile and the per-state total
/// rates of a QModel (sums of profiles of different kinds stay in this class).
class PiecewiseRate {
public:
    struct Piece {
        double start;
        double value;
        double slope;
    };

    PiecewiseRate() : pieces_{{0.0, 0.0, 0.0}} {}

    explicit PiecewiseRate(std::vector<Piece> pieces) : pieces_(std::move(pieces)) {
        if (pieces_.empty() || pieces_.front().start != 0.0)
            throw DomainError("piecewise rate must start at time 0");
        for (std::size_t i = 1; i < pieces_.size(); ++i)
            if (!(pieces_[i].start > pieces_[i - 1].start))
                throw DomainError("piece starts must be strictly increasing");
        if (pieces_.back().slope != 0.0)
            throw DomainError("last piece must be flat");
        for (std::size_t i = 0; i < pieces_.size(); ++i) {
            const auto& p = pieces_[i];
            if (!std::isfinite(p.value) || !std::isfinite(p.slope) || p.value < 0.0)
                throw DomainError("rate values must be finite and nonnegative");
            if (i + 1 < pieces_.size() && end_value(i) < -1e-12 * std::max(1.0, p.value))
                throw DomainError("rate becomes negative inside a piece");
        }
    }

    static PiecewiseRate constant(double v) { return PiecewiseRate({{0.0, v, 0.0}}); }

    std::span<const Piece> pieces() const noexcept { return pieces_; }

    double value(double t, Side side = Side::right) const {
        check_time(t);
        std::size_t i = piece_index(t);
        if (side == Side::left && i > 0 && t == pieces_[i].start) --i;
        return eval(i, t);
    }

    /// Exact integral over [u, t].
    double integral(double u, double t) const {
        check_time(u);
        if (t < u) throw DomainError("integral bounds reversed: u > t");
        if (t == u) return 0.0;
        double acc = 0.0;
        std::size_t i = piece_index(u);
        double a = u;
        while (true) {
            const double end = i + 1 < pieces_.size() ? pieces_[i + 1].start
                                                      : std::numeric_limits<double>::infinity();
            const double b = std::min(t, end);
            acc += (b - a) * 0.5 * (eval(i, a) + eval(i, b));
            if (b >= t) break;
            a = b;
            ++i;
        }
        return acc;
    }

    /// Smallest t >= u with integral(u, t) == target, or +inf when the
    /// remaining mass of the rate on [u, inf) is below target.
    double invert(double u, double target) const {
        check_time(u);
        if (!(target >= 0.0)) throw DomainError("inversion target must be nonnegative");
        if (target == 0.0) return u;
        std::size_t i = piece_index(u);
        double a = u;
        double remaining = target;
        while (true) {
            const bool last = i + 1 == pieces_.size();
            const double ra = eval(i, a);
            const double slope = pieces_[i].slope;
            if (last) {
                if (ra <= 0.0) return std::numeric_limits<double>::infinity();
                return a + remaining / ra;
            }
            const double end = pieces_[i + 1].start;
            const double mass = (end - a) * 0.5 * (ra + end_value(i));
            if (mass >= remaining) {
                // ra d + slope d^2 / 2 = remaining, stable root
                const double disc = std::max(0.0, ra * ra + 2.0 * slope * remaining);
                const double denom = ra + std::sqrt(disc);
                const double d = denom > 0.0 ? 2.0 * remaining / denom : 0.0;
                return std::min(a + d, end);
            }
            remaining -= mass;
            a = end;
            ++i;
        }
    }

    double supremum() const noexcept {
        double s = 0.0;
        for (std::size_t i = 0; i < pieces_.size(); ++i) {
            s = std::max(s, pieces_[i].value);
            if (i + 1 < pieces_.size()) s = std::max(s, end_value(i));
        }
        return s;
    }

    bool identically_zero() const noexcept {
        return std::all_of(pieces_.begin(), pieces_.end(),
                           [](const Piece& p) { return p.value == 0.0 && p.slope == 0.0; });
    }

    /// Piece starts after time 0: the only places where the rate may jump or kink.
    std::vector<double> breakpoints() const {
        std::vector<double> out;
        for (std::size_t i = 1; i < pieces_.size(); ++i) out.push_back(pieces_[i].start);
        return out;
    }

    friend PiecewiseRate operator+(const PiecewiseRate& a, const PiecewiseRate& b) {
        std::vector<double> starts;
        for (const auto& p : a.pieces_) starts.push_back(p.start);
        for (const auto& p : b.pieces_) starts.push_back(p.start);
        std::sort(starts.begin(), starts.end());
        starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
        std::vector<Piece> out;
        out.reserve(starts.size());
        for (double s : starts) {
            const std::size_t ia = a.piece_index(s);
            const std::size_t ib = b.piece_index(s);
            out.push_back({s, a.eval(ia, s) + b.eval(ib, s),
                           a.pieces_[ia].slope + b.pieces_[ib].slope});
        }
        return PiecewiseRate(std::move(out));
    }

private:
    static void check_time(double t) {
        if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError("time must be finite and >= 0");
    }

    std::size_t piece_index(double t) const {
        auto it = std::upper_bound(pieces_.begin(), pieces_.end(), t,
                                   [](double v, const Piece& p) { return v < p.start; });
        return static_cast<std::size_t>(std::distance(pieces_.begin(), it)) - 1;
    }

    double eval(std::size_t i, double t) const {
        const auto& p = pieces_[i];
        if (p.slope == 0.0) return p.value;
        return std::max(0.0, p.value + p.slope * (t - p.start));
    }

    double end_value(std::size_t i) const {
        const auto& p = pieces_[i];
        return p.value + p.slope * (pieces_[i + 1].start - p.start);
    }

    std::vector<Piece> pieces_;
};

/// Serializable description of a rate as a function of time.
///
///  - constant:            values = {v}, no breakpoints.
///  - piecewise_constant:  breakpoints b_1 < ... < b_k (all > 0), values v_0..v_k;
///                         v_0 on [0, b_1), v_i on [b_i, b_{i+1}), v_k on [b_k, inf).
///  - piecewise_linear:    breakpoints b_0 < ... < b_k (all >= 0), values v_0..v_k at
///                         the breakpoints, linear in between, flat outside.
class TimeProfile {
public:
    enum class Kind { constant, piecewise_constant, piecewise_linear };

    TimeProfile() : TimeProfile(Kind::constant, {}, {0.0}) {}

    TimeProfile(Kind kind, std::vector<double> breakpoints, std::vector<double> values)
        : kind_(kind), breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
        validate();
        rate_ = build();
    }

    static TimeProfile constant(double v) { return {Kind::constant, {}, {v}}; }
    static TimeProfile piecewise_constant(std::vector<double> bps, std::vector<double> vals) {
        return {Kind::piecewise_constant, std::move(bps), std::move(vals)};
    }
    static TimeProfile piecewise_linear(std::vector<double> bps, std::vector<double> vals) {
        return {Kind::piecewise_linear, std::move(bps), std::move(vals)};
    }

    Kind kind() const noexcept { return kind_; }
    const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
    const std::vector<double>& values() const noexcept { return values_; }
    const PiecewiseRate& rate() const noexcept { return rate_; }

    double operator()(double t, Side side = Side::right) const { return rate_.value(t, side); }
    double integral(double u, double t) const { return rate_.integral(u, t); }
    double supremum() const noexcept { return rate_.supremum(); }

    friend bool operator==(const TimeProfile& a, const TimeProfile& b) {
        return a.kind_ == b.kind_ && a.breakpoints_ == b.breakpoints_ && a.values_ == b.values_;
    }

private:
    void validate() const {
        for (double v : values_)
            if (!std::isfinite(v) || v < 0.0)
                throw DomainError("profile values must be finite and nonnegative");
        for (double b : breakpoints_)
            if (!std::isfinite(b) || b < 0.0)
                throw DomainError("profile breakpoints must be finite and nonnegative");
        for (std::size_t i = 1; i < breakpoints_.size(); ++i)
            if (!(breakpoints_[i] > breakpoints_[i - 1]))
                throw DomainError("profile breakpoints must be strictly increasing");
        switch (kind_) {
        case Kind::constant:
            if (!breakpoints_.empty() || values_.size() != 1)
                throw DomainError("constant profile takes one value and no breakpoints");
            break;
        case Kind::piecewise_constant:
            if (values_.size() != breakpoints_.size() + 1)
                throw DomainError("piecewise-constant profile needs one more value than breakpoints");
            if (!breakpoints_.empty() && breakpoints_.front() <= 0.0)
                throw DomainError("piecewise-constant breakpoints must be > 0");
            break;
        case Kind::piecewise_linear:
            if (breakpoints_.empty() || values_.size() != breakpoints_.size())
                throw DomainError("piecewise-linear profile needs one value per breakpoint");
            break;
        }
    }

    PiecewiseRate build() const {
        std::vector<PiecewiseRate::Piece> pieces;
        switch (kind_) {
        case Kind::constant:
            pieces.push_back({0.0, values_[0], 0.0});
            break;
        case Kind::piecewise_constant:
            pieces.push_back({0.0, values_[0], 0.0});
            for (std::size_t i = 0; i < breakpoints_.size(); ++i)
                pieces.push_back({breakpoints_[i], values_[i + 1], 0.0});
            break;
        case Kind::piecewise_linear: {
            if (breakpoints_.front() > 0.0) pieces.push_back({0.0, values_.front(), 0.0});
            for (std::size_t i = 0; i + 1 < breakpoints_.size(); ++i) {
                const double slope =
                    (values_[i + 1] - values_[i]) / (breakpoints_[i + 1] - breakpoints_[i]);
                pieces.push_back({breakpoints_[i], values_[i], slope});
            }
            pieces.push_back({breakpoints_.back(), values_.back(), 0.0});
            break;
        }
        }
        return PiecewiseRate(std::move(pieces));
    }

    Kind kind_;
    std::vector<double> breakpoints_;
    std::vector<double> values_;
    PiecewiseRate rate_;
};

inline std::string_view to_string(TimeProfile::Kind k) {
    switch (k) {
    case TimeProfile::Kind::constant: return "constant";
    case TimeProfile::Kind::piecewise_constant: return "piecewise-constant";
    case TimeProfile::Kind::piecewise_linear: return "piecewise-linear";
    }
    return "?";
}

}  // namespace jmp
