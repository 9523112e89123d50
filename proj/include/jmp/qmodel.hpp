#pragma once

#include "jmp/errors.hpp"
#include "jmp/time_profile.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace jmp {

using State = std::size_t;

/// Ordinary states 0..n_states-1, optionally followed by an isolated
/// absorbing cemetery at index n_states.
struct StateSpace {
    std::size_t n_states = 1;
    bool has_cemetery = false;

    std::size_t size() const noexcept { return n_states + (has_cemetery ? 1 : 0); }
    State cemetery() const noexcept { return n_states; }
    bool is_cemetery(State x) const noexcept { return has_cemetery && x == n_states; }

    friend bool operator==(const StateSpace&, const StateSpace&) = default;
};

/// What the cemetery index stands for, when present.
enum class CemeteryRole {
    none,
    explosion,   ///< frozen value after accumulation of jumps
    kill,        ///< sink of the rate gap of a non-conservative Q-function
};

struct Transition {
    State from;
    State to;
    TimeProfile profile;
};

struct KillRate {
    State state;
    TimeProfile profile;
};

/// Destination law of a jump out of x at time t. Kill mass of a
/// non-conservative model is reported under the index n_states.
struct JumpDistribution {
    std::vector<State> targets;
    std::vector<double> probs;
};

/// Q-function on a finite state space: q(x,t,{y}) = rate_{x->y}(t) for y != x and
/// q(x,t) = sum_y rate_{x->y}(t) + kill_x(t). Immutable after construction.
class QModel {
public:
    struct Edge {
        State to;
        PiecewiseRate rate;
    };

    QModel(StateSpace space, std::vector<Transition> transitions, std::vector<KillRate> kills = {},
           CemeteryRole role = CemeteryRole::none)
        : space_(space), transitions_(std::move(transitions)), kills_(std::move(kills)),
          role_(space.has_cemetery ? role : CemeteryRole::none) {
        if (space_.n_states < 1) throw DomainError("state space needs at least one state");
        const std::size_t n = space_.size();
        edges_.resize(n);
        kill_.assign(n, PiecewiseRate{});
        for (const auto& tr : transitions_) {
            if (tr.from >= n || tr.to >= n)
                throw DomainError("transition " + std::to_string(tr.from) + "->" +
                                  std::to_string(tr.to) + " references an unknown state");
            if (tr.from == tr.to) throw DomainError("transition from a state to itself");
            if (space_.is_cemetery(tr.from) && !tr.profile.rate().identically_zero())
                throw DomainError("the cemetery state cannot have outgoing rates");
            auto& out = edges_[tr.from];
            auto it = std::find_if(out.begin(), out.end(), [&](const Edge& e) { return e.to == tr.to; });
            if (it == out.end())
                out.push_back({tr.to, tr.profile.rate()});
            else
                it->rate = it->rate + tr.profile.rate();
        }
        for (auto& out : edges_)
            std::sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) { return a.to < b.to; });
        for (const auto& k : kills_) {
            if (k.state >= n) throw DomainError("kill rate references an unknown state");
            if (space_.is_cemetery(k.state) && !k.profile.rate().identically_zero())
                throw DomainError("the cemetery state cannot be killed");
            kill_[k.state] = kill_[k.state] + k.profile.rate();
        }
        total_.reserve(n);
        stable_bound_.reserve(n);
        conservative_ = true;
        std::vector<double> bps;
        for (State x = 0; x < n; ++x) {
            PiecewiseRate total = kill_[x];
            for (const auto& e : edges_[x]) total = total + e.rate;
            if (!kill_[x].identically_zero()) conservative_ = false;
            auto b = total.breakpoints();
            bps.insert(bps.end(), b.begin(), b.end());
            stable_bound_.push_back(total.supremum());
            total_.push_back(std::move(total));
        }
        std::sort(bps.begin(), bps.end());
        bps.erase(std::unique(bps.begin(), bps.end()), bps.end());
        breakpoints_ = std::move(bps);
    }

    const StateSpace& space() const noexcept { return space_; }
    std::size_t size() const noexcept { return space_.size(); }
    bool conservative() const noexcept { return conservative_; }
    CemeteryRole cemetery_role() const noexcept { return role_; }
    const std::vector<Transition>& transitions() const noexcept { return transitions_; }
    const std::vector<KillRate>& kills() const noexcept { return kills_; }

    std::span<const Edge> edges(State x) const { return edges_.at(x); }
    const PiecewiseRate& kill_rate(State x) const { return kill_.at(x); }
    const PiecewiseRate& total_rate_function(State x) const {
        check_state(x);
        return total_[x];
    }

    /// q(x,t); zero for the cemetery.
    double total_rate(State x, double t, Side side = Side::right) const {
        check_state(x);
        return total_[x].value(t, side);
    }

    /// Exact integral of q(x, .) over [u, t].
    double cumulative_rate(State x, double u, double t) const {
        check_state(x);
        if (u > t) throw DomainError("cumulative_rate: u > t");
        return total_[x].integral(u, t);
    }

    /// sup_t q(x,t), exact because profiles have finitely many finite pieces.
    double stable_bound(State x) const {
        check_state(x);
        return stable_bound_[x];
    }

    /// sup over x in B and all t of q(x,t).
    double q_bound(std::span<const State> set) const {
        if (set.empty()) throw DomainError("q_bound of an empty set");
        double b = 0.0;
        for (State x : set) {
            if (x >= space_.n_states) throw DomainError("q_bound: not an ordinary state");
            b = std::max(b, stable_bound_[x]);
        }
        return b;
    }

    double q_bound() const {
        return *std::max_element(stable_bound_.begin(), stable_bound_.end());
    }

    JumpDistribution jump_distribution(State x, double t) const {
        const double q = total_rate(x, t);
        if (!(q > 0.0))
            throw AbsorbingStateError("state " + std::to_string(x) + " has zero total rate at t=" +
                                      std::to_string(t));
        JumpDistribution d;
        for (const auto& e : edges_[x]) {
            d.targets.push_back(e.to);
            d.probs.push_back(e.rate.value(t) / q);
        }
        const double k = kill_[x].value(t);
        if (k > 0.0) {
            d.targets.push_back(space_.cemetery());
            d.probs.push_back(k / q);
        }
        return d;
    }

    /// Every breakpoint of every rate, sorted and unique.
    const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }

    std::vector<double> breakpoints_in(double u, double t) const {
        std::vector<double> out;
        for (double b : breakpoints_)
            if (b > u && b < t) out.push_back(b);
        return out;
    }

private:
    void check_state(State x) const {
        if (x >= space_.size())
            throw DomainError("state index " + std::to_string(x) + " out of range");
    }

    StateSpace space_;
    std::vector<Transition> transitions_;
    std::vector<KillRate> kills_;
    CemeteryRole role_;
    std::vector<std::vector<Edge>> edges_;
    std::vector<PiecewiseRate> kill_;
    std::vector<PiecewiseRate> total_;
    std::vector<double> stable_bound_;
    std::vector<double> breakpoints_;
    bool conservative_ = true;
};

/// Routes every kill rate into the cemetery, adding it if absent. Conservative
/// inputs come back unchanged.
inline QModel make_conservative(const QModel& model) {
    if (model.conservative()) return model;
    StateSpace space = model.space();
    space.has_cemetery = true;
    std::vector<Transition> transitions = model.transitions();
    for (const auto& k : model.kills())
        if (!k.profile.rate().identically_zero())
            transitions.push_back({k.state, space.cemetery(), k.profile});
    const CemeteryRole role =
        model.space().has_cemetery ? model.cemetery_role() : CemeteryRole::kill;
    return QModel(space, std::move(transitions), {}, role);
}

/// States reachable from x through edges with nonzero rate (x included).
inline std::vector<bool> reachable_from(const QModel& model, State x) {
    std::vector<bool> seen(model.size(), false);
    std::vector<State> stack{x};
    seen[x] = true;
    while (!stack.empty()) {
        const State s = stack.back();
        stack.pop_back();
        for (const auto& e : model.edges(s))
            if (!seen[e.to] && !e.rate.identically_zero()) {
                seen[e.to] = true;
                stack.push_back(e.to);
            }
    }
    return seen;
}

}  // namespace jmp
