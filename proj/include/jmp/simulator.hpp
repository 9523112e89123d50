#pragma once

#include "jmp/errors.hpp"
#include "jmp/kernel.hpp"
#include "jmp/qmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace jmp {

/// Independent random stream for path `index` of a run seeded with `seed`.
/// Streams depend only on (seed, index), never on scheduling.
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t index) : gen_(make_seq(seed, index)) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Standard exponential by inversion.
    double exponential() { return -std::log1p(-uniform()); }

private:
    static std::mt19937_64 make_seq(std::uint64_t seed, std::uint64_t index) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                          0x6a6d70u};
        return std::mt19937_64(seq);
    }

    std::mt19937_64 gen_;
};

enum class Termination { horizon_reached, absorbed, explosion_cap_hit };

inline std::string to_string(Termination t) {
    switch (t) {
    case Termination::horizon_reached: return "horizon_reached";
    case Termination::absorbed: return "absorbed";
    case Termination::explosion_cap_hit: return "explosion_cap_hit";
    }
    return "?";
}

/// Marker for the post-explosion value x_inf in state queries.
inline constexpr State exploded_state = std::numeric_limits<State>::max();

struct Event {
    double time;
    State state;

    friend bool operator==(const Event&, const Event&) = default;
};

/// One realization (x0, t1, x1, t2, ...) on [start, horizon].
struct PathSample {
    std::uint64_t index = 0;
    State x0 = 0;
    double start = 0.0;
    double horizon = 0.0;
    std::vector<Event> events;
    Termination termination = Termination::horizon_reached;

    std::size_t n_jumps() const noexcept { return events.size(); }

    /// Time at which the jump cap was hit, +inf otherwise.
    double explosion_time() const noexcept {
        return termination == Termination::explosion_cap_hit ? events.back().time
                                                             : std::numeric_limits<double>::infinity();
    }

    /// X_s; exploded_state from the explosion time on.
    State state_at(double s) const {
        if (s < start) throw DomainError("state_at before path start");
        if (s >= explosion_time()) return exploded_state;
        auto it = std::upper_bound(events.begin(), events.end(), s,
                                   [](double v, const Event& e) { return v < e.time; });
        return it == events.begin() ? x0 : std::prev(it)->state;
    }

    /// N(]start, t], B): jumps into B up to t.
    std::size_t jump_count(double t, const std::vector<bool>& in_set) const {
        std::size_t c = 0;
        for (const auto& e : events) {
            if (e.time > t) break;
            if (e.state < in_set.size() && in_set[e.state]) ++c;
        }
        return c;
    }

    friend bool operator==(const PathSample&, const PathSample&) = default;
};

struct SimulationConfig {
    std::vector<double> initial{1.0};  ///< mu over states
    double start_time = 0.0;
    double horizon = 1.0;
    std::size_t n_paths = 1000;
    std::uint64_t seed = 1;
    std::size_t jump_cap = 10000;
    unsigned threads = 0;  ///< 0: JMP_THREADS or hardware concurrency

    void validate(std::size_t n_states) const {
        if (initial.size() != n_states)
            throw DomainError("initial distribution has " + std::to_string(initial.size()) + " entries, model has " +
                              std::to_string(n_states) + " states");
        double s = 0.0;
        for (double p : initial) {
            if (!(p >= 0.0)) throw DomainError("initial distribution has a negative entry");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-12) throw DomainError("initial distribution does not sum to 1");
        if (!(start_time >= 0.0)) throw DomainError("start time must be >= 0");
        if (!(horizon > start_time)) throw DomainError("horizon must exceed the start time");
        if (n_paths < 1) throw DomainError("need at least one path");
        if (jump_cap < 1) throw DomainError("jump cap must be positive");
    }
};

inline std::vector<double> point_mass(std::size_t n, State x) {
    std::vector<double> mu(n, 0.0);
    mu.at(x) = 1.0;
    return mu;
}

inline unsigned default_thread_count() {
    if (const char* env = std::getenv("JMP_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Time of the next jump from x entered at u: the t with int_u^t q(x,s) ds equal
/// to a standard exponential draw, or +inf when the remaining hazard is too small.
inline double sample_holding_time(const QModel& model, State x, double u, PathRng& rng) {
    return model.total_rate_function(x).invert(u, rng.exponential());
}

/// Cross-check sampler: thinning of a Poisson stream at the rate sup_t q(x,t).
inline double sample_holding_time_thinning(const QModel& model, State x, double u, PathRng& rng) {
    const auto& rate = model.total_rate_function(x);
    const double bound = model.stable_bound(x);
    if (bound <= 0.0) return std::numeric_limits<double>::infinity();
    const auto bps = rate.breakpoints();
    const double last_bp = bps.empty() ? 0.0 : bps.back();
    double t = u;
    while (true) {
        t += rng.exponential() / bound;
        if (t >= last_bp && rate.value(t) == 0.0) return std::numeric_limits<double>::infinity();
        if (rng.uniform() * bound < rate.value(t)) return t;
    }
}

/// Destination of a jump out of x at t_jump, by inverse CDF over the sparse
/// targets (kill mass goes to index n_states).
inline State sample_jump(const QModel& model, State x, double t_jump, PathRng& rng) {
    const double q = model.total_rate(x, t_jump);
    if (!(q > 0.0)) throw AbsorbingStateError("jump requested from state " + std::to_string(x) + " with zero rate");
    const auto edges = model.edges(x);
    const double target = rng.uniform() * q;
    double acc = 0.0;
    State last = model.space().cemetery();
    for (const auto& e : edges) {
        const double r = e.rate.value(t_jump);
        if (r <= 0.0) continue;
        acc += r;
        last = e.to;
        if (target < acc) return e.to;
    }
    const double k = model.kill_rate(x).value(t_jump);
    if (k > 0.0) return model.space().cemetery();
    return last;
}

namespace detail {

// Per-state shortcuts for the inner loop; distributionally identical to the
// generic samplers.
struct FastState {
    double constant_rate = -1.0;  ///< >= 0 when q(x, .) is constant
    State only_target = exploded_state;
};

inline std::vector<FastState> fast_states(const QModel& model) {
    std::vector<FastState> out(model.size());
    for (State x = 0; x < model.size(); ++x) {
        const auto& r = model.total_rate_function(x);
        if (r.pieces().size() == 1) out[x].constant_rate = r.pieces()[0].value;
        const auto edges = model.edges(x);
        if (edges.size() == 1 && model.kill_rate(x).identically_zero()) out[x].only_target = edges[0].to;
    }
    return out;
}

inline State draw_initial(const std::vector<double>& mu, PathRng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    State last = 0;
    for (State x = 0; x < mu.size(); ++x) {
        if (mu[x] <= 0.0) continue;
        acc += mu[x];
        last = x;
        if (u < acc) return x;
    }
    return last;
}

inline PathSample simulate_one(const QModel& model, const std::vector<FastState>& fast, const SimulationConfig& cfg,
                               std::uint64_t index) {
    PathRng rng(cfg.seed, index);
    PathSample p;
    p.index = index;
    p.start = cfg.start_time;
    p.horizon = cfg.horizon;
    p.x0 = draw_initial(cfg.initial, rng);
    State x = p.x0;
    double t = cfg.start_time;
    while (true) {
        const auto& fs = fast[x];
        double next;
        if (fs.constant_rate >= 0.0)
            next = fs.constant_rate > 0.0 ? t + rng.exponential() / fs.constant_rate
                                          : std::numeric_limits<double>::infinity();
        else
            next = sample_holding_time(model, x, t, rng);
        if (next > cfg.horizon) {
            p.termination = model.space().is_cemetery(x) ? Termination::absorbed : Termination::horizon_reached;
            return p;
        }
        x = fs.only_target != exploded_state ? fs.only_target : sample_jump(model, x, next, rng);
        t = next;
        p.events.push_back({t, x});
        if (p.events.size() >= cfg.jump_cap) {
            p.termination = Termination::explosion_cap_hit;
            return p;
        }
    }
}

}  // namespace detail

/// Simulates every path and hands each to `fn`; returns fn's results in path
/// order. Paths are distributed over threads in contiguous blocks and each
/// path's stream depends only on (seed, index), so the result is identical
/// for any thread count.
template <class Fn>
auto simulate_map(const QModel& model, const SimulationConfig& cfg, Fn&& fn)
    -> std::vector<decltype(fn(std::declval<const PathSample&>()))> {
    if (!model.conservative())
        throw PreconditionError("simulation needs a conservative model; apply make_conservative first");
    cfg.validate(model.size());
    using R = decltype(fn(std::declval<const PathSample&>()));
    std::vector<R> out(cfg.n_paths);
    const auto fast = detail::fast_states(model);
    const unsigned threads =
        static_cast<unsigned>(std::min<std::size_t>(cfg.threads ? cfg.threads : default_thread_count(), cfg.n_paths));
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) out[i] = fn(detail::simulate_one(model, fast, cfg, i));
    };
    if (threads <= 1) {
        work(0, cfg.n_paths);
    } else {
        std::vector<std::thread> pool;
        const std::size_t block = (cfg.n_paths + threads - 1) / threads;
        for (unsigned w = 0; w < threads; ++w) {
            const std::size_t b = w * block, e = std::min(cfg.n_paths, b + block);
            if (b < e) pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

inline std::vector<PathSample> simulate_paths(const QModel& model, const SimulationConfig& cfg) {
    return simulate_map(model, cfg, [](const PathSample& p) { return p; });
}

/// nu(]start, t], B) along a path: sum over inter-jump intervals of the exact
/// integral of q(x_m, s, B \ {x_m}). Zero after explosion.
inline double compensator_along_path(const QModel& model, const PathSample& path, double t,
                                     const std::vector<bool>& in_set) {
    if (t > path.horizon) throw DomainError("compensator requested beyond the path horizon");
    if (t <= path.start) return 0.0;
    const double stop = std::min(t, path.explosion_time());
    double acc = 0.0;
    State x = path.x0;
    double a = path.start;
    auto add = [&](double b) {
        if (b <= a) return;
        for (const auto& e : model.edges(x))
            if (e.to < in_set.size() && in_set[e.to]) acc += e.rate.integral(a, b);
    };
    for (const auto& ev : path.events) {
        if (ev.time >= stop) break;
        add(ev.time);
        a = ev.time;
        x = ev.state;
    }
    add(stop);
    return acc;
}

inline std::vector<bool> state_set(std::size_t n, std::initializer_list<State> members) {
    std::vector<bool> s(n, false);
    for (State x : members) s.at(x) = true;
    return s;
}

/// Relative frequencies of X_t given X_u, with explosion counted as defect.
struct EmpiricalKernel {
    Kernel kernel;                  ///< frequencies; rows without data are zero
    Vector defect;                  ///< fraction exploded by t, per row
    std::vector<std::size_t> counts;  ///< paths observed in each state at u (0: no data)
    Matrix std_error;               ///< binomial sqrt(p(1-p)/n) from the observed p
    Vector defect_std_error;

    bool has_data(State x) const { return counts.at(x) > 0; }

    /// Half-width at z standard errors.
    Matrix half_width(double z = 3.0) const { return z * std_error; }
};

/// Accumulates (X_u, X_t) pairs; order-independent.
class TransitionCounter {
public:
    TransitionCounter(std::size_t n, double u, double t)
        : u_(u), t_(t), counts_(Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))),
          exploded_(Vector::Zero(static_cast<Eigen::Index>(n))) {}

    void add(State from, State to) {
        if (from == exploded_state) return;
        if (to == exploded_state)
            exploded_[static_cast<Eigen::Index>(from)] += 1.0;
        else
            counts_(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(to)) += 1.0;
    }

    void add(const PathSample& p) {
        if (p.start > u_) throw PreconditionError("path starts after the conditioning time");
        add(p.state_at(u_), p.state_at(t_));
    }

    EmpiricalKernel result() const {
        const auto n = counts_.rows();
        EmpiricalKernel ek;
        ek.kernel = {u_, t_, Matrix::Zero(n, n)};
        ek.defect = Vector::Zero(n);
        ek.std_error = Matrix::Zero(n, n);
        ek.defect_std_error = Vector::Zero(n);
        ek.counts.resize(static_cast<std::size_t>(n));
        for (Eigen::Index x = 0; x < n; ++x) {
            const double total = counts_.row(x).sum() + exploded_[x];
            ek.counts[static_cast<std::size_t>(x)] = static_cast<std::size_t>(total);
            if (total == 0.0) continue;
            ek.kernel.matrix.row(x) = counts_.row(x) / total;
            ek.defect[x] = exploded_[x] / total;
            ek.std_error.row(x) =
                (ek.kernel.matrix.row(x).array() * (1.0 - ek.kernel.matrix.row(x).array()) / total).sqrt().matrix();
            ek.defect_std_error[x] = std::sqrt(ek.defect[x] * (1.0 - ek.defect[x]) / total);
        }
        return ek;
    }

private:
    double u_, t_;
    Matrix counts_;
    Vector exploded_;
};

inline EmpiricalKernel empirical_kernel(std::span<const PathSample> paths, std::size_t n_states, double u, double t) {
    if (!(u < t)) throw DomainError("empirical_kernel requires u < t");
    TransitionCounter c(n_states, u, t);
    for (const auto& p : paths) {
        if (t > p.horizon) throw DomainError("empirical_kernel beyond the simulation horizon");
        c.add(p);
    }
    return c.result();
}

}  // namespace jmp
