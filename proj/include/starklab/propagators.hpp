#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "starklab/errors.hpp"
#include "starklab/grid.hpp"
#include "starklab/parallel.hpp"
#include "starklab/potentials.hpp"
#include "starklab/quadrature.hpp"

namespace starklab {

// Bump packets have stretched-exponential position tails, so the guard measures
// growth of edge mass rather than its absence: the limit is the larger of the budget
// and growth_factor times the edge mass the state started with.
struct WindowGuard {
    double band = 0.1;
    double max_boundary_mass = 1e-3;
    double growth_factor = 4.0;
};

inline double window_limit(const WindowGuard& guard, double initial_mass) {
    return std::max(guard.max_boundary_mass, guard.growth_factor * initial_mass);
}

inline void check_window(const State& s, const WindowGuard& guard, double initial_mass, const char* what) {
    if (guard.max_boundary_mass <= 0.0) return;
    double m = boundary_mass(s, guard.band);
    double limit = window_limit(guard, initial_mass);
    if (m > limit)
        fail(ErrorCode::WindowOverflow,
             std::string(what) + ": boundary mass " + std::to_string(m) + " exceeds " + std::to_string(limit));
}

namespace detail {

inline void kinetic_multiplier(State& s, double t) {
    const Grid& g = *s.grid;
    s.grid->forward(s.values.data());
    for (std::size_t i = 0; i < g.size(); ++i) s.values[i] *= std::polar(1.0, -0.5 * t * norm2(g.wavevector(i)));
    s.grid->backward(s.values.data());
}

inline void global_phase(State& s, double phase) {
    cplx f = std::polar(1.0, phase);
    for (auto& z : s.values) z *= f;
}

}  // namespace detail

// exp(-i t p^2/2). With psi = e^{ik.x} g(x - c) the drift k t moves into the frame
// centre and g only sees the grid kinetic multiplier.
inline State free_schrodinger(State s, double t) {
    detail::kinetic_multiplier(s, t);
    detail::global_phase(s, -0.5 * t * norm2(s.boost));
    s.frame_center = s.frame_center + t * s.boost;
    return s;
}

// exp(-i t (p^2/2 - x_1)) by the exact factorisation into a global phase, the
// momentum kick e1 t, the drift (k t + e1 t^2/2) and the free kernel.
inline State free_stark(State s, double t, const WindowGuard& guard = {}) {
    const Vec k = s.boost;
    const double m0 = guard.max_boundary_mass > 0.0 ? boundary_mass(s, guard.band) : 0.0;
    detail::kinetic_multiplier(s, t);
    detail::global_phase(s, -(0.5 * t * norm2(k) + 0.5 * k[0] * t * t + t * t * t / 6.0));
    s.frame_center = s.frame_center + t * k + (0.5 * t * t) * e1;
    s.boost = k + t * e1;
    check_window(s, guard, m0, "free_stark");
    return s;
}

inline double dt_max(const PotentialSpec& V) { return 0.01 / (1.0 + V.sup_bound()); }

struct PropagationReport {
    long steps = 0;
    double max_norm_drift = 0.0;
    double max_boundary_mass = 0.0;
    double wall_seconds = 0.0;
};

struct PropagationResult {
    State state;
    PropagationReport report;
};

struct PropagationOptions {
    WindowGuard guard{};
    int check_every = 25;
    double drift_per_unit_time = 1e-8;
};

// Strang splitting of exp(-i(t_to - t_from)H). The free Stark half is exact, so the
// only sampled potential is V(y + frame_center(t)) on the comoving grid.
inline PropagationResult full_propagate(State s, const PotentialSpec& V, double t_from, double t_to, double dt,
                                        const PropagationOptions& opt = {}) {
    auto t0 = std::chrono::steady_clock::now();
    if (!(dt > 0.0)) fail(ErrorCode::InvalidArgument, "dt must be positive");
    if (dt > dt_max(V) * (1.0 + 1e-12))
        fail(ErrorCode::InvalidArgument, "dt = " + std::to_string(dt) + " exceeds dt_max = " + std::to_string(dt_max(V)));
    PropagationReport rep;
    const double span = t_to - t_from;
    const long steps = span == 0.0 ? 0 : static_cast<long>(std::ceil(std::abs(span) / dt - 1e-9));
    const double h = steps ? span / steps : 0.0;
    const double n0 = norm(s);
    const double limit = window_limit(opt.guard, boundary_mass(s, opt.guard.band));
    const Grid& g = *s.grid;
    const bool trivial = V.empty();
    auto potential_kick = [&](double tau) {
        if (trivial) return;
        for (std::size_t i = 0; i < g.size(); ++i)
            s.values[i] *= std::polar(1.0, -tau * V.value(g.position(i) + s.frame_center));
    };
    for (long n = 0; n < steps; ++n) {
        potential_kick(n == 0 ? 0.5 * h : h);
        s = free_stark(std::move(s), h, WindowGuard{opt.guard.band, 0.0, 0.0});
        if ((n + 1) % opt.check_every == 0 || n + 1 == steps) {
            double drift = std::abs(norm(s) - n0);
            rep.max_norm_drift = std::max(rep.max_norm_drift, drift);
            double bm = boundary_mass(s, opt.guard.band);
            rep.max_boundary_mass = std::max(rep.max_boundary_mass, bm);
            if (opt.guard.max_boundary_mass > 0.0 && bm > limit)
                fail(ErrorCode::WindowOverflow, "full_propagate: boundary mass " + std::to_string(bm) + " at step " +
                                                    std::to_string(n + 1));
        }
    }
    if (steps) potential_kick(0.5 * h);
    rep.steps = steps;
    double drift = std::abs(norm(s) - n0);
    rep.max_norm_drift = std::max(rep.max_norm_drift, drift);
    if (drift > opt.drift_per_unit_time * std::max(1.0, std::abs(span)))
        fail(ErrorCode::NormDrift, "norm drift " + std::to_string(drift));
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(s), rep};
}

enum class PhaseKind { graf_s, dollard_l, dollard_s, product };

// Phase of a modifier exp(-i phase). Scalar for graf_s; one value per momentum node
// for the Dollard kinds, tied to the grid and boost it was built on.
struct ModifierPhase {
    PhaseKind kind = PhaseKind::graf_s;
    double t_from = 0.0;
    double t_to = 0.0;
    double scalar = 0.0;
    std::vector<double> nodes;
    GridPtr grid;
    Vec boost{};
};

inline bool is_admissible_direction(const Vec& v) {
    double n = length(v);
    return n > 0.0 && std::abs(v[0]) / n < 1.0;
}

// int_a^b V^s(v s + e1 s^2/2) ds; either bound may be infinite.
inline double graf_integral(const PotentialSpec& V, const Vec& v, double a, double b, double abs_tol = 1e-10) {
    const Part& p = require_part(V, PartKind::s);
    if ((std::isinf(a) || std::isinf(b)) && !is_admissible_direction(v))
        fail(ErrorCode::DirectionInadmissible, "infinite-time Graf phase needs |v.e1| < |v|");
    auto f = [&](double s) { return p.value(s * v + (0.5 * s * s) * e1); };
    QuadratureOptions opt{abs_tol, 1e-13, 4000};
    // Break the range at the closest approach so the peak is never straddled blindly.
    double s0 = 0.0;
    if (a < s0 && s0 < b) {
        return integrate_or_fail(f, a, s0, opt, "graf_phase") + integrate_or_fail(f, s0, b, opt, "graf_phase");
    }
    return integrate_or_fail(f, a, b, opt, "graf_phase");
}

inline ModifierPhase graf_phase(const PotentialSpec& V, const Vec& v, double t) {
    ModifierPhase m;
    m.kind = PhaseKind::graf_s;
    m.t_to = t;
    m.scalar = graf_integral(V, v, 0.0, t);
    m.boost = v;
    return m;
}

inline double node_mass_floor() { return 1e-14; }

// Per-node int_{t_from}^{t_to} V_part(p s + e1 s^2/2) ds with p = boost + xi, on nodes
// whose spectral mass fraction exceeds 1e-14 in the given state.
inline ModifierPhase dollard_phase(const PotentialSpec& V, PartKind part, const State& state, double t_from,
                                   double t_to, double abs_tol = 1e-10) {
    if (part == PartKind::vs) fail(ErrorCode::ModifierMismatch, "Dollard phases use the l or s part");
    const Part& p = require_part(V, part);
    if (part == PartKind::s && !V.gamma2)
        fail(ErrorCode::ModifierMismatch, "a Dollard phase on the s part needs a declared gamma2");
    if (part == PartKind::l && (std::isinf(t_from) || std::isinf(t_to)))
        fail(ErrorCode::DivergentTail, "infinite-horizon Dollard phase of the long-range part diverges");
    ModifierPhase m;
    m.kind = part == PartKind::l ? PhaseKind::dollard_l : PhaseKind::dollard_s;
    m.t_from = t_from;
    m.t_to = t_to;
    m.grid = state.grid;
    m.boost = state.boost;
    const Grid& g = *state.grid;
    m.nodes.assign(g.size(), 0.0);
    auto spec = spectrum(state);
    double total = 0.0;
    for (const auto& z : spec) total += std::norm(z);
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (std::norm(spec[i]) > node_mass_floor() * total) active.push_back(i);
    QuadratureOptions opt{abs_tol, 1e-12, 4000};
    parallel_for(active.size(), [&](std::size_t n) {
        std::size_t i = active[n];
        Vec mom = state.boost + g.wavevector(i);
        auto f = [&](double s) { return p.value(s * mom + (0.5 * s * s) * e1); };
        double a = t_from, b = t_to;
        double val;
        if (a < 0.0 && 0.0 < b)
            val = integrate_or_fail(f, a, 0.0, opt, "dollard_phase") + integrate_or_fail(f, 0.0, b, opt, "dollard_phase");
        else
            val = integrate_or_fail(f, a, b, opt, "dollard_phase");
        m.nodes[i] = val;
    });
    return m;
}

// Sum of phases on the same grid and boost (M_D M_D^s).
inline ModifierPhase combine(const ModifierPhase& a, const ModifierPhase& b) {
    ModifierPhase m = a;
    m.kind = PhaseKind::product;
    if (a.kind == PhaseKind::graf_s && b.kind == PhaseKind::graf_s) {
        m.scalar = a.scalar + b.scalar;
        m.kind = PhaseKind::graf_s;
        return m;
    }
    if (a.grid != b.grid || !same_vec(a.boost, b.boost))
        fail(ErrorCode::FrameMismatch, "combining Dollard phases from different frames");
    for (std::size_t i = 0; i < m.nodes.size(); ++i) m.nodes[i] += b.nodes[i];
    return m;
}

// Multiplies by exp(-i sign phase).
inline State apply_modifier(State s, const ModifierPhase& phase, int sign) {
    if (phase.kind == PhaseKind::graf_s) {
        detail::global_phase(s, -sign * phase.scalar);
        return s;
    }
    if (phase.grid != s.grid || !same_vec(phase.boost, s.boost))
        fail(ErrorCode::FrameMismatch, "Dollard phase built for another grid or boost");
    auto spec = spectrum(s);
    for (std::size_t i = 0; i < spec.size(); ++i)
        if (phase.nodes[i] != 0.0) spec[i] *= std::polar(1.0, -sign * phase.nodes[i]);
    assign_spectrum(s, std::move(spec));
    return s;
}

}  // namespace starklab
