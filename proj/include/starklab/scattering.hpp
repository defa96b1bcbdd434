#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "starklab/csv.hpp"
#include "starklab/errors.hpp"
#include "starklab/grid.hpp"
#include "starklab/parallel.hpp"
#include "starklab/potentials.hpp"
#include "starklab/propagators.hpp"
#include "starklab/quadrature.hpp"

namespace starklab {

enum class ModifierKind { none, graf_v, dollard_l, dollard_s, dollard_both };

inline std::string modifier_name(ModifierKind k) {
    switch (k) {
        case ModifierKind::none: return "none";
        case ModifierKind::graf_v: return "graf_v";
        case ModifierKind::dollard_l: return "dollard_l";
        case ModifierKind::dollard_s: return "dollard_s";
        case ModifierKind::dollard_both: return "dollard_both";
    }
    return "?";
}

inline ModifierKind parse_modifier(const std::string& s) {
    for (auto k : {ModifierKind::none, ModifierKind::graf_v, ModifierKind::dollard_l, ModifierKind::dollard_s,
                   ModifierKind::dollard_both})
        if (modifier_name(k) == s) return k;
    fail(ErrorCode::InvalidArgument, "unknown modifier '" + s + "'");
}

// Each modifier removes the long-time tail of specific parts; an unmodified long-range
// part has no wave operator at all.
inline void check_modifier(const PotentialSpec& V, ModifierKind k) {
    auto mismatch = [&](const std::string& why) { fail(ErrorCode::ModifierMismatch, modifier_name(k) + ": " + why); };
    const bool l = V.has(PartKind::l), s = V.has(PartKind::s);
    switch (k) {
        case ModifierKind::none:
            if (l) mismatch("a long-range part needs a Dollard modifier");
            break;
        case ModifierKind::graf_v:
            if (!s) mismatch("needs an s part");
            if (l) mismatch("cannot absorb a long-range part");
            break;
        case ModifierKind::dollard_l:
            if (!l) mismatch("needs an l part");
            break;
        case ModifierKind::dollard_s:
            if (!s || !V.gamma2) mismatch("needs an s part with declared gamma2");
            if (l) mismatch("leaves the long-range part unmodified");
            break;
        case ModifierKind::dollard_both:
            if (!l) mismatch("needs an l part");
            if (!s || !V.gamma2) mismatch("needs an s part with declared gamma2");
            break;
    }
}

inline bool modifies_l(ModifierKind k) { return k == ModifierKind::dollard_l || k == ModifierKind::dollard_both; }
inline bool modifies_s_dollard(ModifierKind k) {
    return k == ModifierKind::dollard_s || k == ModifierKind::dollard_both;
}

// Unset horizons are chosen by the Cook scan. dt = 0 steps at dt_max(V); the comoving
// potential moves |v| dt per step, which the split step absorbs at second order.
struct HorizonPolicy {
    std::optional<double> T_plus;
    std::optional<double> T_minus;
    double cook_tolerance = 1e-5;
    double max_T = 40.0;
    double dt = 0.0;
    double probe_step = 0.0;
    bool symmetric = true;
    WindowGuard guard{};
};

inline double policy_dt(const HorizonPolicy& p, const PotentialSpec& V) { return p.dt > 0.0 ? p.dt : dt_max(V); }

inline double probe_step(const HorizonPolicy& p, double v_mag) {
    return p.probe_step > 0.0 ? p.probe_step : 0.25 / (1.0 + v_mag);
}

// Phase of M(t_to) M(t_from)^-1 for the modifier kind, built on `state`'s frame.
// Graf phases use the state's boost as the reference velocity.
inline std::optional<ModifierPhase> modifier_phase(const PotentialSpec& V, ModifierKind k, const State& state,
                                                   double t_from, double t_to) {
    switch (k) {
        case ModifierKind::none: return std::nullopt;
        case ModifierKind::graf_v: {
            ModifierPhase m;
            m.kind = PhaseKind::graf_s;
            m.t_from = t_from;
            m.t_to = t_to;
            m.scalar = graf_integral(V, state.boost, t_from, t_to);
            m.boost = state.boost;
            return m;
        }
        case ModifierKind::dollard_l: return dollard_phase(V, PartKind::l, state, t_from, t_to);
        case ModifierKind::dollard_s: return dollard_phase(V, PartKind::s, state, t_from, t_to);
        case ModifierKind::dollard_both:
            return combine(dollard_phase(V, PartKind::l, state, t_from, t_to),
                           dollard_phase(V, PartKind::s, state, t_from, t_to));
    }
    return std::nullopt;
}

inline State apply_optional(State s, const std::optional<ModifierPhase>& m, int sign) {
    return m ? apply_modifier(std::move(s), *m, sign) : s;
}

// (V - counterterm_t) phi for phi = U(t) psi. The counterterm is what the modifier
// subtracts: the scalar V^s(v t + e1 t^2/2) for Graf, V_part(p t - e1 t^2/2) on the
// momentum side for Dollard.
inline State cook_residual_state(const PotentialSpec& V, ModifierKind k, const State& phi, double t, const Vec& v) {
    State r = apply_multiplier(phi, [&](const Vec& x) { return cplx(V.value(x)); });
    auto subtract = [&](const State& c) {
        for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] -= c.values[i];
    };
    if (k == ModifierKind::graf_v) {
        double c = V.s_part->value(t * v + (0.5 * t * t) * e1);
        for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] -= c * phi.values[i];
    }
    auto momentum_counter = [&](const Part& part) {
        subtract(apply_momentum_function(phi, [&](const Vec& p) { return cplx(part.value(t * p - (0.5 * t * t) * e1)); }));
    };
    if (modifies_l(k)) momentum_counter(*V.l_part);
    if (modifies_s_dollard(k)) momentum_counter(*V.s_part);
    return r;
}

struct CookScan {
    double horizon = 0.0;
    double residual = 0.0;
    int probes = 0;
    std::vector<std::pair<double, double>> trace;
};

// Walks t = sign*h, 2*sign*h, ... until the Cook integrand stays below tolerance at two
// consecutive probes. Dollard phases are accumulated probe to probe.
inline CookScan cook_scan(const PotentialSpec& V, ModifierKind k, const State& psi, int sign,
                          const HorizonPolicy& policy) {
    check_modifier(V, k);
    CookScan out;
    const double vmag = length(psi.boost);
    const double h = probe_step(policy, vmag);
    const double n0 = norm(psi);
    std::optional<ModifierPhase> acc;
    double t = 0.0;
    int below = 0;
    while (true) {
        double next = t + sign * h;
        if (std::abs(next) > policy.max_T + 1e-12) {
            fail(ErrorCode::NoConvergence, "Cook integrand " + fmt(out.residual) + " above tolerance " +
                                               fmt(policy.cook_tolerance) + " at |t| = " + fmt(std::abs(t)));
        }
        if (k != ModifierKind::none && k != ModifierKind::graf_v) {
            auto inc = modifier_phase(V, k, psi, t, next);
            acc = acc ? combine(*acc, *inc) : *inc;
        }
        t = next;
        State phi = free_stark(apply_optional(psi, acc, +1), t, policy.guard);
        double c = norm(cook_residual_state(V, k, phi, t, psi.boost)) / n0;
        out.trace.emplace_back(t, c);
        out.residual = c;
        ++out.probes;
        below = c < policy.cook_tolerance ? below + 1 : 0;
        if (below >= 2) break;
    }
    out.horizon = t;
    return out;
}

struct WaveOperatorResult {
    State state;
    double horizon = 0.0;
    double cook_residual = 0.0;
    PropagationReport report;
};

// e^{iTH} U(T) psi with T of the requested sign.
inline WaveOperatorResult wave_operator_apply(const State& psi, const PotentialSpec& V, int sign, ModifierKind k,
                                              const HorizonPolicy& policy) {
    check_modifier(V, k);
    WaveOperatorResult out;
    std::optional<double> fixed = sign > 0 ? policy.T_plus : policy.T_minus;
    if (fixed) {
        out.horizon = *fixed;
    } else {
        auto scan = cook_scan(V, k, psi, sign, policy);
        out.horizon = scan.horizon;
        out.cook_residual = scan.residual;
    }
    const double T = out.horizon;
    State phi = apply_optional(psi, modifier_phase(V, k, psi, 0.0, T), +1);
    phi = free_stark(std::move(phi), T, policy.guard);
    PropagationOptions popt;
    popt.guard = policy.guard;
    auto r = full_propagate(std::move(phi), V, T, 0.0, policy_dt(policy, V), popt);
    out.state = std::move(r.state);
    out.report = r.report;
    return out;
}

struct Horizons {
    double T_minus = 0.0;
    double T_plus = 0.0;
    double cook_minus = 0.0;
    double cook_plus = 0.0;
};

// Cook scans over every probe state; the horizons must serve all of them.
inline Horizons choose_horizons(const PotentialSpec& V, ModifierKind k, const std::vector<const State*>& probes,
                                const HorizonPolicy& policy) {
    Horizons h;
    h.T_minus = policy.T_minus.value_or(0.0);
    h.T_plus = policy.T_plus.value_or(0.0);
    for (const State* s : probes) {
        if (!policy.T_minus) {
            auto m = cook_scan(V, k, *s, -1, policy);
            if (m.horizon < h.T_minus) h.T_minus = m.horizon;
            h.cook_minus = std::max(h.cook_minus, m.residual);
        }
        if (!policy.T_plus) {
            auto p = cook_scan(V, k, *s, +1, policy);
            if (p.horizon > h.T_plus) h.T_plus = p.horizon;
            h.cook_plus = std::max(h.cook_plus, p.residual);
        }
    }
    if (policy.symmetric && !policy.T_minus && !policy.T_plus) {
        double T = std::max(-h.T_minus, h.T_plus);
        h.T_minus = -T;
        h.T_plus = T;
    }
    if (!(h.T_minus < 0.0 && h.T_plus > 0.0)) fail(ErrorCode::InvalidArgument, "horizons must satisfy T- < 0 < T+");
    return h;
}

struct SMatrixSample {
    std::string tag;
    State output;
    Horizons horizons;
    ModifierKind kind = ModifierKind::none;
    double unitarity_defect = 0.0;
    PropagationReport report;
};

// Finite-horizon S. The modifier factors at the horizons are completed by their exact
// tails where those converge (Graf scalar phase, Dollard phase of the s part), so the
// output approximates the true S for every kind except the long-range Dollard kinds,
// which produce S_D.
inline SMatrixSample smatrix_apply(const State& psi, const PotentialSpec& V, ModifierKind k, const Horizons& h,
                                   const HorizonPolicy& policy, std::string tag = {}) {
    check_modifier(V, k);
    constexpr double inf = std::numeric_limits<double>::infinity();
    SMatrixSample out;
    out.tag = std::move(tag);
    out.kind = k;
    out.horizons = h;
    const double Tm = h.T_minus, Tp = h.T_plus;
    const Vec k0 = psi.boost, c0 = psi.frame_center;

    State phi = psi;
    if (k == ModifierKind::graf_v) {
        detail::global_phase(phi, -graf_integral(V, k0, -inf, Tm));
    } else {
        if (modifies_l(k)) phi = apply_modifier(phi, dollard_phase(V, PartKind::l, psi, 0.0, Tm), +1);
        if (modifies_s_dollard(k)) phi = apply_modifier(phi, dollard_phase(V, PartKind::s, psi, -inf, Tm), +1);
    }
    phi = free_stark(std::move(phi), Tm, policy.guard);
    PropagationOptions popt;
    popt.guard = policy.guard;
    auto r = full_propagate(std::move(phi), V, Tm, Tp, policy_dt(policy, V), popt);
    out.report = r.report;
    phi = free_stark(std::move(r.state), -Tp, WindowGuard{policy.guard.band, 0.0, 0.0});
    // Undo accumulated rounding in the frame metadata; the group law returns it exactly.
    if (same_vec(phi.boost, k0, 1e-9)) phi.boost = k0;
    if (same_vec(phi.frame_center, c0, 1e-9)) phi.frame_center = c0;
    if (k == ModifierKind::graf_v) {
        detail::global_phase(phi, -graf_integral(V, k0, Tp, inf));
    } else {
        if (modifies_l(k)) phi = apply_modifier(phi, dollard_phase(V, PartKind::l, phi, 0.0, Tp), -1);
        if (modifies_s_dollard(k)) phi = apply_modifier(phi, dollard_phase(V, PartKind::s, phi, Tp, inf), +1);
    }
    out.unitarity_defect = std::abs(norm(phi) - norm(psi));
    out.output = std::move(phi);
    return out;
}

inline SMatrixSample smatrix_apply(const State& psi, const PotentialSpec& V, ModifierKind k,
                                   const HorizonPolicy& policy, std::string tag = {}) {
    auto h = choose_horizons(V, k, {&psi}, policy);
    return smatrix_apply(psi, V, k, h, policy, std::move(tag));
}

// The momentum-diagonal reference subtracted from S in the commutator: the Graf phase
// I_G (scalar), the full-line Dollard phase of the s part, or nothing.
inline State apply_reference(const State& psi, const PotentialSpec& V, ModifierKind k) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    State r = psi;
    if (k == ModifierKind::graf_v) {
        detail::global_phase(r, -graf_integral(V, psi.boost, -inf, inf));
    } else if (modifies_s_dollard(k)) {
        r = apply_modifier(r, dollard_phase(V, PartKind::s, psi, -inf, inf), +1);
    }
    return r;
}

struct FunctionalResult {
    cplx value{};
    cplx long_range_correction{};
    Vec v{};
    int j = 0;
    ModifierKind kind = ModifierKind::none;
    Horizons horizons;
    double unitarity_defect = 0.0;
    long steps = 0;
};

// |v| i [((S-R)(p_j-v_j)Phi_v, Psi_v) - ((S-R)Phi_v, (p_j-v_j)Psi_v)] with R the
// reference of the modifier kind. For the long-range kinds the known term
// |v| int i((d_j V^l) U_D(t) Phi_v, U_D(t) Psi_v) dt over the horizon is subtracted.
inline FunctionalResult commutator_functional(const PotentialSpec& V, const Vec& v, const State& phi0,
                                              const State& psi0, int j, ModifierKind k,
                                              const HorizonPolicy& policy = {}) {
    check_modifier(V, k);
    if (!is_admissible_direction(v)) fail(ErrorCode::DirectionInadmissible, "|v.e1| must be below |v|");
    if (j < 0 || j >= phi0.grid->dims()) fail(ErrorCode::InvalidArgument, "axis out of range");
    FunctionalResult out;
    out.v = v;
    out.j = j;
    out.kind = k;
    const double vmag = length(v);
    State phi_v = boost(phi0, v), psi_v = boost(reframe(psi0, phi0.frame_center), v);
    // (p_j - v_j) Phi_v = (p_j Phi_0)_v.
    auto p_minus_v = [&](const State& s) {
        return apply_momentum_function(s, [&](const Vec& p) { return cplx(p[j] - v[j]); });
    };
    State dphi = p_minus_v(phi_v), dpsi = p_minus_v(psi_v);
    out.horizons = choose_horizons(V, k, {&phi_v, &psi_v}, policy);

    std::vector<SMatrixSample> samples(2);
    const State* inputs[2] = {&dphi, &phi_v};
    parallel_for(2, [&](std::size_t i) {
        samples[i] = smatrix_apply(*inputs[i], V, k, out.horizons, policy, i == 0 ? "p_minus_v_phi" : "phi");
    });
    auto minus_reference = [&](const SMatrixSample& s, const State& in) {
        State r = s.output;
        State ref = apply_reference(in, V, k);
        for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] -= ref.values[i];
        return r;
    };
    State a = minus_reference(samples[0], dphi), b = minus_reference(samples[1], phi_v);
    const cplx I(0.0, 1.0);
    out.value = vmag * I * (inner(a, psi_v) - inner(b, dpsi));
    out.unitarity_defect = std::max(samples[0].unitarity_defect, samples[1].unitarity_defect);
    out.steps = samples[0].report.steps + samples[1].report.steps;

    if (modifies_l(k)) {
        // Quadrature of i((d_j V^l)(x) U_D(t) Phi_v, U_D(t) Psi_v) over [T-, T+].
        MultiIndex beta{0, 0, 0};
        beta[j] = 1;
        auto integrand = [&](double t) -> cplx {
            auto mphi = dollard_phase(V, PartKind::l, phi_v, 0.0, t);
            auto mpsi = dollard_phase(V, PartKind::l, psi_v, 0.0, t);
            State uf = free_stark(apply_modifier(phi_v, mphi, +1), t, WindowGuard{0.1, 0.0, 0.0});
            State ug = free_stark(apply_modifier(psi_v, mpsi, +1), t, WindowGuard{0.1, 0.0, 0.0});
            State dv = apply_multiplier(uf, [&](const Vec& x) { return cplx(V.l_part->jet(x).grad[j]); });
            return I * inner(dv, ug);
        };
        QuadratureOptions qo{1e-8 / std::max(1.0, vmag), 1e-8, 400};
        cplx corr = integrate_or_fail(integrand, out.horizons.T_minus, 0.0, qo, "long-range correction") +
                    integrate_or_fail(integrand, 0.0, out.horizons.T_plus, qo, "long-range correction");
        out.long_range_correction = vmag * corr;
        out.value -= out.long_range_correction;
    }
    return out;
}

inline CsvTable diagnostics_table(const std::vector<FunctionalResult>& rows) {
    CsvTable t;
    t.schema = "scattering_diagnostics";
    t.columns = {"v_mag", "vhat_1", "vhat_2", "j", "modifier", "T_plus", "T_minus", "cook_plus", "cook_minus",
                 "value_re", "value_im", "unitarity_defect"};
    for (const auto& r : rows) {
        double m = length(r.v);
        t.rows.push_back({fmt(m), fmt(r.v[0] / m), fmt(r.v[1] / m), fmt(r.j + 1), modifier_name(r.kind),
                          fmt(r.horizons.T_plus), fmt(r.horizons.T_minus), fmt(r.horizons.cook_plus),
                          fmt(r.horizons.cook_minus), fmt(r.value.real()), fmt(r.value.imag()),
                          fmt(r.unitarity_defect)});
    }
    return t;
}

}  // namespace starklab
