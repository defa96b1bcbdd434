#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "starklab/csv.hpp"
#include "starklab/errors.hpp"
#include "starklab/exponents.hpp"
#include "starklab/grid.hpp"
#include "starklab/parallel.hpp"
#include "starklab/potentials.hpp"
#include "starklab/propagators.hpp"
#include "starklab/quadrature.hpp"

namespace starklab {

enum class Propagation { free, dollard_l, dollard_s };

// What is subtracted from V_part(x): nothing, the scalar V_part(vt + e1 t^2/2) on the
// classical path, or the momentum multiplier V_part(pt - e1 t^2/2).
enum class Counterterm { none, scalar, momentum };

struct RateTarget {
    std::string id;
    std::string description;
    PartKind part = PartKind::s;
    Propagation propagation = Propagation::free;
    Counterterm counterterm = Counterterm::none;
    bool growth = false;  // fixed-time <x>^2 moment of the modifier instead of a time integral
};

inline const std::vector<RateTarget>& rate_targets() {
    static const std::vector<RateTarget> targets{
        {"vs_free", "int ||V^vs exp(-itH0) Phi_v|| dt", PartKind::vs, Propagation::free, Counterterm::none, false},
        {"s_graf_free", "int ||{V^s(x) - V^s(vt + e1 t^2/2)} exp(-itH0) Phi_v|| dt", PartKind::s, Propagation::free,
         Counterterm::scalar, false},
        {"growth_dollard_l", "||<x>^2 M_D,v(t) Phi_0||", PartKind::l, Propagation::dollard_l, Counterterm::none, true},
        {"vs_dollard_l", "int ||V^vs U_D(t) Phi_v|| dt", PartKind::vs, Propagation::dollard_l, Counterterm::none, false},
        {"s_graf_dollard_l", "int ||{V^s(x) - V^s(vt + e1 t^2/2)} U_D(t) Phi_v|| dt", PartKind::s,
         Propagation::dollard_l, Counterterm::scalar, false},
        {"l_dollard_l", "int ||{V^l(x) - V^l(pt - e1 t^2/2)} U_D(t) Phi_v|| dt", PartKind::l, Propagation::dollard_l,
         Counterterm::momentum, false},
        {"growth_dollard_s", "||<x>^2 M^s_D,v(t) Phi_0||", PartKind::s, Propagation::dollard_s, Counterterm::none, true},
        {"vs_dollard_s", "int ||V^vs U^s_D(t) Phi_v|| dt", PartKind::vs, Propagation::dollard_s, Counterterm::none, false},
        {"s_dollard_s", "int ||{V^s(x) - V^s(pt - e1 t^2/2)} U^s_D(t) Phi_v|| dt", PartKind::s, Propagation::dollard_s,
         Counterterm::momentum, false},
    };
    return targets;
}

inline const RateTarget& find_target(const std::string& id) {
    for (const auto& t : rate_targets())
        if (t.id == id) return t;
    fail(ErrorCode::InvalidArgument, "unknown rate target '" + id + "'");
}

// Decay exponent in |v| the estimates predict, assembled from the optimisation problems
// behind each estimate. Growth targets are compared as ratios to their envelope, so 0.
inline double predicted_exponent(const RateTarget& t, const PotentialSpec& V) {
    if (t.growth) return 0.0;
    if (t.part == PartKind::vs) return -1.0;
    auto worst = [](const std::vector<ExponentProblem>& ps, double floor) {
        double e = floor;
        for (const auto& p : ps) e = std::max(e, optimize_exponent(p).infimum);
        return e;
    };
    if (t.part == PartKind::l) return worst(problems::long_long(V.gamma_D), -std::numeric_limits<double>::infinity());
    if (t.counterterm == Counterterm::momentum) {
        if (!V.gamma2) fail(ErrorCode::ClassMismatch, t.id + " needs a declared gamma2");
        return worst(problems::smooth_short(Gammas{V.gamma0, V.gamma1, V.gamma2, std::nullopt}), -1.0);
    }
    return worst(problems::short_range(Gammas{V.gamma0, V.gamma1, std::nullopt, std::nullopt}), -1.0);
}

struct RateOptions {
    QuadratureOptions interior{1e-14, 1e-9, 4000};
    QuadratureOptions tail{1e-13, 1e-8, 4000};
    double horizon_start = 1.0;
    double horizon_limit = 256.0;
    // The far-field expansion is used once every form centre lies this many packet widths
    // plus form scales away from the packet mean.
    double far_ratio = 4.0;
    bool drop_counterterm = false;
    WindowGuard guard{};
};

namespace detail {

inline double form_scale(const GaussianForm& g) { return std::max({g.width[0], g.width[1], g.width[2]}); }
inline double form_scale(const PowerForm& p) { return p.scale; }
inline double form_scale(const AnisotropicPowerForm& a) { return std::max(a.scale_parallel, a.scale_perp); }

inline Vec form_center(const auto& f) { return f.center; }

inline void require_target_parts(const RateTarget& t, const PotentialSpec& V) {
    require_part(V, t.part);
    if (t.propagation == Propagation::dollard_l) require_part(V, PartKind::l);
    if (t.propagation == Propagation::dollard_s) {
        require_part(V, PartKind::s);
        if (!V.gamma2) fail(ErrorCode::ModifierMismatch, t.id + " needs a declared gamma2");
    }
}

inline PartKind phase_part(Propagation p) { return p == Propagation::dollard_l ? PartKind::l : PartKind::s; }

// Phi_v after the target's propagator has run for time t.
inline State evolve(const RateTarget& target, const PotentialSpec& V, const State& phi_v, double t,
                    const WindowGuard& guard) {
    if (target.propagation == Propagation::free) return free_stark(phi_v, t, guard);
    const auto phase = dollard_phase(V, phase_part(target.propagation), phi_v, 0.0, t);
    return free_stark(apply_modifier(phi_v, phase, 1), t, guard);
}

inline Vec classical_path(const Vec& v, double t) { return t * v + (0.5 * t * t) * e1; }

inline double integrand_on(const RateTarget& target, const PotentialSpec& V, const Vec& v, const State& psi, double t,
                           bool drop_counterterm) {
    const Part& part = *V.part(target.part);
    const State raw = apply_multiplier(psi, [&](const Vec& x) { return part.value(x); });
    const Counterterm c = drop_counterterm ? Counterterm::none : target.counterterm;
    if (c == Counterterm::none) return norm(raw);
    if (c == Counterterm::scalar) {
        const double shift = part.value(classical_path(v, t));
        return norm(apply_multiplier(psi, [&](const Vec& x) { return part.value(x) - shift; }));
    }
    const State mom = apply_momentum_function(psi, [&](const Vec& p) { return cplx(part.value(t * p - (0.5 * t * t) * e1)); });
    return distance(raw, mom);
}

// Low moments of a state for the far-field expansion: mean position and momentum,
// covariances, and the second moment of Y = x - (pt - e1 t^2/2), which free evolution
// conserves.
struct Moments {
    Vec mean{}, momentum{};
    std::array<Vec, 3> sxx{}, sxp{}, spp{}, yy{};
    double sigma = 0.0;  // sqrt of the largest position variance at the time taken
};

inline Moments moments(const State& psi, double t) {
    const Grid& g = *psi.grid;
    const int D = g.dims();
    const double n2 = norm_squared(psi);
    Moments m;
    m.mean = position_expectation(psi);
    m.momentum = momentum_expectation(psi);
    std::array<State, 3> X, P, Y;
    for (int i = 0; i < D; ++i) {
        const double mi = m.mean[i], ki = m.momentum[i];
        X[i] = apply_multiplier(psi, [&](const Vec& x) { return x[i] - mi; });
        P[i] = apply_momentum_function(psi, [&](const Vec& p) { return cplx(p[i] - ki); });
        const State px = apply_momentum_function(psi, [&](const Vec& p) { return cplx(t * p[i] - (i == 0 ? 0.5 * t * t : 0.0)); });
        State y = apply_multiplier(psi, [&](const Vec& x) { return x[i]; });
        for (std::size_t k = 0; k < y.values.size(); ++k) y.values[k] -= px.values[k];
        Y[i] = std::move(y);
    }
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) {
            m.sxx[i][j] = inner(X[i], X[j]).real() / n2;
            m.sxp[i][j] = inner(X[i], P[j]).real() / n2;
            m.spp[i][j] = inner(P[i], P[j]).real() / n2;
            m.yy[i][j] = inner(Y[i], Y[j]).real() / n2;
        }
    double var = 0.0;
    for (int i = 0; i < D; ++i) var = std::max(var, m.sxx[i][i]);
    m.sigma = std::sqrt(var);
    return m;
}

inline bool far_field(const Part& part, const Moments& m, double ratio) {
    for (const auto& f : part.terms) {
        const bool ok = std::visit(
            [&](const auto& form) { return length(m.mean - form_center(form)) >= ratio * (m.sigma + form_scale(form)); },
            f);
        if (!ok) return false;
    }
    return true;
}

// Integrand beyond the horizon from the moments at the horizon, to second order in the
// packet spread: E h(x) ~ h(m) + tr(hess h Sigma)/2 for multiplier targets and
// grad V . Q grad V for the momentum counterterm.
inline double tail_integrand(const RateTarget& target, const PotentialSpec& V, const Vec& v, const Moments& m,
                             double horizon, double t, bool drop_counterterm, int dims) {
    const Part& part = *V.part(target.part);
    const double tau = t - horizon;
    const Vec mean = m.mean + tau * m.momentum + (0.5 * tau * tau) * e1;
    const Jet J = part.jet(mean);
    const Counterterm c = drop_counterterm ? Counterterm::none : target.counterterm;
    double f2 = 0.0;
    if (c == Counterterm::momentum) {
        for (int i = 0; i < dims; ++i)
            for (int j = 0; j < dims; ++j) f2 += J.grad[i] * m.yy[i][j] * J.grad[j];
    } else {
        const double base = J.value - (c == Counterterm::scalar ? part.value(classical_path(v, t)) : 0.0);
        f2 = base * base;
        for (int i = 0; i < dims; ++i)
            for (int j = 0; j < dims; ++j) {
                const double cov = m.sxx[i][j] + tau * (m.sxp[i][j] + m.sxp[j][i]) + tau * tau * m.spp[i][j];
                f2 += (J.grad[i] * J.grad[j] + base * J.hess[i][j]) * cov;
            }
    }
    return std::sqrt(std::max(f2, 0.0));
}

}  // namespace detail

// The norm integrand at time t.
inline double remainder_integrand(const RateTarget& target, const PotentialSpec& V, const Vec& v, const State& phi0,
                              double t, const RateOptions& opt = {}) {
    if (target.growth) fail(ErrorCode::InvalidArgument, target.id + " is a fixed-time moment, not an integral");
    detail::require_target_parts(target, V);
    const State psi = detail::evolve(target, V, boost(phi0, v), t, opt.guard);
    return detail::integrand_on(target, V, v, psi, t, opt.drop_counterterm);
}

struct RemainderIntegral {
    double value = 0.0;
    double interior = 0.0;  // int over [-horizon_neg, horizon_pos] on the grid
    double tail = 0.0;      // far-field expansion beyond the horizons
    double horizon_neg = 0.0;
    double horizon_pos = 0.0;
    double error = 0.0;
    long evaluations = 0;
};

// Time integral of a target's norm integrand over the whole line. Each half-line is
// integrated on the grid up to a horizon where the packet has left every form by
// far_ratio widths; the remainder uses the far-field expansion, whose integrability is
// what the declared decay guarantees.
inline RemainderIntegral remainder_integral(const RateTarget& target, const PotentialSpec& V, const Vec& v,
                                    const State& phi0, const RateOptions& opt = {}) {
    if (target.growth) fail(ErrorCode::InvalidArgument, target.id + " is a fixed-time moment, not an integral");
    if (!is_admissible_direction(v)) fail(ErrorCode::DirectionInadmissible, "rate integrals need |v.e1| < |v|");
    RemainderIntegral out;
    if (!V.has(target.part)) return out;
    detail::require_target_parts(target, V);
    const Part& part = *V.part(target.part);
    const State phi_v = boost(phi0, v);
    const int D = phi0.grid->dims();

    auto f = [&](double t) {
        ++out.evaluations;
        return detail::integrand_on(target, V, v, detail::evolve(target, V, phi_v, t, opt.guard), t, opt.drop_counterterm);
    };

    for (int sign : {1, -1}) {
        double T = opt.horizon_start;
        detail::Moments m;
        for (;;) {
            try {
                m = detail::moments(detail::evolve(target, V, phi_v, sign * T, opt.guard), sign * T);
            } catch (const LabError& e) {
                if (e.code() != ErrorCode::WindowOverflow) throw;
                fail(ErrorCode::TailNotConverged, target.id + ": packet leaves the grid at t = " + fmt(sign * T) +
                                                      " before reaching the far field");
            }
            if (detail::far_field(part, m, opt.far_ratio)) break;
            T *= 2.0;
            if (T > opt.horizon_limit)
                fail(ErrorCode::TailNotConverged, target.id + ": no far field within |t| <= " + fmt(opt.horizon_limit));
        }
        const auto in = sign > 0 ? integrate(f, 0.0, T, opt.interior) : integrate(f, -T, 0.0, opt.interior);
        if (!in.converged) fail(ErrorCode::QuadratureFailure, target.id + ": interior time quadrature did not converge");
        // In log time t = sign T e^s a power-law tail decays exponentially in s.
        auto g = [&](double s) {
            const double t = sign * T * std::exp(s);
            if (std::abs(t) > 1e100) return 0.0;
            const double y = std::abs(t) * detail::tail_integrand(target, V, v, m, sign * T, t, opt.drop_counterterm, D);
            return std::isfinite(y) ? y : 0.0;
        };
        // A tail that does not decay in log time is a non-integrable power law; the
        // cutoff above would otherwise hide it.
        const double g_mid = g(30.0), g_far = g(60.0);
        if (g_far > 0.0 && g_far >= g_mid)
            fail(ErrorCode::TailNotConverged, target.id + ": far-field integrand does not decay");
        const auto tail = integrate(g, 0.0, std::numeric_limits<double>::infinity(), opt.tail);
        if (!tail.converged || !std::isfinite(tail.value))
            fail(ErrorCode::TailNotConverged, target.id + ": far-field tail integral does not converge");
        out.interior += in.value;
        out.tail += tail.value;
        out.error += in.error + tail.error;
        (sign > 0 ? out.horizon_pos : out.horizon_neg) = T;
    }
    out.value = out.interior + out.tail;
    return out;
}

// ||<x>^2 M Phi_v|| with M the target's Dollard modifier over [0, t]. Since M is a
// momentum multiplier, this equals the moment of the unboosted conjugate acting on Phi_0.
inline double growth_moment(const RateTarget& target, const PotentialSpec& V, const Vec& v, const State& phi0,
                            double t) {
    if (!target.growth) fail(ErrorCode::InvalidArgument, target.id + " is not a growth target");
    detail::require_target_parts(target, V);
    const State phi_v = boost(phi0, v);
    const auto phase = dollard_phase(V, detail::phase_part(target.propagation), phi_v, 0.0, t);
    return norm(apply_multiplier(apply_modifier(phi_v, phase, 1), [](const Vec& x) { return 1.0 + norm2(x); }));
}

// Polynomial envelope of the growth estimate with C = 1. Each term |v|^{-a nu} |t|^{b - a(2 - nu)}
// is monotone in nu, so its best interpolation parameter sits at an endpoint.
inline double growth_envelope(const RateTarget& target, const PotentialSpec& V, double speed, double t) {
    if (!target.growth) fail(ErrorCode::InvalidArgument, target.id + " is not a growth target");
    const double at = std::abs(t);
    auto term = [&](double a, double b, bool exclude_zero) {
        auto at_nu = [&](double nu) { return std::pow(speed, -a * nu) * std::pow(at, b - a * (2.0 - nu)); };
        return exclude_zero ? at_nu(1.0) : std::min(at_nu(0.0), at_nu(1.0));
    };
    if (at == 0.0) return 1.0;
    if (target.propagation == Propagation::dollard_l) {
        const double g = V.gamma_D;
        return 1.0 + term(2.0 * g + 1.0, 4.0, false) + term(g + 1.0, 3.0, false) + term(g + 0.5, 2.0, false);
    }
    const double g2 = V.gamma2.value_or(0.0);
    if (g2 > 1.5) return 1.0;
    return 1.0 + term(g2, 3.0, g2 == 1.5);
}

// growth_moment(t) / (C envelope(t)) with C fixed by t = 0, where the envelope is 1.
inline double growth_ratio(const RateTarget& target, const PotentialSpec& V, const Vec& v, const State& phi0,
                           double t) {
    const double c = growth_moment(target, V, v, phi0, 0.0);
    return growth_moment(target, V, v, phi0, t) / (c * growth_envelope(target, V, length(v), t));
}

struct RateFit {
    std::string target;
    std::string gammas;
    std::vector<double> speeds;
    std::vector<double> values;
    double slope = 0.0;
    double half_width = 0.0;
    double predicted = 0.0;
    bool pass = false;
};

inline std::string gamma_label(const RateTarget& t, const PotentialSpec& V) {
    std::ostringstream s;
    if (t.part == PartKind::vs) s << "gamma_vs=" << fmt(V.gamma_vs);
    if (t.part == PartKind::s || t.propagation == Propagation::dollard_s)
        s << "gamma0=" << fmt(V.gamma0) << ";gamma1=" << fmt(V.gamma1);
    if (V.gamma2 && t.propagation == Propagation::dollard_s) s << ";gamma2=" << fmt(*V.gamma2);
    if (t.propagation == Propagation::dollard_l || t.part == PartKind::l)
        s << (s.tellp() > 0 ? ";" : "") << "gamma_D=" << fmt(V.gamma_D);
    return s.str();
}

inline void check_schedule(const std::vector<double>& speeds) {
    if (speeds.size() < 4) fail(ErrorCode::InvalidArgument, "a rate fit needs at least 4 speeds");
    for (std::size_t i = 0; i < speeds.size(); ++i) {
        if (!(speeds[i] > 0.0)) fail(ErrorCode::InvalidArgument, "speeds must be positive");
        if (i > 0 && !(speeds[i] > speeds[i - 1])) fail(ErrorCode::InvalidArgument, "speeds must increase");
    }
    const double r = speeds[1] / speeds[0];
    for (std::size_t i = 2; i < speeds.size(); ++i)
        if (std::abs(speeds[i] / speeds[i - 1] - r) > 1e-9 * r)
            fail(ErrorCode::InvalidArgument, "speed schedule must be geometric");
    if (speeds.back() / speeds.front() < 8.0 - 1e-12) fail(ErrorCode::InvalidArgument, "speeds must span a factor of 8");
}

// Least-squares slope of log value against log |v|, with a 95% Student-t half-width from
// the residuals. Pass is one-sided: slope <= predicted + margin.
inline RateFit fit_rate(const std::vector<double>& speeds, const std::vector<double>& values, double predicted,
                        double margin = 0.2) {
    check_schedule(speeds);
    if (values.size() != speeds.size()) fail(ErrorCode::InvalidArgument, "one value per speed");
    const std::size_t n = speeds.size();
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(values[i] > 0.0)) fail(ErrorCode::InvalidArgument, "rate fits need positive values");
        x[i] = std::log(speeds[i]);
        y[i] = std::log(values[i]);
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    RateFit r;
    r.speeds = speeds;
    r.values = values;
    r.slope = sxy / sxx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) ssr += std::pow(y[i] - my - r.slope * (x[i] - mx), 2);
    const boost::math::students_t dist(static_cast<double>(n - 2));
    r.half_width = boost::math::quantile(boost::math::complement(dist, 0.025)) * std::sqrt(ssr / (n - 2) / sxx);
    r.predicted = predicted;
    r.pass = r.slope <= predicted + margin;
    return r;
}

struct SweepOptions {
    RateOptions rate{};
    double growth_time = 4.0;
    double margin = 0.2;
};

// Integrals (or envelope ratios at growth_time, for growth targets) along v = |v| vhat.
inline RateFit rate_sweep(const RateTarget& target, const PotentialSpec& V, const std::vector<double>& speeds,
                          const Vec& vhat, const State& phi0, const SweepOptions& opt = {}) {
    check_schedule(speeds);
    if (std::abs(length(vhat) - 1.0) > 1e-9) fail(ErrorCode::InvalidArgument, "vhat must be a unit vector");
    std::vector<double> values(speeds.size());
    parallel_for(speeds.size(), [&](std::size_t i) {
        const Vec v = speeds[i] * vhat;
        values[i] = target.growth ? growth_ratio(target, V, v, phi0, opt.growth_time)
                                  : remainder_integral(target, V, v, phi0, opt.rate).value;
    });
    RateFit r = fit_rate(speeds, values, predicted_exponent(target, V), opt.margin);
    // A growth envelope is a pointwise bound with a |v|-uniform constant: any overshoot of
    // the t = 0 calibration must not grow along the schedule.
    if (target.growth) {
        r.pass = true;
        for (std::size_t i = 1; i < values.size(); ++i)
            r.pass = r.pass && std::max(values[i] - 1.0, 0.0) <= std::max(values[i - 1] - 1.0, 0.0);
    }
    r.target = target.id;
    r.gammas = gamma_label(target, V);
    return r;
}

struct RateReport {
    CsvTable table;
    std::string summary;
    bool all_pass = true;
};

inline RateReport report(const std::vector<RateFit>& fits) {
    if (fits.empty()) fail(ErrorCode::EmptyReport, "no rate fits to report");
    RateReport out;
    out.table.schema = "rate_fits";
    out.table.columns = {"target", "gammas", "speeds", "values", "slope", "half_width", "predicted", "verdict"};
    std::ostringstream s;
    int passed = 0;
    for (const auto& f : fits) {
        std::string speeds, values;
        for (std::size_t i = 0; i < f.speeds.size(); ++i) {
            speeds += (i ? ";" : "") + fmt(f.speeds[i]);
            values += (i ? ";" : "") + fmt(f.values[i]);
        }
        out.table.rows.push_back(
            {f.target, f.gammas, speeds, values, fmt(f.slope), fmt(f.half_width), fmt(f.predicted), fmt(f.pass)});
        out.all_pass = out.all_pass && f.pass;
        passed += f.pass;
        char line[256];
        const bool growth = !f.target.empty() && find_target(f.target).growth;
        if (growth)
            std::snprintf(line, sizeof line, "%s %-18s envelope ratio max %.3f over the schedule  [%s]\n",
                          f.pass ? "PASS" : "FAIL", f.target.c_str(), *std::max_element(f.values.begin(), f.values.end()),
                          f.gammas.c_str());
        else
            std::snprintf(line, sizeof line, "%s %-18s slope %+.3f +- %.3f  predicted %+.3f  [%s]\n",
                          f.pass ? "PASS" : "FAIL", f.target.c_str(), f.slope, f.half_width, f.predicted, f.gammas.c_str());
        s << line;
    }
    s << passed << " of " << fits.size() << " fits pass\n";
    out.summary = s.str();
    return out;
}

}  // namespace starklab
