#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "starklab/csv.hpp"
#include "starklab/errors.hpp"
#include "starklab/grid.hpp"

namespace starklab {

// Lower bounds for |x + v t + e1 t^2/2| along the accelerated trajectory when
// delta = |v.e1|/|v| < 1. The shifted pair covers windows |x| <= lambda |v| |t|.
struct TrajectoryBound {
    double delta = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double c1_unshifted = 0.0;
    double c2_unshifted = 0.0;
};

inline TrajectoryBound make_trajectory_bound(double delta) {
    if (!(delta >= 0.0 && delta < 1.0)) fail(ErrorCode::DeltaOutOfRange, "delta must lie in [0, 1), got " + fmt(delta));
    TrajectoryBound b;
    b.delta = delta;
    const double r = std::sqrt(1.0 - delta * delta);
    b.c1 = std::sqrt(2.0) * r / 2.0;
    b.c2 = std::sqrt(2.0) * r / (3.0 + delta);
    b.c1_unshifted = r;
    b.c2_unshifted = r / 2.0;
    return b;
}

// max{sqrt(1-delta^2)|v||t|, sqrt(1-delta^2) t^2/2}. Both follow from
// |vt + e1 t^2/2|^2 = t^2(|t| - 2 delta |v|)^2/4 + (1-delta^2)|v|^2 t^2 in the worst sign.
inline double trajectory_lower_bound(double v_mag, double t, double delta) {
    auto b = make_trajectory_bound(delta);
    return std::max(b.c1_unshifted * v_mag * std::abs(t), b.c2_unshifted * t * t);
}

inline double trajectory_lower_bound(const Vec& v, double t) {
    double n = length(v);
    double delta = n > 0.0 ? std::abs(v[0]) / n : 0.0;
    return trajectory_lower_bound(n, t, delta);
}

// c1^nu c2^(1-nu) |v|^nu |t|^(2-nu): geometric interpolation between the two bounds.
inline double interpolated_bound(double v_mag, double t, double nu, double c1, double c2) {
    if (!(nu >= 0.0 && nu <= 1.0)) fail(ErrorCode::InvalidArgument, "nu must lie in [0, 1]");
    return std::pow(c1, nu) * std::pow(c2, 1.0 - nu) * std::pow(v_mag, nu) * std::pow(std::abs(t), 2.0 - nu);
}

// Objective over (nu_a, nu_b) in [0,1]^2 subject to a nu_a + b nu_b < c (strict unless
// the box edge binds first). One-parameter problems use b = 0 and ignore nu_b.
struct ExponentProblem {
    std::string id;
    std::string description;
    std::function<double(double, double)> objective;
    double a = 1.0;
    double b = 0.0;
    double c = 1.0;
    std::optional<double> expected;

    bool two_parameter() const { return b != 0.0; }
};

struct ExponentResult {
    std::string id;
    double infimum = 0.0;
    double nu_a = 0.0;
    double nu_b = 0.0;
    bool boundary = false;
    bool empty_feasible = false;
    std::optional<double> expected;
    double deviation = 0.0;
};

inline constexpr double kBoundaryGap = 1e-9;

namespace detail {

template <class F>
std::pair<double, double> scan_and_refine(F f, double lo, double hi, int samples = 2001) {
    if (hi <= lo) return {lo, f(lo)};
    int best = 0;
    double best_val = f(lo);
    for (int i = 1; i < samples; ++i) {
        double x = lo + (hi - lo) * i / (samples - 1);
        double y = f(x);
        if (y < best_val) {
            best_val = y;
            best = i;
        }
    }
    double step = (hi - lo) / (samples - 1);
    double l = std::max(lo, lo + (best - 1) * step), r = std::min(hi, lo + (best + 1) * step);
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = r - g * (r - l), x2 = l + g * (r - l);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 200 && r - l > 1e-14; ++it) {
        if (f1 < f2) {
            r = x2;
            x2 = x1;
            f2 = f1;
            x1 = r - g * (r - l);
            f1 = f(x1);
        } else {
            l = x1;
            x1 = x2;
            f1 = f2;
            x2 = l + g * (r - l);
            f2 = f(x2);
        }
    }
    double xm = 0.5 * (l + r);
    double candidates[] = {lo + best * step, xm, lo, hi};
    double bx = xm, bv = f(xm);
    for (double x : candidates) {
        double y = f(x);
        if (y < bv) {
            bv = y;
            bx = x;
        }
    }
    return {bx, bv};
}

}  // namespace detail

// Numeric infimum by dense scan and golden-section refinement. An open constraint is
// evaluated kBoundaryGap inside its boundary and flagged, since the infimum is not attained.
inline ExponentResult optimize_exponent(const ExponentProblem& p) {
    ExponentResult r;
    r.id = p.id;
    r.expected = p.expected;
    if (!(p.c > 0.0) || !(p.a > 0.0)) {
        r.empty_feasible = true;
        r.infimum = 0.0;
        if (p.expected) r.deviation = std::abs(r.infimum - *p.expected);
        return r;
    }
    if (!p.two_parameter()) {
        double open_edge = p.c / p.a;
        double hi = open_edge > 1.0 ? 1.0 : open_edge - kBoundaryGap;
        r.boundary = open_edge <= 1.0;
        auto [x, y] = detail::scan_and_refine([&](double nu) { return p.objective(nu, 0.0); }, 0.0, std::max(0.0, hi));
        r.nu_a = x;
        r.infimum = y;
        r.boundary = r.boundary && std::abs(x - hi) < 1e-6;
    } else {
        // Interior scan of the feasible region, then the constraint line a nu_a + b nu_b =
        // c - gap where the objective is smallest for monotone decreasing objectives.
        double best = std::numeric_limits<double>::infinity();
        const int n = 201;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double na = double(i) / (n - 1), nb = double(j) / (n - 1);
                if (p.a * na + p.b * nb >= p.c) continue;
                double y = p.objective(na, nb);
                if (y < best) {
                    best = y;
                    r.nu_a = na;
                    r.nu_b = nb;
                }
            }
        const double cc = p.c - kBoundaryGap;
        double lo = std::max(0.0, (cc - p.a) / p.b), hi = std::min(1.0, cc / p.b);
        if (lo <= hi) {
            auto on_line = [&](double nb) { return p.objective((cc - p.b * nb) / p.a, nb); };
            auto [x, y] = detail::scan_and_refine(on_line, lo, hi);
            if (y <= best) {
                best = y;
                r.nu_b = x;
                r.nu_a = (cc - p.b * x) / p.a;
                r.boundary = true;
            }
        }
        r.infimum = best;
    }
    if (p.expected) r.deviation = std::abs(r.infimum - *p.expected);
    return r;
}

// Decay exponents of a potential class. gamma2 and gamma_D are optional because the
// short-range scenarios do not use them.
struct Gammas {
    double gamma0 = 1.0;
    double gamma1 = 2.0;
    std::optional<double> gamma2 = std::nullopt;
    std::optional<double> gamma_D = std::nullopt;
};

enum class Scenario { short_range, long_range, smooth_short, smooth_long };

inline std::string scenario_name(Scenario s) {
    switch (s) {
        case Scenario::short_range: return "short";
        case Scenario::long_range: return "long";
        case Scenario::smooth_short: return "smooth_short";
        case Scenario::smooth_long: return "smooth_long";
    }
    return "?";
}

inline Scenario parse_scenario(const std::string& s) {
    if (s == "short") return Scenario::short_range;
    if (s == "long") return Scenario::long_range;
    if (s == "smooth_short") return Scenario::smooth_short;
    if (s == "smooth_long") return Scenario::smooth_long;
    fail(ErrorCode::InvalidArgument, "unknown scenario '" + s + "'");
}

inline void check_gamma_windows(const Gammas& g, Scenario s) {
    auto bad = [](const std::string& what) { fail(ErrorCode::ClassMismatch, what); };
    if (!(g.gamma0 > 0.5 && g.gamma0 <= 1.0)) bad("gamma0 outside (1/2, 1]");
    if (!(g.gamma1 > 1.0 && g.gamma1 <= 1.0 + g.gamma0)) bad("gamma1 outside (1, 1 + gamma0]");
    bool needs_l = s == Scenario::long_range || s == Scenario::smooth_long;
    bool needs_2 = s == Scenario::smooth_short || s == Scenario::smooth_long;
    if (needs_l && !g.gamma_D) bad("scenario " + scenario_name(s) + " needs gamma_D");
    if (needs_2 && !g.gamma2) bad("scenario " + scenario_name(s) + " needs gamma2");
    if (g.gamma_D && !(*g.gamma_D > 0.25 && *g.gamma_D <= 0.5)) bad("gamma_D outside (1/4, 1/2]");
    if (g.gamma2 && !(*g.gamma2 > 1.0 && *g.gamma2 <= g.gamma1 + 1.0)) bad("gamma2 outside (1, gamma1 + 1]");
}

// The optimisation problems behind the remainder estimates, grouped by the estimate
// they feed. Each carries its closed-form infimum.
namespace problems {

inline double ratio(double nu) { return nu / (2.0 - nu); }

inline ExponentProblem one(std::string id, std::string desc, std::function<double(double)> f, double c,
                           double expected) {
    return {std::move(id), std::move(desc), [f](double nu, double) { return f(nu); }, 1.0, 0.0, c, expected};
}

inline std::vector<ExponentProblem> short_range(const Gammas& g) {
    const double g0 = g.gamma0, g1 = g.gamma1;
    return {
        one("position_moment", "-nu/(2-nu), nu < 2-1/gamma1", [](double nu) { return -ratio(nu); }, 2.0 - 1.0 / g1, -1.0),
        one("first_order", "-2nu/(2-nu), nu < 2-2/gamma1", [](double nu) { return -2.0 * ratio(nu); }, 2.0 - 2.0 / g1,
            -2.0 * (g1 - 1.0)),
        one("first_order_moment", "-1-nu/(2-nu), nu < 2-1/gamma0", [](double nu) { return -1.0 - ratio(nu); },
            2.0 - 1.0 / g0, -2.0 * g0),
    };
}

inline std::vector<ExponentProblem> dollard_remainder(double gD) {
    return {
        one("dollard_linear_a", "-3+4gD-2(2gD+1)nu, nu < 2-3/(2gD+1)",
            [gD](double nu) { return -3.0 + 4.0 * gD - 2.0 * (2.0 * gD + 1.0) * nu; }, 2.0 - 3.0 / (2.0 * gD + 1.0),
            -1.0 - 4.0 * gD),
        one("dollard_linear_b", "-2+2gD-2(gD+1)nu, nu < 2-2/(gD+1)",
            [gD](double nu) { return -2.0 + 2.0 * gD - 2.0 * (gD + 1.0) * nu; }, 2.0 - 2.0 / (gD + 1.0),
            -2.0 - 2.0 * gD),
        one("dollard_linear_c", "-2+2gD-2(gD+1/2)nu, nu < 2-1/(gD+1/2)",
            [gD](double nu) { return -2.0 + 2.0 * gD - 2.0 * (gD + 0.5) * nu; }, 2.0 - 1.0 / (gD + 0.5),
            -2.0 - 2.0 * gD),
    };
}

// Objective pair shared by the mixed short/long and long/long products.
inline double mixed_first(double h, double nu_a, double nu_b) {
    return -h * nu_b - (3.0 - h * (2.0 - nu_b)) * ratio(nu_a);
}
inline double mixed_second(double h, double nu_a, double nu_b) {
    return -1.0 - h * nu_b - (2.0 - h * (2.0 - nu_b)) * ratio(nu_a);
}

inline std::vector<ExponentProblem> mixed_short_long(const Gammas& g) {
    const double gD = *g.gamma_D, h = gD + 0.5, g0 = g.gamma0, g1 = g.gamma1;
    return {
        {"mixed_first", "gamma1 nu1 + (gD+1/2) nu3 < 2((gamma1-1)+gD)",
         [h](double a, double b) { return mixed_first(h, a, b); }, g1, h, 2.0 * ((g1 - 1.0) + gD),
         -2.0 * ((g1 - 1.0) + gD)},
        {"mixed_moment", "gamma0 nu2 + (gD+1/2) nu4 < 2(gamma0+gD)-1",
         [h](double a, double b) { return mixed_second(h, a, b); }, g0, h, 2.0 * (g0 + gD) - 1.0, -2.0 * (g0 + gD)},
    };
}

inline std::vector<ExponentProblem> long_long(double gD) {
    const double h = gD + 0.5;
    return {
        one("long_position_moment", "-nu/(2-nu), nu < 2-1/(gD+1/2)", [](double nu) { return -ratio(nu); },
            2.0 - 1.0 / h, -2.0 * gD),
        {"long_first", "(gD+1/2)(nu1+nu3) < 4gD-1", [h](double a, double b) { return mixed_first(h, a, b); }, h, h,
         4.0 * gD - 1.0, -(4.0 * gD - 1.0)},
        {"long_moment", "gD nu2 + (gD+1/2) nu4 < 4gD-1", [h](double a, double b) { return mixed_second(h, a, b); }, gD,
         h, 4.0 * gD - 1.0, -4.0 * gD},
        one("long_first_order", "-2nu/(2-nu), nu < 2-2/(gD+1)", [](double nu) { return -2.0 * ratio(nu); },
            2.0 - 2.0 / (gD + 1.0), -2.0 * gD),
        one("long_first_order_moment", "-1-nu/(2-nu), nu < 2-1/(gD+1/2)", [](double nu) { return -1.0 - ratio(nu); },
            2.0 - 1.0 / h, -1.0 - 2.0 * gD),
    };
}

// The interpolated smooth bounds are needed only for gamma2 < 3/2. Above that the time
// integrals converge at nu = 0, both terms are O(|v|^-1) and the -1 floor of the
// position moment already covers them.
inline std::vector<ExponentProblem> smooth_short(const Gammas& g) {
    const double g2 = *g.gamma2;
    std::vector<ExponentProblem> out{
        one("position_moment", "-nu/(2-nu) on [0,1]", [](double nu) { return -ratio(nu); }, 2.0 - 1.0 / g2, -1.0)};
    if (g2 < 1.5) {
        out.push_back(one("second_order", "-gamma2 nu - (4 - gamma2(2-nu)), nu < 2-2/gamma2",
                          [g2](double nu) { return -g2 * nu - (4.0 - g2 * (2.0 - nu)); }, 2.0 - 2.0 / g2, -2.0 * g2));
        out.push_back(one("smooth_first_order", "-2nu/(2-nu), nu < 2-2/gamma2", [](double nu) { return -2.0 * ratio(nu); },
                          2.0 - 2.0 / g2, -2.0 * (g2 - 1.0)));
    }
    return out;
}

}  // namespace problems

inline std::vector<ExponentProblem> scenario_problems(const Gammas& g, Scenario s) {
    check_gamma_windows(g, s);
    std::vector<ExponentProblem> out;
    auto add = [&](std::vector<ExponentProblem> v) { out.insert(out.end(), v.begin(), v.end()); };
    switch (s) {
        case Scenario::short_range: add(problems::short_range(g)); break;
        case Scenario::long_range:
            add(problems::short_range(g));
            add(problems::dollard_remainder(*g.gamma_D));
            add(problems::mixed_short_long(g));
            add(problems::long_long(*g.gamma_D));
            break;
        case Scenario::smooth_short: add(problems::smooth_short(g)); break;
        case Scenario::smooth_long:
            add(problems::smooth_short(g));
            add(problems::mixed_short_long(g));
            add(problems::long_long(*g.gamma_D));
            break;
    }
    return out;
}

// Closed forms of the remainder exponent at epsilon = 0.
inline double remainder_closed_form(const Gammas& g, Scenario s) {
    check_gamma_windows(g, s);
    switch (s) {
        case Scenario::short_range: return std::max(-1.0, 5.0 - 4.0 * g.gamma1);
        case Scenario::long_range: return std::max({-1.0, 5.0 - 4.0 * g.gamma1, 3.0 - 8.0 * *g.gamma_D});
        case Scenario::smooth_short: return std::max(-1.0, 5.0 - 4.0 * *g.gamma2);
        case Scenario::smooth_long:
            return std::max({-1.0, 5.0 - 4.0 * *g.gamma2, 5.0 - 4.0 * (g.gamma1 + *g.gamma_D), 3.0 - 8.0 * *g.gamma_D});
    }
    return 0.0;
}

struct RemainderPrediction {
    Scenario scenario = Scenario::short_range;
    double exponent = 0.0;       // 1 + 2 max(numeric infima)
    double closed_form = 0.0;
    bool pass = false;           // exponent < 0: the reconstruction limit holds
    std::vector<ExponentResult> parts;
};

// The commutator remainder is |v| times the square of the time-integrated estimates,
// so its exponent is 1 + 2 max over the time-integrated bound exponents.
inline RemainderPrediction remainder_exponent(const Gammas& g, Scenario s) {
    RemainderPrediction r;
    r.scenario = s;
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& p : scenario_problems(g, s)) {
        auto res = optimize_exponent(p);
        worst = std::max(worst, res.infimum);
        r.parts.push_back(std::move(res));
    }
    r.exponent = 1.0 + 2.0 * worst;
    r.closed_form = remainder_closed_form(g, s);
    r.pass = r.closed_form < 0.0;
    return r;
}

// verdict: the numeric optimum reproduces the closed form within tolerance.
// limit_holds: the remainder exponent is negative, so the reconstruction limit exists.
inline CsvTable exponent_table(const std::vector<Gammas>& grid, const std::vector<Scenario>& scenarios,
                               double tolerance = 1e-6) {
    CsvTable t;
    t.schema = "exponent_table";
    t.columns = {"scenario", "gamma0",    "gamma1",    "gamma2",      "gamma_D", "numeric_exponent",
                 "closed_form", "deviation", "limit_holds", "verdict"};
    auto opt = [](const std::optional<double>& x) { return x ? fmt(*x) : std::string(); };
    for (const auto& g : grid)
        for (auto s : scenarios) {
            auto r = remainder_exponent(g, s);
            const double dev = std::abs(r.exponent - r.closed_form);
            t.rows.push_back({scenario_name(s), fmt(g.gamma0), fmt(g.gamma1), opt(g.gamma2), opt(g.gamma_D),
                              fmt(r.exponent), fmt(r.closed_form), fmt(dev), r.pass ? "yes" : "no",
                              fmt(dev <= tolerance)});
        }
    return t;
}

}  // namespace starklab
