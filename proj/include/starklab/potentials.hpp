#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "starklab/errors.hpp"
#include "starklab/grid.hpp"

namespace starklab {

// lambda * exp(-sum_i ((x_i - a_i)/w_i)^2); widths per axis make it anisotropic.
struct GaussianForm {
    double amplitude = 1.0;
    Vec center{};
    Vec width{1.0, 1.0, 1.0};
};

// lambda * <(x - a)/s>^(-gamma), <y> = sqrt(1 + |y|^2).
struct PowerForm {
    double amplitude = 1.0;
    Vec center{};
    double scale = 1.0;
    double exponent = 1.0;
};

// lambda * <(x_1 - a_1)/s_par>^(-gamma_par) * <(x_perp - a_perp)/s_perp>^(-gamma_perp).
// The factorised shape singles out the field axis e_1.
struct AnisotropicPowerForm {
    double amplitude = 1.0;
    Vec center{};
    double scale_parallel = 1.0;
    double scale_perp = 1.0;
    double exponent_parallel = 1.0;
    double exponent_perp = 1.0;
};

using Form = std::variant<GaussianForm, PowerForm, AnisotropicPowerForm>;

// Value, gradient and Hessian at a point.
struct Jet {
    double value = 0.0;
    Vec grad{};
    std::array<Vec, 3> hess{};

    Jet& operator+=(const Jet& o) {
        value += o.value;
        for (int i = 0; i < 3; ++i) {
            grad[i] += o.grad[i];
            for (int j = 0; j < 3; ++j) hess[i][j] += o.hess[i][j];
        }
        return *this;
    }
};

namespace detail {

// Jet of lambda*(1 + |d|^2/s^2)^(-gamma/2) over the axes selected by mask.
inline Jet bracket_power_jet(double lambda, const Vec& d, double s, double gamma, const std::array<bool, 3>& mask) {
    double r2 = 0.0;
    for (int i = 0; i < 3; ++i)
        if (mask[i]) r2 += d[i] * d[i];
    double w = 1.0 + r2 / (s * s);
    double f = lambda * std::pow(w, -0.5 * gamma);
    Jet j;
    j.value = f;
    double c = -gamma / (s * s * w);
    for (int i = 0; i < 3; ++i) {
        if (!mask[i]) continue;
        j.grad[i] = c * d[i] * f;
        for (int k = 0; k < 3; ++k) {
            if (!mask[k]) continue;
            double delta = i == k ? 1.0 : 0.0;
            j.hess[i][k] = c * f * (delta - (gamma + 2.0) * d[i] * d[k] / (s * s * w));
        }
    }
    return j;
}

inline Jet form_jet(const GaussianForm& g, const Vec& x) {
    Vec u{};
    double q = 0.0;
    for (int i = 0; i < 3; ++i) {
        u[i] = (x[i] - g.center[i]) / g.width[i];
        q += u[i] * u[i];
    }
    double f = g.amplitude * std::exp(-q);
    Jet j;
    j.value = f;
    for (int i = 0; i < 3; ++i) {
        j.grad[i] = -2.0 * u[i] / g.width[i] * f;
        for (int k = 0; k < 3; ++k) {
            double delta = i == k ? 2.0 / (g.width[i] * g.width[i]) : 0.0;
            j.hess[i][k] = (4.0 * u[i] * u[k] / (g.width[i] * g.width[k]) - delta) * f;
        }
    }
    return j;
}

inline Jet form_jet(const PowerForm& p, const Vec& x) {
    return bracket_power_jet(p.amplitude, x - p.center, p.scale, p.exponent, {true, true, true});
}

inline Jet form_jet(const AnisotropicPowerForm& a, const Vec& x) {
    Vec d = x - a.center;
    Jet par = bracket_power_jet(1.0, d, a.scale_parallel, a.exponent_parallel, {true, false, false});
    Jet perp = bracket_power_jet(1.0, d, a.scale_perp, a.exponent_perp, {false, true, true});
    Jet j;
    j.value = a.amplitude * par.value * perp.value;
    for (int i = 0; i < 3; ++i) {
        j.grad[i] = a.amplitude * (par.grad[i] * perp.value + par.value * perp.grad[i]);
        for (int k = 0; k < 3; ++k) {
            j.hess[i][k] = a.amplitude * (par.hess[i][k] * perp.value + par.grad[i] * perp.grad[k] +
                                          perp.grad[i] * par.grad[k] + par.value * perp.hess[i][k]);
        }
    }
    return j;
}

inline double form_value(const GaussianForm& g, const Vec& x) {
    double q = 0.0;
    for (int i = 0; i < 3; ++i) {
        double u = (x[i] - g.center[i]) / g.width[i];
        q += u * u;
    }
    return g.amplitude * std::exp(-q);
}

inline double form_value(const PowerForm& p, const Vec& x) {
    return p.amplitude * std::pow(1.0 + norm2(x - p.center) / (p.scale * p.scale), -0.5 * p.exponent);
}

inline double form_value(const AnisotropicPowerForm& a, const Vec& x) {
    Vec d = x - a.center;
    double par = 1.0 + d[0] * d[0] / (a.scale_parallel * a.scale_parallel);
    double perp = 1.0 + (d[1] * d[1] + d[2] * d[2]) / (a.scale_perp * a.scale_perp);
    return a.amplitude * std::pow(par, -0.5 * a.exponent_parallel) * std::pow(perp, -0.5 * a.exponent_perp);
}

// Gradient alone; the hot path of line integrals over packet grids.
inline Vec form_gradient(const GaussianForm& g, const Vec& x) {
    Vec u{};
    double q = 0.0;
    for (int i = 0; i < 3; ++i) {
        u[i] = (x[i] - g.center[i]) / g.width[i];
        q += u[i] * u[i];
    }
    const double f = -2.0 * g.amplitude * std::exp(-q);
    return {f * u[0] / g.width[0], f * u[1] / g.width[1], f * u[2] / g.width[2]};
}

template <class F>
Vec form_gradient(const F& f, const Vec& x) {
    return form_jet(f, x).grad;
}

}  // namespace detail

enum class PartKind { vs, s, l };

inline std::string part_name(PartKind k) {
    switch (k) {
        case PartKind::vs: return "vs";
        case PartKind::s: return "s";
        case PartKind::l: return "l";
    }
    return "?";
}

// A sum of closed-form terms.
struct Part {
    std::vector<Form> terms;

    double value(const Vec& x) const {
        double acc = 0.0;
        for (const auto& t : terms) acc += std::visit([&](const auto& f) { return detail::form_value(f, x); }, t);
        return acc;
    }

    Vec gradient(const Vec& x) const {
        Vec acc{};
        for (const auto& t : terms) acc = acc + std::visit([&](const auto& f) { return detail::form_gradient(f, x); }, t);
        return acc;
    }

    Jet jet(const Vec& x) const {
        Jet acc;
        for (const auto& t : terms) acc += std::visit([&](const auto& f) { return detail::form_jet(f, x); }, t);
        return acc;
    }

    // Every form peaks at its centre, so the amplitudes bound |V|.
    double sup_bound() const {
        double acc = 0.0;
        for (const auto& t : terms) acc += std::visit([](const auto& f) { return std::abs(f.amplitude); }, t);
        return acc;
    }
};

// V = V^vs + V^s + V^l with declared decay exponents.
//   |d^b V^s| <= C <x>^(-gamma_|b|),   |d^b V^l| <= C <x>^(-gamma_D - |b|/2).
struct PotentialSpec {
    std::optional<Part> vs_part;
    std::optional<Part> s_part;
    std::optional<Part> l_part;
    double gamma_vs = 2.0;
    double gamma0 = 1.0;
    double gamma1 = 2.0;
    std::optional<double> gamma2;
    double gamma_D = 0.5;

    bool empty() const {
        auto blank = [](const std::optional<Part>& p) { return !p || p->terms.empty(); };
        return blank(vs_part) && blank(s_part) && blank(l_part);
    }

    const std::optional<Part>& part(PartKind k) const {
        switch (k) {
            case PartKind::vs: return vs_part;
            case PartKind::s: return s_part;
            default: return l_part;
        }
    }

    bool has(PartKind k) const { return part(k).has_value() && !part(k)->terms.empty(); }

    // Highest derivative order the part's declared class controls.
    int smoothness(PartKind k) const {
        switch (k) {
            case PartKind::vs: return 0;
            case PartKind::s: return gamma2 ? 2 : 1;
            default: return 2;
        }
    }

    double value(const Vec& x) const {
        double acc = 0.0;
        if (vs_part) acc += vs_part->value(x);
        if (s_part) acc += s_part->value(x);
        if (l_part) acc += l_part->value(x);
        return acc;
    }

    double sup_bound() const {
        double acc = 0.0;
        for (auto k : {PartKind::vs, PartKind::s, PartKind::l})
            if (has(k)) acc += part(k)->sup_bound();
        return acc;
    }

    // Declared decay exponent for derivatives of order `order` of a part.
    double declared_exponent(PartKind k, int order) const {
        switch (k) {
            case PartKind::vs: return gamma_vs;
            case PartKind::s: return order == 0 ? gamma0 : order == 1 ? gamma1 : gamma2.value_or(gamma1);
            default: return gamma_D + 0.5 * order;
        }
    }
};

inline const Part& require_part(const PotentialSpec& spec, PartKind k) {
    if (!spec.has(k)) fail(ErrorCode::MissingPart, "potential has no " + part_name(k) + " part");
    return *spec.part(k);
}

// Admissible windows: 1/2 < gamma0 <= 1, 1 < gamma1 <= 1 + gamma0, gamma2 <= gamma1 + 1,
// 1/4 < gamma_D <= 1/2 with a long-range part.
inline void check_windows(const PotentialSpec& spec) {
    auto bad = [](const std::string& why) { fail(ErrorCode::ClassMismatch, why); };
    if (spec.has(PartKind::vs) && !(spec.gamma_vs > 1.0)) bad("gamma_vs must exceed 1");
    if (spec.has(PartKind::s)) {
        if (!(spec.gamma0 > 0.5 && spec.gamma0 <= 1.0)) bad("gamma0 outside (1/2, 1]");
        if (!(spec.gamma1 > 1.0 && spec.gamma1 <= 1.0 + spec.gamma0)) bad("gamma1 outside (1, 1 + gamma0]");
        if (spec.gamma2 && !(*spec.gamma2 > 1.0 && *spec.gamma2 <= spec.gamma1 + 1.0))
            bad("gamma2 outside (1, gamma1 + 1]");
    }
    if (spec.has(PartKind::l) && !(spec.gamma_D > 0.25 && spec.gamma_D <= 0.5)) bad("gamma_D outside (1/4, 1/2]");
}

using MultiIndex = std::array<int, 3>;

// Closed-form derivative d^beta V_part(x), |beta| <= 2.
inline double eval_deriv(const PotentialSpec& spec, PartKind k, const MultiIndex& beta, const Vec& x) {
    const Part& p = require_part(spec, k);
    int order = beta[0] + beta[1] + beta[2];
    if (beta[0] < 0 || beta[1] < 0 || beta[2] < 0) fail(ErrorCode::InvalidArgument, "negative multi-index");
    if (order > spec.smoothness(k) || order > 2)
        fail(ErrorCode::DerivativeOrderUnsupported,
             "order " + std::to_string(order) + " exceeds the smoothness class of the " + part_name(k) + " part");
    if (order == 0) return p.value(x);
    Jet j = p.jet(x);
    if (order == 1) {
        for (int i = 0; i < 3; ++i)
            if (beta[i] == 1) return j.grad[i];
    }
    int a = -1, b = -1;
    for (int i = 0; i < 3; ++i) {
        if (beta[i] == 2) a = b = i;
        if (beta[i] == 1) (a < 0 ? a : b) = i;
    }
    return j.hess[a][b];
}

inline double eval(const PotentialSpec& spec, PartKind k, const Vec& x) { return eval_deriv(spec, k, {0, 0, 0}, x); }

struct DecayFit {
    int order = 0;
    double slope = 0.0;
    double declared = 0.0;
    bool super_polynomial = false;
};

// Shell sampling of sup |d^b V| over R in [4, 64]; the fitted log-log slope must not
// exceed -gamma_|b| + 0.1.
inline std::vector<DecayFit> validate_decay(const PotentialSpec& spec, PartKind k, int dims = 2) {
    const Part& p = require_part(spec, k);
    constexpr int shells = 13;
    constexpr int directions = 720;
    std::vector<DecayFit> fits;
    for (int order = 0; order <= spec.smoothness(k); ++order) {
        std::vector<double> lr, lv;
        bool tiny = false;
        for (int m = 0; m < shells; ++m) {
            double R = 4.0 * std::pow(16.0, m / double(shells - 1));
            double sup = 0.0;
            for (int a = 0; a < directions; ++a) {
                Vec x{};
                if (dims == 2) {
                    double th = 2.0 * std::numbers::pi * a / directions;
                    x = {R * std::cos(th), R * std::sin(th), 0.0};
                } else {
                    // Fibonacci sphere
                    double z = 1.0 - 2.0 * (a + 0.5) / directions;
                    double r = std::sqrt(1.0 - z * z);
                    double ph = a * std::numbers::pi * (3.0 - std::sqrt(5.0));
                    x = {R * r * std::cos(ph), R * r * std::sin(ph), R * z};
                }
                Jet j = p.jet(x);
                double mag = 0.0;
                if (order == 0) mag = std::abs(j.value);
                if (order == 1) mag = length(j.grad);
                if (order == 2)
                    for (int i = 0; i < dims; ++i)
                        for (int q = 0; q < dims; ++q) mag = std::max(mag, std::abs(j.hess[i][q]));
                sup = std::max(sup, mag);
            }
            if (sup < 1e-200) {
                tiny = true;
                break;
            }
            lr.push_back(std::log(R));
            lv.push_back(std::log(sup));
        }
        DecayFit fit;
        fit.order = order;
        fit.declared = spec.declared_exponent(k, order);
        if (tiny) {
            fit.super_polynomial = true;
            fit.slope = -std::numeric_limits<double>::infinity();
        } else {
            double n = lr.size(), sx = 0, sy = 0, sxx = 0, sxy = 0;
            for (std::size_t i = 0; i < lr.size(); ++i) {
                sx += lr[i];
                sy += lv[i];
                sxx += lr[i] * lr[i];
                sxy += lr[i] * lv[i];
            }
            fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            if (fit.slope > -fit.declared + 0.1)
                fail(ErrorCode::DecayViolation, part_name(k) + " part, derivative order " + std::to_string(order) +
                                                    ": fitted slope " + std::to_string(fit.slope) +
                                                    " exceeds -gamma + 0.1 = " +
                                                    std::to_string(-fit.declared + 0.1));
        }
        fits.push_back(fit);
    }
    return fits;
}

struct ThresholdVerdict {
    std::string scenario;
    bool pass = true;
    std::vector<std::string> violated_conditions;
};

// Scenarios: "short" (no long-range part), "long" (with one), "smooth_short" and
// "smooth_long" (twice differentiable V^s with declared gamma2).
inline ThresholdVerdict check_thresholds(const PotentialSpec& spec, const std::string& scenario) {
    ThresholdVerdict v;
    v.scenario = scenario;
    bool has_l = spec.has(PartKind::l);
    bool has_s = spec.has(PartKind::s);
    auto need = [&](bool ok, const std::string& cond) {
        if (!ok) v.violated_conditions.push_back(cond);
    };
    const bool smooth = scenario == "smooth_short" || scenario == "smooth_long";
    const bool with_l = scenario == "long" || scenario == "smooth_long";
    if (!smooth && !with_l && scenario != "short") fail(ErrorCode::InvalidArgument, "unknown scenario " + scenario);
    if (with_l && !has_l) fail(ErrorCode::ClassMismatch, "scenario " + scenario + " requires a long-range part");
    if (!with_l && has_l) fail(ErrorCode::ClassMismatch, "scenario " + scenario + " covers potentials without a long-range part");
    if (smooth && has_s && !spec.gamma2) fail(ErrorCode::ClassMismatch, "scenario " + scenario + " requires a declared gamma2");
    if (has_s && !smooth) need(spec.gamma1 > 1.25, "gamma1 > 5/4");
    if (has_s && smooth) need(*spec.gamma2 > 1.25, "gamma2 > 5/4");
    if (has_s && smooth && with_l) need(spec.gamma1 + spec.gamma_D > 1.25, "gamma1 + gamma_D > 5/4");
    if (with_l) need(spec.gamma_D > 0.375, "gamma_D > 3/8");
    v.pass = v.violated_conditions.empty();
    return v;
}

}  // namespace starklab
