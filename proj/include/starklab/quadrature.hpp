#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <complex>
#include <limits>
#include <queue>
#include <vector>

#include "starklab/errors.hpp"

namespace starklab {

struct QuadratureOptions {
    double abs_tol = 1e-10;
    double rel_tol = 1e-10;
    int max_panels = 2000;
};

template <class T>
struct QuadratureResult {
    T value{};
    double error = 0.0;
    int evaluations = 0;
    bool converged = false;
};

namespace detail {

template <class T>
struct Panel {
    double a, b;
    T value;
    double error;
    bool operator<(const Panel& o) const { return error < o.error; }
};

// One Gauss-Kronrod 21 panel; boost's rule with zero recursion depth.
template <class T, class F>
Panel<T> gk_panel(F& f, double a, double b) {
    double err = 0.0;
    T v = boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, a, b, 0, 0.0, &err);
    return {a, b, v, err};
}

template <class T, class F>
QuadratureResult<T> adaptive_finite(F& f, double a, double b, const QuadratureOptions& opt) {
    QuadratureResult<T> out;
    if (a == b) {
        out.converged = true;
        return out;
    }
    std::priority_queue<Panel<T>> heap;
    heap.push(gk_panel<T>(f, a, b));
    T total = heap.top().value;
    double err = heap.top().error;
    int panels = 1;
    while (true) {
        double target = std::max(opt.abs_tol, opt.rel_tol * std::abs(total));
        if (err <= target) {
            out.converged = true;
            break;
        }
        if (panels >= opt.max_panels) break;
        Panel<T> worst = heap.top();
        heap.pop();
        double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b)) break;
        Panel<T> left = gk_panel<T>(f, worst.a, mid);
        Panel<T> right = gk_panel<T>(f, mid, worst.b);
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        ++panels;
    }
    // Re-sum to shed accumulated cancellation in the running total.
    T sum{};
    double esum = 0.0;
    while (!heap.empty()) {
        sum += heap.top().value;
        esum += heap.top().error;
        heap.pop();
    }
    out.value = sum;
    out.error = esum;
    out.evaluations = 21 * (2 * panels - 1);
    return out;
}

}  // namespace detail

// Globally adaptive quadrature on [a,b]; either bound may be infinite.
template <class F>
auto integrate(F f, double a, double b, const QuadratureOptions& opt = {})
    -> QuadratureResult<decltype(f(0.0))> {
    using T = decltype(f(0.0));
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (a > b) {
        auto r = integrate(f, b, a, opt);
        r.value = -r.value;
        return r;
    }
    if (std::isinf(a) && std::isinf(b)) {
        QuadratureOptions half = opt;
        half.abs_tol *= 0.5;
        auto l = integrate(f, -inf, 0.0, half);
        auto r = integrate(f, 0.0, inf, half);
        return {l.value + r.value, l.error + r.error, l.evaluations + r.evaluations,
                l.converged && r.converged};
    }
    // Half-lines use s = expm1(u/(1-u)), which turns algebraic tails s^-alpha
    // (alpha > 1) into integrands vanishing at u = 1 instead of endpoint singularities.
    auto tail = [&](double u, double sign, double origin) -> T {
        double w = u / (1.0 - u);
        // Past s = e^300 the quadratic trajectories used here overflow when squared.
        // The dropped piece of an s^-alpha tail is ~exp(-300 (alpha - 1)).
        if (!(w < 300.0)) return T{};
        double jac = std::exp(w) / ((1.0 - u) * (1.0 - u));
        if (!std::isfinite(jac)) return T{};
        T v = f(origin + sign * std::expm1(w));
        return v == T{} ? T{} : v * jac;
    };
    if (std::isinf(b)) {
        auto g = [&](double u) -> T { return tail(u, 1.0, a); };
        return detail::adaptive_finite<T>(g, 0.0, 1.0, opt);
    }
    if (std::isinf(a)) {
        auto g = [&](double u) -> T { return tail(u, -1.0, b); };
        return detail::adaptive_finite<T>(g, 0.0, 1.0, opt);
    }
    return detail::adaptive_finite<T>(f, a, b, opt);
}

// Same as integrate() but raises QuadratureFailure when the tolerance is missed.
template <class F>
auto integrate_or_fail(F f, double a, double b, const QuadratureOptions& opt, const char* what)
    -> decltype(f(0.0)) {
    auto r = integrate(f, a, b, opt);
    if (!r.converged || !std::isfinite(std::abs(r.value))) {
        fail(ErrorCode::QuadratureFailure,
             std::string(what) + ": error estimate " + std::to_string(r.error) + " after " +
                 std::to_string(r.evaluations) + " evaluations");
    }
    return r.value;
}

}  // namespace starklab
