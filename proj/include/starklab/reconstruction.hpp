#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "starklab/csv.hpp"
#include "starklab/errors.hpp"
#include "starklab/grid.hpp"
#include "starklab/parallel.hpp"
#include "starklab/potentials.hpp"
#include "starklab/quadrature.hpp"
#include "starklab/scattering.hpp"

namespace starklab {

enum class SampleSource { measured, rhs_direct };

inline std::string source_name(SampleSource s) { return s == SampleSource::measured ? "measured" : "rhs_direct"; }

// One datum of the Radon-type data set: the functional for direction vhat, with the
// packet translated by offset * normal(vhat), along momentum axis j (0-based).
struct RadonSample {
    Vec vhat{};
    double offset = 0.0;
    int j = 0;
    cplx value{};
    SampleSource source = SampleSource::measured;
    std::vector<double> speeds;
    std::vector<cplx> raw;
    bool monotone = true;
};

// In-plane unit normal; the line x + vhat tau is labelled by its offset along it.
inline Vec normal_of(const Vec& vhat) { return {-vhat[1], vhat[0], 0.0}; }

inline Vec direction_at(double angle) { return {std::cos(angle), std::sin(angle), 0.0}; }

inline void check_direction(const Vec& vhat, double delta_max = 1.0) {
    if (std::abs(length(vhat) - 1.0) > 1e-9) fail(ErrorCode::InvalidArgument, "direction must be a unit vector");
    if (!(std::abs(vhat[0]) < 1.0) || std::abs(vhat[0]) > delta_max + 1e-12)
        fail(ErrorCode::DirectionInadmissible, "|vhat.e1| = " + fmt(std::abs(vhat[0])) + " outside the admissible cone");
}

// Evenly spaced direction angles with |cos| <= delta_max, i.e. angles in
// [acos(delta_max), pi - acos(delta_max)].
inline std::vector<double> admissible_angles(int count, double delta_max) {
    if (count < 1) fail(ErrorCode::InvalidArgument, "need at least one angle");
    if (!(delta_max > 0.0 && delta_max < 1.0)) fail(ErrorCode::InvalidArgument, "delta_max must lie in (0, 1)");
    const double lo = std::acos(delta_max), hi = std::numbers::pi - lo;
    std::vector<double> out(count);
    for (int i = 0; i < count; ++i) out[i] = count == 1 ? 0.5 * std::numbers::pi : lo + (hi - lo) * i / (count - 1);
    return out;
}

inline std::vector<double> even_offsets(int count, double half_width) {
    if (count < 1) fail(ErrorCode::InvalidArgument, "need at least one offset");
    std::vector<double> out(count);
    for (int i = 0; i < count; ++i) out[i] = count == 1 ? 0.0 : -half_width + 2.0 * half_width * i / (count - 1);
    return out;
}

inline State translate(const State& s, const Vec& y) {
    State out = s;
    out.frame_center = s.frame_center + y;
    return out;
}

namespace detail {

// Grid points carrying the packets, with the pairings the line integrand needs.
struct LinePoints {
    std::vector<Vec> x;
    std::vector<cplx> plain, left, right;  // phi conj(psi), (p_j phi) conj(psi), phi conj(p_j psi)
    Vec centroid{};
};

inline LinePoints line_points(const State& phi0, const State& psi0, int j) {
    const State psi = reframe(psi0, phi0.frame_center);
    require_same_frame(phi0, psi, "rhs_direct");
    const State pphi = apply_momentum(phi0, j), ppsi = apply_momentum(psi, j);
    const Grid& g = *phi0.grid;
    std::vector<double> w(g.size());
    double wmax = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        w[i] = std::max(std::abs(phi0.values[i]), std::abs(pphi.values[i])) *
               std::max(std::abs(psi.values[i]), std::abs(ppsi.values[i]));
        wmax = std::max(wmax, w[i]);
    }
    LinePoints lp;
    double mass = 0.0;
    const double cell = g.cell_volume();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(w[i] > 1e-15 * wmax)) continue;
        Vec x = g.position(i) + phi0.frame_center;
        lp.x.push_back(x);
        lp.plain.push_back(cell * phi0.values[i] * std::conj(psi.values[i]));
        lp.left.push_back(cell * pphi.values[i] * std::conj(psi.values[i]));
        lp.right.push_back(cell * phi0.values[i] * std::conj(ppsi.values[i]));
        lp.centroid = lp.centroid + w[i] * x;
        mass += w[i];
    }
    if (mass > 0.0) lp.centroid = (1.0 / mass) * lp.centroid;
    return lp;
}

}  // namespace detail

// int [(V^vs(x+vhat tau) p_j Phi0, Psi0) - (V^vs(x+vhat tau) Phi0, p_j Psi0)
//      + i((d_j V^s)(x+vhat tau) Phi0, Psi0)] dtau over the whole line. The tau integral is
// split where the line through the packet centroid passes the origin; both half-lines
// are mapped to finite intervals, so the declared decay (exponents above 1) governs the tails.
inline cplx rhs_direct(const PotentialSpec& V, const Vec& vhat, const State& phi0, const State& psi0, int j,
                       QuadratureOptions opt = {1e-12, 1e-8, 4000}) {
    check_direction(vhat);
    if (j < 0 || j >= phi0.grid->dims()) fail(ErrorCode::InvalidArgument, "axis out of range");
    const bool vs = V.has(PartKind::vs), s = V.has(PartKind::s);
    if (!vs && !s) return 0.0;
    const auto lp = detail::line_points(phi0, psi0, j);
    const cplx I(0.0, 1.0);
    auto integrand = [&](double tau) -> cplx {
        const Vec shift = tau * vhat;
        cplx acc = 0.0;
        for (std::size_t i = 0; i < lp.x.size(); ++i) {
            const Vec y = lp.x[i] + shift;
            if (vs) acc += V.vs_part->value(y) * (lp.left[i] - lp.right[i]);
            if (s) acc += I * V.s_part->gradient(y)[j] * lp.plain[i];
        }
        return acc;
    };
    constexpr double inf = std::numeric_limits<double>::infinity();
    const double tau0 = -dot(vhat, lp.centroid);
    return integrate_or_fail(integrand, -inf, tau0, opt, "rhs_direct") +
           integrate_or_fail(integrand, tau0, inf, opt, "rhs_direct");
}

// First-order extrapolation in 1/|v| through the two fastest samples:
// F(v) = F_inf + c/|v|  =>  F_inf = (v_b F_b - v_a F_a) / (v_b - v_a).
inline cplx richardson(const std::vector<double>& speeds, const std::vector<cplx>& values) {
    if (speeds.size() != values.size() || speeds.empty()) fail(ErrorCode::InvalidArgument, "schedule/value mismatch");
    const std::size_t n = speeds.size();
    if (n == 1) return values[0];
    const double a = speeds[n - 2], b = speeds[n - 1];
    return (b * values[n - 1] - a * values[n - 2]) / (b - a);
}

// The extrapolated value may move away from the fastest sample by at most the last
// increment, in either direction: |F_ext - F_b| <= |F_b - F_a|.
inline bool within_bracket(const std::vector<cplx>& values, cplx extrapolated) {
    const std::size_t n = values.size();
    if (n < 2) return true;
    return std::abs(extrapolated - values[n - 1]) <= std::abs(values[n - 1] - values[n - 2]) * (1.0 + 1e-9) + 1e-300;
}

struct ExperimentPlan {
    std::vector<double> angles;
    std::vector<double> offsets;
    std::vector<int> axes{0, 1};
    std::vector<double> speeds{16.0};
    double delta_max = 0.9;
    ModifierKind kind = ModifierKind::none;
    HorizonPolicy policy{};
};

inline void check_plan(const ExperimentPlan& plan, int dims) {
    if (plan.angles.empty() || plan.offsets.empty() || plan.axes.empty() || plan.speeds.empty())
        fail(ErrorCode::InvalidArgument, "experiment plan needs angles, offsets, axes and speeds");
    for (double a : plan.angles) check_direction(direction_at(a), plan.delta_max);
    for (int j : plan.axes)
        if (j < 0 || j >= dims) fail(ErrorCode::InvalidArgument, "axis out of range");
    for (std::size_t i = 1; i < plan.speeds.size(); ++i)
        if (!(plan.speeds[i] > plan.speeds[i - 1])) fail(ErrorCode::InvalidArgument, "speed schedule must increase");
}

namespace detail {

struct SampleSlot {
    double angle;
    double offset;
    int j;
};

inline std::vector<SampleSlot> plan_slots(const ExperimentPlan& plan) {
    std::vector<SampleSlot> slots;
    for (double a : plan.angles)
        for (double y : plan.offsets)
            for (int j : plan.axes) slots.push_back({a, y, j});
    return slots;
}

}  // namespace detail

// Measured data: commutator functionals over the plan with Phi0 = Psi0 = packet
// translated along the line normal. The recorded value is the Richardson limit.
inline std::vector<RadonSample> collect_samples(const PotentialSpec& V, const ExperimentPlan& plan,
                                                const State& packet) {
    check_plan(plan, packet.grid->dims());
    const auto slots = detail::plan_slots(plan);
    std::vector<RadonSample> out(slots.size());
    parallel_for(slots.size(), [&](std::size_t i) {
        const auto& sl = slots[i];
        RadonSample r;
        r.vhat = direction_at(sl.angle);
        r.offset = sl.offset;
        r.j = sl.j;
        r.source = SampleSource::measured;
        r.speeds = plan.speeds;
        const State phi = translate(packet, sl.offset * normal_of(r.vhat));
        for (double speed : plan.speeds) {
            auto f = commutator_functional(V, speed * r.vhat, phi, phi, sl.j, plan.kind, plan.policy);
            r.raw.push_back(f.value);
        }
        r.value = richardson(r.speeds, r.raw);
        for (std::size_t k = 1; k + 1 < r.raw.size(); ++k)
            if (std::abs(r.raw[k] - r.value) > std::abs(r.raw[k - 1] - r.value)) r.monotone = false;
        out[i] = std::move(r);
    });
    return out;
}

// Forward-model data for the same plan from rhs_direct.
inline std::vector<RadonSample> synthesize_samples(const PotentialSpec& V, const ExperimentPlan& plan,
                                                   const State& packet) {
    check_plan(plan, packet.grid->dims());
    const auto slots = detail::plan_slots(plan);
    std::vector<RadonSample> out(slots.size());
    parallel_for(slots.size(), [&](std::size_t i) {
        const auto& sl = slots[i];
        RadonSample r;
        r.vhat = direction_at(sl.angle);
        r.offset = sl.offset;
        r.j = sl.j;
        r.source = SampleSource::rhs_direct;
        const State phi = translate(packet, sl.offset * normal_of(r.vhat));
        r.value = rhs_direct(V, r.vhat, phi, phi, sl.j);
        out[i] = std::move(r);
    });
    return out;
}

struct ReconstructionGrid {
    int raster = 64;
    double half_width = 6.0;
    double support_radius = 4.0;
    double blob_spacing = 0.35;
    double blob_width = 0.45;
    double error_radius = 3.0;
    double tikhonov_floor = 1e-3;
    double fit_regularization = 1e-5;
    double delta_max = 0.9;
    int min_angles = 32;
    int padding = 4;
};

struct Raster {
    int n = 0;
    double half_width = 0.0;
    std::vector<double> values;  // row-major, row = x2 index

    double spacing() const { return 2.0 * half_width / (n - 1); }
    Vec point(int i1, int i2) const { return {-half_width + i1 * spacing(), -half_width + i2 * spacing(), 0.0}; }
    double& at(int i1, int i2) { return values[static_cast<std::size_t>(i2) * n + i1]; }
    double at(int i1, int i2) const { return values[static_cast<std::size_t>(i2) * n + i1]; }
};

inline Raster make_raster(int n, double half_width) {
    if (n < 3) fail(ErrorCode::InvalidArgument, "raster needs at least 3 points per axis");
    return {n, half_width, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
}

template <class F>
Raster sample_raster(int n, double half_width, F f) {
    Raster r = make_raster(n, half_width);
    for (int i2 = 0; i2 < n; ++i2)
        for (int i1 = 0; i1 < n; ++i1) r.at(i1, i2) = f(r.point(i1, i2));
    return r;
}

// Relative L2 difference over raster points with |x| <= radius.
inline double relative_error_on_disk(const Raster& est, const Raster& truth, double radius) {
    if (est.n != truth.n || est.half_width != truth.half_width) fail(ErrorCode::InvalidArgument, "raster shapes differ");
    double num = 0.0, den = 0.0;
    for (int i2 = 0; i2 < est.n; ++i2)
        for (int i1 = 0; i1 < est.n; ++i1) {
            if (length(est.point(i1, i2)) > radius) continue;
            num += std::pow(est.at(i1, i2) - truth.at(i1, i2), 2);
            den += std::pow(truth.at(i1, i2), 2);
        }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

struct InversionResult {
    Raster potential;
    Raster grad1, grad2;  // back-projected d_1 V, d_2 V
    double curl_ratio = 0.0;
    double floor_fraction = 0.0;
    int angles = 0;
    int blobs = 0;
    std::optional<double> relative_error;
};

namespace detail {

struct AngleProfile {
    double angle;
    Vec vhat, normal;
    std::vector<double> data;            // smeared normal-derivative line integrals at the offsets
    std::vector<double> deconvolved;     // on the padded window
    std::vector<double> filtered_ramp;   // ramp-filtered, on the padded window
    std::vector<double> response;        // Tikhonov response W(k) per padded mode
};

// Normal-derivative data per angle: d_j = n_j f, so f = sum n_j d_j / sum n_j^2 over the axes present.
inline std::map<double, AngleProfile> group_profiles(const std::vector<RadonSample>& samples,
                                                     const std::vector<double>& offsets, double delta_max) {
    std::map<double, std::map<double, std::pair<double, double>>> acc;  // angle -> offset -> (num, den)
    for (const auto& s : samples) {
        check_direction(s.vhat, delta_max);
        const Vec n = normal_of(s.vhat);
        double angle = std::atan2(s.vhat[1], s.vhat[0]);
        if (angle < 0.0) angle += std::numbers::pi;
        angle = std::round(angle * 1e9) / 1e9;
        auto& cell = acc[angle][std::round(s.offset * 1e9) / 1e9];
        cell.first += n[s.j] * s.value.imag();
        cell.second += n[s.j] * n[s.j];
    }
    std::map<double, AngleProfile> out;
    for (const auto& [angle, row] : acc) {
        AngleProfile p;
        p.angle = angle;
        p.vhat = direction_at(angle);
        p.normal = normal_of(p.vhat);
        for (double y : offsets) {
            auto it = row.find(std::round(y * 1e9) / 1e9);
            if (it == row.end() || it->second.second < 1e-6)
                fail(ErrorCode::InvalidArgument, "angle " + fmt(angle) + " lacks usable data at offset " + fmt(y));
            p.data.push_back(it->second.first / it->second.second);
        }
        out.emplace(angle, std::move(p));
    }
    return out;
}

inline std::vector<double> sorted_offsets(const std::vector<RadonSample>& samples) {
    std::vector<double> ys;
    for (const auto& s : samples) ys.push_back(std::round(s.offset * 1e9) / 1e9);
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    if (ys.size() < 4) fail(ErrorCode::InvalidArgument, "need at least 4 offsets per angle");
    const double d = ys[1] - ys[0];
    for (std::size_t i = 1; i < ys.size(); ++i)
        if (std::abs(ys[i] - ys[i - 1] - d) > 1e-6 * d) fail(ErrorCode::InvalidArgument, "offsets must be evenly spaced");
    return ys;
}

// Angular frequencies of an M-point window with spacing d, in FFT order.
inline std::vector<double> window_frequencies(int M, double d) {
    std::vector<double> k(M);
    for (int m = 0; m < M; ++m) k[m] = 2.0 * std::numbers::pi * (m <= M / 2 ? m : m - M) / (M * d);
    return k;
}

// Fourier transform of the packet density along the normal: sum rho(z) exp(-i k n.z).
inline std::vector<cplx> projected_density_spectrum(const State& packet, const Vec& n, const std::vector<double>& k) {
    const Grid& g = *packet.grid;
    std::vector<double> rho(g.size());
    double mass = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        rho[i] = std::norm(packet.values[i]) * g.cell_volume();
        mass += rho[i];
    }
    std::vector<double> u;
    std::vector<double> w;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (rho[i] > 1e-16 * mass) {
            u.push_back(dot(n, g.position(i) + packet.frame_center));
            w.push_back(rho[i]);
        }
    std::vector<cplx> out(k.size());
    for (std::size_t m = 0; m < k.size(); ++m) {
        cplx acc = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) acc += w[i] * std::polar(1.0, -k[m] * u[i]);
        out[m] = acc;
    }
    return out;
}

// Largest momentum carried by the packet.
inline double packet_radius(const State& packet) {
    auto spec = spectrum(packet);
    double peak = 0.0;
    for (const auto& z : spec) peak = std::max(peak, std::norm(z));
    double r = 0.0;
    for (std::size_t i = 0; i < spec.size(); ++i)
        if (std::norm(spec[i]) > 1e-14 * peak) r = std::max(r, length(packet.grid->wavevector(i)));
    return r;
}

inline std::vector<cplx> dft(const std::vector<double>& f, double d) {
    const int M = static_cast<int>(f.size());
    std::vector<cplx> out(M);
    for (int m = 0; m < M; ++m) {
        cplx acc = 0.0;
        for (int i = 0; i < M; ++i) acc += f[i] * std::polar(1.0, -2.0 * std::numbers::pi * m * i / M);
        out[m] = acc * d;
    }
    return out;
}

inline std::vector<double> idft(const std::vector<cplx>& F, double d) {
    const int M = static_cast<int>(F.size());
    std::vector<double> out(M);
    for (int i = 0; i < M; ++i) {
        cplx acc = 0.0;
        for (int m = 0; m < M; ++m) acc += F[m] * std::polar(1.0, 2.0 * std::numbers::pi * m * i / M);
        out[i] = acc.real() / (M * d);
    }
    return out;
}

// Band-limited evaluation of idft(F) on a grid `factor` times finer than d.
inline std::vector<double> idft_fine(const std::vector<cplx>& F, double d, int factor) {
    const int M = static_cast<int>(F.size());
    std::vector<double> out(static_cast<std::size_t>(M) * factor);
    for (std::size_t i = 0; i < out.size(); ++i) {
        cplx acc = 0.0;
        for (int m = 0; m < M; ++m) {
            const int mm = m <= M / 2 ? m : m - M;
            acc += F[m] * std::polar(1.0, 2.0 * std::numbers::pi * mm * static_cast<double>(i) / (M * factor));
        }
        out[i] = acc.real() / (M * d);
    }
    return out;
}

}  // namespace detail

// Inverts Radon-type samples taken with Phi0 = Psi0 = packet (translated along the
// line normals). Steps: Tikhonov deconvolution of the packet smear per angle,
// back-projection of the gradient components over the available angles, then a
// least-squares fit of a gaussian-blob potential supported in a disk against the
// deconvolved line integrals. The support prior fills in the excluded cone.
inline InversionResult invert(const std::vector<RadonSample>& samples, const State& packet,
                              const ReconstructionGrid& rg, const PotentialSpec* truth = nullptr) {
    if (samples.empty()) fail(ErrorCode::InsufficientAngles, "no samples");
    const auto offsets = detail::sorted_offsets(samples);
    auto profiles = detail::group_profiles(samples, offsets, rg.delta_max);
    InversionResult out;
    out.angles = static_cast<int>(profiles.size());
    if (out.angles < rg.min_angles)
        fail(ErrorCode::InsufficientAngles, fmt(out.angles) + " angles, need " + fmt(rg.min_angles));

    const int count = static_cast<int>(offsets.size());
    const double d = offsets[1] - offsets[0];
    int M = 1;
    while (M < rg.padding * count) M *= 2;
    const auto k = detail::window_frequencies(M, d);
    const double band = detail::packet_radius(packet);
    // Window slot i holds offset y0 + i d; the tail of the window wraps to negative offsets.
    const double y0 = offsets.front();

    constexpr int kFine = 8;  // back-projection reads the filtered profiles at d / kFine
    int in_band = 0, floored = 0;
    for (auto& [angle, p] : profiles) {
        std::vector<double> padded(M, 0.0);
        for (int i = 0; i < count; ++i) padded[i] = p.data[i];
        auto D = detail::dft(padded, d);
        auto rho = detail::projected_density_spectrum(packet, p.normal, k);
        double peak = 0.0;
        for (const auto& r : rho) peak = std::max(peak, std::abs(r));
        const double eps = rg.tikhonov_floor * peak;
        std::vector<cplx> L(M), R(M);
        p.response.assign(M, 0.0);
        for (int m = 0; m < M; ++m) {
            // data(y) = int l(y + u) rho_n(u) du, so D(k) = l(k) conj(rho(k)); the
            // window origin y0 contributes the phase exp(-i k y0) on both sides.
            const double r2 = std::norm(rho[m]);
            L[m] = D[m] * rho[m] / (r2 + eps * eps);
            p.response[m] = r2 / (r2 + eps * eps);
            R[m] = L[m] * std::abs(k[m]);
            if (std::abs(k[m]) <= band) {
                ++in_band;
                if (std::abs(rho[m]) < eps) ++floored;
            }
        }
        p.deconvolved = detail::idft(L, d);
        p.filtered_ramp = detail::idft_fine(R, d, kFine);
    }
    out.floor_fraction = in_band ? static_cast<double>(floored) / in_band : 0.0;
    if (out.floor_fraction > 0.2)
        fail(ErrorCode::IllConditionedDeconvolution,
             "spectral floor hit on " + fmt(100.0 * out.floor_fraction) + "% of in-band modes");

    // Window position of offset y, unwrapped into [y0 - (M - count) d / 2, ...).
    auto window_value = [&](const std::vector<double>& f, double y) {
        const long P = static_cast<long>(f.size());
        const double step = d * M / P;
        double t = (y - y0) / step;
        t -= P * std::floor((t + 0.5 * (M - count) * (P / M)) / P);
        double i0 = std::floor(t);
        double frac = t - i0;
        auto at = [&](long i) { return f[static_cast<std::size_t>(((i % P) + P) % P)]; };
        long i = static_cast<long>(i0);
        return (1.0 - frac) * at(i) + frac * at(i + 1);
    };

    // Back-projection with trapezoid weights over the available angles.
    std::vector<double> angles;
    for (const auto& [a, p] : profiles) angles.push_back(a);
    std::vector<double> weight(angles.size(), 0.0);
    for (std::size_t i = 0; i < angles.size(); ++i) {
        double lo = i > 0 ? angles[i - 1] : angles[i];
        double hi = i + 1 < angles.size() ? angles[i + 1] : angles[i];
        weight[i] = 0.5 * (hi - lo);
    }
    if (angles.size() == 1) weight[0] = std::numbers::pi;
    out.grad1 = make_raster(rg.raster, rg.half_width);
    out.grad2 = make_raster(rg.raster, rg.half_width);
    std::size_t ai = 0;
    for (const auto& [a, p] : profiles) {
        const double w = weight[ai++] / (2.0 * std::numbers::pi);
        for (int i2 = 0; i2 < rg.raster; ++i2)
            for (int i1 = 0; i1 < rg.raster; ++i1) {
                double q = w * window_value(p.filtered_ramp, dot(p.normal, out.grad1.point(i1, i2)));
                out.grad1.at(i1, i2) += p.normal[0] * q;
                out.grad2.at(i1, i2) += p.normal[1] * q;
            }
    }
    {
        const double h = out.grad1.spacing();
        double curl = 0.0, scale = 0.0;
        for (int i2 = 1; i2 + 1 < rg.raster; ++i2)
            for (int i1 = 1; i1 + 1 < rg.raster; ++i1) {
                double d1g2 = (out.grad2.at(i1 + 1, i2) - out.grad2.at(i1 - 1, i2)) / (2 * h);
                double d2g1 = (out.grad1.at(i1, i2 + 1) - out.grad1.at(i1, i2 - 1)) / (2 * h);
                curl += std::pow(d1g2 - d2g1, 2);
                scale += d1g2 * d1g2 + d2g1 * d2g1;
            }
        out.curl_ratio = scale > 0.0 ? std::sqrt(curl / scale) : 0.0;
    }

    // Blob fit. Each blob exp(-|x - c|^2 / (2 s^2)) has line integral
    // sqrt(2 pi) s exp(-(y - n.c)^2 / (2 s^2)); the model sees the same Tikhonov response.
    std::vector<Vec> centers;
    const double h = rg.blob_spacing, sb = rg.blob_width;
    const int nb = static_cast<int>(std::ceil(rg.support_radius / h));
    for (int b2 = -nb; b2 <= nb; ++b2)
        for (int b1 = -nb; b1 <= nb; ++b1) {
            Vec c{b1 * h, b2 * h, 0.0};
            if (length(c) <= rg.support_radius) centers.push_back(c);
        }
    out.blobs = static_cast<int>(centers.size());
    const int rows = out.angles * count;
    Eigen::MatrixXd A(rows, out.blobs);
    Eigen::VectorXd b(rows);
    // Circulant filter in window coordinates: F[i][l] = (1/M) sum_m W_m cos(2 pi m (i - l) / M).
    std::vector<double> kernel(M);
    ai = 0;
    for (const auto& [a, p] : profiles) {
        for (int t = 0; t < M; ++t) {
            double acc = 0.0;
            for (int m = 0; m < M; ++m) acc += p.response[m] * std::cos(2.0 * std::numbers::pi * m * t / M);
            kernel[t] = acc / M;
        }
        Eigen::MatrixXd raw(M, out.blobs);
        for (int l = 0; l < M; ++l) {
            // Window slot l holds y0 + l d, except the wrapped tail which holds offsets below y0.
            long shift = l < count + (M - count) / 2 ? l : l - M;
            double y = y0 + shift * d;
            for (int c = 0; c < out.blobs; ++c) {
                double u = y - dot(p.normal, centers[c]);
                raw(l, c) = -u / (sb * sb) * std::sqrt(2.0 * std::numbers::pi) * sb * std::exp(-u * u / (2 * sb * sb));
            }
        }
        for (int i = 0; i < count; ++i) {
            Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(out.blobs);
            for (int l = 0; l < M; ++l) row += kernel[((i - l) % M + M) % M] * raw.row(l);
            A.row(ai * count + i) = row;
            b(ai * count + i) = p.deconvolved[i];
        }
        ++ai;
    }
    Eigen::MatrixXd N = A.transpose() * A;
    const double alpha = rg.fit_regularization * N.trace() / out.blobs;
    N.diagonal().array() += alpha;
    Eigen::VectorXd coef = N.ldlt().solve(A.transpose() * b);

    out.potential = sample_raster(rg.raster, rg.half_width, [&](const Vec& x) {
        double acc = 0.0;
        for (int c = 0; c < out.blobs; ++c) acc += coef(c) * std::exp(-norm2(x - centers[c]) / (2 * sb * sb));
        return acc;
    });
    if (truth) {
        auto ref = sample_raster(rg.raster, rg.half_width, [&](const Vec& x) { return truth->value(x); });
        out.relative_error = relative_error_on_disk(out.potential, ref, rg.error_radius);
    }
    return out;
}

inline CsvTable samples_table(const std::vector<RadonSample>& samples) {
    CsvTable t;
    t.schema = "radon_samples";
    t.columns = {"vhat_1", "vhat_2", "offset", "j", "speeds", "raw_re", "raw_im", "value_re", "value_im", "source",
                 "monotone"};
    auto join = [](const auto& xs, auto f) {
        std::string s;
        for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ";" : "") + fmt(f(xs[i]));
        return s;
    };
    for (const auto& r : samples) {
        t.rows.push_back({fmt(r.vhat[0]), fmt(r.vhat[1]), fmt(r.offset), fmt(r.j + 1),
                          join(r.speeds, [](double x) { return x; }), join(r.raw, [](cplx z) { return z.real(); }),
                          join(r.raw, [](cplx z) { return z.imag(); }), fmt(r.value.real()), fmt(r.value.imag()),
                          source_name(r.source), r.monotone ? "yes" : "no"});
    }
    return t;
}

// Plain-text matrix: '#' metadata lines, then one raster row (fixed x2) per line.
inline void write_raster(const std::filesystem::path& path, const Raster& r, const std::map<std::string, std::string>& meta = {}) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(ErrorCode::InvalidArgument, "cannot write " + path.string());
    out << "# schema=raster version=1 n=" << r.n << " half_width=" << fmt(r.half_width);
    for (const auto& [k, v] : meta) out << ' ' << k << '=' << v;
    out << '\n';
    for (int i2 = 0; i2 < r.n; ++i2) {
        for (int i1 = 0; i1 < r.n; ++i1) out << (i1 ? " " : "") << fmt(r.at(i1, i2));
        out << '\n';
    }
}

}  // namespace starklab
