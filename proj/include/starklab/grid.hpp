#pragma once

#include <fftw3.h>

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "starklab/errors.hpp"

namespace starklab {

using cplx = std::complex<double>;
// Points and momenta; components past the grid dimension stay zero.
using Vec = std::array<double, 3>;

inline double dot(const Vec& a, const Vec& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm2(const Vec& a) { return dot(a, a); }
inline double length(const Vec& a) { return std::sqrt(norm2(a)); }
inline Vec operator+(const Vec& a, const Vec& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec operator-(const Vec& a, const Vec& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec operator*(double s, const Vec& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline constexpr Vec e1{1.0, 0.0, 0.0};

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

// Periodic sampling of [-L, L)^n with the paired spectral lattice. Position index
// i on an axis maps to -L + i*dx; spectral index m maps to the wrapped wavenumber.
class Grid {
public:
    Grid(int n_dims, int points, double half_width) {
        if (n_dims < 2) fail(ErrorCode::DimensionTooLow, "n_dims must be 2 or 3, got " + std::to_string(n_dims));
        if (n_dims > 3) fail(ErrorCode::InvalidArgument, "n_dims must be 2 or 3, got " + std::to_string(n_dims));
        if (points < 16 || (points & (points - 1)) != 0)
            fail(ErrorCode::NonPowerOfTwo, "points_per_axis must be a power of two >= 16, got " + std::to_string(points));
        if (!(half_width > 0.0)) fail(ErrorCode::InvalidArgument, "box_half_width must be positive");
        dims_ = n_dims;
        points_ = points;
        half_width_ = half_width;
        dx_ = 2.0 * half_width / points;
        dk_ = std::numbers::pi / half_width;
        size_ = 1;
        for (int d = 0; d < dims_; ++d) size_ *= static_cast<std::size_t>(points_);
        axis_.resize(points_);
        freq_.resize(points_);
        for (int i = 0; i < points_; ++i) {
            axis_[i] = -half_width + i * dx_;
            int m = i < points_ / 2 ? i : i - points_;
            freq_[i] = m * dk_;
        }
        positions_.resize(size_);
        wavevectors_.resize(size_);
        parity_.resize(size_);
        for (std::size_t idx = 0; idx < size_; ++idx) {
            auto ind = unravel(idx);
            Vec x{}, k{};
            int par = 0;
            for (int d = 0; d < dims_; ++d) {
                x[d] = axis_[ind[d]];
                k[d] = freq_[ind[d]];
                par += ind[d];
            }
            positions_[idx] = x;
            wavevectors_[idx] = k;
            parity_[idx] = (par % 2 == 0) ? 1.0 : -1.0;
        }
        std::vector<cplx> scratch(size_);
        auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
        int n[3] = {points_, points_, points_};
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        fwd_ = fftw_plan_dft(dims_, n, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
        bwd_ = fftw_plan_dft(dims_, n, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    }

    Grid(const Grid&) = delete;
    Grid& operator=(const Grid&) = delete;

    ~Grid() {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
    }

    int dims() const { return dims_; }
    int points() const { return points_; }
    double half_width() const { return half_width_; }
    double dx() const { return dx_; }
    double dk() const { return dk_; }
    std::size_t size() const { return size_; }
    double cell_volume() const { return std::pow(dx_, dims_); }
    double nyquist() const { return std::numbers::pi / dx_; }

    const Vec& position(std::size_t idx) const { return positions_[idx]; }
    const Vec& wavevector(std::size_t idx) const { return wavevectors_[idx]; }
    // (-1)^(sum of indices): converts between the DFT of samples starting at -L and
    // the continuous transform centred at the origin.
    double parity(std::size_t idx) const { return parity_[idx]; }
    const std::vector<double>& axis() const { return axis_; }

    std::array<int, 3> unravel(std::size_t idx) const {
        std::array<int, 3> ind{0, 0, 0};
        for (int d = dims_ - 1; d >= 0; --d) {
            ind[d] = static_cast<int>(idx % points_);
            idx /= points_;
        }
        return ind;
    }

    void forward(cplx* data) const {
        auto* p = reinterpret_cast<fftw_complex*>(data);
        fftw_execute_dft(fwd_, p, p);
    }

    // Inverse transform including the 1/size normalisation.
    void backward(cplx* data) const {
        auto* p = reinterpret_cast<fftw_complex*>(data);
        fftw_execute_dft(bwd_, p, p);
        double s = 1.0 / static_cast<double>(size_);
        for (std::size_t i = 0; i < size_; ++i) data[i] *= s;
    }

private:
    int dims_ = 2;
    int points_ = 0;
    double half_width_ = 0.0;
    double dx_ = 0.0;
    double dk_ = 0.0;
    std::size_t size_ = 0;
    std::vector<double> axis_;
    std::vector<double> freq_;
    std::vector<Vec> positions_;
    std::vector<Vec> wavevectors_;
    std::vector<double> parity_;
    fftw_plan fwd_ = nullptr;
    fftw_plan bwd_ = nullptr;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr make_grid(int n_dims, int points_per_axis, double box_half_width) {
    return std::make_shared<const Grid>(n_dims, points_per_axis, box_half_width);
}

// Wavefunction on a grid plus frame metadata. The represented physical state is
//   psi(x) = exp(i boost.x) g(x - frame_center),
// with g = values sampled at grid coordinates. The boost is never sampled.
struct State {
    GridPtr grid;
    std::vector<cplx> values;
    Vec boost{};
    Vec frame_center{};
};

struct PacketProfile {
    double eta = 1.0;
    Vec center_x{};
    double bump_sharpness = 1.0;
};

inline bool same_vec(const Vec& a, const Vec& b, double tol = 1e-9) {
    for (int d = 0; d < 3; ++d)
        if (std::abs(a[d] - b[d]) > tol * (1.0 + std::abs(a[d]) + std::abs(b[d]))) return false;
    return true;
}

inline void require_same_frame(const State& a, const State& b, const char* what) {
    if (a.grid != b.grid || !same_vec(a.boost, b.boost) || !same_vec(a.frame_center, b.frame_center))
        fail(ErrorCode::FrameMismatch, std::string(what) + ": states carry different grids or frame metadata");
}

inline std::vector<cplx> spectrum(const State& s) {
    std::vector<cplx> out = s.values;
    s.grid->forward(out.data());
    return out;
}

inline void assign_spectrum(State& s, std::vector<cplx> spec) {
    s.grid->backward(spec.data());
    s.values = std::move(spec);
}

inline double norm_squared(const State& s) {
    double acc = 0.0;
    for (const auto& z : s.values) acc += std::norm(z);
    return acc * s.grid->cell_volume();
}

inline double norm(const State& s) { return std::sqrt(norm_squared(s)); }

inline double spectral_norm(const State& s) {
    auto spec = spectrum(s);
    double acc = 0.0;
    for (const auto& z : spec) acc += std::norm(z);
    return std::sqrt(acc * s.grid->cell_volume() / static_cast<double>(s.grid->size()));
}

// L2 inner product, linear in the first slot.
inline cplx inner(const State& a, const State& b) {
    require_same_frame(a, b, "inner");
    cplx acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) acc += a.values[i] * std::conj(b.values[i]);
    return acc * a.grid->cell_volume();
}

inline double distance(const State& a, const State& b) {
    require_same_frame(a, b, "distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) acc += std::norm(a.values[i] - b.values[i]);
    return std::sqrt(acc * a.grid->cell_volume());
}

inline State make_packet(const GridPtr& grid, const PacketProfile& profile) {
    if (!(profile.eta > 0.0)) fail(ErrorCode::InvalidArgument, "eta must be positive");
    if (profile.eta + 4.0 * grid->dk() > grid->nyquist())
        fail(ErrorCode::NyquistViolation, "eta = " + std::to_string(profile.eta) + " needs eta + 4 dk <= pi/dx = " +
                                              std::to_string(grid->nyquist()));
    State s;
    s.grid = grid;
    s.frame_center = profile.center_x;
    std::vector<cplx> spec(grid->size());
    for (std::size_t i = 0; i < grid->size(); ++i) {
        double r2 = norm2(grid->wavevector(i)) / (profile.eta * profile.eta);
        spec[i] = r2 < 1.0 ? grid->parity(i) * std::exp(-profile.bump_sharpness / (1.0 - r2)) : 0.0;
    }
    assign_spectrum(s, std::move(spec));
    double n = norm(s);
    for (auto& z : s.values) z /= n;
    return s;
}

inline State boost(State s, const Vec& v) {
    s.boost = s.boost + v;
    return s;
}

// Same physical state expressed around another frame centre: g'(y) = g(y + c' - c).
// Exact for band-limited g; the shift is a spectral phase.
inline State reframe(State s, const Vec& center) {
    const Vec d = center - s.frame_center;
    if (same_vec(d, Vec{}, 0.0)) return s;
    auto spec = spectrum(s);
    for (std::size_t i = 0; i < s.grid->size(); ++i) spec[i] *= std::polar(1.0, dot(s.grid->wavevector(i), d));
    assign_spectrum(s, std::move(spec));
    s.frame_center = center;
    return s;
}

template <class F>
State apply_multiplier(State s, F f) {
    const Grid& g = *s.grid;
    for (std::size_t i = 0; i < g.size(); ++i) s.values[i] *= f(g.position(i) + s.frame_center);
    return s;
}

// Multiplies by f(p) with p = boost + grid wavevector (the physical momentum).
template <class F>
State apply_momentum_function(State s, F f) {
    const Grid& g = *s.grid;
    auto spec = spectrum(s);
    for (std::size_t i = 0; i < g.size(); ++i) spec[i] *= f(g.wavevector(i) + s.boost);
    assign_spectrum(s, std::move(spec));
    return s;
}

inline State apply_momentum(State s, int axis) {
    if (axis < 0 || axis >= s.grid->dims()) fail(ErrorCode::InvalidArgument, "momentum axis out of range");
    return apply_momentum_function(std::move(s), [axis](const Vec& p) { return cplx(p[axis], 0.0); });
}

// (p_j - boost_j) acting on the state: the grid wavevector alone.
inline State apply_relative_momentum(State s, int axis) {
    if (axis < 0 || axis >= s.grid->dims()) fail(ErrorCode::InvalidArgument, "momentum axis out of range");
    Vec b = s.boost;
    return apply_momentum_function(std::move(s), [axis, b](const Vec& p) { return cplx(p[axis] - b[axis], 0.0); });
}

// The sample at -L is shared with +L on the periodic grid, so it carries no lever arm.
inline Vec position_expectation(const State& s) {
    const Grid& g = *s.grid;
    Vec acc{};
    double mass = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double w = std::norm(s.values[i]);
        Vec x = g.position(i);
        for (int d = 0; d < g.dims(); ++d)
            if (x[d] == -g.half_width()) x[d] = 0.0;
        acc = acc + w * x;
        mass += w;
    }
    return s.frame_center + (1.0 / mass) * acc;
}

inline Vec momentum_expectation(const State& s) {
    const Grid& g = *s.grid;
    auto spec = spectrum(s);
    Vec acc{};
    double mass = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double w = std::norm(spec[i]);
        acc = acc + w * g.wavevector(i);
        mass += w;
    }
    return s.boost + (1.0 / mass) * acc;
}

// Fraction of spectral mass at grid wavevectors with |xi| >= radius.
inline double spectral_mass_outside(const State& s, double radius) {
    const Grid& g = *s.grid;
    auto spec = spectrum(s);
    double out = 0.0, total = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double w = std::norm(spec[i]);
        total += w;
        if (norm2(g.wavevector(i)) >= radius * radius) out += w;
    }
    return out / total;
}

// Mass fraction within band*L of the periodic boundary on any axis.
inline double boundary_mass(const State& s, double band = 0.1) {
    const Grid& g = *s.grid;
    double edge = g.half_width() * (1.0 - band);
    double out = 0.0, total = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double w = std::norm(s.values[i]);
        total += w;
        const Vec& x = g.position(i);
        for (int d = 0; d < g.dims(); ++d) {
            if (std::abs(x[d]) >= edge) {
                out += w;
                break;
            }
        }
    }
    return out / total;
}

}  // namespace starklab
