#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include "starklab/grid.hpp"

using namespace starklab;

namespace {

std::optional<ErrorCode> code_of(auto&& fn) {
    try {
        fn();
    } catch (const LabError& e) {
        return e.code();
    }
    return std::nullopt;
}

}  // namespace

TEST(Grid, DerivedSpacings) {
    auto g = make_grid(2, 256, 20.0);
    EXPECT_DOUBLE_EQ(g->dx(), 40.0 / 256.0);
    EXPECT_DOUBLE_EQ(g->dk(), std::numbers::pi / 20.0);
    EXPECT_EQ(g->size(), 256u * 256u);
}

TEST(Grid, RejectsOneDimension) {
    EXPECT_EQ(code_of([] { make_grid(1, 64, 10.0); }), ErrorCode::DimensionTooLow);
}

TEST(Grid, RejectsNonPowerOfTwo) {
    EXPECT_EQ(code_of([] { make_grid(2, 100, 10.0); }), ErrorCode::NonPowerOfTwo);
    EXPECT_EQ(code_of([] { make_grid(2, 8, 10.0); }), ErrorCode::NonPowerOfTwo);
}

TEST(Packet, UnitNormAndCompactSpectrum) {
    auto g = make_grid(2, 256, 20.0);
    auto s = make_packet(g, {1.0, {}, 1.0});
    EXPECT_NEAR(norm(s), 1.0, 1e-10);
    EXPECT_LT(spectral_mass_outside(s, 1.0), 1e-10);
    EXPECT_NEAR(inner(s, s).real(), 1.0, 1e-10);
    EXPECT_NEAR(inner(s, s).imag(), 0.0, 1e-14);
}

TEST(Packet, CentredWhereRequested) {
    auto g = make_grid(2, 256, 20.0);
    auto s = make_packet(g, {1.0, {3.0, 0.0, 0.0}, 1.0});
    // Trapezoid quadrature of x |psi|^2 over the closed box [-L, L]^2; the periodic
    // edge sample is split between both faces.
    double mx = 0.0, my = 0.0, mass = 0.0;
    int n = g->points();
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            double wt = (i == 0 || i == n ? 0.5 : 1.0) * (j == 0 || j == n ? 0.5 : 1.0);
            double w = wt * std::norm(s.values[(i % n) * n + (j % n)]) * g->cell_volume();
            double x = -20.0 + i * g->dx(), y = -20.0 + j * g->dx();
            mx += w * (x + s.frame_center[0]);
            my += w * (y + s.frame_center[1]);
            mass += w;
        }
    EXPECT_NEAR(mx / mass, 3.0, 1e-6);
    EXPECT_NEAR(my / mass, 0.0, 1e-6);
    auto e = position_expectation(s);
    EXPECT_NEAR(e[0], 3.0, 1e-6);
}

TEST(Packet, NyquistMarginEnforced) {
    auto g = make_grid(2, 64, 10.0);  // dx = 0.3125
    EXPECT_EQ(code_of([&] { make_packet(g, {10.0, {}, 1.0}); }), ErrorCode::NyquistViolation);
}

TEST(Packet, ThreeDimensionalPacket) {
    auto g = make_grid(3, 32, 8.0);
    auto s = make_packet(g, {2.0, {}, 1.0});
    EXPECT_NEAR(norm(s), 1.0, 1e-10);
    EXPECT_LT(spectral_mass_outside(s, 2.0), 1e-10);
}

TEST(Boost, IdentityAndInverse) {
    auto g = make_grid(2, 64, 8.0);
    auto s = make_packet(g, {2.0, {}, 1.0});
    auto b0 = boost(s, {0.0, 0.0, 0.0});
    EXPECT_EQ(b0.values, s.values);
    auto back = boost(boost(s, {3.5, -7.25, 0.0}), {-3.5, 7.25, 0.0});
    for (int d = 0; d < 3; ++d) EXPECT_NEAR(back.boost[d], 0.0, 1e-12);
    EXPECT_NEAR(std::abs(inner(back, s) - cplx(1.0, 0.0)), 0.0, 1e-12);
}

TEST(Boost, MomentumExpectationShifts) {
    auto g = make_grid(2, 128, 12.0);
    auto s = make_packet(g, {2.0, {}, 1.0});
    // Oracle for <p> of the unboosted packet: centred differences of the samples.
    double px = 0.0, py = 0.0;
    int n = g->points();
    for (int i = 1; i + 1 < n; ++i)
        for (int j = 1; j + 1 < n; ++j) {
            cplx z = s.values[i * n + j];
            cplx dx = (s.values[(i + 1) * n + j] - s.values[(i - 1) * n + j]) / (2.0 * g->dx());
            cplx dy = (s.values[i * n + j + 1] - s.values[i * n + j - 1]) / (2.0 * g->dx());
            px += (std::conj(z) * cplx(0, -1) * dx).real() * g->cell_volume();
            py += (std::conj(z) * cplx(0, -1) * dy).real() * g->cell_volume();
        }
    auto b = boost(s, {0.0, 8.0, 0.0});
    auto p = momentum_expectation(b);
    EXPECT_NEAR(p[0], px, 1e-6);
    EXPECT_NEAR(p[1], 8.0 + py, 1e-6);
}

TEST(Observables, InnerIsLinearInFirstSlot) {
    auto g = make_grid(2, 64, 8.0);
    auto a = make_packet(g, {2.0, {}, 1.0});
    auto b = apply_multiplier(a, [](const Vec& x) { return cplx(std::cos(x[0]), std::sin(x[1])); });
    cplx c(0.3, -1.7);
    State ca = a;
    for (auto& z : ca.values) z *= c;
    EXPECT_NEAR(std::abs(inner(ca, b) - c * inner(a, b)), 0.0, 1e-13);
    EXPECT_NEAR(std::abs(inner(b, ca) - std::conj(c) * inner(b, a)), 0.0, 1e-13);
}

TEST(Observables, MomentumOfBoostedPacket) {
    auto g = make_grid(2, 128, 12.0);
    auto phi0 = make_packet(g, {2.0, {0.5, -0.25, 0.0}, 1.0});
    Vec v{1.5, 9.0, 0.0};
    auto phiv = boost(phi0, v);
    for (int j = 0; j < 2; ++j) {
        cplx lhs = inner(phiv, apply_momentum(phiv, j)) - v[j];
        cplx rhs = inner(phi0, apply_momentum(phi0, j));
        EXPECT_NEAR(std::abs(lhs - rhs), 0.0, 1e-8);
        // (p_j - v_j) Phi_v equals the boost of p_j Phi_0.
        auto rel = apply_relative_momentum(phiv, j);
        auto ref = boost(apply_momentum(phi0, j), v);
        EXPECT_NEAR(std::abs(inner(rel, rel) - inner(ref, rel)), 0.0, 1e-10);
    }
}

TEST(Observables, UnitMultiplierIsIdentity) {
    auto g = make_grid(2, 64, 8.0);
    auto a = make_packet(g, {2.0, {}, 1.0});
    auto b = apply_multiplier(a, [](const Vec&) { return 1.0; });
    EXPECT_EQ(a.values, b.values);
}

TEST(Observables, FrameMismatchDetected) {
    auto g = make_grid(2, 64, 8.0);
    auto a = make_packet(g, {2.0, {}, 1.0});
    auto b = boost(a, {0.0, 1.0, 0.0});
    EXPECT_EQ(code_of([&] { inner(a, b); }), ErrorCode::FrameMismatch);
    auto c = make_packet(g, {2.0, {1.0, 0.0, 0.0}, 1.0});
    EXPECT_EQ(code_of([&] { inner(a, c); }), ErrorCode::FrameMismatch);
    auto g2 = make_grid(2, 64, 8.0);
    auto d = make_packet(g2, {2.0, {}, 1.0});
    EXPECT_EQ(code_of([&] { inner(a, d); }), ErrorCode::FrameMismatch);
}

TEST(Properties, ParsevalOnRandomStates) {
    auto g = make_grid(2, 64, 8.0);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 5; ++trial) {
        State s;
        s.grid = g;
        s.values.resize(g->size());
        for (auto& z : s.values) z = {n01(rng), n01(rng)};
        EXPECT_NEAR(norm(s), spectral_norm(s), 1e-12 * norm(s));
    }
}

TEST(Properties, BoostCovarianceAcrossAxes) {
    auto g = make_grid(2, 128, 12.0);
    auto phi0 = make_packet(g, {2.0, {1.0, 1.0, 0.0}, 1.0});
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-20.0, 20.0);
    for (int trial = 0; trial < 4; ++trial) {
        Vec v{u(rng), u(rng), 0.0};
        auto phiv = boost(phi0, v);
        for (int j = 0; j < 2; ++j) {
            cplx lhs = inner(phiv, apply_momentum(phiv, j));
            cplx rhs = inner(phi0, apply_momentum(phi0, j)) + v[j];
            EXPECT_NEAR(std::abs(lhs - rhs), 0.0, 1e-8);
        }
    }
}

TEST(Properties, PacketSupportForSeveralRadii) {
    auto g = make_grid(2, 128, 16.0);
    for (double eta : {0.5, 1.0, 2.0, 4.0}) {
        auto s = make_packet(g, {eta, {}, 1.0});
        EXPECT_LT(spectral_mass_outside(s, eta), 1e-10) << eta;
    }
}

TEST(Frames, ReframeKeepsPhysicalState) {
    auto g = make_grid(2, 64, 12.0);
    auto s = starklab::boost(make_packet(g, {2.0, {0.5, -0.25, 0.0}}), {0.3, 1.0, 0.0});
    auto r = reframe(s, {1.25, 0.5, 0.0});
    EXPECT_NEAR(norm(r), norm(s), 1e-12);
    Vec a = position_expectation(s), b = position_expectation(r);
    // Only approximately: the periodic tails wrap differently around the two centres.
    for (int d = 0; d < 2; ++d) EXPECT_NEAR(a[d], b[d], 1e-3);
    // Sample check: physical value at grid point x of the new frame equals the old one.
    const Vec d{0.75, 0.75, 0.0};
    std::size_t idx = 0;
    for (std::size_t i = 0; i < g->size(); ++i)
        if (length(g->position(i) - Vec{1.5, -2.25, 0.0}) < 1e-12) idx = i;
    std::size_t jdx = 0;
    for (std::size_t i = 0; i < g->size(); ++i)
        if (length(g->position(i) - (Vec{1.5, -2.25, 0.0} + d)) < 1e-12) jdx = i;
    EXPECT_LT(std::abs(r.values[idx] - s.values[jdx]), 1e-10);
    auto back = reframe(r, s.frame_center);
    EXPECT_LT(distance(back, s), 1e-12);
}
