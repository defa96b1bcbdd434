#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>

#include "starklab/reconstruction.hpp"

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

PotentialSpec phantom(double first_amplitude = 0.3) {
    PotentialSpec V;
    V.s_part = Part{{GaussianForm{first_amplitude, {-0.7, 0.5, 0.0}, {1.2, 0.9, 1.0}},
                     GaussianForm{0.2, {0.9, -0.6, 0.0}, {0.9, 1.4, 1.0}}}};
    return V;
}

// Narrow in position so the smear is mild, yet 4 eta stays below the grid Nyquist.
State probe() { return make_packet(make_grid(2, 32, 8.0), {3.0}); }

// Closed form of d_j int V(x + vhat tau) dtau for one anisotropic gaussian.
double line_gradient(const GaussianForm& g, const Vec& x, const Vec& vhat, int j) {
    double A = 0.0, B = 0.0, C = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double w2 = g.width[i] * g.width[i], d = x[i] - g.center[i];
        A += vhat[i] * vhat[i] / w2;
        B += d * vhat[i] / w2;
        C += d * d / w2;
    }
    const double w2 = g.width[j] * g.width[j];
    const double integral = g.amplitude * std::sqrt(std::numbers::pi / A) * std::exp(-(C - B * B / A));
    return -(2.0 * (x[j] - g.center[j]) / w2 - 2.0 * B * vhat[j] / (w2 * A)) * integral;
}

double smeared_line_gradient(const PotentialSpec& V, const State& phi, const Vec& vhat, int j) {
    const Grid& g = *phi.grid;
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec x = g.position(i) + phi.frame_center;
        double grad = 0.0;
        for (const auto& form : V.s_part->terms) grad += line_gradient(std::get<GaussianForm>(form), x, vhat, j);
        acc += grad * std::norm(phi.values[i]) * g.cell_volume();
    }
    return acc;
}

// The true gradient restricted to the Fourier directions the angle set sees: xi with
// |xi_1| / |xi| >= sqrt(1 - delta^2). Zero-padded separable DFT on the raster.
Raster wedge_filtered(const Raster& f, double delta) {
    const int n = f.n, N = 2 * n;
    std::vector<cplx> a(static_cast<std::size_t>(N) * N, 0.0);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) a[j * N + i] = f.at(i, j);
    auto pass = [&](bool along_rows, int sign) {
        std::vector<cplx> b(a.size());
        for (int r = 0; r < N; ++r)
            for (int k = 0; k < N; ++k) {
                cplx s = 0.0;
                for (int m = 0; m < N; ++m)
                    s += (along_rows ? a[r * N + m] : a[m * N + r]) *
                         std::polar(1.0, sign * 2.0 * std::numbers::pi * k * m / N);
                (along_rows ? b[r * N + k] : b[k * N + r]) = s;
            }
        a = std::move(b);
    };
    pass(true, -1);
    pass(false, -1);
    const double c = std::sqrt(1.0 - delta * delta);
    for (int j = 0; j < N; ++j)
        for (int i = 0; i < N; ++i) {
            const double k1 = i < N / 2 ? i : i - N, k2 = j < N / 2 ? j : j - N;
            const double r = std::hypot(k1, k2);
            if (r > 0.0 && std::abs(k1) / r < c) a[j * N + i] = 0.0;
        }
    pass(true, 1);
    pass(false, 1);
    Raster out = f;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) out.at(i, j) = a[j * N + i].real() / (N * N);
    return out;
}

ExperimentPlan plan_for(int angles, int offsets, double delta) {
    ExperimentPlan plan;
    plan.angles = admissible_angles(angles, delta);
    plan.offsets = even_offsets(offsets, 6.0);
    plan.delta_max = delta;
    plan.axes = {0};
    return plan;
}

const std::vector<RadonSample>& synthetic(double delta) {
    static std::map<double, std::vector<RadonSample>> cache;
    auto it = cache.find(delta);
    if (it == cache.end()) it = cache.emplace(delta, synthesize_samples(phantom(), plan_for(32, 25, delta), probe())).first;
    return it->second;
}

ReconstructionGrid recon(double delta) {
    ReconstructionGrid rg;
    rg.delta_max = delta;
    return rg;
}

}  // namespace

TEST(RhsDirect, ZeroPotentialGivesZero) {
    auto phi = probe();
    EXPECT_EQ(rhs_direct(PotentialSpec{}, direction_at(1.0), phi, phi, 0), cplx(0.0));
}

TEST(RhsDirect, MatchesClosedFormLineSmear) {
    const auto V = phantom();
    auto phi = translate(probe(), {0.4, -0.3, 0.0});
    for (double angle : {0.7, 1.9})
        for (int j : {0, 1}) {
            const Vec vhat = direction_at(angle);
            const cplx got = rhs_direct(V, vhat, phi, phi, j);
            const double want = smeared_line_gradient(V, phi, vhat, j);
            EXPECT_NEAR(got.real(), 0.0, 1e-10);
            EXPECT_NEAR(got.imag(), want, 1e-6 * std::abs(want)) << "angle " << angle << " j " << j;
        }
}

TEST(RhsDirect, LinearInVeryShortPart) {
    auto grid = make_grid(2, 32, 8.0);
    auto phi = make_packet(grid, {1.5});
    auto psi = make_packet(grid, {1.5, Vec{0.5, 0.2, 0.0}});
    PotentialSpec V, V3;
    V.vs_part = Part{{GaussianForm{0.5, {0.2, -0.1, 0.0}, {0.8, 0.8, 1.0}}}};
    V3.vs_part = Part{{GaussianForm{1.5, {0.2, -0.1, 0.0}, {0.8, 0.8, 1.0}}}};
    const cplx one = rhs_direct(V, direction_at(1.2), phi, psi, 1);
    const cplx three = rhs_direct(V3, direction_at(1.2), phi, psi, 1);
    ASSERT_GT(std::abs(one), 1e-4);
    EXPECT_LE(std::abs(three - 3.0 * one), 1e-10 * std::abs(three));
}

TEST(RhsDirect, RejectsDirectionAlongField) {
    auto phi = probe();
    EXPECT_EQ(code_of([&] { rhs_direct(phantom(), {1.0, 0.0, 0.0}, phi, phi, 0); }), ErrorCode::DirectionInadmissible);
    EXPECT_EQ(code_of([&] { rhs_direct(phantom(), {0.6, 0.6, 0.0}, phi, phi, 0); }), ErrorCode::InvalidArgument);
}

TEST(Samples, ZeroPotentialGivesZero) {
    auto plan = plan_for(1, 3, 0.9);
    plan.axes = {0, 1};
    for (const auto& s : collect_samples(PotentialSpec{}, plan, probe())) EXPECT_LE(std::abs(s.value), 1e-8);
}

TEST(Samples, MeasuredProfileMatchesRhsDirect) {
    const auto V = phantom();
    ExperimentPlan plan;
    plan.angles = {std::numbers::pi / 3.0};
    plan.offsets = even_offsets(17, 4.0);
    plan.axes = {1};
    const auto measured = collect_samples(V, plan, probe());
    const auto direct = synthesize_samples(V, plan, probe());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < measured.size(); ++i) {
        num += std::norm(measured[i].value - direct[i].value);
        den += std::norm(direct[i].value);
    }
    EXPECT_LE(std::sqrt(num / den), 0.05);
}

TEST(Samples, RichardsonLimitWithinBracket) {
    const auto V = phantom();
    ExperimentPlan plan;
    plan.angles = {1.2};
    plan.offsets = {-1.0, 0.0, 1.0};
    plan.axes = {0};
    plan.speeds = {16.0, 32.0};
    auto phi = probe();
    for (const auto& s : collect_samples(V, plan, phi)) {
        ASSERT_EQ(s.raw.size(), 2u);
        EXPECT_TRUE(within_bracket(s.raw, s.value));
        const State moved = translate(phi, s.offset * normal_of(s.vhat));
        const cplx truth = rhs_direct(V, s.vhat, moved, moved, 0);
        // The limit itself lies inside the bracket around the fastest sample.
        EXPECT_LE(std::abs(truth - s.raw[1]), std::abs(s.raw[1] - s.raw[0]));
    }
}

TEST(Samples, RichardsonIsExactForFirstOrderError) {
    const cplx limit(0.2, -1.0), c(0.5, 0.25);
    std::vector<double> speeds{4.0, 8.0, 16.0};
    std::vector<cplx> values;
    for (double v : speeds) values.push_back(limit + c / v);
    EXPECT_LE(std::abs(richardson(speeds, values) - limit), 1e-14);
}

TEST(Inversion, ZeroDataGivesZero) {
    auto samples = synthetic(0.9);
    for (auto& s : samples) s.value = 0.0;
    const auto r = invert(samples, probe(), recon(0.9));
    double peak = 0.0;
    for (double x : r.potential.values) peak = std::max(peak, std::abs(x));
    EXPECT_LE(peak, 1e-6 * 0.3);
}

TEST(Inversion, ClosedLoopRecoversPhantom) {
    const auto V = phantom();
    const auto r = invert(synthetic(0.9), probe(), recon(0.9), &V);
    ASSERT_TRUE(r.relative_error.has_value());
    EXPECT_LE(*r.relative_error, 0.05);
    EXPECT_LE(r.curl_ratio, 0.05);
    EXPECT_EQ(r.angles, 32);
}

TEST(Inversion, LimitedAngleGradientMatchesWedgeOracle) {
    const auto V = phantom();
    const auto wide = invert(synthetic(0.9), probe(), recon(0.9), &V);
    const auto narrow = invert(synthetic(0.5), probe(), recon(0.5), &V);
    EXPECT_GT(*narrow.relative_error, *wide.relative_error);
    const auto rg = recon(0.5);
    auto truth = [&](int j) {
        return sample_raster(rg.raster, rg.half_width, [&](const Vec& x) { return V.s_part->gradient(x)[j]; });
    };
    EXPECT_LE(relative_error_on_disk(narrow.grad1, wedge_filtered(truth(0), 0.5), rg.error_radius), 0.10);
    EXPECT_LE(relative_error_on_disk(narrow.grad2, wedge_filtered(truth(1), 0.5), rg.error_radius), 0.10);
}

TEST(Inversion, RejectsTooFewAngles) {
    const auto samples = synthesize_samples(phantom(), plan_for(4, 9, 0.9), probe());
    EXPECT_EQ(code_of([&] { invert(samples, probe(), recon(0.9)); }), ErrorCode::InsufficientAngles);
    EXPECT_EQ(code_of([&] { invert({}, probe(), recon(0.9)); }), ErrorCode::InsufficientAngles);
}

TEST(Inversion, RejectsIllConditionedDeconvolution) {
    auto rg = recon(0.9);
    rg.tikhonov_floor = 0.5;
    EXPECT_EQ(code_of([&] { invert(synthetic(0.9), probe(), rg); }), ErrorCode::IllConditionedDeconvolution);
}

TEST(Inversion, DistinctPotentialsGiveDistinctData) {
    const auto V1 = phantom(), V2 = phantom(0.36);
    const auto r1 = sample_raster(64, 6.0, [&](const Vec& x) { return V1.value(x); });
    const auto r2 = sample_raster(64, 6.0, [&](const Vec& x) { return V2.value(x); });
    ASSERT_GE(relative_error_on_disk(r2, r1, 3.0), 0.10);

    const auto plan = plan_for(4, 9, 0.9);
    const auto m1 = collect_samples(V1, plan, probe()), m2 = collect_samples(V2, plan, probe());
    const auto d1 = synthesize_samples(V1, plan, probe());
    double floor = 0.0, gap = 0.0;
    for (std::size_t i = 0; i < m1.size(); ++i) {
        floor += std::norm(m1[i].value - d1[i].value);
        gap += std::norm(m1[i].value - m2[i].value);
    }
    EXPECT_GT(std::sqrt(gap), std::sqrt(floor));
}

TEST(Output, SamplesTableRoundTrips) {
    const auto plan = plan_for(2, 5, 0.9);
    const auto samples = synthesize_samples(phantom(), plan, probe());
    const auto path = std::filesystem::temp_directory_path() / "starklab_samples_test.csv";
    write_csv(path, samples_table(samples));
    const auto t = read_csv(path);
    EXPECT_EQ(t.schema, "radon_samples");
    ASSERT_EQ(t.rows.size(), samples.size());
    const int im = t.column("value_im"), j = t.column("j");
    ASSERT_GE(im, 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        EXPECT_NEAR(std::stod(t.rows[i][im]), samples[i].value.imag(), 1e-11 * std::abs(samples[i].value.imag()) + 1e-300);
        EXPECT_EQ(t.rows[i][j], "1");
    }
    std::filesystem::remove(path);
}

TEST(Output, RasterFileHasHeaderAndMatrix) {
    const auto r = sample_raster(5, 2.0, [](const Vec& x) { return x[0] + 10.0 * x[1]; });
    const auto path = std::filesystem::temp_directory_path() / "starklab_raster_test.txt";
    write_raster(path, r, {{"kind", "test"}});
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_NE(header.find("schema=raster"), std::string::npos);
    EXPECT_NE(header.find("n=5"), std::string::npos);
    EXPECT_NE(header.find("kind=test"), std::string::npos);
    double first = 0.0;
    in >> first;
    EXPECT_DOUBLE_EQ(first, r.at(0, 0));
    std::filesystem::remove(path);
}
