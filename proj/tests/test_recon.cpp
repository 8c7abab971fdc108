#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bridgefov/phantom.hpp"
#include "bridgefov/recon.hpp"

using namespace bridgefov;

namespace {

Image water_disk(const Grid& grid, double radius) {
    Phantom ph;
    ph.ellipses.emplace_back(0, 0, radius, radius, 0, 1000);
    return rasterize(ph, grid.width, grid.height, grid.spacing);
}

Sinogram analytic_cylinder(const ScanGeometry& g, double radius, double mu) {
    Sinogram s(g);
    for (int i = 0; i < g.n_angles; ++i)
        for (int j = 0; j < g.n_channels; ++j) {
            const double off = g.channel_offset(j);
            s.at(i, j) = std::abs(off) < radius ? 2.0 * mu * std::sqrt(radius * radius - off * off) : 0.0;
        }
    return s;
}

double masked_mean(const Image& img, const PixelMask& m) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < img.size(); ++i)
        if (m.selected[i]) {
            s += img.values[i];
            ++n;
        }
    return s / static_cast<double>(n);
}

double masked_mae(const Image& a, const Image& b, const PixelMask& m) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (m.selected[i]) {
            s += std::abs(a.values[i] - b.values[i]);
            ++n;
        }
    return s / static_cast<double>(n);
}

double rms_diff(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

TEST(RampKernel, FormulaValues) {
    EXPECT_DOUBLE_EQ(ramp_kernel(0, 1.0), 0.25);
    EXPECT_DOUBLE_EQ(ramp_kernel(1, 1.0), -1.0 / (std::numbers::pi * std::numbers::pi));
    EXPECT_DOUBLE_EQ(ramp_kernel(-1, 1.0), ramp_kernel(1, 1.0));
    EXPECT_EQ(ramp_kernel(2, 1.0), 0.0);
    EXPECT_EQ(ramp_kernel(-4, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(ramp_kernel(3, 2.0), -1.0 / (36.0 * std::numbers::pi * std::numbers::pi));
    EXPECT_DOUBLE_EQ(ramp_kernel(0, 1.5), 1.0 / 9.0);
}

TEST(RampFilter, ZeroRowStaysZero) {
    const ScanGeometry g;
    for (double v : ramp_filter(Sinogram(g)).values) EXPECT_EQ(v, 0.0);
}

TEST(RampFilter, ConstantRowSuppressedAtCenter) {
    ScanGeometry g;
    g.n_angles = 1;
    g.n_channels = 1025;
    g.channel_spacing = 1.0;
    g.fov_radius = 100.0;
    Sinogram s(g);
    for (auto& v : s.values) v = 3.0;
    const Sinogram f = ramp_filter(s);
    const double peak = 3.0 * ramp_kernel(0, 1.0);
    EXPECT_LT(std::abs(f.at(0, 512)), 1e-3 * peak);
}

TEST(RampFilter, MatchesDirectConvolution) {
    ScanGeometry g;
    g.n_angles = 2;
    g.n_channels = 9;
    g.channel_spacing = 0.5;
    g.fov_radius = 1.0;
    Sinogram s(g);
    for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = std::sin(0.7 * static_cast<double>(i)) + 0.1 * i;
    const Sinogram f = ramp_filter(s);
    for (int a = 0; a < 2; ++a)
        for (int j = 0; j < 9; ++j) {
            double acc = 0.0;
            for (int m = 0; m < 9; ++m) acc += 0.5 * ramp_kernel(j - m, 0.5) * s.at(a, m);
            EXPECT_NEAR(f.at(a, j), acc, 1e-12);
        }
}

TEST(Fbp, ZeroSinogramGivesZeroAttenuation) {
    const ScanGeometry g;
    for (double v : fbp_mu(Sinogram(g), g).values) EXPECT_EQ(v, 0.0);
    for (double v : fbp(Sinogram(g), g).values) EXPECT_DOUBLE_EQ(v, -1000.0);
}

TEST(Fbp, UntruncatedWaterDiskIsWater) {
    ScanGeometry fine;
    fine.grid = {64, 64, 1.0};
    fine.n_channels = 129;
    fine.channel_spacing = 1.0;
    fine.fov_radius = 64.0;
    ScanGeometry desk;
    desk.fov_radius = desk.half_width();
    for (const ScanGeometry& g : {fine, desk}) {
        const Image truth = water_disk(g.grid, 20.0);
        const Image rec = fbp(forward_project(hu_to_mu(truth), g), g);
        EXPECT_NEAR(masked_mean(rec, disk_mask(g.grid, 15.0)), 0.0, 30.0) << "spacing " << g.grid.spacing;
        EXPECT_NEAR(masked_mean(rec, annulus_mask(g.grid, 25.0, 30.0)), -1000.0, 30.0);
    }
}

TEST(Fbp, TruncationProducesCupping) {
    const ScanGeometry g;
    Phantom ph;
    ph.ellipses.emplace_back(0, 0, 55, 50, 0, 1000);
    const Image truth = rasterize(ph, 64, 64, 2.0);
    const Image rec = fbp(truncate(forward_project(hu_to_mu(truth), g), g.fov_radius), g);
    EXPECT_GT(masked_mean(rec, annulus_mask(g.grid, 30.0, 40.0)), masked_mean(rec, disk_mask(g.grid, 20.0)) + 50.0);
}

TEST(Fbp, LinearInAttenuationUnits) {
    const ScanGeometry g;
    const Sinogram s = forward_project(hu_to_mu(rasterize(sample_phantom(1, PhantomConfig{}), 64, 64, 2.0)), g);
    Sinogram scaled = s;
    for (auto& v : scaled.values) v *= -2.5;
    const Image a = fbp_mu(s, g), b = fbp_mu(scaled, g);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(b.values[i], -2.5 * a.values[i], 1e-12);
}

TEST(Fbp, RejectsShapeMismatch) {
    const ScanGeometry g;
    ScanGeometry other = g;
    other.n_channels = 64;
    other.fov_radius = 10.0;
    EXPECT_THROW(fbp(Sinogram(other), g), std::invalid_argument);
}

TEST(Wce, CompleteSinogramPassesThrough) {
    const ScanGeometry g;
    const Sinogram s = forward_project(hu_to_mu(water_disk(g.grid, 30.0)), g);
    const Sinogram out = wce_extrapolate(s, WceParams{});
    EXPECT_EQ(out.values, s.values);
    EXPECT_EQ(wce_extrapolate(out, WceParams{}).values, out.values);
    EXPECT_EQ(reconstruct_wce(s, g, WceParams{}).values, fbp(s, g).values);
}

TEST(Wce, ExactCylinderRowsRecovered) {
    ScanGeometry g;
    const Sinogram full = analytic_cylinder(g, 25.0, 0.02);
    const Sinogram ext = wce_extrapolate(truncate(full, 20.0), WceParams{});
    for (int i = 0; i < g.n_angles; ++i) {
        double num = 0.0, den = 0.0;
        for (int j = 0; j < g.n_channels; ++j) {
            const double d = ext.at(i, j) - full.at(i, j);
            num += d * d;
            den += full.at(i, j) * full.at(i, j);
        }
        ASSERT_LT(std::sqrt(num / den), 0.02) << "row " << i;
    }
}

TEST(Wce, ProjectedCylinderRowsRecovered) {
    ScanGeometry g;
    const Sinogram full = forward_project(hu_to_mu(water_disk(g.grid, 25.0)), g);
    const Sinogram cut = truncate(full, 20.0);
    const Sinogram ext = wce_extrapolate(cut, WceParams{});
    double num = 0.0, num_cut = 0.0, den = 0.0;
    for (std::size_t k = 0; k < full.values.size(); ++k) {
        num += (ext.values[k] - full.values[k]) * (ext.values[k] - full.values[k]);
        num_cut += (cut.values[k] - full.values[k]) * (cut.values[k] - full.values[k]);
        den += full.values[k] * full.values[k];
    }
    // pixel staircasing perturbs the edge slope, so the bound is looser than for analytic rows
    EXPECT_LT(std::sqrt(num / den), 0.1);
    EXPECT_LT(num, 0.1 * num_cut);
}

TEST(Wce, ZeroBoundaryFillsZeros) {
    ScanGeometry g;
    const Sinogram full = analytic_cylinder(g, 10.0, 0.02);  // object fits well inside the FOV
    const Sinogram ext = wce_extrapolate(truncate(full, 20.0), WceParams{});
    for (int i = 0; i < g.n_angles; ++i)
        for (int j = 0; j < g.n_channels; ++j)
            if (std::abs(g.channel_offset(j)) > 20.0) {
                ASSERT_EQ(ext.at(i, j), 0.0);
            }
}

TEST(Wce, MeasuredChannelsUntouchedOutsideBlend) {
    const ScanGeometry g;
    const Sinogram s = add_noise(truncate(forward_project(hu_to_mu(rasterize(sample_phantom(4, PhantomConfig{}), 64, 64, 2.0)), g),
                                          g.fov_radius),
                                 NoiseModel{}, 9);
    WceParams p;
    const Sinogram ext = wce_extrapolate(s, p);
    int first = -1, last = -1;
    for (int j = 0; j < g.n_channels; ++j)
        if (s.measured[j]) {
            if (first < 0) first = j;
            last = j;
        }
    for (int i = 0; i < g.n_angles; ++i)
        for (int j = first + p.transition_blend; j <= last - p.transition_blend; ++j) ASSERT_EQ(ext.at(i, j), s.at(i, j));
    EXPECT_TRUE(ext.fully_measured());
    for (double v : ext.values) ASSERT_TRUE(std::isfinite(v));
}

TEST(Wce, RejectsNonContiguousOrEmptyMask) {
    const ScanGeometry g;
    Sinogram s = truncate(Sinogram(g), g.fov_radius);
    s.measured[g.n_channels / 2] = 0;
    EXPECT_THROW(wce_extrapolate(s, WceParams{}), UnsupportedInput);
    EXPECT_THROW(wce_extrapolate(truncate(Sinogram(g), 0.0), WceParams{}), UnsupportedInput);
}

TEST(Wce, OutwardGrowingSlopeClampsToTangentCylinder) {
    const auto cyl = detail::fit_edge_cylinder(0.5, +0.1, 0.02);
    EXPECT_EQ(cyl.offset, 0.0);
    EXPECT_NEAR(cyl(0.0), 0.5, 1e-12);
    EXPECT_LT(cyl(1.0), 0.5);
    EXPECT_EQ(cyl(0.5 / 0.04 + 1e-9), 0.0);
    // consistent slope: the fitted cylinder reproduces value and slope at the edge
    const double R = 25.0, s0 = 20.0, mu = 0.02;
    const double P = 2 * mu * std::sqrt(R * R - s0 * s0), dP = -2 * mu * s0 / std::sqrt(R * R - s0 * s0);
    const auto fit = detail::fit_edge_cylinder(P, dP, mu);
    EXPECT_NEAR(fit.offset, s0, 1e-9);
    EXPECT_NEAR(std::sqrt(fit.radius2), R, 1e-9);
}

TEST(Wce, BoundarySlopeEstimators) {
    // p(s) = 1 + 2 s + 3 s^2 sampled at s = 0, -d, -2d, ... ; outward derivative at 0 is 2
    for (double delta : {0.5, 1.5})
        for (int window : {3, 4, 6}) {
            std::vector<double> v(window);
            for (int i = 0; i < window; ++i) {
                const double s = -i * delta;
                v[i] = 1 + 2 * s + 3 * s * s;
            }
            EXPECT_NEAR(detail::boundary_slope(v, delta), 2.0, 1e-9) << delta << " " << window;
        }
    EXPECT_NEAR(detail::boundary_slope({5.0, 4.0}, 0.5), 2.0, 1e-12);
}

TEST(Wce, ModelMatchedCylinderBeatsPlainFbp) {
    const ScanGeometry g;
    const Image truth = water_disk(g.grid, 50.0);
    const Sinogram tr = truncate(forward_project(hu_to_mu(truth), g), g.fov_radius);
    EXPECT_LT(rms_diff(reconstruct_wce(tr, g, WceParams{}), truth), rms_diff(fbp(tr, g), truth));
}

TEST(Wce, ReducesBoundaryCuppingOnRandomPhantoms) {
    const ScanGeometry g;
    const PixelMask ring = annulus_mask(g.grid, 0.75 * g.fov_radius, g.fov_radius);
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Image truth = rasterize(sample_phantom(seed, PhantomConfig{}), 64, 64, 2.0);
        const Sinogram s = add_noise(truncate(forward_project(hu_to_mu(truth), g), g.fov_radius), NoiseModel{}, seed);
        wins += masked_mae(reconstruct_wce(s, g, WceParams{}), truth, ring) < masked_mae(fbp(s, g), truth, ring);
    }
    EXPECT_GE(wins, 18);
}
