#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "bridgefov/image.hpp"
#include "bridgefov/phantom.hpp"
#include "bridgefov/projector.hpp"

namespace bridgefov {

using FovMask = PixelMask;

inline FovMask fov_mask(const ScanGeometry& geom) { return disk_mask(geom.grid, geom.fov_radius); }

struct WceParams {
    double mu_water = kDefaultMuWater;
    int slope_window = 3;  // channels used for the boundary derivative
    int transition_blend = 3;  // measured channels tapered toward the fitted cylinder

    void validate() const {
        if (!(mu_water > 0.0)) throw std::invalid_argument("wce: mu_water must be positive");
        if (slope_window < 2) throw std::invalid_argument("wce: slope_window must be >= 2");
        if (transition_blend < 0) throw std::invalid_argument("wce: transition_blend must be >= 0");
    }
};

/// Band-limited ramp kernel sample h[n] for channel spacing delta.
inline double ramp_kernel(int n, double delta) {
    if (n == 0) return 1.0 / (4.0 * delta * delta);
    if (n % 2 == 0) return 0.0;
    const double d = std::numbers::pi * n * delta;
    return -1.0 / (d * d);
}

/// Linear (zero-padded) convolution of each row with the ramp kernel. The
/// convolution sum is weighted by the channel spacing so that the output
/// approximates the continuous filtered projection.
inline Sinogram ramp_filter(const Sinogram& sino) {
    const int nc = sino.n_channels();
    const double delta = sino.geometry.channel_spacing;
    std::vector<double> kernel(2 * nc - 1);
    for (int n = -(nc - 1); n <= nc - 1; ++n) kernel[n + nc - 1] = delta * ramp_kernel(n, delta);

    Sinogram out = sino;
    for (int i = 0; i < sino.n_angles(); ++i) {
        const double* row = &sino.values[static_cast<std::size_t>(i) * nc];
        double* dst = &out.values[static_cast<std::size_t>(i) * nc];
        for (int j = 0; j < nc; ++j) {
            double acc = 0.0;
            for (int m = 0; m < nc; ++m) acc += kernel[j - m + nc - 1] * row[m];
            dst[j] = acc;
        }
    }
    return out;
}

/// Filtered backprojection in mm^-1.
inline Image fbp_mu(const Sinogram& sino, const ScanGeometry& geom) {
    detail::require_shape(sino, geom, "fbp");
    Image img = backproject(ramp_filter(sino), geom);
    // Angular step times the footprint normalization of the ray-driven adjoint
    // (each pixel's bilinear footprint integrates to spacing^2 over offsets).
    const double scale = geom.angular_range / geom.n_angles * geom.channel_spacing /
                         (geom.grid.spacing * geom.grid.spacing);
    for (auto& v : img.values) v *= scale;
    return img;
}

/// Filtered backprojection, HU output.
inline Image fbp(const Sinogram& sino, const ScanGeometry& geom, double mu_water = kDefaultMuWater) {
    return mu_to_hu(fbp_mu(sino, geom), mu_water);
}

namespace detail {

/// Outward derivative at the boundary sample values[0] with values[i] taken i
/// channels inward. Two samples give a one-sided difference; three or more
/// give a least-squares quadratic fit, which for three samples is the
/// second-order one-sided difference (3p0 - 4p1 + p2) / (2 delta).
inline double boundary_slope(const std::vector<double>& inward, double delta) {
    const int n = static_cast<int>(inward.size());
    if (n == 2) return (inward[0] - inward[1]) / delta;
    // Fit p(tau) = c0 + c1 tau + c2 tau^2 at tau_i = -i (channel units).
    std::array<double, 5> moments{};
    std::array<double, 3> rhs{};
    for (int i = 0; i < n; ++i) {
        const double t = -static_cast<double>(i);
        double tp = 1.0;
        for (int p = 0; p < 5; ++p) {
            moments[p] += tp;
            if (p < 3) rhs[p] += tp * inward[i];
            tp *= t;
        }
    }
    std::array<std::array<double, 4>, 3> m{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m[r][c] = moments[r + c];
        m[r][3] = rhs[r];
    }
    for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
        std::swap(m[col], m[pivot]);
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double f = m[r][col] / m[col][col];
            for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
        }
    }
    return m[1][3] / m[1][1] / delta;
}

/// Water cylinder seen from a truncation edge, parameterized along the
/// outward direction: p(tau) = 2 mu sqrt(R^2 - (tau + offset)^2).
struct EdgeCylinder {
    double mu = kDefaultMuWater;
    double offset = 0.0;  // boundary position relative to the cylinder center, mm
    double radius2 = 0.0;

    [[nodiscard]] bool real_at(double tau) const { return radius2 - (tau + offset) * (tau + offset) > 0.0; }
    [[nodiscard]] double operator()(double tau) const {
        const double u = tau + offset;
        const double r = radius2 - u * u;
        return r > 0.0 ? 2.0 * mu * std::sqrt(r) : 0.0;
    }
};

/// Fits the cylinder matching boundary value P and outward slope P'.
/// A slope that grows outward has no consistent decreasing fit; it is clamped
/// to the tangent cylinder centered at the boundary.
inline EdgeCylinder fit_edge_cylinder(double value, double slope, double mu) {
    EdgeCylinder cyl;
    cyl.mu = mu;
    if (!(value > 0.0)) return cyl;
    cyl.offset = std::max(0.0, -value * slope / (4.0 * mu * mu));
    const double half_chord = value / (2.0 * mu);
    cyl.radius2 = cyl.offset * cyl.offset + half_chord * half_chord;
    return cyl;
}

}  // namespace detail

/// Water-cylinder extrapolation of truncated rows. Returns a fully measured
/// sinogram; channels farther than transition_blend from a seam are untouched.
inline Sinogram wce_extrapolate(const Sinogram& sino, const WceParams& params) {
    params.validate();
    const int nc = sino.n_channels();
    int first = -1, last = -1;
    for (int j = 0; j < nc; ++j)
        if (sino.measured[j]) {
            if (first < 0) first = j;
            last = j;
        }
    if (first < 0) throw UnsupportedInput("wce_extrapolate: no measured channels");
    for (int j = first; j <= last; ++j)
        if (!sino.measured[j]) throw UnsupportedInput("wce_extrapolate: measured region is not contiguous");
    if (first == 0 && last == nc - 1) return sino;

    const int n_measured = last - first + 1;
    const int window = std::min(params.slope_window, n_measured);
    if (window < 2) throw UnsupportedInput("wce_extrapolate: measured region narrower than two channels");
    const int blend = std::min(params.transition_blend, n_measured / 2);
    const double delta = sino.geometry.channel_spacing;

    Sinogram out = sino;
    std::vector<double> inward(window);
    for (int i = 0; i < sino.n_angles(); ++i) {
        // dir = +1 extends the right edge, -1 the left edge.
        for (int dir : {+1, -1}) {
            const int edge = dir > 0 ? last : first;
            const int outside = dir > 0 ? nc - 1 - last : first;
            if (outside == 0) continue;
            for (int w = 0; w < window; ++w) inward[w] = sino.at(i, edge - dir * w);
            const auto cyl = detail::fit_edge_cylinder(inward[0], detail::boundary_slope(inward, delta), params.mu_water);
            for (int n = 1; n <= outside; ++n) out.at(i, edge + dir * n) = cyl(n * delta);
            for (int n = 0; n < blend; ++n) {
                const double tau = -n * delta;
                if (!cyl.real_at(tau)) continue;
                const double w_measured = 0.5 * (1.0 - std::cos(std::numbers::pi * (n + 1) / (blend + 1)));
                const int j = edge - dir * n;
                out.at(i, j) = w_measured * sino.at(i, j) + (1.0 - w_measured) * cyl(tau);
            }
        }
    }
    std::fill(out.measured.begin(), out.measured.end(), 1);
    return out;
}

/// FBP of the water-cylinder-completed sinogram (HU).
inline Image reconstruct_wce(const Sinogram& sino, const ScanGeometry& geom, const WceParams& params) {
    return fbp(wce_extrapolate(sino, params), geom, params.mu_water);
}

}  // namespace bridgefov
