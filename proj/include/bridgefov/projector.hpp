#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "bridgefov/image.hpp"
#include "bridgefov/rng.hpp"

namespace bridgefov {

/// 2D parallel-beam geometry bound to the image grid it projects.
struct ScanGeometry {
    int n_angles = 180;
    double angular_range = std::numbers::pi;
    int n_channels = 128;
    double channel_spacing = 1.5;  // mm
    double fov_radius = 40.0;  // mm
    Grid grid{64, 64, 2.0};

    [[nodiscard]] double angle(int i) const { return angular_range * i / n_angles; }
    [[nodiscard]] double channel_offset(int j) const { return (j - 0.5 * (n_channels - 1)) * channel_spacing; }
    [[nodiscard]] double half_width() const { return 0.5 * n_channels * channel_spacing; }

    void validate() const {
        if (n_angles < 1) throw std::invalid_argument("geometry: n_angles must be >= 1");
        if (n_channels < 2) throw std::invalid_argument("geometry: n_channels must be >= 2");
        if (!(channel_spacing > 0.0)) throw std::invalid_argument("geometry: channel_spacing must be positive");
        if (fov_radius < 0.0 || fov_radius > half_width())
            throw std::invalid_argument("geometry: fov_radius must lie within the detector half-width");
        if (grid.width <= 0 || grid.height <= 0 || !(grid.spacing > 0.0))
            throw std::invalid_argument("geometry: invalid grid binding");
    }

    friend bool operator==(const ScanGeometry&, const ScanGeometry&) = default;
};

/// Line integrals, row-major n_angles x n_channels. `measured` is per channel.
struct Sinogram {
    ScanGeometry geometry;
    std::vector<double> values;
    std::vector<unsigned char> measured;

    Sinogram() = default;
    explicit Sinogram(const ScanGeometry& geom)
        : geometry(geom),
          values(static_cast<std::size_t>(geom.n_angles) * geom.n_channels, 0.0),
          measured(geom.n_channels, 1) {}

    [[nodiscard]] int n_angles() const { return geometry.n_angles; }
    [[nodiscard]] int n_channels() const { return geometry.n_channels; }
    double& at(int angle, int channel) { return values[static_cast<std::size_t>(angle) * geometry.n_channels + channel]; }
    [[nodiscard]] double at(int angle, int channel) const {
        return values[static_cast<std::size_t>(angle) * geometry.n_channels + channel];
    }
    [[nodiscard]] bool fully_measured() const {
        for (auto m : measured)
            if (!m) return false;
        return true;
    }
};

struct NoiseModel {
    double i0 = 1e5;  // photons per detector pixel
    bool enabled = true;
};

namespace detail {

/// Visits every ray sample (angle, channel, bilinear taps) of the fixed-step
/// ray-driven discretization. forward_project and backproject share it, so the
/// latter is the exact transpose of the former.
template <class Visit>
void for_each_ray_tap(const ScanGeometry& geom, Visit&& visit) {
    const Grid& g = geom.grid;
    const double step = 0.5 * g.spacing;
    const double reach = g.half_diagonal() + g.spacing;
    const int n_steps = static_cast<int>(std::ceil(2.0 * reach / step)) + 1;
    for (int ia = 0; ia < geom.n_angles; ++ia) {
        const double th = geom.angle(ia);
        const double ct = std::cos(th), st = std::sin(th);
        for (int ic = 0; ic < geom.n_channels; ++ic) {
            const double s = geom.channel_offset(ic);
            if (std::abs(s) > reach) continue;
            // Chord of the grid's circumscribed disk.
            const double half = std::sqrt(reach * reach - s * s);
            const int m0 = static_cast<int>(std::floor((reach - half) / step));
            const int m1 = std::min(n_steps - 1, static_cast<int>(std::ceil((reach + half) / step)));
            for (int m = m0; m <= m1; ++m) {
                const double t = -reach + m * step;
                const double x = s * ct - t * st;
                const double y = s * st + t * ct;
                const double fc = g.col_of(x);
                const double fr = g.row_of(y);
                const double c0 = std::floor(fc), r0 = std::floor(fr);
                const int c = static_cast<int>(c0), r = static_cast<int>(r0);
                if (c < -1 || r < -1 || c >= g.width || r >= g.height) continue;
                const double wc = fc - c0, wr = fr - r0;
                visit(ia, ic, r, c, (1.0 - wr) * (1.0 - wc) * step, (1.0 - wr) * wc * step, wr * (1.0 - wc) * step,
                      wr * wc * step);
            }
        }
    }
}

inline void require_grid(const Image& img, const ScanGeometry& geom, const char* what) {
    if (!(img.grid == geom.grid) || img.values.size() != geom.grid.size())
        throw std::invalid_argument(std::string(what) + ": image grid does not match the geometry binding");
}

inline void require_shape(const Sinogram& sino, const ScanGeometry& geom, const char* what) {
    if (sino.geometry.n_angles != geom.n_angles || sino.geometry.n_channels != geom.n_channels ||
        sino.values.size() != static_cast<std::size_t>(geom.n_angles) * geom.n_channels ||
        sino.measured.size() != static_cast<std::size_t>(geom.n_channels))
        throw std::invalid_argument(std::string(what) + ": sinogram shape does not match geometry");
}

}  // namespace detail

/// Line integrals of `mu` (mm^-1) over all rays; all channels measured.
inline Sinogram forward_project(const Image& mu, const ScanGeometry& geom) {
    geom.validate();
    detail::require_grid(mu, geom, "forward_project");
    Sinogram sino(geom);
    const Grid& g = geom.grid;
    auto px = [&](int r, int c) -> double {
        if (r < 0 || c < 0 || r >= g.height || c >= g.width) return 0.0;
        return mu.values[static_cast<std::size_t>(r) * g.width + c];
    };
    detail::for_each_ray_tap(geom, [&](int ia, int ic, int r, int c, double w00, double w01, double w10, double w11) {
        sino.at(ia, ic) += w00 * px(r, c) + w01 * px(r, c + 1) + w10 * px(r + 1, c) + w11 * px(r + 1, c + 1);
    });
    return sino;
}

/// Unfiltered adjoint of forward_project.
inline Image backproject(const Sinogram& sino, const ScanGeometry& geom) {
    geom.validate();
    detail::require_shape(sino, geom, "backproject");
    Image img(geom.grid, 0.0);
    const Grid& g = geom.grid;
    auto add = [&](int r, int c, double v) {
        if (r < 0 || c < 0 || r >= g.height || c >= g.width) return;
        img.values[static_cast<std::size_t>(r) * g.width + c] += v;
    };
    detail::for_each_ray_tap(geom, [&](int ia, int ic, int r, int c, double w00, double w01, double w10, double w11) {
        const double p = sino.at(ia, ic);
        if (p == 0.0) return;
        add(r, c, w00 * p);
        add(r, c + 1, w01 * p);
        add(r + 1, c, w10 * p);
        add(r + 1, c + 1, w11 * p);
    });
    return img;
}

/// Collimation: channels with |s| > fov_radius are zeroed and marked unmeasured.
inline Sinogram truncate(const Sinogram& sino, double fov_radius) {
    Sinogram out = sino;
    const auto& geom = sino.geometry;
    for (int j = 0; j < geom.n_channels; ++j) {
        if (std::abs(geom.channel_offset(j)) <= fov_radius) continue;
        out.measured[j] = 0;
        for (int i = 0; i < geom.n_angles; ++i) out.at(i, j) = 0.0;
    }
    return out;
}

/// Poisson counting noise on measured channels. Each pixel draws from its own
/// counter-based stream keyed on (seed, angle, channel).
inline Sinogram add_noise(const Sinogram& sino, const NoiseModel& noise, std::uint64_t seed) {
    if (!noise.enabled) return sino;
    if (!(noise.i0 > 0.0)) throw std::invalid_argument("add_noise: i0 must be positive");
    Sinogram out = sino;
    for (int i = 0; i < sino.n_angles(); ++i) {
        for (int j = 0; j < sino.n_channels(); ++j) {
            if (!sino.measured[j]) continue;
            const double p = std::max(0.0, sino.at(i, j));
            CounterRng rng(derive_seed(seed, i, j));
            std::poisson_distribution<long long> counts(noise.i0 * std::exp(-p));
            const auto c = std::max<long long>(counts(rng), 1);
            out.at(i, j) = -std::log(static_cast<double>(c) / noise.i0);
        }
    }
    return out;
}

}  // namespace bridgefov
