#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bridgefov/image.hpp"
#include "bridgefov/rng.hpp"

namespace bridgefov {

inline constexpr double kAirHu = -1000.0;
inline constexpr double kDefaultMuWater = 0.02;  // mm^-1

inline double hu_to_mu(double hu, double mu_water = kDefaultMuWater) { return mu_water * (1.0 + hu / 1000.0); }
inline double mu_to_hu(double mu, double mu_water = kDefaultMuWater) { return 1000.0 * (mu / mu_water - 1.0); }

inline Image hu_to_mu(const Image& img, double mu_water = kDefaultMuWater) {
    Image out = img;
    for (auto& v : out.values) v = hu_to_mu(v, mu_water);
    return out;
}

inline Image mu_to_hu(const Image& img, double mu_water = kDefaultMuWater) {
    Image out = img;
    for (auto& v : out.values) v = mu_to_hu(v, mu_water);
    return out;
}

struct Ellipse {
    double center_x = 0.0;  // mm
    double center_y = 0.0;  // mm
    double semi_axis_a = 1.0;  // mm, along the rotated x axis
    double semi_axis_b = 1.0;  // mm, along the rotated y axis
    double rotation = 0.0;  // radians, counter-clockwise
    double delta_hu = 0.0;

    Ellipse() = default;
    Ellipse(double cx, double cy, double a, double b, double rot, double dhu)
        : center_x(cx), center_y(cy), semi_axis_a(a), semi_axis_b(b), rotation(rot), delta_hu(dhu) {
        if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("ellipse semi-axes must be positive");
    }

    /// Normalized radius: <= 1 inside, 1 on the boundary.
    [[nodiscard]] double level(double x, double y) const {
        const double dx = x - center_x;
        const double dy = y - center_y;
        const double c = std::cos(rotation);
        const double s = std::sin(rotation);
        const double u = (dx * c + dy * s) / semi_axis_a;
        const double v = (-dx * s + dy * c) / semi_axis_b;
        return std::sqrt(u * u + v * v);
    }
    [[nodiscard]] bool contains(double x, double y) const { return level(x, y) <= 1.0; }

    /// Half-extent of the axis-aligned bounding box.
    [[nodiscard]] double extent_x() const {
        return std::hypot(semi_axis_a * std::cos(rotation), semi_axis_b * std::sin(rotation));
    }
    [[nodiscard]] double extent_y() const {
        return std::hypot(semi_axis_a * std::sin(rotation), semi_axis_b * std::cos(rotation));
    }
    [[nodiscard]] double max_extent() const { return std::max(semi_axis_a, semi_axis_b); }
};

/// Horizontal slab: y in [top - thickness, top], |x - center_x| <= half_width.
struct Bed {
    double top = 0.0;
    double thickness = 4.0;
    double center_x = 0.0;
    double half_width = 50.0;
    double delta_hu = 1200.0;

    [[nodiscard]] bool contains(double x, double y) const {
        return y <= top && y >= top - thickness && std::abs(x - center_x) <= half_width;
    }
};

/// ellipses[0] is the body; the rest lie inside it.
struct Phantom {
    std::vector<Ellipse> ellipses;
    std::optional<Bed> bed;

    [[nodiscard]] Phantom translated(double dx, double dy) const {
        Phantom out = *this;
        for (auto& e : out.ellipses) {
            e.center_x += dx;
            e.center_y += dy;
        }
        if (out.bed) {
            out.bed->center_x += dx;
            out.bed->top += dy;
        }
        return out;
    }
};

/// Pixel HU = air + sum of delta_hu over shapes containing the pixel center.
inline Image rasterize(const Phantom& phantom, int width, int height, double spacing) {
    if (width < 8 || height < 8) throw std::invalid_argument("rasterize: grid must be at least 8x8");
    if (!(spacing > 0.0)) throw std::invalid_argument("rasterize: spacing must be positive");
    Image img(width, height, spacing, kAirHu);
    const Grid& g = img.grid;
    for (int r = 0; r < height; ++r) {
        const double y = g.y_of(r);
        for (int c = 0; c < width; ++c) {
            const double x = g.x_of(c);
            double hu = kAirHu;
            for (const auto& e : phantom.ellipses)
                if (e.contains(x, y)) hu += e.delta_hu;
            if (phantom.bed && phantom.bed->contains(x, y)) hu += phantom.bed->delta_hu;
            img.at(r, c) = hu;
        }
    }
    return img;
}

struct PhantomConfig {
    int width = 64;
    int height = 64;
    double spacing = 2.0;
    double mu_water = kDefaultMuWater;
    double fov_radius = 40.0;

    double body_a_min = 46.0, body_a_max = 58.0;
    double body_b_min = 34.0, body_b_max = 46.0;
    double body_center_jitter = 4.0;
    double body_rotation_max = 0.35;
    double body_delta_hu = 1000.0;
    double body_delta_jitter = 40.0;

    int interior_min = 2, interior_max = 8;
    double interior_axis_min = 3.0, interior_axis_max = 14.0;
    double interior_delta_min = -500.0, interior_delta_max = 1000.0;

    bool bed_enabled = true;
    double bed_gap = 3.0;
    double bed_thickness = 4.0;
    double bed_half_width = 54.0;
    double bed_delta_hu = 1200.0;

    void validate() const {
        if (width < 8 || height < 8 || !(spacing > 0.0)) throw ConfigError("phantom: grid must be >= 8x8 with positive spacing");
        if (!(mu_water > 0.0)) throw ConfigError("phantom: mu_water must be positive");
        if (!(body_a_min > 0.0) || body_a_max < body_a_min || !(body_b_min > 0.0) || body_b_max < body_b_min)
            throw ConfigError("phantom: body axis ranges must be positive and non-empty");
        if (body_a_min <= fov_radius)
            throw ConfigError("phantom: body_a_min must exceed fov_radius so every body is truncated");
        if (interior_min < 0 || interior_max < interior_min) throw ConfigError("phantom: interior count range invalid");
        if (!(interior_axis_min > 0.0) || interior_axis_max < interior_axis_min)
            throw ConfigError("phantom: interior axis range invalid");
        if (interior_axis_max >= body_b_min) throw ConfigError("phantom: interior ellipses cannot fit inside the body");
        if (interior_delta_max < interior_delta_min || std::max(std::abs(interior_delta_min), std::abs(interior_delta_max)) > 1500.0)
            throw ConfigError("phantom: interior delta_hu must lie within [-1500, 1500]");
        if (bed_enabled && (!(bed_thickness > 0.0) || !(bed_half_width > 0.0) || bed_gap < 0.0))
            throw ConfigError("phantom: bed dimensions invalid");
    }
};

/// Random body ellipse (always wider than the FOV), interior ellipses fully
/// contained in it, and an optional bed slab below the body.
inline Phantom sample_phantom(std::uint64_t seed, const PhantomConfig& cfg) {
    CounterRng rng(derive_seed(seed, 0x7068616eull));
    Phantom ph;
    const double a = rng.uniform(cfg.body_a_min, cfg.body_a_max);
    const double b = rng.uniform(cfg.body_b_min, std::min(cfg.body_b_max, a));
    const Ellipse body(rng.uniform(-cfg.body_center_jitter, cfg.body_center_jitter),
                       rng.uniform(-cfg.body_center_jitter, cfg.body_center_jitter), a, b,
                       rng.uniform(-cfg.body_rotation_max, cfg.body_rotation_max),
                       cfg.body_delta_hu + rng.uniform(-cfg.body_delta_jitter, cfg.body_delta_jitter));
    ph.ellipses.push_back(body);

    // A point at normalized body radius rho <= 1 - r / min_axis is the center of
    // a disk of radius r that stays inside the body (convexity of the ellipse).
    const double min_axis = std::min(body.semi_axis_a, body.semi_axis_b);
    const auto n_interior = rng.uniform_int(cfg.interior_min, cfg.interior_max);
    for (std::int64_t i = 0; i < n_interior; ++i) {
        const double ia = rng.uniform(cfg.interior_axis_min, cfg.interior_axis_max);
        const double ib = rng.uniform(cfg.interior_axis_min, cfg.interior_axis_max);
        const double rho_max = 1.0 - std::max(ia, ib) / min_axis;
        const double rho = rho_max * std::sqrt(rng.uniform());
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double u = rho * body.semi_axis_a * std::cos(phi);
        const double v = rho * body.semi_axis_b * std::sin(phi);
        const double c = std::cos(body.rotation), s = std::sin(body.rotation);
        ph.ellipses.emplace_back(body.center_x + u * c - v * s, body.center_y + u * s + v * c, ia, ib,
                                 rng.uniform(0.0, std::numbers::pi),
                                 rng.uniform(cfg.interior_delta_min, cfg.interior_delta_max));
    }

    if (cfg.bed_enabled) {
        Bed bed;
        bed.top = body.center_y - body.extent_y() - cfg.bed_gap;
        bed.thickness = cfg.bed_thickness;
        bed.half_width = cfg.bed_half_width;
        bed.center_x = 0.0;
        bed.delta_hu = cfg.bed_delta_hu;
        ph.bed = bed;
    }
    return ph;
}

}  // namespace bridgefov
