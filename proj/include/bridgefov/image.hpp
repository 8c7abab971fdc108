#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bridgefov {

/// Raised when an input is well-formed but outside what an algorithm handles.
struct UnsupportedInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Pixel grid centered on the isocenter. Row 0 is the top of the image (max y),
/// column 0 is the left edge (min x). Spacing is isotropic, in mm.
struct Grid {
    int width = 0;
    int height = 0;
    double spacing = 1.0;

    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(width) * height; }

    [[nodiscard]] double x_of(int col) const { return (col - 0.5 * (width - 1)) * spacing; }
    [[nodiscard]] double y_of(int row) const { return (0.5 * (height - 1) - row) * spacing; }

    /// Continuous (fractional) column / row of a physical point.
    [[nodiscard]] double col_of(double x) const { return x / spacing + 0.5 * (width - 1); }
    [[nodiscard]] double row_of(double y) const { return 0.5 * (height - 1) - y / spacing; }

    [[nodiscard]] double half_diagonal() const {
        return 0.5 * spacing * std::hypot(static_cast<double>(width), static_cast<double>(height));
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

/// 2D scalar field on a Grid, row-major. Units depend on context: HU at the
/// I/O and metric boundary, mm^-1 for projection, model units inside the bridge.
struct Image {
    Grid grid;
    std::vector<double> values;

    Image() = default;
    Image(Grid g, double fill = 0.0) : grid(g), values(g.size(), fill) {
        if (g.width <= 0 || g.height <= 0 || !(g.spacing > 0.0))
            throw std::invalid_argument("image grid must have positive dimensions and spacing");
    }
    Image(int width, int height, double spacing, double fill = 0.0)
        : Image(Grid{width, height, spacing}, fill) {}

    [[nodiscard]] int width() const { return grid.width; }
    [[nodiscard]] int height() const { return grid.height; }
    [[nodiscard]] double spacing() const { return grid.spacing; }
    [[nodiscard]] std::size_t size() const { return values.size(); }

    double& at(int row, int col) { return values[static_cast<std::size_t>(row) * grid.width + col]; }
    [[nodiscard]] double at(int row, int col) const {
        return values[static_cast<std::size_t>(row) * grid.width + col];
    }

    [[nodiscard]] bool same_grid(const Image& other) const { return grid == other.grid; }
};

inline void require_same_grid(const Image& a, const Image& b, const char* what) {
    if (!a.same_grid(b) || a.values.size() != b.values.size())
        throw std::invalid_argument(std::string(what) + ": image grids differ");
}

/// Per-pixel boolean on an image grid (1 = selected).
struct PixelMask {
    Grid grid;
    std::vector<unsigned char> selected;

    [[nodiscard]] std::size_t count() const {
        std::size_t n = 0;
        for (auto s : selected) n += s ? 1 : 0;
        return n;
    }
    [[nodiscard]] PixelMask complement() const {
        PixelMask out{grid, selected};
        for (auto& s : out.selected) s = s ? 0 : 1;
        return out;
    }
};

/// Pixels whose center lies within `radius` mm of the isocenter.
inline PixelMask disk_mask(const Grid& grid, double radius) {
    PixelMask mask{grid, std::vector<unsigned char>(grid.size(), 0)};
    for (int r = 0; r < grid.height; ++r)
        for (int c = 0; c < grid.width; ++c)
            if (std::hypot(grid.x_of(c), grid.y_of(r)) <= radius)
                mask.selected[static_cast<std::size_t>(r) * grid.width + c] = 1;
    return mask;
}

/// Pixels with inner < r <= outer.
inline PixelMask annulus_mask(const Grid& grid, double inner, double outer) {
    PixelMask mask{grid, std::vector<unsigned char>(grid.size(), 0)};
    for (int r = 0; r < grid.height; ++r)
        for (int c = 0; c < grid.width; ++c) {
            const double d = std::hypot(grid.x_of(c), grid.y_of(r));
            if (d > inner && d <= outer) mask.selected[static_cast<std::size_t>(r) * grid.width + c] = 1;
        }
    return mask;
}

}  // namespace bridgefov
