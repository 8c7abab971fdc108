#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bridgefov/image.hpp"

namespace bridgefov {

inline constexpr double kDataRangeHu = 3000.0;
inline constexpr int kSsimWindow = 7;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

enum class Region { full, inside_fov, outside_fov };

inline const char* region_name(Region r) {
    switch (r) {
        case Region::full: return "full";
        case Region::inside_fov: return "inside_fov";
        case Region::outside_fov: return "outside_fov";
    }
    return "?";
}

struct MetricReport {
    double rmse_hu = 0.0;
    double psnr_db = 0.0;
    double ssim = 0.0;
    Region region = Region::full;
    std::size_t n_pixels = 0;
};

/// Root mean squared difference over the selected pixels (all when mask is empty).
inline double rmse(const Image& a, const Image& b, const PixelMask* mask = nullptr) {
    require_same_grid(a, b, "rmse");
    if (mask && mask->selected.size() != a.size()) throw std::invalid_argument("rmse: mask size mismatch");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (mask && !mask->selected[i]) continue;
        const double d = a.values[i] - b.values[i];
        acc += d * d;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("rmse: empty mask");
    return std::sqrt(acc / static_cast<double>(n));
}

/// 20 log10(range / rmse); +infinity for identical images.
inline double psnr_from_rmse(double rmse_value, double data_range = kDataRangeHu) {
    if (!(data_range > 0.0)) throw std::invalid_argument("psnr: data_range must be positive");
    if (rmse_value == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(data_range / rmse_value);
}

inline double psnr(const Image& a, const Image& b, double data_range = kDataRangeHu, const PixelMask* mask = nullptr) {
    return psnr_from_rmse(rmse(a, b, mask), data_range);
}

/// Mean local SSIM with a uniform window over valid (unpadded) positions.
/// With a mask, windows whose center pixel is selected are averaged.
inline double ssim(const Image& a, const Image& b, int window = kSsimWindow, double k1 = kSsimK1, double k2 = kSsimK2,
                   double data_range = kDataRangeHu, const PixelMask* mask = nullptr) {
    require_same_grid(a, b, "ssim");
    if (window < 3 || window % 2 == 0) throw std::invalid_argument("ssim: window must be odd and >= 3");
    const int W = a.width(), H = a.height();
    if (window > W || window > H) throw std::invalid_argument("ssim: window larger than image");
    const double c1 = (k1 * data_range) * (k1 * data_range);
    const double c2 = (k2 * data_range) * (k2 * data_range);
    const int half = window / 2;
    const double n = static_cast<double>(window) * window;
    double total = 0.0;
    std::size_t count = 0;
    for (int r = half; r < H - half; ++r)
        for (int c = half; c < W - half; ++c) {
            if (mask && !mask->selected[static_cast<std::size_t>(r) * W + c]) continue;
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dr = -half; dr <= half; ++dr)
                for (int dc = -half; dc <= half; ++dc) {
                    const double va = a.at(r + dr, c + dc), vb = b.at(r + dr, c + dc);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            const double ma = sa / n, mb = sb / n;
            const double va = std::max(0.0, saa / n - ma * ma);
            const double vb = std::max(0.0, sbb / n - mb * mb);
            const double cov = sab / n - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    if (count == 0) throw std::invalid_argument("ssim: no valid windows in region");
    return total / static_cast<double>(count);
}

/// RMSE, PSNR and SSIM of `estimate` against `truth` on one region.
inline MetricReport evaluate(const Image& estimate, const Image& truth, Region region, const PixelMask& fov) {
    std::optional<PixelMask> mask;
    if (region == Region::inside_fov) mask = fov;
    if (region == Region::outside_fov) mask = fov.complement();
    const PixelMask* m = mask ? &*mask : nullptr;
    MetricReport rep;
    rep.region = region;
    rep.n_pixels = m ? m->count() : estimate.size();
    rep.rmse_hu = rmse(estimate, truth, m);
    rep.psnr_db = psnr_from_rmse(rep.rmse_hu);
    rep.ssim = ssim(estimate, truth, kSsimWindow, kSsimK1, kSsimK2, kDataRangeHu, m);
    return rep;
}

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace bridgefov
