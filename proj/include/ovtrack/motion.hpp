#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "ovtrack/core_types.hpp"

namespace ovtrack {

/// Per-axis linear box motion: x' = ax * x + bx, y' = ay * y + by.
/// ax, ay > 0 so a warp never flips a box.
struct MotionTransform {
    double ax = 1, bx = 0, ay = 1, by = 0;

    Vec2 apply(Vec2 p) const { return {ax * p.x + bx, ay * p.y + by}; }

    /// Displacement of the box center and per-axis scale, i.e. (dx, dy, sx, sy).
    Vec2 center_displacement(const BBox& b) const {
        const Vec2 c{b.cx(), b.cy()};
        const Vec2 m = apply(c);
        return {m.x - c.x, m.y - c.y};
    }

    friend bool operator==(const MotionTransform&, const MotionTransform&) = default;
};

struct ConsistencyResult {
    Bitmap consistent;  // set on consistent foreground pixels only
    std::size_t consistent_count = 0;
    std::size_t foreground_count = 0;
    double ratio = 0;
};

/// Segmentation-level forward-backward check. A foreground pixel p of the
/// mask is consistent when q = center(p) + fwd(p) stays inside the frame and
/// r = q + bwd(q) lands inside the frame on a foreground pixel of the mask.
inline ConsistencyResult fb_consistency(const BinaryMask& mask, const FlowField& fwd,
                                        const FlowField& bwd) {
    const int w = mask.width(), h = mask.height();
    if (fwd.width() != w || fwd.height() != h || bwd.width() != w || bwd.height() != h)
        throw InvalidInput("fb_consistency: mask and flow dimensions differ");
    const Bitmap fg = rle_decode(mask);
    ConsistencyResult res{Bitmap(w, h)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!fg.at(x, y)) continue;
            ++res.foreground_count;
            const Vec2 d = fwd.at(x, y);
            const double qx = x + 0.5 + d.x, qy = y + 0.5 + d.y;
            const auto back = sample_flow(bwd, qx, qy);
            if (!back) continue;
            const double rx = qx + back->x, ry = qy + back->y;
            if (!(rx >= 0 && ry >= 0 && rx < w && ry < h)) continue;
            if (fg.at(static_cast<int>(std::floor(rx)), static_cast<int>(std::floor(ry)))) {
                res.consistent.set(x, y);
                ++res.consistent_count;
            }
        }
    }
    res.ratio = res.foreground_count == 0
                    ? 0.0
                    : static_cast<double>(res.consistent_count) / res.foreground_count;
    return res;
}

/// Pixel centers of the consistent pixels and their forward-flow vectors.
struct MotionSupport {
    std::vector<Vec2> points;
    std::vector<Vec2> displacements;
};

inline MotionSupport collect_support(const ConsistencyResult& cr, const FlowField& fwd) {
    MotionSupport s;
    s.points.reserve(cr.consistent_count);
    s.displacements.reserve(cr.consistent_count);
    const Bitmap& c = cr.consistent;
    for (int y = 0; y < c.height; ++y)
        for (int x = 0; x < c.width; ++x)
            if (c.at(x, y)) {
                s.points.push_back({x + 0.5, y + 0.5});
                s.displacements.push_back(fwd.at(x, y));
            }
    return s;
}

namespace detail {

// 1-D least squares for target = a * coord + b. Falls back to a pure shift
// when the coordinates are all equal (scale unobservable) or the fit would
// flip orientation.
inline std::pair<double, double> fit_axis(std::span<const double> coord,
                                          std::span<const double> target) {
    const std::size_t n = coord.size();
    double mc = 0, mt = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mc += coord[i];
        mt += target[i];
    }
    mc /= n;
    mt /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dc = coord[i] - mc;
        sxx += dc * dc;
        sxy += dc * (target[i] - mt);
    }
    if (sxx <= 0 || sxy <= 0) return {1.0, mt - mc};
    const double a = sxy / sxx;
    return {a, mt - a * mc};
}

}  // namespace detail

/// Separable least-squares fit of the 4-parameter box motion. Returns nullopt
/// when there is no support.
inline std::optional<MotionTransform> fit_transform(std::span<const Vec2> points,
                                                    std::span<const Vec2> displacements) {
    if (points.size() != displacements.size())
        throw InvalidInput("fit_transform: points and displacements differ in length");
    if (points.empty()) return std::nullopt;
    const std::size_t n = points.size();
    std::vector<double> px(n), py(n), tx(n), ty(n);
    for (std::size_t i = 0; i < n; ++i) {
        px[i] = points[i].x;
        py[i] = points[i].y;
        tx[i] = points[i].x + displacements[i].x;
        ty[i] = points[i].y + displacements[i].y;
    }
    const auto [ax, bx] = detail::fit_axis(px, tx);
    const auto [ay, by] = detail::fit_axis(py, ty);
    return MotionTransform{ax, bx, ay, by};
}

/// Applies the transform to the box corners and clips to the frame. Returns
/// nullopt when nothing of the box remains inside the image.
inline std::optional<BBox> warp_box(const BBox& b, const MotionTransform& t, int width,
                                    int height) {
    const BBox warped{t.ax * b.x0 + t.bx, t.ay * b.y0 + t.by, t.ax * b.x1 + t.bx,
                      t.ay * b.y1 + t.by};
    const BBox clipped = clip_box(warped, width, height);
    if (clipped.area() <= 0) return std::nullopt;
    return clipped;
}

}  // namespace ovtrack
