#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ovtrack {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Inputs violate a precondition (dimension mismatch, out-of-range score).
struct InvalidInput : Error {
    using Error::Error;
};

/// RLE counts do not describe a width x height grid.
struct MalformedMask : Error {
    using Error::Error;
};

/// A file or record could not be loaded.
struct LoadError : Error {
    using Error::Error;
};

/// A configuration value failed validation.
struct ConfigError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

/// Axis-aligned box in continuous pixel coordinates (x right, y down).
/// Pixel (c, r) covers [c, c+1) x [r, r+1).
struct BBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    bool valid() const { return x0 <= x1 && y0 <= y1; }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }

    friend bool operator==(const BBox&, const BBox&) = default;
};

inline BBox clip_box(const BBox& b, int width, int height) {
    auto cl = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
    BBox out{cl(b.x0, width), cl(b.y0, height), cl(b.x1, width), cl(b.y1, height)};
    out.x1 = std::max(out.x1, out.x0);
    out.y1 = std::max(out.y1, out.y0);
    return out;
}

inline double box_iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------
// Dense bitmaps and RLE masks
// ---------------------------------------------------------------------------

/// Dense row-major bitmap, one byte per pixel.
struct Bitmap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Bitmap() = default;
    Bitmap(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {
        if (w < 0 || h < 0) throw InvalidInput("bitmap dimensions must be non-negative");
    }

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v = true) {
        bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
    }
    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
    std::size_t count() const {
        return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
    }

    friend bool operator==(const Bitmap&, const Bitmap&) = default;
};

/// Column-major run-length encoded binary mask. The first run counts
/// background pixels; runs alternate thereafter.
class BinaryMask {
public:
    BinaryMask() = default;

    /// All-background mask.
    BinaryMask(int width, int height) : width_(width), height_(height) {
        if (width < 0 || height < 0) throw InvalidInput("mask dimensions must be non-negative");
        counts_.assign(1, static_cast<std::uint32_t>(width) * static_cast<std::uint32_t>(height));
    }

    /// Throws MalformedMask unless the counts cover exactly width x height pixels.
    static BinaryMask from_counts(int width, int height, std::vector<std::uint32_t> counts) {
        if (width < 0 || height < 0) throw MalformedMask("negative mask dimensions");
        std::uint64_t total = 0;
        for (auto c : counts) total += c;
        if (total != static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height))
            throw MalformedMask("RLE counts sum to " + std::to_string(total) + ", expected " +
                                std::to_string(static_cast<std::uint64_t>(width) * height));
        // Canonical form: zero-length interior runs are folded into their neighbours.
        BinaryMask m;
        m.width_ = width;
        m.height_ = height;
        m.counts_.assign(1, 0);
        bool current = false;
        for (std::size_t i = 0; i < counts.size(); ++i) {
            const bool value = (i % 2) == 1;
            if (i > 0 && counts[i] == 0) continue;
            if (value == current) {
                m.counts_.back() += counts[i];
            } else {
                m.counts_.push_back(counts[i]);
                current = value;
            }
        }
        return m;
    }

    int width() const { return width_; }
    int height() const { return height_; }
    const std::vector<std::uint32_t>& counts() const { return counts_; }

    std::uint64_t area() const {
        std::uint64_t a = 0;
        for (std::size_t i = 1; i < counts_.size(); i += 2) a += counts_[i];
        return a;
    }
    bool empty() const { return area() == 0; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint32_t> counts_{0};
};

inline BinaryMask rle_encode(const Bitmap& bm) {
    std::vector<std::uint32_t> counts;
    bool current = false;
    std::uint32_t run = 0;
    for (int x = 0; x < bm.width; ++x) {
        for (int y = 0; y < bm.height; ++y) {
            const bool v = bm.at(x, y);
            if (v != current) {
                counts.push_back(run);
                run = 0;
                current = v;
            }
            ++run;
        }
    }
    counts.push_back(run);
    // Drop a trailing zero-length run (only possible for a 0x0 mask).
    if (counts.size() > 1 && counts.back() == 0) counts.pop_back();
    return BinaryMask::from_counts(bm.width, bm.height, std::move(counts));
}

inline Bitmap rle_decode(const BinaryMask& m) {
    Bitmap bm(m.width(), m.height());
    const int h = m.height();
    std::uint64_t pos = 0;
    bool value = false;
    for (auto c : m.counts()) {
        if (value) {
            for (std::uint64_t i = pos; i < pos + c; ++i) {
                const int x = static_cast<int>(i / h);
                const int y = static_cast<int>(i % h);
                bm.set(x, y);
            }
        }
        pos += c;
        value = !value;
    }
    return bm;
}

namespace detail {

// Walks the foreground intervals [begin, end) of a mask in scan order.
class RunCursor {
public:
    explicit RunCursor(const BinaryMask& m) : counts_(m.counts()) { advance(); }
    bool done() const { return done_; }
    std::uint64_t begin() const { return begin_; }
    std::uint64_t end() const { return end_; }
    void next() { advance(); }

private:
    void advance() {
        // counts_[idx_] is background, counts_[idx_+1] foreground.
        while (idx_ + 1 < counts_.size()) {
            pos_ += counts_[idx_];
            const std::uint64_t len = counts_[idx_ + 1];
            idx_ += 2;
            if (len > 0) {
                begin_ = pos_;
                end_ = pos_ + len;
                pos_ = end_;
                return;
            }
        }
        done_ = true;
    }

    const std::vector<std::uint32_t>& counts_;
    std::size_t idx_ = 0;
    std::uint64_t pos_ = 0;
    std::uint64_t begin_ = 0, end_ = 0;
    bool done_ = false;
};

inline void require_same_dims(const BinaryMask& a, const BinaryMask& b) {
    if (a.width() != b.width() || a.height() != b.height())
        throw InvalidInput("mask dimension mismatch: " + std::to_string(a.width()) + "x" +
                           std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                           std::to_string(b.height()));
}

}  // namespace detail

inline std::uint64_t intersection_area(const BinaryMask& a, const BinaryMask& b) {
    detail::require_same_dims(a, b);
    detail::RunCursor ra(a), rb(b);
    std::uint64_t inter = 0;
    while (!ra.done() && !rb.done()) {
        const auto lo = std::max(ra.begin(), rb.begin());
        const auto hi = std::min(ra.end(), rb.end());
        if (hi > lo) inter += hi - lo;
        if (ra.end() < rb.end())
            ra.next();
        else
            rb.next();
    }
    return inter;
}

/// |a ∩ b| / |a ∪ b|; 0 when both are empty.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    const auto inter = intersection_area(a, b);
    const auto uni = a.area() + b.area() - inter;
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Smallest box containing every foreground pixel; nullopt for an empty mask.
inline std::optional<BBox> tight_box(const BinaryMask& m) {
    const std::uint64_t h = static_cast<std::uint64_t>(m.height());
    std::uint64_t min_c = UINT64_MAX, max_c = 0, min_r = UINT64_MAX, max_r = 0;
    bool any = false;
    for (detail::RunCursor rc(m); !rc.done(); rc.next()) {
        any = true;
        const auto first = rc.begin(), last = rc.end() - 1;
        const auto c0 = first / h, c1 = last / h;
        min_c = std::min(min_c, c0);
        max_c = std::max(max_c, c1);
        if (c0 == c1) {
            min_r = std::min(min_r, first % h);
            max_r = std::max(max_r, last % h);
        } else {
            min_r = 0;
            max_r = h - 1;
        }
    }
    if (!any) return std::nullopt;
    return BBox{static_cast<double>(min_c), static_cast<double>(min_r),
                static_cast<double>(max_c + 1), static_cast<double>(max_r + 1)};
}

/// Pixels whose centers fall inside the box.
inline Bitmap rasterize_box(const BBox& b, int width, int height) {
    Bitmap bm(width, height);
    const int c0 = std::max(0, static_cast<int>(std::ceil(b.x0 - 0.5)));
    const int c1 = std::min(width, static_cast<int>(std::ceil(b.x1 - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(b.y0 - 0.5)));
    const int r1 = std::min(height, static_cast<int>(std::ceil(b.y1 - 0.5)));
    for (int y = r0; y < r1; ++y)
        for (int x = c0; x < c1; ++x) bm.set(x, y);
    return bm;
}

inline Bitmap bitmap_and(const Bitmap& a, const Bitmap& b) {
    if (a.width != b.width || a.height != b.height) throw InvalidInput("bitmap dimension mismatch");
    Bitmap out(a.width, a.height);
    for (std::size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = a.bits[i] & b.bits[i];
    return out;
}

inline Bitmap bitmap_or(const Bitmap& a, const Bitmap& b) {
    if (a.width != b.width || a.height != b.height) throw InvalidInput("bitmap dimension mismatch");
    Bitmap out(a.width, a.height);
    for (std::size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = a.bits[i] | b.bits[i];
    return out;
}

// ---------------------------------------------------------------------------
// Flow
// ---------------------------------------------------------------------------

struct Vec2 {
    double x = 0, y = 0;
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

/// Dense per-pixel displacement, row-major, float32 storage.
class FlowField {
public:
    FlowField() = default;
    FlowField(int width, int height)
        : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * 2, 0.f) {
        if (width <= 0 || height <= 0) throw InvalidInput("flow dimensions must be positive");
    }

    /// Takes interleaved (dx, dy) pairs; rejects NaN/Inf.
    static FlowField from_interleaved(int width, int height, std::vector<float> data) {
        if (width <= 0 || height <= 0) throw InvalidInput("flow dimensions must be positive");
        if (data.size() != static_cast<std::size_t>(width) * height * 2)
            throw InvalidInput("flow data size does not match dimensions");
        for (float v : data)
            if (!std::isfinite(v)) throw InvalidInput("flow contains non-finite values");
        FlowField f;
        f.width_ = width;
        f.height_ = height;
        f.data_ = std::move(data);
        return f;
    }

    int width() const { return width_; }
    int height() const { return height_; }
    const std::vector<float>& data() const { return data_; }

    Vec2 at(int x, int y) const {
        const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 2;
        return {data_[i], data_[i + 1]};
    }
    void set(int x, int y, Vec2 v) {
        const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 2;
        data_[i] = static_cast<float>(v.x);
        data_[i + 1] = static_cast<float>(v.y);
    }

    friend bool operator==(const FlowField&, const FlowField&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<float> data_;
};

/// Bilinear flow lookup at a continuous coordinate. Pixel centers sit at
/// (c + 0.5, r + 0.5); sample positions are clamped into the grid. Returns
/// nullopt when the query lies outside [0, W) x [0, H).
inline std::optional<Vec2> sample_flow(const FlowField& f, double x, double y) {
    if (!(x >= 0 && y >= 0 && x < f.width() && y < f.height())) return std::nullopt;
    const double gx = std::clamp(x - 0.5, 0.0, static_cast<double>(f.width() - 1));
    const double gy = std::clamp(y - 0.5, 0.0, static_cast<double>(f.height() - 1));
    const int x0 = static_cast<int>(std::floor(gx));
    const int y0 = static_cast<int>(std::floor(gy));
    const int x1 = std::min(x0 + 1, f.width() - 1);
    const int y1 = std::min(y0 + 1, f.height() - 1);
    const double fx = gx - x0, fy = gy - y0;
    const Vec2 v00 = f.at(x0, y0), v10 = f.at(x1, y0), v01 = f.at(x0, y1), v11 = f.at(x1, y1);
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    return Vec2{lerp(lerp(v00.x, v10.x, fx), lerp(v01.x, v11.x, fx), fy),
                lerp(lerp(v00.y, v10.y, fx), lerp(v01.y, v11.y, fx), fy)};
}

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

struct Detection {
    BBox box;
    BinaryMask mask;
    double objectness = 0;
    std::string label;
    std::optional<std::vector<double>> feature;

    friend bool operator==(const Detection&, const Detection&) = default;
};

inline void validate_detection(const Detection& d, int width, int height) {
    if (!(d.objectness >= 0.0 && d.objectness <= 1.0))
        throw InvalidInput("detection objectness outside [0,1]");
    if (d.mask.width() != width || d.mask.height() != height)
        throw InvalidInput("detection mask dimensions differ from frame");
    if (d.mask.empty()) throw InvalidInput("detection mask is empty");
}

/// Unit-normalizes a feature vector; a zero vector is returned unchanged.
inline std::vector<double> l2_normalized(std::span<const double> v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    std::vector<double> out(v.begin(), v.end());
    if (n > 0)
        for (double& x : out) x /= n;
    return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidInput("feature dimensionality mismatch");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// All instance masks of one frame, keyed by track id.
struct FrameMasks {
    int frame = 0;
    std::map<int, BinaryMask> entries;
};

}  // namespace ovtrack
