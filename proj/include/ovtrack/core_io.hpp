#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ovtrack/core_types.hpp"

namespace ovtrack {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Mask RLE text form: {"w": int, "h": int, "counts": [int, ...]}
// ---------------------------------------------------------------------------

inline json mask_to_json(const BinaryMask& m) {
    return json{{"w", m.width()}, {"h", m.height()}, {"counts", m.counts()}};
}

inline BinaryMask mask_from_json(const json& j) {
    if (!j.is_object() || !j.contains("w") || !j.contains("h") || !j.contains("counts"))
        throw MalformedMask("mask record needs w, h and counts");
    try {
        const int w = j.at("w").get<int>();
        const int h = j.at("h").get<int>();
        std::vector<std::uint32_t> counts;
        for (const auto& c : j.at("counts")) {
            const auto v = c.get<std::int64_t>();
            if (v < 0) throw MalformedMask("negative RLE count");
            counts.push_back(static_cast<std::uint32_t>(v));
        }
        return BinaryMask::from_counts(w, h, std::move(counts));
    } catch (const json::exception& e) {
        throw MalformedMask(std::string("mask record: ") + e.what());
    }
}

inline json box_to_json(const BBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

inline BBox box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw InvalidInput("box must be [x0, y0, x1, y1]");
    BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (!b.valid()) throw InvalidInput("box has x0 > x1 or y0 > y1");
    return b;
}

// ---------------------------------------------------------------------------
// Middlebury .flo: float 202021.25, int32 width, int32 height, then
// height*width interleaved little-endian float32 (dx, dy), row-major.
// ---------------------------------------------------------------------------

inline constexpr float kFloMagic = 202021.25f;

namespace detail {

static_assert(std::endian::native == std::endian::little,
              ".flo I/O assumes a little-endian host");

template <typename T>
void write_le(std::ostream& os, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    char buf[sizeof(T)];
    if (!is.read(buf, sizeof(T))) throw LoadError("truncated .flo stream");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace detail

inline void write_flo(std::ostream& os, const FlowField& f) {
    detail::write_le(os, kFloMagic);
    detail::write_le(os, static_cast<std::int32_t>(f.width()));
    detail::write_le(os, static_cast<std::int32_t>(f.height()));
    os.write(reinterpret_cast<const char*>(f.data().data()),
             static_cast<std::streamsize>(f.data().size() * sizeof(float)));
}

inline FlowField read_flo(std::istream& is) {
    const float magic = detail::read_le<float>(is);
    if (magic != kFloMagic) throw LoadError("bad .flo magic");
    const auto w = detail::read_le<std::int32_t>(is);
    const auto h = detail::read_le<std::int32_t>(is);
    if (w <= 0 || h <= 0 || static_cast<std::int64_t>(w) * h > (1LL << 28))
        throw LoadError("implausible .flo dimensions");
    std::vector<float> data(static_cast<std::size_t>(w) * h * 2);
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(float))))
        throw LoadError("truncated .flo payload");
    try {
        return FlowField::from_interleaved(w, h, std::move(data));
    } catch (const InvalidInput& e) {
        throw LoadError(std::string(".flo payload: ") + e.what());
    }
}

inline void write_flo_file(const std::filesystem::path& p, const FlowField& f) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw LoadError("cannot open " + p.string() + " for writing");
    write_flo(os, f);
    if (!os) throw LoadError("failed writing " + p.string());
}

inline FlowField read_flo_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw LoadError("cannot open " + p.string());
    try {
        return read_flo(is);
    } catch (const LoadError& e) {
        throw LoadError(p.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Small helpers shared by the NDJSON readers/writers
// ---------------------------------------------------------------------------

/// Expands a printf-style pattern holding one integer conversion (e.g. "fwd_%06d.flo").
inline std::string format_frame_pattern(const std::string& pattern, int frame) {
    const auto pct = pattern.find('%');
    if (pct == std::string::npos) throw ConfigError("frame pattern lacks a %d conversion: " + pattern);
    auto d = pattern.find('d', pct);
    if (d == std::string::npos) throw ConfigError("frame pattern lacks a %d conversion: " + pattern);
    const std::string spec = pattern.substr(pct, d - pct + 1);
    std::vector<char> buf(spec.size() + 32);
    std::snprintf(buf.data(), buf.size(), spec.c_str(), frame);
    return pattern.substr(0, pct) + buf.data() + pattern.substr(d + 1);
}

inline std::string read_text_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw LoadError("cannot open " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw LoadError("cannot open " + p.string() + " for writing");
    os << s;
    if (!os) throw LoadError("failed writing " + p.string());
}

}  // namespace ovtrack
