#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "skelact/common.hpp"
#include "skelact/features.hpp"
#include "skelact/skeleton.hpp"

namespace skelact {

enum class Plane { XY, XZ, YZ, XYZ };
enum class MapKind { JTM, JDM };

inline const char* plane_name(Plane p) {
    switch (p) {
        case Plane::XY: return "xy";
        case Plane::XZ: return "xz";
        case Plane::YZ: return "yz";
        case Plane::XYZ: return "xyz";
    }
    return "?";
}

inline std::optional<Plane> plane_from_name(std::string_view s) {
    if (s == "xy") return Plane::XY;
    if (s == "xz") return Plane::XZ;
    if (s == "yz") return Plane::YZ;
    if (s == "xyz") return Plane::XYZ;
    return std::nullopt;
}

inline const char* map_kind_name(MapKind k) { return k == MapKind::JTM ? "jtm" : "jdm"; }

struct TextureMap {
    MapKind kind = MapKind::JTM;
    Plane plane = Plane::XY;
    int width = 0;
    int height = 0;
    std::string source_id;
    std::vector<std::uint8_t> pixels;  // row-major RGB, initialized to black

    void init(int w, int h) {
        width = w;
        height = h;
        pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, 0);
    }

    void set(int x, int y, std::array<std::uint8_t, 3> rgb) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        std::size_t at = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                          static_cast<std::size_t>(x)) * 3;
        pixels[at] = rgb[0];
        pixels[at + 1] = rgb[1];
        pixels[at + 2] = rgb[2];
    }
};

// S = V = 1 everywhere in this pipeline; hue in degrees.
inline std::array<std::uint8_t, 3> hsv_to_rgb8(double hue_degrees) {
    double h = std::fmod(hue_degrees, 360.0);
    if (h < 0) h += 360.0;
    double hp = h / 60.0;
    int sector = static_cast<int>(hp) % 6;
    double f = hp - std::floor(hp);
    double q = 1.0 - f;
    double r = 0, g = 0, b = 0;
    switch (sector) {
        case 0: r = 1; g = f; b = 0; break;
        case 1: r = q; g = 1; b = 0; break;
        case 2: r = 0; g = 1; b = f; break;
        case 3: r = 0; g = q; b = 1; break;
        case 4: r = f; g = 0; b = 1; break;
        case 5: r = 1; g = 0; b = q; break;
    }
    auto to8 = [](double v) { return static_cast<std::uint8_t>(std::llround(255.0 * v)); };
    return {to8(r), to8(g), to8(b)};
}

struct JtmParams {
    int width = 256;
    int height = 256;
    int margin = 16;
    double hue_start = 0.0;
    double hue_end = 255.0;
};

struct JdmParams {
    int width = 256;  // columns after frame resampling
    double hue_start = 0.0;
    double hue_end = 255.0;
    // Dataset-level distance range for the encoded plane, estimated on the
    // training split and persisted so every sequence shares one scale.
    double dist_min = 0.0;
    double dist_max = 1.0;
};

namespace detail {

inline std::pair<double, double> project(const Vec3& p, Plane plane) {
    switch (plane) {
        case Plane::XY: return {p.x, p.y};
        case Plane::XZ: return {p.x, p.z};
        case Plane::YZ: return {p.y, p.z};
        case Plane::XYZ: break;
    }
    throw ConfigError("project: xyz is not a drawable plane");
}

inline void bresenham(TextureMap& map, int x0, int y0, int x1, int y1,
                      std::array<std::uint8_t, 3> rgb) {
    int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        map.set(x0, y0, rgb);
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace detail

// Joint trajectory map: every joint's projected trajectory drawn as connected
// segments, hue moving linearly from hue_start to hue_end over the sequence.
// The in-plane bounding box of the whole sequence is scaled into the raster
// with a fixed margin; a zero-extent axis collapses to the raster center.
inline TextureMap encode_jtm(const SkeletonSequence& seq, Plane plane, const JtmParams& params,
                             std::string source_id = {}) {
    validate_sequence(seq);
    if (plane == Plane::XYZ) throw ConfigError("encode_jtm: plane must be xy, xz or yz");

    TextureMap map;
    map.kind = MapKind::JTM;
    map.plane = plane;
    map.source_id = std::move(source_id);
    map.init(params.width, params.height);

    double amin = 0, amax = 0, bmin = 0, bmax = 0;
    bool any = false;
    for (const Frame& fr : seq.frames)
        for (const Body& body : fr.bodies) {
            if (!body.present) continue;
            for (const Vec3& p : body.joints) {
                auto [a, b] = detail::project(p, plane);
                if (!any) {
                    amin = amax = a;
                    bmin = bmax = b;
                    any = true;
                } else {
                    amin = std::min(amin, a);
                    amax = std::max(amax, a);
                    bmin = std::min(bmin, b);
                    bmax = std::max(bmax, b);
                }
            }
        }
    if (!any) return map;

    auto to_px = [&](double v, double lo, double hi, int size) {
        double span = hi - lo;
        if (span <= 0.0) return (size - 1) / 2;
        double t = (v - lo) / span;
        double px = params.margin + t * (size - 1 - 2 * params.margin);
        return static_cast<int>(std::llround(px));
    };
    auto to_point = [&](const Vec3& p) {
        auto [a, b] = detail::project(p, plane);
        // Row 0 is the top of the raster; the second axis points up.
        return std::pair<int, int>{to_px(a, amin, amax, map.width),
                                   map.height - 1 - to_px(b, bmin, bmax, map.height)};
    };

    const std::size_t total = seq.frames.size();
    double hue_span = params.hue_end - params.hue_start;
    if (total == 1) {
        auto rgb = hsv_to_rgb8(params.hue_start);
        for (const Body& body : seq.frames[0].bodies) {
            if (!body.present) continue;
            for (const Vec3& p : body.joints) {
                auto [x, y] = to_point(p);
                map.set(x, y, rgb);
            }
        }
        return map;
    }

    double denom = static_cast<double>(std::max<std::size_t>(total - 2, 1));
    for (int s = 0; s < kMaxBodies; ++s)
        for (int j = 0; j < kJointCount; ++j)
            for (std::size_t t = 0; t + 1 < total; ++t) {
                const Body& b0 = seq.frames[t].bodies[static_cast<std::size_t>(s)];
                const Body& b1 = seq.frames[t + 1].bodies[static_cast<std::size_t>(s)];
                if (!b0.present || !b1.present) continue;
                double hue = params.hue_start + hue_span * (static_cast<double>(t) / denom);
                auto [x0, y0] = to_point(b0.joints[static_cast<std::size_t>(j)]);
                auto [x1, y1] = to_point(b1.joints[static_cast<std::size_t>(j)]);
                detail::bresenham(map, x0, y0, x1, y1, hsv_to_rgb8(hue));
            }
    return map;
}

inline constexpr int kJdmSlots = kMaxBodies * kJointCount;           // 24
inline constexpr int kJdmPairCount = kJdmSlots * (kJdmSlots - 1) / 2;  // 276

// Pairwise distance for global joint indices (slot-major). Pairs touching an
// absent body read as distance 0.
inline double jdm_pair_distance(const Frame& frame, int ga, int gb, Plane plane) {
    const Body& ba = frame.bodies[static_cast<std::size_t>(ga / kJointCount)];
    const Body& bb = frame.bodies[static_cast<std::size_t>(gb / kJointCount)];
    if (!ba.present || !bb.present) return 0.0;
    Vec3 d = ba.joints[static_cast<std::size_t>(ga % kJointCount)] -
             bb.joints[static_cast<std::size_t>(gb % kJointCount)];
    switch (plane) {
        case Plane::XY: return std::sqrt(d.x * d.x + d.y * d.y);
        case Plane::XZ: return std::sqrt(d.x * d.x + d.z * d.z);
        case Plane::YZ: return std::sqrt(d.y * d.y + d.z * d.z);
        case Plane::XYZ: return norm(d);
    }
    return 0.0;
}

// Joint distance map: row r is the r-th unordered joint pair over both body
// slots, column c is the nearest frame after resampling to a fixed width.
// Distances map linearly to hue between the dataset-level min and max.
inline TextureMap encode_jdm(const SkeletonSequence& seq, Plane plane, const JdmParams& params,
                             std::string source_id = {}) {
    validate_sequence(seq);
    TextureMap map;
    map.kind = MapKind::JDM;
    map.plane = plane;
    map.source_id = std::move(source_id);
    map.init(params.width, kJdmPairCount);

    const std::size_t total = seq.frames.size();
    double span = params.dist_max - params.dist_min;
    bool flat = !(span > 1e-12);
    double mid_hue = 0.5 * (params.hue_start + params.hue_end);

    int row = 0;
    for (int ga = 0; ga < kJdmSlots; ++ga)
        for (int gb = ga + 1; gb < kJdmSlots; ++gb, ++row) {
            for (int c = 0; c < params.width; ++c) {
                std::size_t t = (static_cast<std::size_t>(c) * total) /
                                static_cast<std::size_t>(params.width);
                double hue;
                if (flat) {
                    hue = mid_hue;
                } else {
                    double d = jdm_pair_distance(seq.frames[t], ga, gb, plane);
                    double u = (d - params.dist_min) / span;
                    u = std::clamp(u, 0.0, 1.0);
                    hue = params.hue_start + (params.hue_end - params.hue_start) * u;
                }
                map.set(c, row, hsv_to_rgb8(hue));
            }
        }
    return map;
}

// Distance range of one plane over the present pairs of a training split.
struct DistanceRange {
    double lo = 0.0;
    double hi = 0.0;
    bool any = false;

    void feed(double d) {
        if (!any) {
            lo = hi = d;
            any = true;
        } else {
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
    }
};

inline DistanceRange jdm_distance_range(const std::vector<SkeletonSequence>& seqs, Plane plane) {
    DistanceRange r;
    for (const auto& seq : seqs)
        for (const Frame& fr : seq.frames)
            for (int ga = 0; ga < kJdmSlots; ++ga) {
                if (!fr.bodies[static_cast<std::size_t>(ga / kJointCount)].present) {
                    ga += kJointCount - 1 - (ga % kJointCount);
                    continue;
                }
                for (int gb = ga + 1; gb < kJdmSlots; ++gb) {
                    if (!fr.bodies[static_cast<std::size_t>(gb / kJointCount)].present) continue;
                    r.feed(jdm_pair_distance(fr, ga, gb, plane));
                }
            }
    return r;
}

// Nearest-neighbor letterbox into a square raster, preserving aspect ratio
// and padding with background black; feeds the CNN a fixed-size input.
inline TextureMap letterbox(const TextureMap& src, int size) {
    TextureMap out = src;
    out.init(size, size);
    if (src.width <= 0 || src.height <= 0) return out;
    int maxdim = std::max(src.width, src.height);
    int new_w = std::max(1, src.width * size / maxdim);
    int new_h = std::max(1, src.height * size / maxdim);
    int off_x = (size - new_w) / 2;
    int off_y = (size - new_h) / 2;
    for (int y = 0; y < new_h; ++y) {
        int sy = y * src.height / new_h;
        for (int x = 0; x < new_w; ++x) {
            int sx = x * src.width / new_w;
            std::size_t at = (static_cast<std::size_t>(sy) * src.width + sx) * 3;
            out.set(off_x + x, off_y + y,
                    {src.pixels[at], src.pixels[at + 1], src.pixels[at + 2]});
        }
    }
    return out;
}

}  // namespace skelact
