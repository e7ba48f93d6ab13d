#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "skelact/common.hpp"
#include "skelact/skeleton.hpp"

namespace skelact {

enum class LineRule { Adjacent, EndTwoStep, EndEnd };

inline const char* line_rule_name(LineRule r) {
    switch (r) {
        case LineRule::Adjacent: return "adjacent";
        case LineRule::EndTwoStep: return "end-two-step";
        case LineRule::EndEnd: return "end-end";
    }
    return "?";
}

struct Line {
    int j = 0;  // j < k
    int k = 0;
    LineRule rule = LineRule::Adjacent;

    friend bool operator==(const Line& a, const Line& b) { return a.j == b.j && a.k == b.k; }
};

struct LineSet {
    std::vector<Line> lines;  // sorted by (j, k), no duplicates

    std::size_t count(LineRule r) const {
        std::size_t n = 0;
        for (const auto& l : lines) n += (l.rule == r) ? 1 : 0;
        return n;
    }
};

namespace detail {

// Hop-weighted all-pairs distances over the kinetic tree. The graphs are tiny,
// so repeated relaxation is plenty.
inline std::vector<std::vector<int>> hop_distances(const Topology& topo) {
    const int n = topo.joint_count;
    const int inf = std::numeric_limits<int>::max() / 4;
    std::vector<std::vector<int>> d(static_cast<std::size_t>(n),
                                    std::vector<int>(static_cast<std::size_t>(n), inf));
    for (int i = 0; i < n; ++i) d[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 0;
    for (const auto& e : topo.edges) {
        auto& a = d[static_cast<std::size_t>(e.parent)][static_cast<std::size_t>(e.child)];
        auto& b = d[static_cast<std::size_t>(e.child)][static_cast<std::size_t>(e.parent)];
        a = std::min(a, e.hops);
        b = std::min(b, e.hops);
    }
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                int via = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] +
                          d[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
                auto& ij = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                ij = std::min(ij, via);
            }
    return d;
}

}  // namespace detail

// Selected joint-pair lines:
//   adjacent:     bones spanning exactly one step of the original chain
//   end-two-step: an end joint paired with any joint exactly two steps away
//   end-end:      every pair of end joints
// A pair produced by several rules is kept once, under the earliest rule.
// The default 12-joint topology yields 6 + 3 + 10 = 19 lines.
inline LineSet select_lines(const Topology& topo) {
    validate_topology(topo);
    LineSet out;
    auto add = [&](int j, int k, LineRule rule) {
        if (j > k) std::swap(j, k);
        Line candidate{j, k, rule};
        for (const auto& l : out.lines)
            if (l == candidate) return;  // earliest rule wins
        out.lines.push_back(candidate);
    };

    for (const auto& e : topo.edges)
        if (e.hops == 1) add(e.parent, e.child, LineRule::Adjacent);

    const auto dist = detail::hop_distances(topo);
    for (int end : topo.end_joints)
        for (int v = 0; v < topo.joint_count; ++v)
            if (v != end && dist[static_cast<std::size_t>(end)][static_cast<std::size_t>(v)] == 2)
                add(end, v, LineRule::EndTwoStep);

    for (std::size_t a = 0; a < topo.end_joints.size(); ++a)
        for (std::size_t b = a + 1; b < topo.end_joints.size(); ++b)
            add(topo.end_joints[a], topo.end_joints[b], LineRule::EndEnd);

    std::sort(out.lines.begin(), out.lines.end(), [](const Line& a, const Line& b) {
        return std::pair{a.j, a.k} < std::pair{b.j, b.k};
    });
    return out;
}

// Numerically stabilized Heron evaluation (sides sorted descending, the
// Kahan-ordered product). Sides violating the triangle inequality beyond
// floating tolerance signal inconsistent inputs.
inline double triangle_area_heron(double a, double b, double c) {
    if (!(a >= 0.0) || !(b >= 0.0) || !(c >= 0.0))
        throw ValidationError("triangle_area_heron: sides must be non-negative");
    if (a < b) std::swap(a, b);
    if (b < c) std::swap(b, c);
    if (a < b) std::swap(a, b);
    double smallest = c - (a - b);
    if (smallest < 0.0) {
        double scale = a + b + c;
        if (smallest < -1e-9 * scale)
            throw ValidationError("triangle_area_heron: sides violate the triangle inequality");
        smallest = 0.0;
    }
    double p = (a + (b + c)) * smallest * (c + (a - b)) * (a + (b - c));
    return 0.25 * std::sqrt(p);
}

inline constexpr int kPairCount = kJointCount * (kJointCount - 1) / 2;  // 66

// Unordered pairs j < k in lexicographic order; the canonical row/column
// layout for R, J, and JDM features.
inline const std::array<std::pair<int, int>, kPairCount>& joint_pairs() {
    static const auto pairs = [] {
        std::array<std::pair<int, int>, kPairCount> out{};
        std::size_t i = 0;
        for (int j = 0; j < kJointCount; ++j)
            for (int k = j + 1; k < kJointCount; ++k) out[i++] = {j, k};
        return out;
    }();
    return pairs;
}

inline constexpr std::size_t kRelPosDim = 2 * kPairCount * 3;  // 396
inline constexpr std::size_t kJointDistDim = 2 * kPairCount;   // 132

// Eq-1 style relative positions p_j - p_k over unordered pairs, both body
// slots concatenated; an absent body contributes zeros.
inline std::vector<double> relative_positions(const Frame& frame) {
    std::vector<double> row(kRelPosDim, 0.0);
    std::size_t at = 0;
    for (int s = 0; s < kMaxBodies; ++s) {
        const Body& body = frame.bodies[static_cast<std::size_t>(s)];
        for (const auto& [j, k] : joint_pairs()) {
            if (body.present) {
                Vec3 d = body.joints[static_cast<std::size_t>(j)] -
                         body.joints[static_cast<std::size_t>(k)];
                row[at] = d.x;
                row[at + 1] = d.y;
                row[at + 2] = d.z;
            }
            at += 3;
        }
    }
    return row;
}

inline std::vector<double> joint_joint_distances(const Frame& frame) {
    std::vector<double> row(kJointDistDim, 0.0);
    std::size_t at = 0;
    for (int s = 0; s < kMaxBodies; ++s) {
        const Body& body = frame.bodies[static_cast<std::size_t>(s)];
        for (const auto& [j, k] : joint_pairs()) {
            if (body.present)
                row[at] = norm(body.joints[static_cast<std::size_t>(j)] -
                               body.joints[static_cast<std::size_t>(k)]);
            ++at;
        }
    }
    return row;
}

// Distance from every non-incident joint to every selected line, per body.
// 2 * area / |jk| with the stabilized Heron area. Zero-length lines yield 0
// and a warning; the run report aggregates the count.
inline std::vector<double> joint_line_distances(const Frame& frame, const LineSet& lines,
                                                Warnings* warnings = nullptr) {
    if (lines.lines.empty()) throw ConfigError("joint_line_distances: line set is empty");
    const std::size_t per_body = lines.lines.size() * static_cast<std::size_t>(kJointCount - 2);
    std::vector<double> row(kMaxBodies * per_body, 0.0);
    std::size_t at = 0;
    for (int s = 0; s < kMaxBodies; ++s) {
        const Body& body = frame.bodies[static_cast<std::size_t>(s)];
        for (const auto& line : lines.lines) {
            const Vec3& pj = body.joints[static_cast<std::size_t>(line.j)];
            const Vec3& pk = body.joints[static_cast<std::size_t>(line.k)];
            double jjd = body.present ? norm(pj - pk) : 0.0;
            bool degenerate = body.present && jjd < 1e-9;
            if (degenerate)
                warn(warnings, "joint_line_distances: zero-length line (" +
                                   std::string(kJointNames[static_cast<std::size_t>(line.j)]) +
                                   ", " +
                                   std::string(kJointNames[static_cast<std::size_t>(line.k)]) +
                                   ")");
            for (int n = 0; n < kJointCount; ++n) {
                if (n == line.j || n == line.k) continue;
                if (body.present && !degenerate) {
                    const Vec3& pn = body.joints[static_cast<std::size_t>(n)];
                    double area = triangle_area_heron(norm(pn - pj), norm(pn - pk), jjd);
                    row[at] = 2.0 * area / jjd;
                }
                ++at;
            }
        }
    }
    return row;
}

enum class Channel { R, J, L, Concat };

inline const char* channel_name(Channel c) {
    switch (c) {
        case Channel::R: return "R";
        case Channel::J: return "J";
        case Channel::L: return "L";
        case Channel::Concat: return "concat";
    }
    return "?";
}

inline std::optional<Channel> channel_from_name(std::string_view s) {
    if (s == "R") return Channel::R;
    if (s == "J") return Channel::J;
    if (s == "L") return Channel::L;
    if (s == "concat") return Channel::Concat;
    return std::nullopt;
}

struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::string channel = "R";
    std::string topology_id = "ntu12";
    std::vector<double> data;  // row-major, rows * cols

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Per-frame feature rows for one channel; `concat` appends R, J, and L
// columns. The sequence is expected to be preprocessed already (normalized,
// centered, sampled); this function only assembles rows.
inline FeatureMatrix extract_channel(const SkeletonSequence& seq, Channel channel,
                                     const LineSet& lines, Warnings* warnings = nullptr) {
    validate_sequence(seq);
    FeatureMatrix out;
    out.channel = channel_name(channel);
    out.topology_id = seq.topology_id;
    out.rows = seq.frames.size();
    for (const Frame& frame : seq.frames) {
        std::vector<double> row;
        switch (channel) {
            case Channel::R: row = relative_positions(frame); break;
            case Channel::J: row = joint_joint_distances(frame); break;
            case Channel::L: row = joint_line_distances(frame, lines, warnings); break;
            case Channel::Concat: {
                row = relative_positions(frame);
                auto j = joint_joint_distances(frame);
                auto l = joint_line_distances(frame, lines, warnings);
                row.insert(row.end(), j.begin(), j.end());
                row.insert(row.end(), l.begin(), l.end());
                break;
            }
        }
        if (out.cols == 0) out.cols = row.size();
        if (row.size() != out.cols)
            throw ShapeError("extract_channel: inconsistent row width");
        out.data.insert(out.data.end(), row.begin(), row.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// FeatureMatrix persistence: short text header, then rows*cols little-endian
// f64 values.
// ---------------------------------------------------------------------------

inline std::string write_feature_matrix(const FeatureMatrix& m) {
    static_assert(std::endian::native == std::endian::little,
                  "feature files are little-endian");
    std::ostringstream out;
    out << "skelfeat/1\n"
        << "channel " << m.channel << "\n"
        << "topology " << m.topology_id << "\n"
        << "rows " << m.rows << "\n"
        << "cols " << m.cols << "\n"
        << "data f64le\n";
    std::string header = out.str();
    std::string blob = header;
    blob.resize(header.size() + m.data.size() * sizeof(double));
    std::memcpy(blob.data() + header.size(), m.data.data(), m.data.size() * sizeof(double));
    return blob;
}

inline FeatureMatrix parse_feature_matrix(std::string_view bytes) {
    auto header_end = bytes.find("data f64le\n");
    if (header_end == std::string_view::npos)
        throw ParseError("feature matrix: missing \"data f64le\" header line");
    std::size_t payload_at = header_end + std::string_view("data f64le\n").size();
    std::istringstream head{std::string(bytes.substr(0, payload_at))};
    std::string magic;
    std::getline(head, magic);
    if (magic != "skelfeat/1") throw ParseError("feature matrix: missing skelfeat/1 magic");
    FeatureMatrix m;
    std::string key;
    while (head >> key) {
        if (key == "channel") head >> m.channel;
        else if (key == "topology") head >> m.topology_id;
        else if (key == "rows") head >> m.rows;
        else if (key == "cols") head >> m.cols;
        else if (key == "data") break;
        else throw ParseError("feature matrix: unknown header key \"" + key + "\"");
    }
    std::size_t need = m.rows * m.cols * sizeof(double);
    if (bytes.size() - payload_at != need)
        throw ParseError("feature matrix: payload size mismatch");
    m.data.resize(m.rows * m.cols);
    std::memcpy(m.data.data(), bytes.data() + payload_at, need);
    return m;
}

}  // namespace skelact
