#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "skelact/common.hpp"
#include "skelact/skeleton.hpp"

namespace skelact {

// Per-edge target bone lengths in meters, keyed by edge order of the topology.
struct ReferenceLengths {
    std::vector<double> lengths;

    static ReferenceLengths uniform(const Topology& topo, double len) {
        ReferenceLengths r;
        r.lengths.assign(topo.edges.size(), len);
        return r;
    }
};

inline void validate_reference_lengths(const ReferenceLengths& ref, const Topology& topo) {
    if (ref.lengths.size() != topo.edges.size())
        throw ValidationError("reference lengths: expected " + std::to_string(topo.edges.size()) +
                              " entries, got " + std::to_string(ref.lengths.size()));
    for (std::size_t i = 0; i < ref.lengths.size(); ++i)
        if (!(ref.lengths[i] > 0.0) || !std::isfinite(ref.lengths[i]))
            throw ValidationError("reference lengths: edge " + topo.edge_name(topo.edges[i]) +
                                  " must be positive");
}

// Mean bone length per topology edge over all frames and present bodies.
// Called on the training split only; the result is persisted next to the
// model artifacts so the test split never contributes.
inline ReferenceLengths estimate_reference_lengths(const std::vector<SkeletonSequence>& seqs,
                                                   const Topology& topo) {
    ReferenceLengths ref;
    ref.lengths.assign(topo.edges.size(), 0.0);
    std::vector<std::size_t> counts(topo.edges.size(), 0);
    for (const auto& seq : seqs)
        for (const Frame& fr : seq.frames)
            for (const Body& body : fr.bodies) {
                if (!body.present) continue;
                for (std::size_t e = 0; e < topo.edges.size(); ++e) {
                    const auto& edge = topo.edges[e];
                    double len = norm(body.joints[static_cast<std::size_t>(edge.child)] -
                                      body.joints[static_cast<std::size_t>(edge.parent)]);
                    ref.lengths[e] += len;
                    ++counts[e];
                }
            }
    for (std::size_t e = 0; e < topo.edges.size(); ++e) {
        if (counts[e] == 0)
            throw ValidationError("reference lengths: no data for edge " +
                                  topo.edge_name(topo.edges[e]));
        ref.lengths[e] /= static_cast<double>(counts[e]);
    }
    validate_reference_lengths(ref, topo);
    return ref;
}

inline std::string write_reference_lengths(const ReferenceLengths& ref, const Topology& topo) {
    validate_reference_lengths(ref, topo);
    std::ostringstream out;
    out << "skelrefs/1\n";
    out.precision(17);
    for (std::size_t e = 0; e < topo.edges.size(); ++e)
        out << topo.edge_name(topo.edges[e]) << " " << ref.lengths[e] << "\n";
    return out.str();
}

inline ReferenceLengths parse_reference_lengths(const std::string& text, const Topology& topo) {
    std::istringstream in(text);
    std::string header;
    if (!std::getline(in, header) || header != "skelrefs/1")
        throw ParseError("reference lengths: missing skelrefs/1 header");
    std::map<std::string, double> by_name;
    std::string name;
    double value = 0.0;
    while (in >> name >> value) by_name[name] = value;
    ReferenceLengths ref;
    for (const auto& edge : topo.edges) {
        auto it = by_name.find(topo.edge_name(edge));
        if (it == by_name.end())
            throw ParseError("reference lengths: missing edge " + topo.edge_name(edge));
        ref.lengths.push_back(it->second);
    }
    validate_reference_lengths(ref, topo);
    return ref;
}

namespace detail {

// Children of each joint in topology order, for the outward walk from the
// root. Joints not reachable from the root head their own sub-walk.
struct TopologyWalk {
    std::vector<std::vector<std::size_t>> child_edges;  // joint -> edge indices where joint is parent
    std::vector<int> walk_order;                        // parents always precede children

    explicit TopologyWalk(const Topology& topo, int root) {
        child_edges.resize(static_cast<std::size_t>(topo.joint_count));
        for (std::size_t e = 0; e < topo.edges.size(); ++e)
            child_edges[static_cast<std::size_t>(topo.edges[e].parent)].push_back(e);
        std::vector<bool> seen(static_cast<std::size_t>(topo.joint_count), false);
        auto visit = [&](auto&& self, int j) -> void {
            if (seen[static_cast<std::size_t>(j)]) return;
            seen[static_cast<std::size_t>(j)] = true;
            walk_order.push_back(j);
            for (std::size_t e : child_edges[static_cast<std::size_t>(j)])
                self(self, topo.edges[e].child);
        };
        visit(visit, root);
        for (int j = 0; j < topo.joint_count; ++j) visit(visit, j);
    }
};

}  // namespace detail

// Rescales every bone to its reference length, walking the kinetic tree
// outward from hip center. Bone directions are taken from the input frame, so
// the operation is idempotent. Coincident joints (zero-length bone) reuse the
// previous frame's direction, or +x in frame 0.
inline SkeletonSequence normalize_limbs(const SkeletonSequence& seq, const ReferenceLengths& ref,
                                        const Topology& topo, Warnings* warnings = nullptr) {
    validate_sequence(seq);
    validate_reference_lengths(ref, topo);
    const detail::TopologyWalk walk(topo, HipCenter);

    SkeletonSequence out = seq;
    std::array<std::vector<Vec3>, kMaxBodies> last_dir;
    for (auto& dirs : last_dir) dirs.assign(topo.edges.size(), Vec3{1.0, 0.0, 0.0});

    for (std::size_t f = 0; f < seq.frames.size(); ++f) {
        for (int s = 0; s < kMaxBodies; ++s) {
            const Body& in_body = seq.frames[f].bodies[static_cast<std::size_t>(s)];
            if (!in_body.present) continue;
            Body& out_body = out.frames[f].bodies[static_cast<std::size_t>(s)];
            for (int j : walk.walk_order) {
                for (std::size_t e : walk.child_edges[static_cast<std::size_t>(j)]) {
                    const auto& edge = topo.edges[e];
                    Vec3 bone = in_body.joints[static_cast<std::size_t>(edge.child)] -
                                in_body.joints[static_cast<std::size_t>(edge.parent)];
                    double len = norm(bone);
                    Vec3 dir;
                    if (len < 1e-12) {
                        dir = last_dir[static_cast<std::size_t>(s)][e];
                        warn(warnings, "normalize_limbs: zero-length bone " + topo.edge_name(edge) +
                                           " at frame " + std::to_string(f) + ", body " +
                                           std::to_string(s));
                    } else {
                        dir = (1.0 / len) * bone;
                        last_dir[static_cast<std::size_t>(s)][e] = dir;
                    }
                    out_body.joints[static_cast<std::size_t>(edge.child)] =
                        out_body.joints[static_cast<std::size_t>(edge.parent)] +
                        ref.lengths[e] * dir;
                }
            }
        }
    }
    return out;
}

// Translates each present body so its hip center sits at the origin.
inline SkeletonSequence center_on_hip(const SkeletonSequence& seq) {
    validate_sequence(seq);
    SkeletonSequence out = seq;
    for (std::size_t f = 0; f < out.frames.size(); ++f)
        for (int s = 0; s < kMaxBodies; ++s) {
            Body& body = out.frames[f].bodies[static_cast<std::size_t>(s)];
            if (!body.present) continue;
            Vec3 hip = body.joints[HipCenter];
            if (!finite(hip))
                throw ValidationError("center_on_hip: invalid hip joint at frame " +
                                      std::to_string(f) + ", body " + std::to_string(s));
            for (auto& p : body.joints) p = p - hip;
        }
    return out;
}

namespace detail {

// cos/sin for multiples of 45 degrees are emitted exactly (sqrt is correctly
// rounded everywhere), which keeps rotation-augmented rasters reproducible.
inline void rotation_terms(double angle_degrees, double& c, double& s) {
    double turns = angle_degrees / 45.0;
    double nearest = std::round(turns);
    if (std::abs(turns - nearest) < 1e-12) {
        static const double r = std::sqrt(2.0) / 2.0;
        static const double table_c[8] = {1.0, r, 0.0, -r, -1.0, -r, 0.0, r};
        static const double table_s[8] = {0.0, r, 1.0, r, 0.0, -r, -1.0, -r};
        int idx = static_cast<int>(std::llround(nearest)) % 8;
        if (idx < 0) idx += 8;
        c = table_c[idx];
        s = table_s[idx];
        return;
    }
    double rad = angle_degrees * (std::acos(-1.0) / 180.0);
    c = std::cos(rad);
    s = std::sin(rad);
}

}  // namespace detail

// (x, y, z) -> (x cos t + z sin t, y, -x sin t + z cos t)
inline SkeletonSequence rotate_y(const SkeletonSequence& seq, double angle_degrees) {
    validate_sequence(seq);
    double c = 1.0, s = 0.0;
    detail::rotation_terms(angle_degrees, c, s);
    SkeletonSequence out = seq;
    for (auto& fr : out.frames)
        for (auto& body : fr.bodies) {
            if (!body.present) continue;
            for (auto& p : body.joints)
                p = Vec3{p.x * c + p.z * s, p.y, -p.x * s + p.z * c};
        }
    return out;
}

// Block boundaries of the i-th of n blocks over T frames; remainder frames go
// to the earliest blocks.
inline std::pair<std::size_t, std::size_t> subsequence_block(std::size_t total, int n, int i) {
    std::size_t nn = static_cast<std::size_t>(n);
    std::size_t ii = static_cast<std::size_t>(i);
    std::size_t base = total / nn, rem = total % nn;
    std::size_t begin = ii * base + std::min<std::size_t>(ii, rem);
    std::size_t size = base + (ii < rem ? 1 : 0);
    return {begin, begin + size};
}

// Picks one frame per block, uniformly within the block (seeded). Sequences
// shorter than n repeat frames deterministically: block i -> floor(i*T/n).
inline SkeletonSequence sample_subsequences(const SkeletonSequence& seq, int n,
                                            std::uint64_t rng_seed) {
    validate_sequence(seq);
    if (n < 1) throw ConfigError("sample_subsequences: n must be >= 1");
    const std::size_t total = seq.frames.size();
    Rng rng(rng_seed);
    SkeletonSequence out = seq;
    out.frames.clear();
    out.frames.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::size_t pick;
        if (total < static_cast<std::size_t>(n)) {
            pick = (static_cast<std::size_t>(i) * total) / static_cast<std::size_t>(n);
        } else {
            auto [begin, end] = subsequence_block(total, n, i);
            pick = begin + static_cast<std::size_t>(rng.uniform_int(end - begin));
        }
        out.frames.push_back(seq.frames[pick]);
    }
    return out;
}

}  // namespace skelact
