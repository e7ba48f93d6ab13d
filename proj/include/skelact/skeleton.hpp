#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "skelact/common.hpp"

namespace skelact {

inline constexpr int kJointCount = 12;
inline constexpr int kMaxBodies = 2;

// Canonical 12-joint order. Everything downstream (features, maps, file
// formats) indexes joints in this order.
inline constexpr std::array<std::string_view, kJointCount> kJointNames = {
    "hip_center",   "spine",       "shoulder_center", "head",
    "elbow_left",   "wrist_left",  "hand_left",       "elbow_right",
    "wrist_right",  "hand_right",  "ankle_left",      "ankle_right",
};

enum Joint : int {
    HipCenter = 0,
    Spine = 1,
    ShoulderCenter = 2,
    Head = 3,
    ElbowLeft = 4,
    WristLeft = 5,
    HandLeft = 6,
    ElbowRight = 7,
    WristRight = 8,
    HandRight = 9,
    AnkleLeft = 10,
    AnkleRight = 11,
};

inline std::optional<int> joint_index(std::string_view name) {
    for (int i = 0; i < kJointCount; ++i)
        if (kJointNames[static_cast<std::size_t>(i)] == name) return i;
    return std::nullopt;
}

// NTU RGB+D stores 25 Kinect-v2 joints. Retained subset, canonical order
// (version 1 of the mapping; documented in docs/formats.md):
//   hip_center      <- 0  SpineBase
//   spine           <- 1  SpineMid
//   shoulder_center <- 20 SpineShoulder
//   head            <- 3  Head
//   elbow_left      <- 5  ElbowLeft
//   wrist_left      <- 6  WristLeft
//   hand_left       <- 7  HandLeft
//   elbow_right     <- 9  ElbowRight
//   wrist_right     <- 10 WristRight
//   hand_right      <- 11 HandRight
//   ankle_left      <- 14 AnkleLeft
//   ankle_right     <- 18 AnkleRight
inline constexpr int kNtuJointCount = 25;
inline constexpr std::array<int, kJointCount> kNtuSubsetV1 = {0, 1, 20, 3, 5, 6, 7, 9, 10, 11, 14, 18};

struct Body {
    bool present = false;
    std::array<Vec3, kJointCount> joints{};
};

struct Frame {
    int timestamp_index = 0;
    std::array<Body, kMaxBodies> bodies{};

    friend bool operator==(const Frame& a, const Frame& b) {
        if (a.timestamp_index != b.timestamp_index) return false;
        for (int s = 0; s < kMaxBodies; ++s) {
            if (a.bodies[s].present != b.bodies[s].present) return false;
            if (a.bodies[s].present && a.bodies[s].joints != b.bodies[s].joints) return false;
        }
        return true;
    }
};

struct SkeletonSequence {
    std::vector<Frame> frames;
    int label = 0;
    int subject_id = 0;
    int view_id = 0;
    std::string topology_id = "ntu12";

    friend bool operator==(const SkeletonSequence&, const SkeletonSequence&) = default;
};

// One bone of the contracted kinetic tree. `hops` is the number of steps the
// bone spans in the full Kinect chain (head-shoulder_center passes through
// the dropped neck, so it spans 2).
struct TopologyEdge {
    int parent = 0;
    int child = 0;
    int hops = 1;
};

struct Topology {
    std::string id = "ntu12";
    int joint_count = kJointCount;
    std::vector<std::string> joint_names;
    std::vector<TopologyEdge> edges;
    std::vector<int> end_joints;

    std::string edge_name(const TopologyEdge& e) const {
        return joint_names[static_cast<std::size_t>(e.parent)] + "-" +
               joint_names[static_cast<std::size_t>(e.child)];
    }
};

inline void validate_topology(const Topology& topo) {
    auto in_range = [&](int j) { return j >= 0 && j < topo.joint_count; };
    if (topo.joint_count <= 0) throw ValidationError("topology: joint_count must be positive");
    if (static_cast<int>(topo.joint_names.size()) != topo.joint_count)
        throw ValidationError("topology: joint_names size mismatch");
    std::map<std::pair<int, int>, int> seen;
    for (const auto& e : topo.edges) {
        if (!in_range(e.parent) || !in_range(e.child) || e.parent == e.child)
            throw ValidationError("topology: edge references invalid joint index");
        if (e.hops < 1) throw ValidationError("topology: edge hop count must be >= 1");
        auto key = std::minmax(e.parent, e.child);
        if (++seen[{key.first, key.second}] > 1)
            throw ValidationError("topology: duplicate edge " + topo.edge_name(e));
    }
    for (int j : topo.end_joints) {
        if (!in_range(j)) throw ValidationError("topology: end joint index out of range");
        int touching = 0;
        for (const auto& e : topo.edges)
            touching += (e.parent == j || e.child == j) ? 1 : 0;
        if (touching != 1)
            throw ValidationError("topology: end joint " +
                                  topo.joint_names[static_cast<std::size_t>(j)] +
                                  " must appear in exactly one edge, found " +
                                  std::to_string(touching));
    }
}

// Default topology over the 12 retained joints: the Kinect chain with dropped
// joints contracted into hop counts. Rooted at hip center for normalization.
inline const Topology& default_topology() {
    static const Topology topo = [] {
        Topology t;
        t.id = "ntu12";
        t.joint_count = kJointCount;
        for (auto n : kJointNames) t.joint_names.emplace_back(n);
        t.edges = {
            {HipCenter, Spine, 1},         // SpineBase-SpineMid
            {Spine, ShoulderCenter, 1},    // SpineMid-SpineShoulder
            {ShoulderCenter, Head, 2},     // via Neck
            {ShoulderCenter, ElbowLeft, 2},   // via ShoulderLeft
            {ElbowLeft, WristLeft, 1},
            {WristLeft, HandLeft, 1},
            {ShoulderCenter, ElbowRight, 2},  // via ShoulderRight
            {ElbowRight, WristRight, 1},
            {WristRight, HandRight, 1},
            {HipCenter, AnkleLeft, 3},     // via HipLeft, KneeLeft
            {HipCenter, AnkleRight, 3},    // via HipRight, KneeRight
        };
        t.end_joints = {Head, HandLeft, HandRight, AnkleLeft, AnkleRight};
        validate_topology(t);
        return t;
    }();
    return topo;
}

inline void validate_sequence(const SkeletonSequence& seq) {
    if (seq.frames.empty()) throw ValidationError("sequence: must contain at least one frame");
    if (seq.label < 0) throw ValidationError("sequence: label must be non-negative");
    for (std::size_t f = 0; f < seq.frames.size(); ++f) {
        const Frame& fr = seq.frames[f];
        if (fr.timestamp_index < 0)
            throw ValidationError("sequence: negative timestamp at frame " + std::to_string(f));
        for (int s = 0; s < kMaxBodies; ++s) {
            if (!fr.bodies[static_cast<std::size_t>(s)].present) continue;
            const auto& joints = fr.bodies[static_cast<std::size_t>(s)].joints;
            for (int j = 0; j < kJointCount; ++j) {
                if (!finite(joints[static_cast<std::size_t>(j)]))
                    throw ValidationError("sequence: non-finite coordinate at frame " +
                                          std::to_string(f) + ", joint \"" +
                                          std::string(kJointNames[static_cast<std::size_t>(j)]) +
                                          "\"");
            }
        }
    }
}

}  // namespace skelact
