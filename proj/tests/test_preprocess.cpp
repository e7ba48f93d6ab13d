#include <catch2/catch_amalgamated.hpp>

#include "skelact/preprocess.hpp"
#include "skelact/toy.hpp"

using namespace skelact;

namespace {

SkeletonSequence one_frame(const std::array<Vec3, kJointCount>& joints) {
    SkeletonSequence seq;
    Frame fr;
    fr.bodies[0].present = true;
    fr.bodies[0].joints = joints;
    seq.frames.push_back(fr);
    return seq;
}

SkeletonSequence random_pose(std::uint64_t seed, int frames = 1) {
    Rng rng(seed);
    SkeletonSequence seq;
    for (int f = 0; f < frames; ++f) {
        Frame fr;
        fr.timestamp_index = f;
        fr.bodies[0].present = true;
        for (auto& p : fr.bodies[0].joints)
            p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        seq.frames.push_back(fr);
    }
    return seq;
}

double max_edge_error(const SkeletonSequence& seq, const ReferenceLengths& ref,
                      const Topology& topo) {
    double worst = 0.0;
    for (const Frame& fr : seq.frames)
        for (const Body& b : fr.bodies) {
            if (!b.present) continue;
            for (std::size_t e = 0; e < topo.edges.size(); ++e) {
                double len = norm(b.joints[topo.edges[e].child] - b.joints[topo.edges[e].parent]);
                worst = std::max(worst, std::abs(len - ref.lengths[e]));
            }
        }
    return worst;
}

double max_joint_delta(const SkeletonSequence& a, const SkeletonSequence& b) {
    double worst = 0.0;
    for (std::size_t f = 0; f < a.frames.size(); ++f)
        for (int s = 0; s < kMaxBodies; ++s) {
            if (!a.frames[f].bodies[s].present) continue;
            for (int j = 0; j < kJointCount; ++j)
                worst = std::max(worst, norm(a.frames[f].bodies[s].joints[j] -
                                             b.frames[f].bodies[s].joints[j]));
        }
    return worst;
}

}  // namespace

TEST_CASE("normalize_limbs: a pose at reference lengths is a fixed point") {
    const Topology& topo = default_topology();
    SkeletonSequence seq = one_frame(toy::toy_base_pose());
    ReferenceLengths ref = estimate_reference_lengths({seq}, topo);
    SkeletonSequence out = normalize_limbs(seq, ref, topo);
    REQUIRE(max_joint_delta(seq, out) < 1e-6);
}

TEST_CASE("normalize_limbs: invariant to uniform scaling about the root") {
    const Topology& topo = default_topology();
    // Hip at the origin so scaling is about the root joint.
    SkeletonSequence base = center_on_hip(one_frame(toy::toy_base_pose()));
    ReferenceLengths ref = ReferenceLengths::uniform(topo, 0.3);
    SkeletonSequence scaled = base;
    for (auto& p : scaled.frames[0].bodies[0].joints) p = 2.0 * p;
    SkeletonSequence a = normalize_limbs(base, ref, topo);
    SkeletonSequence b = normalize_limbs(scaled, ref, topo);
    REQUIRE(max_joint_delta(a, b) < 1e-6);
}

TEST_CASE("normalize_limbs: every output bone matches its reference length") {
    const Topology& topo = default_topology();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SkeletonSequence seq = random_pose(seed, 3);
        ReferenceLengths ref = ReferenceLengths::uniform(topo, 0.25);
        SkeletonSequence out = normalize_limbs(seq, ref, topo);
        REQUIRE(max_edge_error(out, ref, topo) < 1e-6);
    }
}

TEST_CASE("normalize_limbs is idempotent") {
    const Topology& topo = default_topology();
    SkeletonSequence seq = random_pose(99, 4);
    ReferenceLengths ref = ReferenceLengths::uniform(topo, 0.25);
    SkeletonSequence once = normalize_limbs(seq, ref, topo);
    SkeletonSequence twice = normalize_limbs(once, ref, topo);
    REQUIRE(max_joint_delta(once, twice) < 1e-6);
}

TEST_CASE("normalize_limbs: coincident joints reuse the previous direction and warn") {
    const Topology& topo = default_topology();
    SkeletonSequence seq = random_pose(5, 2);
    // Collapse head onto shoulder_center in frame 1.
    seq.frames[1].bodies[0].joints[Head] = seq.frames[1].bodies[0].joints[ShoulderCenter];
    ReferenceLengths ref = ReferenceLengths::uniform(topo, 0.25);
    Warnings w;
    SkeletonSequence out = normalize_limbs(seq, ref, topo, &w);
    REQUIRE(w.size() == 1);
    REQUIRE(w.messages[0].find("zero-length bone") != std::string::npos);
    // Frame 1's head direction equals frame 0's (normalized) head direction.
    Vec3 d0 = out.frames[0].bodies[0].joints[Head] - out.frames[0].bodies[0].joints[ShoulderCenter];
    Vec3 d1 = out.frames[1].bodies[0].joints[Head] - out.frames[1].bodies[0].joints[ShoulderCenter];
    REQUIRE(norm(d0 - d1) < 1e-9);
    // Frame 0 coincident joints fall back to +x.
    SkeletonSequence first = random_pose(6, 1);
    first.frames[0].bodies[0].joints[Head] = first.frames[0].bodies[0].joints[ShoulderCenter];
    Warnings w2;
    SkeletonSequence out2 = normalize_limbs(first, ref, topo, &w2);
    Vec3 dir = out2.frames[0].bodies[0].joints[Head] - out2.frames[0].bodies[0].joints[ShoulderCenter];
    REQUIRE(dir.x == Catch::Approx(0.25).margin(1e-9));
    REQUIRE(std::abs(dir.y) < 1e-12);
}

TEST_CASE("center_on_hip: pure translation per body") {
    auto joints = toy::toy_base_pose();
    joints[HipCenter] = {1, 2, 3};
    joints[Head] = {1, 2, 4};
    SkeletonSequence out = center_on_hip(one_frame(joints));
    REQUIRE(out.frames[0].bodies[0].joints[HipCenter] == Vec3{0, 0, 0});
    REQUIRE(norm(out.frames[0].bodies[0].joints[Head] - Vec3{0, 0, 1}) < 1e-12);

    SkeletonSequence centered = center_on_hip(out);
    REQUIRE(max_joint_delta(out, centered) == 0.0);
}

TEST_CASE("center_on_hip preserves pairwise distances") {
    SkeletonSequence seq = random_pose(17);
    SkeletonSequence out = center_on_hip(seq);
    const auto& a = seq.frames[0].bodies[0].joints;
    const auto& b = out.frames[0].bodies[0].joints;
    for (int j = 0; j < kJointCount; ++j)
        for (int k = j + 1; k < kJointCount; ++k)
            REQUIRE(norm(a[j] - a[k]) == Catch::Approx(norm(b[j] - b[k])).margin(1e-9));
}

TEST_CASE("center_on_hip: non-finite hip is a validation error") {
    SkeletonSequence seq = random_pose(3);
    seq.frames[0].bodies[0].joints[HipCenter].x = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(center_on_hip(seq), ValidationError);
}

TEST_CASE("rotate_y: full turn is the identity") {
    SkeletonSequence seq = random_pose(23);
    SkeletonSequence out = rotate_y(seq, 360.0);
    REQUIRE(max_joint_delta(seq, out) < 1e-9);
}

TEST_CASE("rotate_y: 45 degrees maps +x as the rotation matrix says") {
    auto joints = toy::toy_base_pose();
    joints[Head] = {1, 0, 0};
    SkeletonSequence out = rotate_y(one_frame(joints), 45.0);
    const Vec3& p = out.frames[0].bodies[0].joints[Head];
    const double r = std::sqrt(2.0) / 2.0;
    REQUIRE(p.x == Catch::Approx(r).margin(1e-9));
    REQUIRE(p.y == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(p.z == Catch::Approx(-r).margin(1e-9));
}

TEST_CASE("rotate_y: eight 45-degree steps compose to the identity") {
    SkeletonSequence seq = random_pose(29);
    SkeletonSequence out = seq;
    for (int i = 0; i < 8; ++i) out = rotate_y(out, 45.0);
    REQUIRE(max_joint_delta(seq, out) < 1e-6);
}

TEST_CASE("rotate_y preserves pairwise distances") {
    SkeletonSequence seq = random_pose(31);
    SkeletonSequence out = rotate_y(seq, 77.3);
    const auto& a = seq.frames[0].bodies[0].joints;
    const auto& b = out.frames[0].bodies[0].joints;
    for (int j = 0; j < kJointCount; ++j)
        for (int k = j + 1; k < kJointCount; ++k)
            REQUIRE(norm(a[j] - a[k]) == Catch::Approx(norm(b[j] - b[k])).margin(1e-9));
}

TEST_CASE("sample_subsequences: T=100 draws frame i from block [5i, 5i+4]") {
    SkeletonSequence seq = random_pose(41, 100);
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
        SkeletonSequence out = sample_subsequences(seq, 20, seed);
        REQUIRE(out.frames.size() == 20);
        for (int i = 0; i < 20; ++i) {
            int t = out.frames[i].timestamp_index;
            REQUIRE(t >= 5 * i);
            REQUIRE(t <= 5 * i + 4);
        }
    }
}

TEST_CASE("sample_subsequences: T=n returns the sequence unchanged") {
    SkeletonSequence seq = random_pose(43, 20);
    SkeletonSequence out = sample_subsequences(seq, 20, 777);
    REQUIRE(out.frames.size() == 20);
    for (int i = 0; i < 20; ++i) REQUIRE(out.frames[i].timestamp_index == i);
}

TEST_CASE("sample_subsequences: short sequences repeat frames deterministically") {
    SkeletonSequence seq = random_pose(47, 7);
    SkeletonSequence out = sample_subsequences(seq, 20, 123);
    REQUIRE(out.frames.size() == 20);
    int prev = -1;
    for (int i = 0; i < 20; ++i) {
        int expect = static_cast<int>((static_cast<std::size_t>(i) * 7) / 20);
        REQUIRE(out.frames[i].timestamp_index == expect);
        REQUIRE(out.frames[i].timestamp_index >= prev);
        prev = out.frames[i].timestamp_index;
    }
}

TEST_CASE("sample_subsequences: fixed seed is reproducible, indices nondecreasing") {
    SkeletonSequence seq = random_pose(53, 83);
    SkeletonSequence a = sample_subsequences(seq, 20, 4242);
    SkeletonSequence b = sample_subsequences(seq, 20, 4242);
    REQUIRE(a == b);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SkeletonSequence out = sample_subsequences(seq, 20, seed);
        for (std::size_t i = 1; i < out.frames.size(); ++i)
            REQUIRE(out.frames[i].timestamp_index >= out.frames[i - 1].timestamp_index);
    }
}

TEST_CASE("reference lengths: text table round trip") {
    const Topology& topo = default_topology();
    SkeletonSequence seq = one_frame(toy::toy_base_pose());
    ReferenceLengths ref = estimate_reference_lengths({seq}, topo);
    ReferenceLengths again = parse_reference_lengths(write_reference_lengths(ref, topo), topo);
    for (std::size_t e = 0; e < ref.lengths.size(); ++e)
        REQUIRE(ref.lengths[e] == again.lengths[e]);
    REQUIRE_THROWS_AS(parse_reference_lengths("bogus", topo), ParseError);
}
