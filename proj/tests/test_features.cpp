#include <catch2/catch_amalgamated.hpp>

#include "skelact/features.hpp"
#include "skelact/preprocess.hpp"
#include "skelact/toy.hpp"

using namespace skelact;

namespace {

Frame frame_of(const std::array<Vec3, kJointCount>& joints, bool second = false) {
    Frame fr;
    fr.bodies[0].present = true;
    fr.bodies[0].joints = joints;
    if (second) {
        fr.bodies[1].present = true;
        fr.bodies[1].joints = joints;
    }
    return fr;
}

Frame random_frame(std::uint64_t seed) {
    Rng rng(seed);
    Frame fr;
    fr.bodies[0].present = true;
    for (auto& p : fr.bodies[0].joints)
        p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    return fr;
}

// Independent point-to-line oracle: |(pn - pj) x (pk - pj)| / |pk - pj|.
double cross_product_point_line(const Vec3& pn, const Vec3& pj, const Vec3& pk) {
    return norm(cross(pn - pj, pk - pj)) / norm(pk - pj);
}

}  // namespace

TEST_CASE("default topology produces 19 lines partitioned (6, 3, 10)") {
    LineSet lines = select_lines(default_topology());
    REQUIRE(lines.lines.size() == 19);
    REQUIRE(lines.count(LineRule::Adjacent) == 6);
    REQUIRE(lines.count(LineRule::EndTwoStep) == 3);
    REQUIRE(lines.count(LineRule::EndEnd) == 10);
    // Deterministic order, no duplicates.
    for (std::size_t i = 1; i < lines.lines.size(); ++i) {
        auto a = std::pair{lines.lines[i - 1].j, lines.lines[i - 1].k};
        auto b = std::pair{lines.lines[i].j, lines.lines[i].k};
        REQUIRE(a < b);
    }
    // The three two-step lines are head/shoulder_center and hand/elbow pairs.
    std::set<std::pair<int, int>> two_step;
    for (const auto& l : lines.lines)
        if (l.rule == LineRule::EndTwoStep) two_step.insert({l.j, l.k});
    REQUIRE(two_step == std::set<std::pair<int, int>>{{ShoulderCenter, Head},
                                                      {ElbowLeft, HandLeft},
                                                      {ElbowRight, HandRight}});
}

TEST_CASE("degenerate two-joint chain deduplicates adjacent and end-end") {
    Topology topo;
    topo.id = "pair";
    topo.joint_count = 2;
    topo.joint_names = {"a", "b"};
    topo.edges = {{0, 1, 1}};
    topo.end_joints = {0, 1};
    LineSet lines = select_lines(topo);
    REQUIRE(lines.lines.size() == 1);
    REQUIRE(lines.lines[0].j == 0);
    REQUIRE(lines.lines[0].k == 1);
    REQUIRE(lines.lines[0].rule == LineRule::Adjacent);
}

TEST_CASE("unconstrained triple counts: 660 for 12 joints, 6072 for 24") {
    // Each (line j<k, third joint n) combination, enumerated directly.
    auto enumerate = [](int joints) {
        long count = 0;
        for (int j = 0; j < joints; ++j)
            for (int k = j + 1; k < joints; ++k)
                for (int n = 0; n < joints; ++n)
                    if (n != j && n != k) ++count;
        return count;
    };
    // 3 * C(n,3): each unordered joint triple yields three lines; both routes
    // must agree.
    long triples12 = 0, triples24 = 0;
    for (int a = 0; a < 12; ++a)
        for (int b = a + 1; b < 12; ++b)
            for (int c = b + 1; c < 12; ++c) triples12 += 3;
    for (int a = 0; a < 24; ++a)
        for (int b = a + 1; b < 24; ++b)
            for (int c = b + 1; c < 24; ++c) triples24 += 3;
    REQUIRE(triples12 == 660);
    REQUIRE(triples24 == 6072);
    REQUIRE(enumerate(12) == 660);
    REQUIRE(enumerate(24) == 6072);
}

TEST_CASE("relative positions: subtraction, zeros, and dimension") {
    auto joints = toy::toy_base_pose();
    joints[HipCenter] = {0, 0, 0};
    joints[Spine] = {1, 2, 3};  // pair (hip_center, spine) is the first pair
    auto row = relative_positions(frame_of(joints));
    REQUIRE(row.size() == 396);
    REQUIRE(row[0] == -1.0);  // p_hip - p_spine
    REQUIRE(row[1] == -2.0);
    REQUIRE(row[2] == -3.0);

    std::array<Vec3, kJointCount> coincident{};
    auto zero_row = relative_positions(frame_of(coincident));
    for (double v : zero_row) REQUIRE(v == 0.0);

    // One body's worth of values: C(12,2) * 3 = 198, enumerated.
    int pairs = 0;
    for (int j = 0; j < 12; ++j)
        for (int k = j + 1; k < 12; ++k) ++pairs;
    REQUIRE(pairs * 3 == 198);
    // Absent second body contributes exactly zeros.
    for (std::size_t i = 198; i < 396; ++i) REQUIRE(row[i] == 0.0);
}

TEST_CASE("joint-joint distances: 3-4-5 triangle and symmetry oracle") {
    auto joints = toy::toy_base_pose();
    joints[HipCenter] = {0, 0, 0};
    joints[Spine] = {3, 4, 0};
    auto row = joint_joint_distances(frame_of(joints));
    REQUIRE(row.size() == 132);
    REQUIRE(row[0] == Catch::Approx(5.0).margin(1e-12));

    std::array<Vec3, kJointCount> coincident{};
    REQUIRE(joint_joint_distances(frame_of(coincident))[0] == 0.0);

    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Frame fr = random_frame(seed);
        auto r = joint_joint_distances(fr);
        std::size_t at = 0;
        for (const auto& [j, k] : joint_pairs()) {
            double forward = norm(fr.bodies[0].joints[j] - fr.bodies[0].joints[k]);
            double backward = norm(fr.bodies[0].joints[k] - fr.bodies[0].joints[j]);
            REQUIRE(r[at] == Catch::Approx(forward).margin(1e-12));
            REQUIRE(forward == Catch::Approx(backward).margin(1e-12));
            ++at;
        }
    }
}

TEST_CASE("triangle_area_heron: known, degenerate, and inconsistent inputs") {
    REQUIRE(triangle_area_heron(3, 4, 5) == Catch::Approx(6.0).margin(1e-12));
    REQUIRE(triangle_area_heron(1, 2, 3) == 0.0);
    REQUIRE(triangle_area_heron(0, 0, 0) == 0.0);
    REQUIRE_THROWS_AS(triangle_area_heron(1, 1, 5), ValidationError);
    REQUIRE_THROWS_AS(triangle_area_heron(-1, 1, 1), ValidationError);
}

TEST_CASE("heron area matches the cross-product oracle on needle triangles") {
    // Aspect stays within [1e4, 5e4]: past that the rounded side lengths no
    // longer determine the area to 1e-6 in doubles, whichever formula runs.
    Rng rng(2024);
    for (int i = 0; i < 200; ++i) {
        double base = rng.uniform(0.5, 2e5);
        double aspect = rng.uniform(1e4, 5e4);
        double h = base / aspect;
        Vec3 pj{0, 0, 0}, pk{base, 0, 0}, pn{rng.uniform(0.1, 0.9) * base, h, 0};
        double a = norm(pn - pj), b = norm(pn - pk), c = norm(pk - pj);
        double heron = triangle_area_heron(a, b, c);
        double oracle = 0.5 * norm(cross(pn - pj, pk - pj));
        REQUIRE(heron == Catch::Approx(oracle).epsilon(1e-6));
    }
}

TEST_CASE("joint-line distances: right triangle height and collinearity") {
    const LineSet lines = select_lines(default_topology());
    // Find the (hip_center, spine) adjacent line and plant a known triangle.
    auto joints = toy::toy_base_pose();
    joints[HipCenter] = {0, 0, 0};
    joints[Spine] = {2, 0, 0};
    joints[ShoulderCenter] = {0, 1, 0};  // height 1 above the line
    joints[Head] = {1.5, 0, 0};          // collinear with the line
    auto row = joint_line_distances(frame_of(joints), lines);
    REQUIRE(row.size() == 380);

    std::size_t line_idx = 0;
    for (; line_idx < lines.lines.size(); ++line_idx)
        if (lines.lines[line_idx].j == HipCenter && lines.lines[line_idx].k == Spine) break;
    REQUIRE(line_idx < lines.lines.size());
    // Joints iterate in ascending order skipping the two incident ones;
    // shoulder_center (2) is the first, head (3) the second.
    std::size_t base = line_idx * 10;
    REQUIRE(row[base + 0] == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(row[base + 1] == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("joint-line distances match the cross-product oracle on random poses") {
    const LineSet lines = select_lines(default_topology());
    for (std::uint64_t seed = 100; seed < 140; ++seed) {
        Frame fr = random_frame(seed);
        auto row = joint_line_distances(fr, lines);
        std::size_t at = 0;
        for (const auto& line : lines.lines) {
            for (int n = 0; n < kJointCount; ++n) {
                if (n == line.j || n == line.k) continue;
                double oracle = cross_product_point_line(fr.bodies[0].joints[n],
                                                         fr.bodies[0].joints[line.j],
                                                         fr.bodies[0].joints[line.k]);
                double got = row[at++];
                REQUIRE(got == Catch::Approx(oracle).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("joint-line distances: zero-length line yields zeros and a warning") {
    const LineSet lines = select_lines(default_topology());
    auto joints = toy::toy_base_pose();
    joints[Spine] = joints[HipCenter];  // adjacent line (0,1) degenerates
    Warnings w;
    auto row = joint_line_distances(frame_of(joints), lines, &w);
    REQUIRE(w.size() == 1);
    for (int n = 0; n < 10; ++n) REQUIRE(row[static_cast<std::size_t>(n)] == 0.0);
}

TEST_CASE("extract_channel: shapes, concatenation, static sequences") {
    const LineSet lines = select_lines(default_topology());
    SkeletonSequence seq;
    for (int t = 0; t < 20; ++t) seq.frames.push_back(random_frame(7));  // static in time
    FeatureMatrix j = extract_channel(seq, Channel::J, lines);
    REQUIRE(j.rows == 20);
    REQUIRE(j.cols == 132);
    FeatureMatrix r = extract_channel(seq, Channel::R, lines);
    FeatureMatrix l = extract_channel(seq, Channel::L, lines);
    FeatureMatrix concat = extract_channel(seq, Channel::Concat, lines);
    REQUIRE(concat.cols == r.cols + j.cols + l.cols);
    for (std::size_t t = 1; t < 20; ++t)
        for (std::size_t c = 0; c < concat.cols; ++c)
            REQUIRE(concat.at(t, c) == concat.at(0, c));
}

TEST_CASE("J and L are rigid-motion invariant; R is equivariant") {
    const LineSet lines = select_lines(default_topology());
    Rng angle_rng(55);
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        SkeletonSequence seq;
        seq.frames.push_back(random_frame(seed));
        double angle = angle_rng.uniform(0.0, 360.0);
        SkeletonSequence moved = rotate_y(center_on_hip(seq), angle);

        auto j0 = extract_channel(seq, Channel::J, lines);
        auto j1 = extract_channel(moved, Channel::J, lines);
        auto l0 = extract_channel(seq, Channel::L, lines);
        auto l1 = extract_channel(moved, Channel::L, lines);
        for (std::size_t i = 0; i < j0.data.size(); ++i)
            REQUIRE(j0.data[i] == Catch::Approx(j1.data[i]).margin(1e-6));
        for (std::size_t i = 0; i < l0.data.size(); ++i)
            REQUIRE(l0.data[i] == Catch::Approx(l1.data[i]).margin(1e-6));

        // R: translation drops out entirely; rotation transforms each
        // 3-vector by the same rotation.
        auto r0 = extract_channel(center_on_hip(seq), Channel::R, lines);
        auto r_translated = extract_channel(center_on_hip(moved), Channel::R, lines);
        double c = 0, s = 0;
        {
            SkeletonSequence probe;
            probe.frames.push_back(frame_of({Vec3{1, 0, 0}}));
            auto rot = rotate_y(probe, angle).frames[0].bodies[0].joints[0];
            c = rot.x;
            s = -rot.z;
        }
        for (std::size_t p = 0; p < r0.data.size() / 2; p += 3) {
            double x = r0.data[p], y = r0.data[p + 1], z = r0.data[p + 2];
            Vec3 expect{x * c + z * s, y, -x * s + z * c};
            REQUIRE(r_translated.data[p] == Catch::Approx(expect.x).margin(1e-6));
            REQUIRE(r_translated.data[p + 1] == Catch::Approx(expect.y).margin(1e-6));
            REQUIRE(r_translated.data[p + 2] == Catch::Approx(expect.z).margin(1e-6));
        }
    }
}

TEST_CASE("feature matrix file round trip") {
    const LineSet lines = select_lines(default_topology());
    SkeletonSequence seq;
    for (int t = 0; t < 5; ++t) seq.frames.push_back(random_frame(1000 + t));
    FeatureMatrix fm = extract_channel(seq, Channel::L, lines);
    FeatureMatrix again = parse_feature_matrix(write_feature_matrix(fm));
    REQUIRE(again.rows == fm.rows);
    REQUIRE(again.cols == fm.cols);
    REQUIRE(again.channel == fm.channel);
    REQUIRE(again.data == fm.data);
    REQUIRE_THROWS_AS(parse_feature_matrix("junk"), ParseError);
}
