#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "skelact/common.hpp"
#include "skelact/preprocess.hpp"
#include "skelact/skeleton.hpp"

namespace skelact::toy {

inline constexpr int kToyClasses = 6;

inline const std::array<std::string, kToyClasses>& toy_class_names() {
    static const std::array<std::string, kToyClasses> names = {
        "raise_right_arm", "wave_left_hand", "kick_left", "kick_right", "clap", "bow",
    };
    return names;
}

// Neutral standing pose, meters. x right, y up, z toward the camera.
inline std::array<Vec3, kJointCount> toy_base_pose() {
    std::array<Vec3, kJointCount> p{};
    p[HipCenter] = {0.00, 1.00, 0.00};
    p[Spine] = {0.00, 1.25, 0.00};
    p[ShoulderCenter] = {0.00, 1.50, 0.00};
    p[Head] = {0.00, 1.75, 0.00};
    p[ElbowLeft] = {-0.45, 1.45, 0.00};
    p[WristLeft] = {-0.70, 1.20, 0.00};
    p[HandLeft] = {-0.78, 1.10, 0.00};
    p[ElbowRight] = {0.45, 1.45, 0.00};
    p[WristRight] = {0.70, 1.20, 0.00};
    p[HandRight] = {0.78, 1.10, 0.00};
    p[AnkleLeft] = {-0.15, 0.10, 0.00};
    p[AnkleRight] = {0.15, 0.10, 0.00};
    return p;
}

struct ToyParams {
    int subjects = 4;
    int views = 2;
    double noise_sigma = 0.006;
    std::uint64_t seed = 7;
};

namespace detail {

constexpr double kPi = 3.14159265358979323846;

inline void apply_motion(std::array<Vec3, kJointCount>& pose, int cls, double u, double amp) {
    auto lift = [&](int j, Vec3 d, double s) {
        pose[static_cast<std::size_t>(j)] = pose[static_cast<std::size_t>(j)] + (s * amp) * d;
    };
    switch (cls) {
        case 0: {  // raise_right_arm: smooth arc up and forward
            double s = 0.5 - 0.5 * std::cos(kPi * u);
            lift(ElbowRight, {0.05, 0.25, 0.12}, s);
            lift(WristRight, {-0.05, 0.55, 0.25}, s);
            lift(HandRight, {-0.12, 0.75, 0.32}, s);
            break;
        }
        case 1: {  // wave_left_hand: raised hand oscillating sideways
            double up = std::min(1.0, 3.0 * u);
            double w = std::sin(2.0 * kPi * 2.5 * u);
            lift(ElbowLeft, {0.05, 0.20, 0.05}, up);
            lift(WristLeft, {0.10, 0.50, 0.10}, up);
            lift(HandLeft, {0.12, 0.68, 0.12}, up);
            lift(WristLeft, {0.16, 0.0, 0.05}, w);
            lift(HandLeft, {0.26, 0.0, 0.08}, w);
            break;
        }
        case 2: {  // kick_left: leg swings forward and up
            double s = std::sin(kPi * u);
            lift(AnkleLeft, {0.04, 0.34, 0.55}, s);
            break;
        }
        case 3: {  // kick_right
            double s = std::sin(kPi * u);
            lift(AnkleRight, {-0.04, 0.34, 0.55}, s);
            break;
        }
        case 4: {  // clap: both hands converge twice
            double c = 0.5 - 0.5 * std::cos(2.0 * kPi * 2.0 * u);
            lift(ElbowLeft, {0.20, 0.06, 0.10}, c);
            lift(WristLeft, {0.45, 0.14, 0.16}, c);
            lift(HandLeft, {0.58, 0.18, 0.20}, c);
            lift(ElbowRight, {-0.20, 0.06, 0.10}, c);
            lift(WristRight, {-0.45, 0.14, 0.16}, c);
            lift(HandRight, {-0.58, 0.18, 0.20}, c);
            break;
        }
        case 5: {  // bow: upper body pitches forward about the hip
            double theta = 0.7 * amp * std::sin(kPi * u);
            double ct = std::cos(theta), st = std::sin(theta);
            Vec3 hip = pose[HipCenter];
            for (int j : {Spine, ShoulderCenter, Head, ElbowLeft, WristLeft, HandLeft, ElbowRight,
                          WristRight, HandRight}) {
                Vec3 d = pose[static_cast<std::size_t>(j)] - hip;
                pose[static_cast<std::size_t>(j)] =
                    hip + Vec3{d.x, d.y * ct - d.z * st, d.y * st + d.z * ct};
            }
            break;
        }
        default:
            throw ConfigError("toy: unknown class " + std::to_string(cls));
    }
}

}  // namespace detail

// One synthetic action instance. Subjects differ in body scale and speed,
// view 2 is the same scene seen from a 45-degree-rotated, offset camera.
inline SkeletonSequence generate_toy_sequence(int cls, int subject, int view, int rep,
                                              const ToyParams& params) {
    if (cls < 0 || cls >= kToyClasses) throw ConfigError("toy: class out of range");
    static const double scales[4] = {0.90, 0.97, 1.12, 1.04};
    static const double speeds[4] = {1.00, 0.90, 1.20, 1.10};
    int sidx = (subject - 1) % 4;

    Rng rng(derive_seed(params.seed, "toy/" + std::to_string(cls) + "/" + std::to_string(subject) +
                                         "/" + std::to_string(view) + "/" + std::to_string(rep)));
    double scale = scales[sidx] * rng.uniform(0.98, 1.02);
    double amp = rng.uniform(0.9, 1.1);
    double phase = rng.uniform(-0.06, 0.06);
    int frames = static_cast<int>(std::lround(52.0 / speeds[sidx])) +
                 static_cast<int>(rng.uniform_int(7));

    std::array<Vec3, kJointCount> posture = toy_base_pose();
    for (auto& p : posture) {
        p = scale * p;
        p.x += rng.normal() * 0.008;
        p.y += rng.normal() * 0.008;
        p.z += rng.normal() * 0.008;
    }

    SkeletonSequence seq;
    seq.label = cls;
    seq.subject_id = subject;
    seq.view_id = view;
    for (int t = 0; t < frames; ++t) {
        double u = frames > 1 ? static_cast<double>(t) / (frames - 1) : 0.0;
        u = std::clamp(u + phase, 0.0, 1.0);
        std::array<Vec3, kJointCount> pose = posture;
        detail::apply_motion(pose, cls, u, amp);
        for (auto& p : pose) {
            p.x += rng.normal() * params.noise_sigma;
            p.y += rng.normal() * params.noise_sigma;
            p.z += rng.normal() * params.noise_sigma;
        }
        if (view == 2) {
            const double r = std::sqrt(2.0) / 2.0;  // 45 degrees
            for (auto& p : pose) {
                p = Vec3{p.x * r + p.z * r, p.y, -p.x * r + p.z * r};
                p = p + Vec3{0.35, 0.0, 0.25};
            }
        }
        Frame fr;
        fr.timestamp_index = t;
        fr.bodies[0].present = true;
        fr.bodies[0].joints = pose;
        seq.frames.push_back(fr);
    }
    return seq;
}

struct ToySample {
    std::string id;
    SkeletonSequence seq;
};

// 120 sequences: 6 classes x 4 subjects x 2 views, with 2 or 3 repetitions per
// combination so every class, subject and view stays balanced.
inline std::vector<ToySample> generate_toy_dataset(const ToyParams& params) {
    std::vector<ToySample> out;
    for (int cls = 0; cls < kToyClasses; ++cls)
        for (int subject = 1; subject <= params.subjects; ++subject)
            for (int view = 1; view <= params.views; ++view) {
                int reps = 2 + (((subject - 1) + (view - 1)) % 2 == 0 ? 1 : 0);
                for (int rep = 0; rep < reps; ++rep) {
                    ToySample sample;
                    sample.id = "toy_a" + std::to_string(cls) + "_s" + std::to_string(subject) +
                                "_v" + std::to_string(view) + "_r" + std::to_string(rep);
                    sample.seq = generate_toy_sequence(cls, subject, view, rep, params);
                    out.push_back(std::move(sample));
                }
            }
    return out;
}

// Fixture sequence for the frozen raster tests: trig-free motion so the bytes
// do not depend on libm rounding.
inline SkeletonSequence golden_fixture_sequence() {
    SkeletonSequence seq;
    seq.label = 0;
    seq.subject_id = 1;
    seq.view_id = 1;
    const int frames = 20;
    auto base = toy_base_pose();
    for (int t = 0; t < frames; ++t) {
        double u = static_cast<double>(t) / (frames - 1);
        auto pose = base;
        double arc = u * (1.0 - u) * 4.0;  // parabola, peaks mid-sequence
        pose[HandRight] = pose[HandRight] + Vec3{-0.1 * u, 0.7 * u, 0.3 * arc};
        pose[WristRight] = pose[WristRight] + Vec3{-0.05 * u, 0.5 * u, 0.2 * arc};
        pose[ElbowRight] = pose[ElbowRight] + Vec3{0.0, 0.25 * u, 0.1 * arc};
        pose[HandLeft] = pose[HandLeft] + Vec3{0.2 * arc, 0.1 * u, 0.0};
        pose[AnkleLeft] = pose[AnkleLeft] + Vec3{0.0, 0.2 * arc, 0.4 * arc};
        pose[Head] = pose[Head] + Vec3{0.05 * arc, -0.05 * u, 0.1 * u};
        Frame fr;
        fr.timestamp_index = t;
        fr.bodies[0].present = true;
        fr.bodies[0].joints = pose;
        seq.frames.push_back(fr);
    }
    return seq;
}

}  // namespace skelact::toy
