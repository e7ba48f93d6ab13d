// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit code 0 only if all pass.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "skelact/features.hpp"
#include "skelact/fusion.hpp"
#include "skelact/maps.hpp"
#include "skelact/nn.hpp"
#include "skelact/pipeline.hpp"
#include "skelact/png.hpp"
#include "skelact/preprocess.hpp"
#include "skelact/toy.hpp"

using namespace skelact;
namespace fs = std::filesystem;

namespace {

struct Harness {
    int failures = 0;

    void run(const std::string& name, const std::function<void()>& body) {
        auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            body();
        } catch (const std::exception& e) {
            error = e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (error.empty()) {
            std::printf("[PASS] %-62s (%.1fs)\n", name.c_str(), secs);
        } else {
            std::printf("[FAIL] %-62s (%.1fs)\n       %s\n", name.c_str(), secs, error.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
};

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

double elapsed_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_root() {
    fs::path root = fs::temp_directory_path() / "skelact_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    return root;
}

// The frozen toy run configuration (also shipped as configs/toy.json).
RunConfig toy_run_config(const fs::path& dataset, Protocol protocol, const fs::path& out) {
    RunConfig cfg = parse_run_config(read_file(SKELACT_CONFIG_DIR "/toy.json"));
    cfg.dataset_dir = dataset.string();
    cfg.protocol = protocol;
    cfg.out_dir = out.string();
    return cfg;
}

// ---------------------------------------------------------------------------
// Criterion 1: line-selection combinatorics.
// ---------------------------------------------------------------------------
void criterion_lines() {
    auto t0 = std::chrono::steady_clock::now();
    LineSet lines = select_lines(default_topology());
    require(lines.lines.size() == 19, "expected 19 lines");
    require(lines.count(LineRule::Adjacent) == 6, "expected 6 adjacent lines");
    require(lines.count(LineRule::EndTwoStep) == 3, "expected 3 two-step lines");
    require(lines.count(LineRule::EndEnd) == 10, "expected 10 end-end lines");
    auto enumerate = [](int joints) {
        long count = 0;
        for (int j = 0; j < joints; ++j)
            for (int k = j + 1; k < joints; ++k)
                for (int n = 0; n < joints; ++n)
                    if (n != j && n != k) ++count;
        return count;
    };
    require(enumerate(12) == 660, "12-joint unconstrained triple count must be 660");
    require(enumerate(24) == 6072, "24-joint unconstrained triple count must be 6072");
    require(elapsed_since(t0) < 1.0, "combinatorics exceeded 1 s");
}

// ---------------------------------------------------------------------------
// Criterion 2: stabilized Heron vs the cross-product oracle.
// ---------------------------------------------------------------------------
void criterion_heron() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(20250810);
    auto check_points = [&](const Vec3& pj, const Vec3& pk, const Vec3& pn) {
        double a = norm(pn - pj), b = norm(pn - pk), c = norm(pk - pj);
        double heron = triangle_area_heron(a, b, c);
        double jld_heron = 2.0 * heron / c;
        double jld_oracle = norm(cross(pn - pj, pk - pj)) / norm(pk - pj);
        double denom = std::max({std::abs(jld_oracle), 1e-30});
        double rel = std::abs(jld_heron - jld_oracle) / denom;
        require(rel < 1e-6, "heron deviates from cross-product oracle by " + std::to_string(rel));
    };
    for (int i = 0; i < 10000; ++i) {
        Vec3 pj{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        Vec3 pk{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        Vec3 pn{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        if (norm(pk - pj) < 1e-6) continue;
        check_points(pj, pk, pn);
    }
    // Needle triangles, aspect ratio >= 1e4. (Beyond ~5e4 the rounded side
    // lengths stop carrying the area to 1e-6 at all, for any formula.)
    for (int i = 0; i < 100; ++i) {
        double base = rng.uniform(0.5, 1e5);
        double aspect = rng.uniform(1e4, 5e4);
        Vec3 pj{0, 0, 0}, pk{base, 0, 0};
        Vec3 pn{rng.uniform(0.05, 0.95) * base, base / aspect, 0};
        check_points(pj, pk, pn);
    }
    require(elapsed_since(t0) < 5.0, "heron sweep exceeded 5 s");
}

// ---------------------------------------------------------------------------
// Criterion 3: gradient fidelity at desk dimensions.
// ---------------------------------------------------------------------------
void criterion_gradients() {
    auto t0 = std::chrono::steady_clock::now();
    double lstm_err = nn::gradient_check(nn::ModelKind::Lstm, 7);
    require(lstm_err < 1e-4, "LSTM max relative gradient error " + std::to_string(lstm_err));
    double cnn_err = nn::gradient_check(nn::ModelKind::Cnn, 7);
    require(cnn_err < 1e-4, "CNN max relative gradient error " + std::to_string(cnn_err));
    for (std::uint64_t seed : {1ull, 13ull, 2024ull}) {
        require(nn::gradient_check(nn::ModelKind::Lstm, seed) < 1e-4, "LSTM gradients, other seed");
        require(nn::gradient_check(nn::ModelKind::Cnn, seed) < 1e-4, "CNN gradients, other seed");
    }
    require(elapsed_since(t0) < 60.0, "gradient checks exceeded 60 s");
}

// ---------------------------------------------------------------------------
// Criterion 4: rigid-motion invariances.
// ---------------------------------------------------------------------------
void criterion_invariances() {
    const LineSet lines = select_lines(default_topology());
    Rng rng(321);
    for (int trial = 0; trial < 100; ++trial) {
        SkeletonSequence seq;
        Frame fr;
        fr.bodies[0].present = true;
        for (auto& p : fr.bodies[0].joints)
            p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        seq.frames.push_back(fr);
        SkeletonSequence moved = rotate_y(center_on_hip(seq), rng.uniform(0.0, 360.0));
        auto j0 = extract_channel(seq, Channel::J, lines);
        auto j1 = extract_channel(moved, Channel::J, lines);
        auto l0 = extract_channel(seq, Channel::L, lines);
        auto l1 = extract_channel(moved, Channel::L, lines);
        for (std::size_t i = 0; i < j0.data.size(); ++i)
            require(std::abs(j0.data[i] - j1.data[i]) < 1e-6, "J channel not invariant");
        for (std::size_t i = 0; i < l0.data.size(); ++i)
            require(std::abs(l0.data[i] - l1.data[i]) < 1e-6, "L channel not invariant");
    }
    SkeletonSequence seq = toy::golden_fixture_sequence();
    JdmParams params;
    params.dist_min = 0.0;
    params.dist_max = 2.5;
    TextureMap plain = encode_jdm(seq, Plane::XYZ, params);
    for (double angle : {45.0, 135.0, 270.0}) {
        TextureMap rotated = encode_jdm(rotate_y(seq, angle), Plane::XYZ, params);
        require(rotated.pixels == plain.pixels, "JDM-xyz bytes changed under y-rotation");
    }
}

// ---------------------------------------------------------------------------
// Criterion 5: fusion properties.
// ---------------------------------------------------------------------------
void criterion_fusion_properties() {
    Rng rng(777);
    for (int trial = 0; trial < 10000; ++trial) {
        std::size_t classes = 2 + rng.uniform_int(8);
        std::size_t channels = 1 + rng.uniform_int(10);
        std::vector<ScoreVector> vs(channels, ScoreVector(classes));
        for (auto& v : vs)
            for (double& x : v) x = rng.uniform(1e-6, 1.0);
        int before = predict_label(fuse_scores(vs, FuseMethod::Mul));
        auto scaled = vs;
        for (auto& v : scaled) {
            double s = rng.uniform(1e-3, 1e3);
            for (double& x : v) x *= s;
        }
        require(predict_label(fuse_scores(scaled, FuseMethod::Mul)) == before,
                "mul-fusion argmax changed under positive scaling");
    }
    ScoreVector v = {0.15, 0.6, 0.25};
    for (FuseMethod m : {FuseMethod::Max, FuseMethod::Avg, FuseMethod::Mul}) {
        ScoreVector out = fuse_scores({v}, m);
        for (std::size_t i = 0; i < v.size(); ++i)
            require(std::abs(out[i] - v[i]) < 1e-12, "single-channel fusion is not the identity");
    }
    Rng prng(888);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ScoreVector> vs(4, ScoreVector(5));
        for (auto& w : vs)
            for (double& x : w) x = prng.uniform(0.0, 1.0);
        for (FuseMethod m : {FuseMethod::Max, FuseMethod::Avg, FuseMethod::Mul}) {
            ScoreVector base = fuse_scores(vs, m);
            auto perm = vs;
            std::reverse(perm.begin(), perm.end());
            ScoreVector out = fuse_scores(perm, m);
            for (std::size_t i = 0; i < base.size(); ++i)
                require(std::abs(base[i] - out[i]) < 1e-12, "fusion not permutation-invariant");
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 6: complementary channels, multiply beats singles.
// ---------------------------------------------------------------------------
void criterion_complementarity() {
    const int classes = 4, per_class = 8;
    std::vector<int> labels;
    std::vector<ScoreVector> a_rows, b_rows;
    auto peaked = [&](int at) {
        ScoreVector v(classes, 0.1);
        v[static_cast<std::size_t>(at)] = 0.7;
        return v;
    };
    ScoreVector uniform(classes, 0.25);
    for (int y = 0; y < classes; ++y)
        for (int i = 0; i < per_class; ++i) {
            labels.push_back(y);
            a_rows.push_back(y < 2 ? peaked(y) : uniform);
            b_rows.push_back(y >= 2 ? peaked(y) : uniform);
        }
    ChannelScores a, b;
    a.name = "R";
    b.name = "J";
    a.scores = a_rows;
    b.scores = b_rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        a.sample_ids.push_back("s" + std::to_string(i));
        b.sample_ids.push_back("s" + std::to_string(i));
    }
    EvalReport report = evaluate({a, b}, labels,
                                 {FuseMethod::Max, FuseMethod::Avg, FuseMethod::Mul});
    // Hand-computed from the construction: A = 16/32 (correct on its half,
    // uniform rows tie-break to class 0 and miss); B = 24/32 (its uniform rows
    // tie-break to class 0, which is right for the label-0 samples).
    require(std::abs(report.channel_rows[0].accuracy - 0.5) < 1e-12, "channel A accuracy != 0.5");
    require(std::abs(report.channel_rows[1].accuracy - 0.75) < 1e-12, "channel B accuracy != 0.75");
    double mul = -1, mx = -1, avg = -1;
    for (const auto& r : report.fusion_rows) {
        if (r.technique.rfind("All-Mul", 0) == 0) mul = r.accuracy;
        if (r.technique.rfind("All-Max", 0) == 0) mx = r.accuracy;
        if (r.technique.rfind("All-Ave", 0) == 0) avg = r.accuracy;
    }
    require(mul == 1.0, "mul-fused accuracy must be exactly 1.0 on this construction");
    require(mul > report.channel_rows[0].accuracy && mul > report.channel_rows[1].accuracy,
            "mul fusion must strictly beat every single channel");
    require(mul >= mx, "mul must be >= max fusion here");
    require(mul >= avg, "mul must be >= avg fusion here");
}

// ---------------------------------------------------------------------------
// Criteria 7-9 share the toy dataset and full pipeline runs.
// ---------------------------------------------------------------------------
struct ToyRuns {
    fs::path root, dataset, out_cs, out_cv, out_replica;
    double secs_cs = 0.0, secs_cv = 0.0;
    EvalReport report_cs, report_cv;
};

ToyRuns g_runs;

void criterion_toy_pipeline() {
    g_runs.root = work_root();
    g_runs.dataset = g_runs.root / "toy_data";
    toy::ToyParams params;
    auto samples = toy::generate_toy_dataset(params);
    require(samples.size() == 120, "toy dataset must hold 120 sequences");
    for (const auto& s : samples)
        write_file(g_runs.dataset / (s.id + ".json"), write_sequence(s.seq));

    auto check = [&](const EvalReport& report, const char* tag) {
        require(report.channel_rows.size() == 10, std::string(tag) + ": expected 10 channel rows");
        require(report.fusion_rows.size() == 6, std::string(tag) + ": expected 6 fusion rows");
        double all_mul = -1, best_single = 0;
        for (const auto& r : report.channel_rows) best_single = std::max(best_single, r.accuracy);
        for (const auto& r : report.fusion_rows)
            if (r.technique.rfind("All-Mul", 0) == 0) all_mul = r.accuracy;
        require(all_mul >= 0.90, std::string(tag) + ": All-Mul accuracy " +
                                     std::to_string(all_mul) + " below 0.90");
        require(all_mul >= best_single, std::string(tag) + ": All-Mul " + std::to_string(all_mul) +
                                            " below best single channel " +
                                            std::to_string(best_single));
    };

    {
        g_runs.out_cs = g_runs.root / "out_cs";
        auto t0 = std::chrono::steady_clock::now();
        g_runs.report_cs = run_pipeline(
            toy_run_config(g_runs.dataset, Protocol::CrossSubject, g_runs.out_cs));
        g_runs.secs_cs = elapsed_since(t0);
        require(g_runs.secs_cs < 900.0, "cross-subject run exceeded 15 minutes");
        check(g_runs.report_cs, "cross-subject");
    }
    {
        g_runs.out_cv = g_runs.root / "out_cv";
        auto t0 = std::chrono::steady_clock::now();
        g_runs.report_cv =
            run_pipeline(toy_run_config(g_runs.dataset, Protocol::CrossView, g_runs.out_cv));
        g_runs.secs_cv = elapsed_since(t0);
        require(g_runs.secs_cv < 900.0, "cross-view run exceeded 15 minutes");
        check(g_runs.report_cv, "cross-view");
    }
}

void criterion_determinism() {
    require(!g_runs.out_cs.empty() && fs::exists(g_runs.out_cs / "report.json"),
            "toy pipeline run is a prerequisite");
    g_runs.out_replica = g_runs.root / "out_replica";
    run_pipeline(toy_run_config(g_runs.dataset, Protocol::CrossSubject, g_runs.out_replica));

    // Reports, checkpoints, scores and every PNG must match byte for byte.
    std::vector<std::string> rels = {"report.json", "report.txt", "manifest.json",
                                     "prep/refs.txt", "maps/scaling.txt"};
    for (const auto& name : canonical_channels()) {
        rels.push_back("models/" + name + ".bin");
        rels.push_back("models/" + name + ".json");
        rels.push_back("scores/" + name + ".txt");
        if (!is_lstm_channel(name)) rels.push_back("models/" + name + ".mean.bin");
    }
    int pngs = 0;
    for (const auto& entry : fs::recursive_directory_iterator(g_runs.out_cs))
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            rels.push_back(fs::relative(entry.path(), g_runs.out_cs).string());
            ++pngs;
        }
    require(pngs == 120 * 7, "expected 840 PNG maps");
    for (const auto& rel : rels)
        require(read_file(g_runs.out_cs / rel) == read_file(g_runs.out_replica / rel),
                "artifact differs between runs: " + rel);

    // Frozen raster fixtures.
    SkeletonSequence fixture = toy::golden_fixture_sequence();
    TextureMap jtm = encode_jtm(fixture, Plane::XY, JtmParams{});
    std::string jtm_bytes = png::encode_rgb8(jtm.pixels, jtm.width, jtm.height);
    JdmParams jp;
    jp.dist_min = 0.0;
    jp.dist_max = 2.5;
    TextureMap jdm = encode_jdm(fixture, Plane::XYZ, jp);
    std::string jdm_bytes = png::encode_rgb8(jdm.pixels, jdm.width, jdm.height);
    require(read_file(fs::path(SKELACT_GOLDEN_DIR) / "golden_jtm_xy.png") == jtm_bytes,
            "JTM golden fixture drifted");
    require(read_file(fs::path(SKELACT_GOLDEN_DIR) / "golden_jdm_xyz.png") == jdm_bytes,
            "JDM golden fixture drifted");
}

void criterion_normalization() {
    require(!g_runs.out_cs.empty() && fs::exists(g_runs.out_cs / "prep" / "refs.txt"),
            "toy pipeline run is a prerequisite");
    const Topology& topo = default_topology();
    ReferenceLengths refs =
        parse_reference_lengths(read_file(g_runs.out_cs / "prep" / "refs.txt"), topo);
    // Centering and subsampling preserve bone lengths, so the prep outputs
    // must carry reference-length bones for the entire toy dataset.
    auto index = read_index(g_runs.out_cs / "ingest" / "index.json");
    require(index.size() == 120, "expected 120 ingested sequences");
    for (const auto& e : index) {
        SkeletonSequence seq =
            parse_canonical_json(read_file(g_runs.out_cs / "prep" / (e.id + ".json")));
        for (const Frame& fr : seq.frames)
            for (const Body& body : fr.bodies) {
                if (!body.present) continue;
                for (std::size_t k = 0; k < topo.edges.size(); ++k) {
                    double len = norm(body.joints[topo.edges[k].child] -
                                      body.joints[topo.edges[k].parent]);
                    require(std::abs(len - refs.lengths[k]) < 1e-6,
                            "bone " + topo.edge_name(topo.edges[k]) + " off reference in " + e.id);
                }
            }
    }
    // Idempotence on a sample of raw sequences.
    toy::ToyParams params;
    for (int cls = 0; cls < 3; ++cls) {
        SkeletonSequence raw = toy::generate_toy_sequence(cls, 1, 1, 0, params);
        SkeletonSequence once = normalize_limbs(raw, refs, topo);
        SkeletonSequence twice = normalize_limbs(once, refs, topo);
        for (std::size_t f = 0; f < once.frames.size(); ++f)
            for (int j = 0; j < kJointCount; ++j)
                require(norm(once.frames[f].bodies[0].joints[j] -
                             twice.frames[f].bodies[0].joints[j]) < 1e-6,
                        "normalize_limbs is not idempotent");
    }
}

}  // namespace

int main() {
    Harness h;
    h.run("C1 line selection: 19 lines (6,3,10); 660/6072 triples; <1s", criterion_lines);
    h.run("C2 joint-line distance: Heron vs cross-product, 1e4+needles", criterion_heron);
    h.run("C3 LSTM/CNN analytic gradients vs central differences <1e-4", criterion_gradients);
    h.run("C4 J/L rigid-motion invariance; JDM-xyz byte-stable rotation", criterion_invariances);
    h.run("C5 fusion: scaling/permutation invariance, identity", criterion_fusion_properties);
    h.run("C6 complementary channels: mul beats singles, >= max/avg", criterion_complementarity);
    h.run("C7 toy pipeline: both protocols, All-Mul >= 0.90, <15min", criterion_toy_pipeline);
    h.run("C8 determinism: byte-identical replica run + golden rasters", criterion_determinism);
    h.run("C9 normalization: reference bone lengths within 1e-6 + idempotence",
          criterion_normalization);
    if (h.failures == 0) {
        std::printf("acceptance: all 9 criteria passed\n");
        if (!g_runs.root.empty()) fs::remove_all(g_runs.root);
        return 0;
    }
    std::printf("acceptance: %d criterion(s) failed\n", h.failures);
    return 1;
}
