#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "skelact/common.hpp"
#include "skelact/features.hpp"
#include "skelact/fusion.hpp"
#include "skelact/maps.hpp"
#include "skelact/nn.hpp"
#include "skelact/png.hpp"
#include "skelact/preprocess.hpp"
#include "skelact/skeleton_io.hpp"

namespace skelact {

inline constexpr const char* kToolVersion = "skelact/0.1";

namespace fsys = std::filesystem;

// ---------------------------------------------------------------------------
// Small file helpers.
// ---------------------------------------------------------------------------

inline std::string read_file(const fsys::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

inline void write_file(const fsys::path& path, const std::string& bytes) {
    fsys::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Run configuration.
// ---------------------------------------------------------------------------

struct ChannelConfig {
    nn::TrainConfig train;
    int hidden = 128;  // LSTM only
    int layers = 3;    // LSTM only
};

inline ChannelConfig default_channel_config(const std::string& name) {
    ChannelConfig cfg;
    if (is_lstm_channel(name)) {
        cfg.train.optimizer = nn::Optimizer::Rmsprop;
        cfg.train.learning_rate = 1e-3;
        cfg.train.epochs = 100;
        cfg.train.batch_size = 8;
        cfg.train.dropout = 0.5;
    } else {
        cfg.train.optimizer = nn::Optimizer::Sgd;
        cfg.train.learning_rate = 0.01;
        cfg.train.momentum = 0.9;
        cfg.train.epochs = 15;
        cfg.train.batch_size = 8;
        cfg.train.dropout = 0.5;
    }
    return cfg;
}

struct RunConfig {
    std::string dataset_dir;
    SeqFormat format = SeqFormat::CanonicalJson;
    std::string topology_file;  // empty = built-in ntu12
    Protocol protocol = Protocol::CrossSubject;
    SplitConfig splits;
    int subseq = 20;
    int augment_rotations = 8;
    int map_size = 256;
    int cnn_input = 256;
    std::vector<FuseMethod> methods = {FuseMethod::Max, FuseMethod::Avg, FuseMethod::Mul};
    std::uint64_t seed = 42;
    int threads = 1;
    std::map<std::string, ChannelConfig> channels;  // keyed by canonical name
    std::string out_dir;

    const ChannelConfig& channel(const std::string& name) const { return channels.at(name); }
};

inline nlohmann::ordered_json channel_config_json(const std::string& name,
                                                  const ChannelConfig& cfg) {
    nlohmann::ordered_json j;
    j["optimizer"] = cfg.train.optimizer == nn::Optimizer::Sgd ? "sgd" : "rmsprop";
    j["learning_rate"] = cfg.train.learning_rate;
    j["momentum"] = cfg.train.momentum;
    j["epochs"] = cfg.train.epochs;
    j["batch_size"] = cfg.train.batch_size;
    j["dropout"] = cfg.train.dropout;
    j["time_steps"] = cfg.train.time_steps;
    if (is_lstm_channel(name)) {
        j["hidden"] = cfg.hidden;
        j["layers"] = cfg.layers;
    }
    return j;
}

inline nlohmann::ordered_json run_config_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["dataset"] = cfg.dataset_dir;
    j["format"] = cfg.format == SeqFormat::CanonicalJson ? "json" : "ntu";
    j["topology"] = cfg.topology_file.empty() ? "builtin:ntu12" : cfg.topology_file;
    j["protocol"] = protocol_name(cfg.protocol);
    j["train_subjects"] = cfg.splits.train_subjects;
    j["test_subjects"] = cfg.splits.test_subjects;
    j["train_views"] = cfg.splits.train_views;
    j["test_views"] = cfg.splits.test_views;
    j["subseq"] = cfg.subseq;
    j["augment_rotations"] = cfg.augment_rotations;
    j["map_size"] = cfg.map_size;
    j["cnn_input"] = cfg.cnn_input;
    std::vector<std::string> methods;
    for (auto m : cfg.methods) methods.emplace_back(fuse_method_name(m));
    j["fusion_methods"] = methods;
    j["seed"] = cfg.seed;
    nlohmann::ordered_json chans;
    for (const auto& [name, ch] : cfg.channels) chans[name] = channel_config_json(name, ch);
    j["channels"] = chans;
    return j;
}

// Hash over everything that affects artifacts (threads and out_dir do not).
inline std::string run_config_hash(const RunConfig& cfg) {
    return hash_hex(fnv1a(run_config_json(cfg).dump()));
}

inline RunConfig parse_run_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    RunConfig cfg;
    if (!j.contains("dataset") || !j["dataset"].is_string())
        throw ConfigError("run config: \"dataset\" path is required");
    cfg.dataset_dir = j["dataset"].get<std::string>();
    if (j.contains("format")) {
        auto f = seq_format_from_name(j["format"].get<std::string>());
        if (!f) throw ConfigError("run config: unknown format " + j["format"].dump());
        cfg.format = *f;
    }
    if (j.contains("topology")) {
        std::string t = j["topology"].get<std::string>();
        if (t != "builtin:ntu12") cfg.topology_file = t;
    }
    if (j.contains("protocol")) {
        auto p = protocol_from_name(j["protocol"].get<std::string>());
        if (!p) throw ConfigError("run config: unknown protocol " + j["protocol"].dump());
        cfg.protocol = *p;
    }
    auto ints = [&](const char* key) {
        std::vector<int> out;
        if (j.contains(key)) out = j[key].get<std::vector<int>>();
        return out;
    };
    cfg.splits.train_subjects = ints("train_subjects");
    cfg.splits.test_subjects = ints("test_subjects");
    cfg.splits.train_views = ints("train_views");
    cfg.splits.test_views = ints("test_views");
    cfg.subseq = j.value("subseq", 20);
    cfg.augment_rotations = j.value("augment_rotations", 8);
    cfg.map_size = j.value("map_size", 256);
    cfg.cnn_input = j.value("cnn_input", 256);
    if (j.contains("fusion_methods")) {
        cfg.methods.clear();
        for (const auto& m : j["fusion_methods"]) {
            auto fm = fuse_method_from_name(m.get<std::string>());
            if (!fm) throw ConfigError("run config: unknown fusion method " + m.dump());
            cfg.methods.push_back(*fm);
        }
        if (cfg.methods.empty()) throw ConfigError("run config: fusion_methods is empty");
    }
    cfg.seed = j.value("seed", std::uint64_t{42});
    cfg.threads = j.value("threads", 1);

    for (const auto& name : canonical_channels()) cfg.channels[name] = default_channel_config(name);
    if (j.contains("channels")) {
        if (!j["channels"].is_object()) throw ConfigError("run config: \"channels\" must be an object");
        for (const auto& [name, spec] : j["channels"].items()) {
            auto it = cfg.channels.find(name);
            if (it == cfg.channels.end())
                throw ConfigError("run config: unknown channel name \"" + name + "\"");
            ChannelConfig& ch = it->second;
            if (spec.contains("optimizer")) {
                std::string o = spec["optimizer"].get<std::string>();
                if (o == "sgd") ch.train.optimizer = nn::Optimizer::Sgd;
                else if (o == "rmsprop") ch.train.optimizer = nn::Optimizer::Rmsprop;
                else throw ConfigError("run config: unknown optimizer \"" + o + "\"");
            }
            ch.train.learning_rate = spec.value("learning_rate", ch.train.learning_rate);
            ch.train.momentum = spec.value("momentum", ch.train.momentum);
            ch.train.epochs = spec.value("epochs", ch.train.epochs);
            ch.train.batch_size = spec.value("batch_size", ch.train.batch_size);
            ch.train.dropout = spec.value("dropout", ch.train.dropout);
            ch.train.time_steps = spec.value("time_steps", ch.train.time_steps);
            ch.hidden = spec.value("hidden", ch.hidden);
            ch.layers = spec.value("layers", ch.layers);
            nn::validate_train_config(ch.train);
        }
    }
    if (cfg.subseq < 1 || cfg.augment_rotations < 1 || cfg.map_size < 16 || cfg.cnn_input < 16)
        throw ConfigError("run config: subseq/augment_rotations/map_size/cnn_input out of range");
    return cfg;
}

inline Topology load_topology(const RunConfig& cfg) {
    if (cfg.topology_file.empty()) return default_topology();
    nlohmann::json j = nlohmann::json::parse(read_file(cfg.topology_file));
    Topology topo;
    topo.id = j.value("id", std::string("custom"));
    topo.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    topo.joint_count = static_cast<int>(topo.joint_names.size());
    for (const auto& e : j.at("edges"))
        topo.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>(),
                              e.size() > 2 ? e.at(2).get<int>() : 1});
    topo.end_joints = j.at("end_joints").get<std::vector<int>>();
    validate_topology(topo);
    return topo;
}

// ---------------------------------------------------------------------------
// Stage plumbing: every stage writes its outputs plus a stamp recording the
// hash of its inputs; a stage re-runs only when the stamp no longer matches.
// ---------------------------------------------------------------------------

struct StageStamp {
    fsys::path file;
    std::string hash;

    bool fresh() const {
        std::ifstream in(file);
        if (!in) return false;
        std::string existing;
        std::getline(in, existing);
        return existing == hash;
    }

    void commit() const { write_file(file, hash + "\n"); }
};

struct PipelineContext {
    RunConfig cfg;
    fsys::path out;
    Topology topo;

    fsys::path ingest_dir() const { return out / "ingest"; }
    fsys::path prep_dir() const { return out / "prep"; }
    fsys::path feat_dir() const { return out / "features"; }
    fsys::path maps_dir() const { return out / "maps"; }
    fsys::path models_dir() const { return out / "models"; }
    fsys::path scores_dir() const { return out / "scores"; }
};

inline PipelineContext make_context(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw ConfigError("run: output directory is required");
    PipelineContext ctx{cfg, fsys::path(cfg.out_dir), load_topology(cfg)};
    fsys::create_directories(ctx.out);
    return ctx;
}

struct IndexEntry {
    std::string id;
    int label = 0;
    int subject = 0;
    int view = 0;
    int frames = 0;
};

inline void write_index(const fsys::path& path, const std::vector<IndexEntry>& entries) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        nlohmann::ordered_json row;
        row["id"] = e.id;
        row["label"] = e.label;
        row["subject"] = e.subject;
        row["view"] = e.view;
        row["frames"] = e.frames;
        j.push_back(row);
    }
    write_file(path, j.dump(1) + "\n");
}

inline std::vector<IndexEntry> read_index(const fsys::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    std::vector<IndexEntry> out;
    for (const auto& row : j)
        out.push_back({row.at("id").get<std::string>(), row.at("label").get<int>(),
                       row.at("subject").get<int>(), row.at("view").get<int>(),
                       row.at("frames").get<int>()});
    return out;
}

inline void write_warnings(const fsys::path& path, const Warnings& w) {
    std::string text;
    for (const auto& m : w.messages) text += m + "\n";
    write_file(path, text);
}

// ---------------------------------------------------------------------------
// Stage: ingest. Parses every dataset file, validates, and rewrites it in
// canonical form under the workspace, plus an index of metadata.
// ---------------------------------------------------------------------------

inline std::string stage_ingest(PipelineContext& ctx) {
    std::vector<fsys::path> files;
    const std::string want_ext = ctx.cfg.format == SeqFormat::CanonicalJson ? ".json" : ".skeleton";
    if (!fsys::is_directory(ctx.cfg.dataset_dir))
        throw ConfigError("ingest: dataset directory " + ctx.cfg.dataset_dir + " does not exist");
    for (const auto& entry : fsys::directory_iterator(ctx.cfg.dataset_dir))
        if (entry.is_regular_file() && entry.path().extension() == want_ext)
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("ingest: no " + want_ext + " files in " + ctx.cfg.dataset_dir);

    std::uint64_t h = fnv1a(want_ext);
    std::vector<std::string> contents;
    contents.reserve(files.size());
    for (const auto& f : files) {
        contents.push_back(read_file(f));
        h = fnv1a(f.filename().string(), h);
        h = fnv1a(contents.back(), h);
    }
    StageStamp stamp{ctx.ingest_dir() / "stamp.txt", hash_hex(h)};
    if (stamp.fresh()) return stamp.hash;

    Warnings warnings;
    std::vector<IndexEntry> index;
    for (std::size_t i = 0; i < files.size(); ++i) {
        std::string id = files[i].stem().string();
        try {
            SkeletonSequence seq = parse_sequence(contents[i], ctx.cfg.format, &warnings);
            if (ctx.cfg.format == SeqFormat::NtuSkeleton)
                if (auto info = parse_ntu_name(id)) {
                    seq.label = info->action;
                    seq.subject_id = info->performer;
                    seq.view_id = info->camera;
                }
            if (seq.topology_id != ctx.topo.id)
                throw ValidationError("sequence topology \"" + seq.topology_id +
                                      "\" does not match configured \"" + ctx.topo.id + "\"");
            write_file(ctx.ingest_dir() / (id + ".json"), write_sequence(seq));
            index.push_back({id, seq.label, seq.subject_id, seq.view_id,
                             static_cast<int>(seq.frames.size())});
        } catch (const std::exception& e) {
            throw ParseError("ingest: sample " + id + ": " + e.what());
        }
    }
    write_index(ctx.ingest_dir() / "index.json", index);
    write_warnings(ctx.ingest_dir() / "warnings.txt", warnings);
    stamp.commit();
    return stamp.hash;
}

// ---------------------------------------------------------------------------
// Stage: prep. Splits, reference limb lengths from the training split only,
// then normalize -> center -> subsample for every sequence.
// ---------------------------------------------------------------------------

inline std::string stage_prep(PipelineContext& ctx, const std::string& ingest_hash) {
    auto index = read_index(ctx.ingest_dir() / "index.json");

    nlohmann::ordered_json salt;
    salt["ingest"] = ingest_hash;
    salt["protocol"] = protocol_name(ctx.cfg.protocol);
    salt["train_subjects"] = ctx.cfg.splits.train_subjects;
    salt["test_subjects"] = ctx.cfg.splits.test_subjects;
    salt["train_views"] = ctx.cfg.splits.train_views;
    salt["test_views"] = ctx.cfg.splits.test_views;
    salt["subseq"] = ctx.cfg.subseq;
    salt["seed"] = ctx.cfg.seed;
    StageStamp stamp{ctx.prep_dir() / "stamp.txt", hash_hex(fnv1a(salt.dump()))};
    if (stamp.fresh()) return stamp.hash;

    std::vector<SequenceMeta> metas;
    for (const auto& e : index) metas.push_back({e.id, e.label, e.subject, e.view});
    auto [train_ids, test_ids] = make_splits(metas, ctx.cfg.protocol, ctx.cfg.splits);
    {
        nlohmann::ordered_json sj;
        sj["train"] = train_ids;
        sj["test"] = test_ids;
        write_file(ctx.prep_dir() / "splits.json", sj.dump(1) + "\n");
    }

    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    std::vector<SkeletonSequence> train_seqs;
    std::map<std::string, SkeletonSequence> all;
    for (const auto& e : index) {
        SkeletonSequence seq = parse_canonical_json(read_file(ctx.ingest_dir() / (e.id + ".json")));
        if (train_set.count(e.id)) train_seqs.push_back(seq);
        all.emplace(e.id, std::move(seq));
    }

    ReferenceLengths refs = estimate_reference_lengths(train_seqs, ctx.topo);
    write_file(ctx.prep_dir() / "refs.txt", write_reference_lengths(refs, ctx.topo));

    Warnings warnings;
    for (const auto& e : index) {
        try {
            SkeletonSequence seq = normalize_limbs(all.at(e.id), refs, ctx.topo, &warnings);
            seq = center_on_hip(seq);
            seq = sample_subsequences(seq, ctx.cfg.subseq,
                                      derive_seed(ctx.cfg.seed, "sample/" + e.id));
            write_file(ctx.prep_dir() / (e.id + ".json"), write_sequence(seq));
        } catch (const std::exception& ex) {
            throw ValidationError("prep: sample " + e.id + ": " + ex.what());
        }
    }
    write_warnings(ctx.prep_dir() / "warnings.txt", warnings);
    stamp.commit();
    return stamp.hash;
}

// ---------------------------------------------------------------------------
// Stage: featurize. R / J / L matrices per sequence.
// ---------------------------------------------------------------------------

inline std::string stage_featurize(PipelineContext& ctx, const std::string& prep_hash) {
    StageStamp stamp{ctx.feat_dir() / "stamp.txt", hash_hex(fnv1a("features:" + prep_hash))};
    if (stamp.fresh()) return stamp.hash;
    auto index = read_index(ctx.ingest_dir() / "index.json");
    LineSet lines = select_lines(ctx.topo);
    Warnings warnings;
    for (const auto& e : index) {
        try {
            SkeletonSequence seq = parse_canonical_json(read_file(ctx.prep_dir() / (e.id + ".json")));
            for (Channel ch : {Channel::R, Channel::J, Channel::L}) {
                FeatureMatrix fm = extract_channel(seq, ch, lines, &warnings);
                write_file(ctx.feat_dir() / (e.id + "." + channel_name(ch) + ".fmat"),
                           write_feature_matrix(fm));
            }
        } catch (const std::exception& ex) {
            throw ValidationError("featurize: sample " + e.id + ": " + ex.what());
        }
    }
    write_warnings(ctx.feat_dir() / "warnings.txt", warnings);
    stamp.commit();
    return stamp.hash;
}

// ---------------------------------------------------------------------------
// Stage: encode-maps. JDM scaling constants from the training split, then the
// seven texture maps per sequence as PNG files.
// ---------------------------------------------------------------------------

inline const std::array<Plane, 3>& jtm_planes() {
    static const std::array<Plane, 3> p = {Plane::XY, Plane::XZ, Plane::YZ};
    return p;
}

inline const std::array<Plane, 4>& jdm_planes() {
    static const std::array<Plane, 4> p = {Plane::XY, Plane::XZ, Plane::YZ, Plane::XYZ};
    return p;
}

struct JdmScaling {
    std::map<std::string, std::pair<double, double>> by_plane;

    JdmParams params_for(Plane plane, int width) const {
        JdmParams p;
        p.width = width;
        auto it = by_plane.find(plane_name(plane));
        if (it == by_plane.end())
            throw ConfigError(std::string("jdm scaling: missing plane ") + plane_name(plane));
        p.dist_min = it->second.first;
        p.dist_max = it->second.second;
        return p;
    }
};

inline std::string write_jdm_scaling(const JdmScaling& s) {
    std::ostringstream out;
    out << "skelscale/1\n";
    for (const auto& [plane, range] : s.by_plane)
        out << plane << " " << format_double(range.first) << " " << format_double(range.second)
            << "\n";
    return out.str();
}

inline JdmScaling parse_jdm_scaling(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    if (!std::getline(in, magic) || magic != "skelscale/1")
        throw ParseError("jdm scaling: missing skelscale/1 header");
    JdmScaling s;
    std::string plane;
    double lo, hi;
    while (in >> plane >> lo >> hi) s.by_plane[plane] = {lo, hi};
    return s;
}

inline std::string map_file_name(const std::string& id, MapKind kind, Plane plane) {
    return id + "_" + map_kind_name(kind) + "_" + plane_name(plane) + ".png";
}

inline std::string stage_maps(PipelineContext& ctx, const std::string& prep_hash) {
    nlohmann::ordered_json salt;
    salt["prep"] = prep_hash;
    salt["map_size"] = ctx.cfg.map_size;
    StageStamp stamp{ctx.maps_dir() / "stamp.txt", hash_hex(fnv1a(salt.dump()))};
    if (stamp.fresh()) return stamp.hash;

    auto index = read_index(ctx.ingest_dir() / "index.json");
    nlohmann::json splits = nlohmann::json::parse(read_file(ctx.prep_dir() / "splits.json"));
    std::set<std::string> train_set;
    for (const auto& id : splits["train"]) train_set.insert(id.get<std::string>());

    std::map<std::string, SkeletonSequence> seqs;
    std::vector<SkeletonSequence> train_seqs;
    for (const auto& e : index) {
        SkeletonSequence seq = parse_canonical_json(read_file(ctx.prep_dir() / (e.id + ".json")));
        if (train_set.count(e.id)) train_seqs.push_back(seq);
        seqs.emplace(e.id, std::move(seq));
    }

    JdmScaling scaling;
    for (Plane plane : jdm_planes()) {
        DistanceRange r = jdm_distance_range(train_seqs, plane);
        scaling.by_plane[plane_name(plane)] = {r.any ? r.lo : 0.0, r.any ? r.hi : 0.0};
    }
    write_file(ctx.maps_dir() / "scaling.txt", write_jdm_scaling(scaling));

    JtmParams jtm;
    jtm.width = ctx.cfg.map_size;
    jtm.height = ctx.cfg.map_size;
    for (const auto& e : index) {
        const SkeletonSequence& seq = seqs.at(e.id);
        for (Plane plane : jtm_planes()) {
            TextureMap map = encode_jtm(seq, plane, jtm, e.id);
            write_file(ctx.maps_dir() / map_file_name(e.id, MapKind::JTM, plane),
                       png::encode_rgb8(map.pixels, map.width, map.height));
        }
        for (Plane plane : jdm_planes()) {
            TextureMap map = encode_jdm(seq, plane, scaling.params_for(plane, ctx.cfg.map_size), e.id);
            write_file(ctx.maps_dir() / map_file_name(e.id, MapKind::JDM, plane),
                       png::encode_rgb8(map.pixels, map.width, map.height));
        }
    }
    stamp.commit();
    return stamp.hash;
}

// ---------------------------------------------------------------------------
// Checkpoints: flat binary tensors plus a text manifest.
// ---------------------------------------------------------------------------

inline void save_tensors(const fsys::path& bin_path, const std::vector<nn::Vec*>& tensors) {
    std::string blob;
    for (const nn::Vec* t : tensors) {
        std::size_t old = blob.size();
        blob.resize(old + t->size() * sizeof(double));
        std::memcpy(blob.data() + old, t->data(), t->size() * sizeof(double));
    }
    write_file(bin_path, blob);
}

inline void load_tensors(const fsys::path& bin_path, const std::vector<nn::Vec*>& tensors) {
    std::string blob = read_file(bin_path);
    std::size_t at = 0;
    for (nn::Vec* t : tensors) {
        std::size_t need = t->size() * sizeof(double);
        if (at + need > blob.size()) throw ParseError("checkpoint: " + bin_path.string() + " truncated");
        std::memcpy(t->data(), blob.data() + at, need);
        at += need;
    }
    if (at != blob.size()) throw ParseError("checkpoint: " + bin_path.string() + " has trailing bytes");
}

// ---------------------------------------------------------------------------
// Stage: train. Ten channels; each is trained on the training split and then
// scores the test split. Channel work is independent, so it may run on
// several threads without changing any result.
// ---------------------------------------------------------------------------

namespace detail {

struct SplitLists {
    std::vector<std::string> train, test;
};

inline SplitLists read_splits(const PipelineContext& ctx) {
    nlohmann::json j = nlohmann::json::parse(read_file(ctx.prep_dir() / "splits.json"));
    SplitLists out;
    for (const auto& id : j["train"]) out.train.push_back(id.get<std::string>());
    for (const auto& id : j["test"]) out.test.push_back(id.get<std::string>());
    return out;
}

inline int class_count(const std::vector<IndexEntry>& index) {
    int c = 0;
    for (const auto& e : index) c = std::max(c, e.label + 1);
    return c;
}

}  // namespace detail

inline std::string train_one_channel(PipelineContext& ctx, const std::string& name,
                                     const std::string& upstream_hash) {
    const ChannelConfig& ch = ctx.cfg.channel(name);
    nlohmann::ordered_json salt;
    salt["upstream"] = upstream_hash;
    salt["channel"] = name;
    salt["config"] = channel_config_json(name, ch);
    salt["seed"] = ctx.cfg.seed;
    if (!is_lstm_channel(name)) {
        salt["augment_rotations"] = ctx.cfg.augment_rotations;
        salt["cnn_input"] = ctx.cfg.cnn_input;
        salt["map_size"] = ctx.cfg.map_size;
    }
    StageStamp stamp{ctx.models_dir() / (name + ".stamp.txt"), hash_hex(fnv1a(salt.dump()))};
    if (stamp.fresh()) return stamp.hash;

    auto index = read_index(ctx.ingest_dir() / "index.json");
    std::map<std::string, int> label_of;
    for (const auto& e : index) label_of[e.id] = e.label;
    auto splits = detail::read_splits(ctx);
    const int classes = detail::class_count(index);

    nn::TrainConfig tcfg = ch.train;
    tcfg.seed = derive_seed(ctx.cfg.seed, "train/" + name);
    Rng init_rng(derive_seed(ctx.cfg.seed, "init/" + name));

    ChannelScores scores;
    scores.name = name;
    std::vector<double> loss_history;
    nlohmann::ordered_json manifest;
    manifest["version"] = kToolVersion;
    manifest["channel"] = name;
    manifest["classes"] = classes;
    manifest["seed"] = tcfg.seed;
    manifest["config"] = channel_config_json(name, ch);

    if (is_lstm_channel(name)) {
        auto load_fm = [&](const std::string& id) {
            return parse_feature_matrix(read_file(ctx.feat_dir() / (id + "." + name + ".fmat")));
        };
        std::vector<FeatureMatrix> train_x;
        std::vector<int> train_y;
        for (const auto& id : splits.train) {
            train_x.push_back(load_fm(id));
            train_y.push_back(label_of.at(id));
        }
        nn::LstmModel model = nn::make_lstm(train_x.front().cols,
                                            static_cast<std::size_t>(ch.hidden), ch.layers,
                                            classes, init_rng);
        nn::TrainResult r = nn::train_lstm(model, train_x, train_y, tcfg);
        loss_history = r.loss_history;
        for (const auto& id : splits.test) {
            scores.sample_ids.push_back(id);
            scores.scores.push_back(nn::lstm_forward(load_fm(id), model));
        }
        manifest["kind"] = "lstm";
        manifest["input_dim"] = train_x.front().cols;
        save_tensors(ctx.models_dir() / (name + ".bin"), model.params());
    } else {
        MapKind kind = name.rfind("JTM", 0) == 0 ? MapKind::JTM : MapKind::JDM;
        Plane plane = *plane_from_name(name.substr(4));
        JdmScaling scaling = parse_jdm_scaling(read_file(ctx.maps_dir() / "scaling.txt"));

        auto encode = [&](const SkeletonSequence& seq, const std::string& id) {
            if (kind == MapKind::JTM) {
                JtmParams p;
                p.width = ctx.cfg.map_size;
                p.height = ctx.cfg.map_size;
                return encode_jtm(seq, plane, p, id);
            }
            return encode_jdm(seq, plane, scaling.params_for(plane, ctx.cfg.map_size), id);
        };

        // JTM channels train on the 8 y-rotated copies of each training
        // sequence; JDM distances are rotation-invariant in xyz and are not
        // augmented.
        const int rotations = kind == MapKind::JTM ? ctx.cfg.augment_rotations : 1;
        std::vector<std::vector<std::uint8_t>> train_pixels;
        std::vector<int> train_y;
        for (const auto& id : splits.train) {
            SkeletonSequence seq = parse_canonical_json(read_file(ctx.prep_dir() / (id + ".json")));
            for (int r = 0; r < rotations; ++r) {
                SkeletonSequence view = r == 0 ? seq : rotate_y(seq, 360.0 * r / rotations);
                TextureMap map = encode(view, id);
                TextureMap boxed = letterbox(map, ctx.cfg.cnn_input);
                train_pixels.push_back(std::move(boxed.pixels));
                train_y.push_back(label_of.at(id));
            }
        }
        nn::CnnModel model = nn::make_default_cnn(ctx.cfg.cnn_input, classes, ch.train.dropout,
                                                  init_rng);
        const std::size_t plane_px = static_cast<std::size_t>(ctx.cfg.cnn_input) *
                                     static_cast<std::size_t>(ctx.cfg.cnn_input);
        auto to_raw = [&](const std::vector<std::uint8_t>& px) {
            nn::Vec img(3 * plane_px);
            for (std::size_t p = 0; p < plane_px; ++p)
                for (int c = 0; c < 3; ++c)
                    img[static_cast<std::size_t>(c) * plane_px + p] =
                        px[p * 3 + static_cast<std::size_t>(c)] / 255.0 - 0.5;
            return img;
        };
        // Mean image over the training inputs; subtracted everywhere so the
        // constant background stops dominating the early gradients.
        nn::Vec mean(3 * plane_px, 0.0);
        for (const auto& px : train_pixels) {
            nn::Vec img = to_raw(px);
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += img[i];
        }
        for (double& v : mean) v /= static_cast<double>(train_pixels.size());
        auto to_image = [&](const std::vector<std::uint8_t>& px) {
            nn::Vec img = to_raw(px);
            for (std::size_t i = 0; i < mean.size(); ++i) img[i] -= mean[i];
            return img;
        };
        nn::TrainResult r = nn::train_cnn(
            model, train_pixels.size(), [&](std::size_t i) { return to_image(train_pixels[i]); },
            train_y, tcfg);
        loss_history = r.loss_history;
        train_pixels.clear();
        train_pixels.shrink_to_fit();
        for (const auto& id : splits.test) {
            SkeletonSequence seq = parse_canonical_json(read_file(ctx.prep_dir() / (id + ".json")));
            TextureMap boxed = letterbox(encode(seq, id), ctx.cfg.cnn_input);
            scores.sample_ids.push_back(id);
            scores.scores.push_back(nn::cnn_forward(to_image(boxed.pixels), model));
        }
        manifest["kind"] = "cnn";
        manifest["input"] = ctx.cfg.cnn_input;
        save_tensors(ctx.models_dir() / (name + ".bin"), model.params());
        save_tensors(ctx.models_dir() / (name + ".mean.bin"), {&mean});
    }

    manifest["loss_history"] = loss_history;
    write_file(ctx.models_dir() / (name + ".json"), manifest.dump(1) + "\n");
    write_file(ctx.scores_dir() / (name + ".txt"), write_channel_scores(scores));
    stamp.commit();
    return stamp.hash;
}

inline std::string stage_train(PipelineContext& ctx, const std::string& feat_hash,
                               const std::string& maps_hash) {
    const auto& names = canonical_channels();
    std::vector<std::string> hashes(names.size());
    int threads = std::max(1, ctx.cfg.threads);
    if (threads == 1) {
        for (std::size_t i = 0; i < names.size(); ++i)
            hashes[i] = train_one_channel(ctx, names[i],
                                          is_lstm_channel(names[i]) ? feat_hash : maps_hash);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(names.size());
        std::size_t next = 0;
        std::mutex mu;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= names.size()) return;
                        i = next++;
                    }
                    try {
                        hashes[i] = train_one_channel(
                            ctx, names[i], is_lstm_channel(names[i]) ? feat_hash : maps_hash);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        for (auto& th : pool) th.join();
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
    }
    std::string all;
    for (const auto& h : hashes) all += h;
    return hash_hex(fnv1a(all));
}

// ---------------------------------------------------------------------------
// Stage: fuse + eval, then the report files.
// ---------------------------------------------------------------------------

inline EvalReport stage_eval(PipelineContext& ctx, const std::string& train_hash) {
    auto index = read_index(ctx.ingest_dir() / "index.json");
    std::map<std::string, int> label_of;
    for (const auto& e : index) label_of[e.id] = e.label;
    auto splits = detail::read_splits(ctx);

    std::vector<ChannelScores> channels;
    for (const auto& name : canonical_channels())
        channels.push_back(parse_channel_scores(read_file(ctx.scores_dir() / (name + ".txt"))));

    std::vector<int> labels;
    for (const auto& id : channels.front().sample_ids) labels.push_back(label_of.at(id));

    EvalReport report = evaluate(channels, labels, ctx.cfg.methods, ctx.cfg.protocol);

    write_file(ctx.out / "report.txt", render_report(report));

    nlohmann::ordered_json j;
    j["version"] = kToolVersion;
    j["config_hash"] = run_config_hash(ctx.cfg);
    j["train_hash"] = train_hash;
    j["protocol"] = report.protocol;
    nlohmann::ordered_json chans;
    for (const auto& r : report.channel_rows) chans[r.technique] = r.accuracy;
    j["channels"] = chans;
    nlohmann::ordered_json fus;
    for (const auto& r : report.fusion_rows) fus[r.technique] = r.accuracy;
    j["fusions"] = fus;
    j["best_fusion"] = report.best_fusion;
    j["confusion"] = report.confusion;
    j["test_samples"] = labels.size();
    write_file(ctx.out / "report.json", j.dump(1) + "\n");
    return report;
}

// End-to-end: ingest -> prep -> featurize/encode-maps -> train -> eval.
// Persists a manifest with the config hash so a re-run is reproducible.
inline EvalReport run_pipeline(const RunConfig& cfg) {
    PipelineContext ctx = make_context(cfg);
    {
        nlohmann::ordered_json manifest;
        manifest["version"] = kToolVersion;
        manifest["config_hash"] = run_config_hash(cfg);
        manifest["config"] = run_config_json(cfg);
        write_file(ctx.out / "manifest.json", manifest.dump(1) + "\n");
    }
    auto wrap = [](const char* stage, auto&& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            std::string msg = e.what();
            if (msg.rfind(stage, 0) == 0) throw;
            throw TrainError(std::string(stage) + ": " + msg);
        }
    };
    std::string ingest_hash = wrap("ingest", [&] { return stage_ingest(ctx); });
    std::string prep_hash = wrap("prep", [&] { return stage_prep(ctx, ingest_hash); });
    std::string feat_hash = wrap("featurize", [&] { return stage_featurize(ctx, prep_hash); });
    std::string maps_hash = wrap("encode-maps", [&] { return stage_maps(ctx, prep_hash); });
    std::string train_hash = wrap("train", [&] { return stage_train(ctx, feat_hash, maps_hash); });
    return wrap("eval", [&] { return stage_eval(ctx, train_hash); });
}

}  // namespace skelact
