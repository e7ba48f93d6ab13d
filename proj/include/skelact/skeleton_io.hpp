#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "skelact/common.hpp"
#include "skelact/skeleton.hpp"

namespace skelact {

enum class SeqFormat { CanonicalJson, NtuSkeleton };

inline std::optional<SeqFormat> seq_format_from_name(std::string_view s) {
    if (s == "json" || s == "canonical-json") return SeqFormat::CanonicalJson;
    if (s == "ntu" || s == "ntu-skeleton") return SeqFormat::NtuSkeleton;
    return std::nullopt;
}

namespace detail {

// Sequence-level body bookkeeping used to resolve frames that carry more than
// kMaxBodies bodies: the two bodies with the largest summed joint displacement
// across the whole sequence are kept.
struct TrackedBody {
    std::vector<std::optional<std::array<Vec3, kJointCount>>> per_frame;
    double displacement = 0.0;
    std::size_t order = 0;  // first-appearance order, used as the tie-break

    void compute_displacement() {
        displacement = 0.0;
        const std::array<Vec3, kJointCount>* prev = nullptr;
        for (const auto& slot : per_frame) {
            if (!slot) continue;
            if (prev)
                for (int j = 0; j < kJointCount; ++j)
                    displacement += norm((*slot)[static_cast<std::size_t>(j)] -
                                         (*prev)[static_cast<std::size_t>(j)]);
            prev = &*slot;
        }
    }
};

inline SkeletonSequence assemble_sequence(std::vector<TrackedBody>& tracks,
                                          std::size_t frame_count, Warnings* warnings) {
    for (auto& t : tracks) t.compute_displacement();
    std::vector<std::size_t> keep(tracks.size());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    if (tracks.size() > kMaxBodies) {
        std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
            if (tracks[a].displacement != tracks[b].displacement)
                return tracks[a].displacement > tracks[b].displacement;
            return tracks[a].order < tracks[b].order;
        });
        keep.resize(kMaxBodies);
        std::sort(keep.begin(), keep.end(),
                  [&](std::size_t a, std::size_t b) { return tracks[a].order < tracks[b].order; });
        warn(warnings, "sequence carries " + std::to_string(tracks.size()) +
                           " bodies; kept the " + std::to_string(int(kMaxBodies)) +
                           " with the largest summed joint displacement");
    }

    SkeletonSequence seq;
    seq.frames.resize(frame_count);
    for (std::size_t f = 0; f < frame_count; ++f) {
        seq.frames[f].timestamp_index = static_cast<int>(f);
        for (std::size_t s = 0; s < keep.size(); ++s) {
            const auto& slot = tracks[keep[s]].per_frame[f];
            if (slot) {
                seq.frames[f].bodies[s].present = true;
                seq.frames[f].bodies[s].joints = *slot;
            }
        }
    }
    return seq;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Canonical format: one JSON document per sequence (grammar in
// docs/formats.md). Joint coordinates round-trip bit-exactly.
// ---------------------------------------------------------------------------

inline SkeletonSequence parse_canonical_json(std::string_view text, Warnings* warnings = nullptr) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("canonical-json: " + std::string(e.what()));
    }
    if (!doc.is_object()) throw ParseError("canonical-json: top-level value must be an object");
    if (!doc.contains("format") || !doc["format"].is_string() ||
        doc["format"].get<std::string>() != "skelseq/1")
        throw ParseError("canonical-json: missing or unsupported \"format\" header (want \"skelseq/1\")");
    for (const char* key : {"label", "subject", "view"})
        if (!doc.contains(key) || !doc[key].is_number_integer())
            throw ParseError(std::string("canonical-json: header field \"") + key +
                             "\" missing or not an integer");
    if (!doc.contains("frames") || !doc["frames"].is_array())
        throw ParseError("canonical-json: \"frames\" missing or not an array");

    SkeletonSequence seq;
    seq.label = doc["label"].get<int>();
    seq.subject_id = doc["subject"].get<int>();
    seq.view_id = doc["view"].get<int>();
    seq.topology_id = doc.value("topology", std::string("ntu12"));

    const auto& frames = doc["frames"];
    if (frames.empty()) throw ValidationError("canonical-json: sequence must contain at least one frame");

    std::size_t slot_count = 0;
    for (const auto& fr : frames) {
        if (!fr.is_object() || !fr.contains("bodies") || !fr["bodies"].is_array())
            throw ParseError("canonical-json: each frame needs a \"bodies\" array");
        slot_count = std::max(slot_count, fr["bodies"].size());
    }
    if (slot_count == 0) throw ParseError("canonical-json: frames carry no body slots");

    std::vector<detail::TrackedBody> tracks(slot_count);
    for (std::size_t s = 0; s < slot_count; ++s) {
        tracks[s].order = s;
        tracks[s].per_frame.resize(frames.size());
    }

    for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& bodies = frames[f]["bodies"];
        for (std::size_t s = 0; s < bodies.size(); ++s) {
            const auto& body = bodies[s];
            if (!body.is_object() || !body.contains("present") || !body["present"].is_boolean())
                throw ParseError("canonical-json: frame " + std::to_string(f) +
                                 ": body slot needs a boolean \"present\" flag");
            if (!body["present"].get<bool>()) continue;
            if (!body.contains("joints") || !body["joints"].is_object())
                throw ParseError("canonical-json: frame " + std::to_string(f) +
                                 ": present body needs a \"joints\" object");
            std::array<Vec3, kJointCount> joints{};
            const auto& jmap = body["joints"];
            for (int j = 0; j < kJointCount; ++j) {
                std::string name(kJointNames[static_cast<std::size_t>(j)]);
                if (!jmap.contains(name))
                    throw ParseError("canonical-json: frame " + std::to_string(f) +
                                     ": missing joint \"" + name + "\"");
                const auto& coords = jmap[name];
                if (!coords.is_array() || coords.size() != 3)
                    throw ParseError("canonical-json: frame " + std::to_string(f) + ": joint \"" +
                                     name + "\" must be an array of 3 numbers");
                Vec3 p;
                double* comp[3] = {&p.x, &p.y, &p.z};
                for (int k = 0; k < 3; ++k) {
                    if (!coords[static_cast<std::size_t>(k)].is_number())
                        throw ValidationError("canonical-json: non-finite coordinate at frame " +
                                              std::to_string(f) + ", joint \"" + name + "\"");
                    *comp[k] = coords[static_cast<std::size_t>(k)].get<double>();
                }
                if (!finite(p))
                    throw ValidationError("canonical-json: non-finite coordinate at frame " +
                                          std::to_string(f) + ", joint \"" + name + "\"");
                joints[static_cast<std::size_t>(j)] = p;
            }
            for (const auto& [name, _] : jmap.items())
                if (!joint_index(name))
                    throw ParseError("canonical-json: frame " + std::to_string(f) +
                                     ": unknown joint \"" + name + "\"");
            tracks[s].per_frame[f] = joints;
        }
    }

    SkeletonSequence out = detail::assemble_sequence(tracks, frames.size(), warnings);
    out.label = seq.label;
    out.subject_id = seq.subject_id;
    out.view_id = seq.view_id;
    out.topology_id = seq.topology_id;
    for (std::size_t f = 0; f < frames.size(); ++f)
        if (frames[f].contains("t") && frames[f]["t"].is_number_integer())
            out.frames[f].timestamp_index = frames[f]["t"].get<int>();
    validate_sequence(out);
    return out;
}

inline std::string write_canonical_json(const SkeletonSequence& seq) {
    validate_sequence(seq);
    nlohmann::ordered_json doc;
    doc["format"] = "skelseq/1";
    doc["label"] = seq.label;
    doc["subject"] = seq.subject_id;
    doc["view"] = seq.view_id;
    doc["topology"] = seq.topology_id;
    doc["frames"] = nlohmann::ordered_json::array();
    for (const Frame& fr : seq.frames) {
        nlohmann::ordered_json jf;
        jf["t"] = fr.timestamp_index;
        jf["bodies"] = nlohmann::ordered_json::array();
        for (int s = 0; s < kMaxBodies; ++s) {
            const Body& body = fr.bodies[static_cast<std::size_t>(s)];
            nlohmann::ordered_json jb;
            jb["present"] = body.present;
            if (body.present) {
                nlohmann::ordered_json joints;
                for (int j = 0; j < kJointCount; ++j) {
                    const Vec3& p = body.joints[static_cast<std::size_t>(j)];
                    joints[std::string(kJointNames[static_cast<std::size_t>(j)])] = {p.x, p.y, p.z};
                }
                jb["joints"] = std::move(joints);
            }
            jf["bodies"].push_back(std::move(jb));
        }
        doc["frames"].push_back(std::move(jf));
    }
    return doc.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// NTU RGB+D `.skeleton` reader (text layout described in docs/formats.md).
// The 25 Kinect joints are subsetted to the canonical 12 via kNtuSubsetV1.
// ---------------------------------------------------------------------------

namespace detail {

struct LineReader {
    std::istringstream in;
    int line_no = 0;

    explicit LineReader(std::string_view text) : in{std::string(text)} {}

    std::string next_line() {
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            // Skip blank lines so hand-written fixtures are forgiving.
            if (line.find_first_not_of(" \t\r") != std::string::npos) return line;
        }
        throw ParseError("ntu-skeleton: line " + std::to_string(line_no + 1) +
                         ": unexpected end of file");
    }

    template <class T>
    static std::vector<T> fields(const std::string& line) {
        std::istringstream ls(line);
        std::vector<T> out;
        T v;
        while (ls >> v) out.push_back(v);
        return out;
    }

    // strtod-based so nan/inf tokens parse and then fail the finite check.
    static std::vector<double> double_fields(const std::string& line) {
        std::vector<double> out;
        const char* p = line.c_str();
        char* end = nullptr;
        for (;;) {
            double v = std::strtod(p, &end);
            if (end == p) break;
            out.push_back(v);
            p = end;
        }
        return out;
    }
};

}  // namespace detail

inline SkeletonSequence parse_ntu_skeleton(std::string_view text, Warnings* warnings = nullptr) {
    detail::LineReader reader(text);

    auto parse_count = [&](const std::string& what) {
        std::string line = reader.next_line();
        auto f = detail::LineReader::fields<long long>(line);
        std::istringstream probe(line);
        long long v;
        if (!(probe >> v) || f.size() != 1 || v < 0)
            throw ParseError("ntu-skeleton: line " + std::to_string(reader.line_no) +
                             ": malformed " + what + " (got \"" + line + "\")");
        return v;
    };

    long long frame_count = parse_count("frame count");
    if (frame_count == 0) throw ValidationError("ntu-skeleton: sequence must contain at least one frame");

    std::map<long long, std::size_t> body_slot;  // body id -> track index
    std::vector<detail::TrackedBody> tracks;

    for (long long f = 0; f < frame_count; ++f) {
        long long body_count = parse_count("body count");
        std::vector<long long> ids_this_frame;
        for (long long b = 0; b < body_count; ++b) {
            std::string header = reader.next_line();
            auto hf = detail::LineReader::double_fields(header);
            if (hf.size() != 10)
                throw ParseError("ntu-skeleton: line " + std::to_string(reader.line_no) +
                                 ": body header must have 10 fields, got " +
                                 std::to_string(hf.size()));
            long long body_id = 0;
            {
                std::istringstream hs(header);
                hs >> body_id;
            }
            if (std::count(ids_this_frame.begin(), ids_this_frame.end(), body_id) > 0)
                throw ParseError("ntu-skeleton: line " + std::to_string(reader.line_no) +
                                 ": duplicate body id in frame " + std::to_string(f));
            ids_this_frame.push_back(body_id);

            long long joint_count = parse_count("joint count");
            if (joint_count != kNtuJointCount)
                throw ParseError("ntu-skeleton: line " + std::to_string(reader.line_no) +
                                 ": expected " + std::to_string(kNtuJointCount) +
                                 " joints, got " + std::to_string(joint_count));

            std::array<Vec3, kNtuJointCount> raw{};
            for (int j = 0; j < kNtuJointCount; ++j) {
                std::string jl = reader.next_line();
                auto jf = detail::LineReader::double_fields(jl);
                if (jf.size() < 3)
                    throw ParseError("ntu-skeleton: line " + std::to_string(reader.line_no) +
                                     ": joint row needs at least 3 coordinates");
                raw[static_cast<std::size_t>(j)] = {jf[0], jf[1], jf[2]};
            }

            std::array<Vec3, kJointCount> joints{};
            for (int j = 0; j < kJointCount; ++j) {
                const Vec3& p = raw[static_cast<std::size_t>(kNtuSubsetV1[static_cast<std::size_t>(j)])];
                if (!finite(p))
                    throw ValidationError("ntu-skeleton: non-finite coordinate at frame " +
                                          std::to_string(f) + ", joint \"" +
                                          std::string(kJointNames[static_cast<std::size_t>(j)]) + "\"");
                joints[static_cast<std::size_t>(j)] = p;
            }

            auto [it, inserted] = body_slot.try_emplace(body_id, tracks.size());
            if (inserted) {
                tracks.emplace_back();
                tracks.back().order = tracks.size() - 1;
                tracks.back().per_frame.resize(static_cast<std::size_t>(frame_count));
            }
            tracks[it->second].per_frame[static_cast<std::size_t>(f)] = joints;
        }
    }

    SkeletonSequence seq =
        detail::assemble_sequence(tracks, static_cast<std::size_t>(frame_count), warnings);
    validate_sequence(seq);
    return seq;
}

// NTU sample names look like S001C002P003R002A023; subject, camera (view) and
// action (label, zero-based here) come from the name, not the file body.
struct NtuNameInfo {
    int setup = 0;
    int camera = 0;
    int performer = 0;
    int replication = 0;
    int action = 0;  // zero-based
};

inline std::optional<NtuNameInfo> parse_ntu_name(std::string_view stem) {
    if (stem.size() < 20) return std::nullopt;
    auto num = [&](std::size_t pos) -> std::optional<int> {
        int v = 0;
        for (std::size_t i = pos; i < pos + 3; ++i) {
            if (i >= stem.size() || !std::isdigit(static_cast<unsigned char>(stem[i])))
                return std::nullopt;
            v = v * 10 + (stem[i] - '0');
        }
        return v;
    };
    if (stem[0] != 'S' || stem[4] != 'C' || stem[8] != 'P' || stem[12] != 'R' || stem[16] != 'A')
        return std::nullopt;
    auto s = num(1), c = num(5), p = num(9), r = num(13), a = num(17);
    if (!s || !c || !p || !r || !a || *a < 1) return std::nullopt;
    return NtuNameInfo{*s, *c, *p, *r, *a - 1};
}

inline SkeletonSequence parse_sequence(std::string_view bytes, SeqFormat format,
                                       Warnings* warnings = nullptr) {
    switch (format) {
        case SeqFormat::CanonicalJson:
            return parse_canonical_json(bytes, warnings);
        case SeqFormat::NtuSkeleton:
            return parse_ntu_skeleton(bytes, warnings);
    }
    throw ConfigError("parse_sequence: unknown format tag");
}

inline std::string write_sequence(const SkeletonSequence& seq) { return write_canonical_json(seq); }

}  // namespace skelact
