#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "skelact/common.hpp"

namespace skelact {

using ScoreVector = std::vector<double>;

// The ten fused routes: three LSTM feature channels, seven CNN map channels.
inline const std::vector<std::string>& canonical_channels() {
    static const std::vector<std::string> names = {
        "R", "J", "L", "JTM-xy", "JTM-xz", "JTM-yz", "JDM-xy", "JDM-xz", "JDM-yz", "JDM-xyz",
    };
    return names;
}

inline bool is_lstm_channel(std::string_view name) {
    return name == "R" || name == "J" || name == "L";
}

enum class FuseMethod { Max, Avg, Mul };

inline const char* fuse_method_name(FuseMethod m) {
    switch (m) {
        case FuseMethod::Max: return "max";
        case FuseMethod::Avg: return "avg";
        case FuseMethod::Mul: return "mul";
    }
    return "?";
}

inline std::optional<FuseMethod> fuse_method_from_name(std::string_view s) {
    if (s == "max") return FuseMethod::Max;
    if (s == "avg" || s == "ave") return FuseMethod::Avg;
    if (s == "mul") return FuseMethod::Mul;
    return std::nullopt;
}

// Element-wise max / mean / product across channels. The product is left
// unnormalized (only its argmax is consumed); inputs are floored at 1e-12 so
// a single zeroed entry cannot erase a class.
inline ScoreVector fuse_scores(const std::vector<ScoreVector>& vectors, FuseMethod method) {
    if (vectors.empty()) throw ValidationError("fuse_scores: no score vectors given");
    const std::size_t n = vectors.front().size();
    if (n == 0) throw ValidationError("fuse_scores: empty score vector");
    for (const auto& v : vectors)
        if (v.size() != n) throw ValidationError("fuse_scores: score vector length mismatch");

    ScoreVector out(n);
    switch (method) {
        case FuseMethod::Max:
            out = vectors.front();
            for (std::size_t i = 1; i < vectors.size(); ++i)
                for (std::size_t k = 0; k < n; ++k) out[k] = std::max(out[k], vectors[i][k]);
            break;
        case FuseMethod::Avg: {
            for (const auto& v : vectors)
                for (std::size_t k = 0; k < n; ++k) out[k] += v[k];
            for (double& v : out) v /= static_cast<double>(vectors.size());
            break;
        }
        case FuseMethod::Mul:
            out.assign(n, 1.0);
            for (const auto& v : vectors)
                for (std::size_t k = 0; k < n; ++k) out[k] *= std::max(v[k], 1e-12);
            break;
    }
    return out;
}

// Index of the maximum; ties go to the lowest index.
inline int predict_label(const ScoreVector& fused) {
    if (fused.empty()) throw ValidationError("predict_label: empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < fused.size(); ++i)
        if (fused[i] > fused[best]) best = i;
    return static_cast<int>(best);
}

struct ChannelScores {
    std::string name;
    std::vector<std::string> sample_ids;
    std::vector<ScoreVector> scores;  // one row per sample, rows sum to 1
};

inline void validate_channel_scores(const ChannelScores& ch) {
    if (ch.sample_ids.size() != ch.scores.size())
        throw ValidationError("channel " + ch.name + ": id/score row count mismatch");
    for (std::size_t i = 0; i < ch.scores.size(); ++i) {
        double sum = 0.0;
        for (double v : ch.scores[i]) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw ValidationError("channel " + ch.name + ": invalid score value");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw ValidationError("channel " + ch.name + ": score row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum));
    }
}

enum class Protocol { CrossSubject, CrossView };

inline const char* protocol_name(Protocol p) {
    return p == Protocol::CrossSubject ? "cross-subject" : "cross-view";
}

inline std::optional<Protocol> protocol_from_name(std::string_view s) {
    if (s == "cross-subject") return Protocol::CrossSubject;
    if (s == "cross-view") return Protocol::CrossView;
    return std::nullopt;
}

struct EvalRow {
    std::string technique;
    double accuracy = 0.0;
};

struct EvalReport {
    std::string protocol;
    std::vector<EvalRow> channel_rows;
    std::vector<EvalRow> fusion_rows;
    std::string best_fusion;
    std::vector<std::vector<int>> confusion;  // [true][predicted] for the best fusion
};

namespace detail {

inline double accuracy_of(const std::vector<int>& predicted, const std::vector<int>& labels) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += (predicted[i] == labels[i]) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace detail

// Per-channel accuracies plus the requested fused accuracies, mirroring the
// ablation layout: the named subsets (R-J-L, R-J, R-JDM-xyz, all multiply)
// appear whenever their channels are present. The confusion matrix belongs to
// the best-scoring fusion row.
inline EvalReport evaluate(const std::vector<ChannelScores>& channels,
                           const std::vector<int>& labels,
                           const std::vector<FuseMethod>& methods,
                           Protocol protocol = Protocol::CrossSubject) {
    if (channels.empty()) throw ValidationError("evaluate: no channels");
    const std::size_t n = labels.size();
    for (const auto& ch : channels) {
        validate_channel_scores(ch);
        if (ch.sample_ids.size() != n)
            throw ValidationError("evaluate: channel " + ch.name + " has " +
                                  std::to_string(ch.sample_ids.size()) + " rows, expected " +
                                  std::to_string(n));
        if (ch.sample_ids != channels.front().sample_ids)
            throw ValidationError("evaluate: channel " + ch.name +
                                  " sample ids are not aligned with channel " +
                                  channels.front().name);
    }
    if (n == 0) throw ValidationError("evaluate: empty test set");

    int classes = static_cast<int>(channels.front().scores.front().size());
    for (int y : labels)
        if (y < 0 || y >= classes) throw ValidationError("evaluate: label out of range");

    EvalReport report;
    report.protocol = protocol_name(protocol);

    std::map<std::string, const ChannelScores*> by_name;
    for (const auto& ch : channels) by_name[ch.name] = &ch;

    for (const auto& ch : channels) {
        std::vector<int> pred(n);
        for (std::size_t i = 0; i < n; ++i) pred[i] = predict_label(ch.scores[i]);
        std::string kind = is_lstm_channel(ch.name) ? " (LSTM)" : " (CNN)";
        report.channel_rows.push_back({ch.name + kind, detail::accuracy_of(pred, labels)});
    }

    struct FusionJob {
        std::string technique;
        std::vector<const ChannelScores*> inputs;
        FuseMethod method;
    };
    std::vector<FusionJob> jobs;
    auto subset = [&](const std::vector<std::string>& names) {
        std::vector<const ChannelScores*> out;
        for (const auto& nm : names) {
            auto it = by_name.find(nm);
            if (it == by_name.end()) return std::vector<const ChannelScores*>{};
            out.push_back(it->second);
        }
        return out;
    };
    if (auto in = subset({"R", "J", "L"}); !in.empty())
        jobs.push_back({"R-J-L-Mul-Score fusion (LSTM)", in, FuseMethod::Mul});
    if (auto in = subset({"R", "J"}); !in.empty())
        jobs.push_back({"R-J-Mul-Score fusion (LSTM)", in, FuseMethod::Mul});
    if (auto in = subset({"R", "JDM-xyz"}); !in.empty())
        jobs.push_back({"R-JDM-xyz-Mul-Score fusion (LSTM+CNN)", in, FuseMethod::Mul});
    std::vector<const ChannelScores*> all;
    for (const auto& ch : channels) all.push_back(&ch);
    for (FuseMethod m : methods) {
        std::string label = m == FuseMethod::Max ? "All-Max-Score fusion"
                            : m == FuseMethod::Avg ? "All-Ave-Score fusion"
                                                   : "All-Mul-Score fusion";
        jobs.push_back({label + " (LSTM+CNN)", all, m});
    }

    double best_acc = -1.0;
    std::vector<int> best_pred;
    for (const auto& job : jobs) {
        std::vector<int> pred(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<ScoreVector> row;
            row.reserve(job.inputs.size());
            for (const ChannelScores* ch : job.inputs) row.push_back(ch->scores[i]);
            pred[i] = predict_label(fuse_scores(row, job.method));
        }
        double acc = detail::accuracy_of(pred, labels);
        report.fusion_rows.push_back({job.technique, acc});
        if (acc > best_acc) {
            best_acc = acc;
            best_pred = pred;
            report.best_fusion = job.technique;
        }
    }

    report.confusion.assign(static_cast<std::size_t>(classes),
                            std::vector<int>(static_cast<std::size_t>(classes), 0));
    for (std::size_t i = 0; i < n; ++i)
        ++report.confusion[static_cast<std::size_t>(labels[i])]
                          [static_cast<std::size_t>(best_pred[i])];
    return report;
}

// ---------------------------------------------------------------------------
// Train/test splits.
// ---------------------------------------------------------------------------

struct SequenceMeta {
    std::string id;
    int label = 0;
    int subject_id = 0;
    int view_id = 0;
};

struct SplitConfig {
    std::vector<int> train_subjects;
    std::vector<int> test_subjects;  // empty = complement of train
    std::vector<int> train_views;
    std::vector<int> test_views;
};

// Disjoint id partition for the chosen protocol. A subject or view listed on
// both sides, or an empty side, is a configuration error.
inline std::pair<std::vector<std::string>, std::vector<std::string>> make_splits(
    const std::vector<SequenceMeta>& metadata, Protocol protocol, const SplitConfig& cfg) {
    const std::vector<int>& train_list =
        protocol == Protocol::CrossSubject ? cfg.train_subjects : cfg.train_views;
    const std::vector<int>& test_list =
        protocol == Protocol::CrossSubject ? cfg.test_subjects : cfg.test_views;
    if (train_list.empty())
        throw ConfigError(std::string("make_splits: no training ") +
                          (protocol == Protocol::CrossSubject ? "subjects" : "views") +
                          " configured");

    std::set<int> train_set(train_list.begin(), train_list.end());
    std::set<int> test_set(test_list.begin(), test_list.end());
    for (int v : train_set)
        if (test_set.count(v))
            throw ConfigError("make_splits: id " + std::to_string(v) +
                              " listed in both partitions");

    std::vector<std::string> train, test;
    for (const auto& meta : metadata) {
        int key = protocol == Protocol::CrossSubject ? meta.subject_id : meta.view_id;
        if (train_set.count(key))
            train.push_back(meta.id);
        else if (test_set.empty() || test_set.count(key))
            test.push_back(meta.id);
    }
    if (train.empty()) throw ConfigError("make_splits: training side is empty");
    if (test.empty()) throw ConfigError("make_splits: test side is empty");
    return {train, test};
}

// ---------------------------------------------------------------------------
// Score persistence (text, one file per channel) and the report table.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline std::string write_channel_scores(const ChannelScores& ch) {
    validate_channel_scores(ch);
    std::ostringstream out;
    std::size_t classes = ch.scores.empty() ? 0 : ch.scores.front().size();
    out << "skelscores/1\n"
        << "channel " << ch.name << "\n"
        << "classes " << classes << "\n"
        << "samples " << ch.sample_ids.size() << "\n";
    for (std::size_t i = 0; i < ch.sample_ids.size(); ++i) {
        out << ch.sample_ids[i];
        for (double v : ch.scores[i]) out << " " << format_double(v);
        out << "\n";
    }
    return out.str();
}

inline ChannelScores parse_channel_scores(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    if (!std::getline(in, magic) || magic != "skelscores/1")
        throw ParseError("channel scores: missing skelscores/1 header");
    ChannelScores ch;
    std::string key;
    std::size_t classes = 0, samples = 0;
    in >> key >> ch.name;
    if (key != "channel") throw ParseError("channel scores: expected channel line");
    in >> key >> classes;
    if (key != "classes") throw ParseError("channel scores: expected classes line");
    in >> key >> samples;
    if (key != "samples") throw ParseError("channel scores: expected samples line");
    for (std::size_t i = 0; i < samples; ++i) {
        std::string id;
        if (!(in >> id)) throw ParseError("channel scores: truncated file");
        ScoreVector row(classes);
        for (std::size_t k = 0; k < classes; ++k)
            if (!(in >> row[k])) throw ParseError("channel scores: truncated row");
        ch.sample_ids.push_back(std::move(id));
        ch.scores.push_back(std::move(row));
    }
    validate_channel_scores(ch);
    return ch;
}

// Aligned text table in the style of the ablation table, plus the confusion
// matrix of the best fusion row.
inline std::string render_report(const EvalReport& report) {
    std::size_t width = std::string("Technique").size();
    for (const auto& r : report.channel_rows) width = std::max(width, r.technique.size());
    for (const auto& r : report.fusion_rows) width = std::max(width, r.technique.size());

    std::ostringstream out;
    auto line = [&](const std::string& a, const std::string& b) {
        out << a;
        out << std::string(width + 2 - a.size(), ' ');
        out << b << "\n";
    };
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
        return std::string(buf);
    };
    line("Technique", report.protocol);
    out << std::string(width + 2 + report.protocol.size(), '-') << "\n";
    for (const auto& r : report.channel_rows) line(r.technique, pct(r.accuracy));
    for (const auto& r : report.fusion_rows) line(r.technique, pct(r.accuracy));
    out << "\nBest fusion: " << report.best_fusion << "\n";
    out << "Confusion matrix (rows = true class, cols = predicted):\n";
    for (const auto& row : report.confusion) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? " " : "") << row[i];
        out << "\n";
    }
    return out.str();
}

}  // namespace skelact
