// skelact command-line front end: ingest -> featurize/encode-maps -> train ->
// fuse -> eval, plus an all-in-one `run` and a toy-data generator.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "skelact/pipeline.hpp"
#include "skelact/toy.hpp"

namespace {

using namespace skelact;

RunConfig load_config(const std::string& config_path, const std::string& out_dir,
                      std::uint64_t seed_override, bool seed_given, int threads_override,
                      const std::string& protocol_override) {
    RunConfig cfg = parse_run_config(read_file(config_path));
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed_given) cfg.seed = seed_override;
    if (threads_override > 0) cfg.threads = threads_override;
    if (!protocol_override.empty()) {
        auto p = protocol_from_name(protocol_override);
        if (!p) throw ConfigError("unknown protocol \"" + protocol_override + "\"");
        cfg.protocol = *p;
    }
    if (cfg.out_dir.empty()) throw ConfigError("an output directory is required (--out)");
    return cfg;
}

void print_report(const EvalReport& report) { std::cout << render_report(report); }

int run_gen_toy(const std::string& out_dir, std::uint64_t seed) {
    toy::ToyParams params;
    params.seed = seed;
    auto samples = toy::generate_toy_dataset(params);
    fsys::path dir(out_dir);
    for (const auto& s : samples) write_file(dir / (s.id + ".json"), write_sequence(s.seq));
    std::cout << "wrote " << samples.size() << " sequences to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"skelact: skeleton action recognition with LSTM/CNN channels and score fusion"};
    app.require_subcommand(1);

    std::string config_path, out_dir, protocol, channel, kind, plane, format = "json";
    std::string dataset_dir;
    std::uint64_t seed = 42;
    bool seed_given = false;
    int threads = 0;
    int subseq = 20;
    int augment = 8;

    auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
        if (needs_config)
            cmd->add_option("--config", config_path, "run configuration file (JSON)")->required();
        cmd->add_option("--out", out_dir, "output workspace directory");
        cmd->add_option("--seed", seed, "global seed override")->each([&](const std::string&) {
            seed_given = true;
        });
        cmd->add_option("--threads", threads, "worker threads for channel training");
        cmd->add_option("--protocol", protocol, "cross-subject or cross-view");
    };

    auto* gen = app.add_subcommand("gen-toy", "generate the synthetic toy dataset");
    std::string gen_out = "toy_data";
    std::uint64_t gen_seed = 7;
    gen->add_option("--out", gen_out, "dataset directory");
    gen->add_option("--seed", gen_seed, "generator seed");

    auto* ingest = app.add_subcommand("ingest", "parse and validate the dataset");
    add_common(ingest);
    ingest->add_option("--format", format, "input format: json or ntu");
    ingest->add_option("--subseq", subseq, "sub-sequence count (recorded in config)");

    auto* featurize = app.add_subcommand("featurize", "extract LSTM feature channels");
    add_common(featurize);
    featurize->add_option("--channel", channel, "also write one of R, J, L, concat explicitly");

    auto* encode = app.add_subcommand("encode-maps", "render JTM/JDM texture maps");
    add_common(encode);
    encode->add_option("--kind", kind, "restrict to jtm or jdm");
    encode->add_option("--plane", plane, "restrict to one plane (xy, xz, yz, xyz)");

    auto* train = app.add_subcommand("train", "train one channel or all channels");
    add_common(train);
    train->add_option("--channel", channel, "channel name (default: all ten)");
    train->add_option("--augment-rotations", augment, "JTM training rotations override");

    auto* fuse = app.add_subcommand("fuse", "fuse per-channel scores and report");
    add_common(fuse);
    std::string methods_arg;
    fuse->add_option("--methods", methods_arg, "comma list of max,avg,mul");

    auto* eval = app.add_subcommand("eval", "evaluate fused and per-channel accuracy");
    add_common(eval);

    auto* run = app.add_subcommand("run", "full pipeline: ingest through report");
    add_common(run);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen_toy(gen_out, gen_seed);

        RunConfig cfg = load_config(config_path, out_dir, seed, seed_given, threads, protocol);
        if (ingest->parsed() && ingest->count("--format")) {
            auto f = seq_format_from_name(format);
            if (!f) throw ConfigError("unknown format \"" + format + "\"");
            cfg.format = *f;
        }
        if (train->parsed() && train->count("--augment-rotations")) cfg.augment_rotations = augment;

        PipelineContext ctx = make_context(cfg);
        if (ingest->parsed()) {
            stage_ingest(ctx);
            std::cout << "ingest: ok\n";
            return 0;
        }

        std::string ingest_hash = stage_ingest(ctx);
        std::string prep_hash = stage_prep(ctx, ingest_hash);

        if (featurize->parsed()) {
            std::string feat_hash = stage_featurize(ctx, prep_hash);
            if (!channel.empty()) {
                auto ch = channel_from_name(channel);
                if (!ch) throw ConfigError("unknown feature channel \"" + channel + "\"");
                LineSet lines = select_lines(ctx.topo);
                for (const auto& e : read_index(ctx.ingest_dir() / "index.json")) {
                    SkeletonSequence seq =
                        parse_canonical_json(read_file(ctx.prep_dir() / (e.id + ".json")));
                    FeatureMatrix fm = extract_channel(seq, *ch, lines);
                    write_file(ctx.feat_dir() / (e.id + "." + channel_name(*ch) + ".fmat"),
                               write_feature_matrix(fm));
                }
            }
            std::cout << "featurize: ok (" << feat_hash << ")\n";
            return 0;
        }
        if (encode->parsed()) {
            std::string maps_hash = stage_maps(ctx, prep_hash);
            std::cout << "encode-maps: ok (" << maps_hash << ")\n";
            return 0;
        }

        std::string feat_hash = stage_featurize(ctx, prep_hash);
        std::string maps_hash = stage_maps(ctx, prep_hash);

        if (train->parsed()) {
            if (!channel.empty()) {
                bool known = false;
                for (const auto& name : canonical_channels()) known = known || name == channel;
                if (!known) throw ConfigError("unknown channel name \"" + channel + "\"");
                train_one_channel(ctx, channel, is_lstm_channel(channel) ? feat_hash : maps_hash);
            } else {
                stage_train(ctx, feat_hash, maps_hash);
            }
            std::cout << "train: ok\n";
            return 0;
        }

        if (fuse->parsed() && !methods_arg.empty()) {
            cfg.methods.clear();
            std::stringstream ss(methods_arg);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                auto m = fuse_method_from_name(tok);
                if (!m) throw ConfigError("unknown fusion method \"" + tok + "\"");
                cfg.methods.push_back(*m);
            }
            ctx.cfg = cfg;
        }

        std::string train_hash = stage_train(ctx, feat_hash, maps_hash);
        EvalReport report = stage_eval(ctx, train_hash);
        print_report(report);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
