#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <json.hpp>

#include "utal/config.hpp"
#include "utal/corpus.hpp"
#include "utal/datagen.hpp"
#include "utal/errors.hpp"
#include "utal/eval.hpp"
#include "utal/trainer.hpp"

namespace utal::cli {

// Exit codes: 1 configuration, 2 I/O, 3 numeric.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

struct Options {
    std::string config_path;
    bool force = false;
    std::string resume;                // checkpoint to continue training from
    std::string checkpoint;            // checkpoint to evaluate/merge
    std::optional<double> threshold;   // overrides [eval].threshold
    std::optional<std::uint64_t> seed; // overrides [gen].seed and [train].seed
};

namespace detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

inline void write_resolved_config(const RunConfig& rc, const std::string& command) {
    write_text_file(std::filesystem::path(rc.io.out_dir) / (command + "_resolved.ini"),
                    resolved_config_text(rc));
}

inline RunConfig load_config(const Options& opt) {
    if (opt.config_path.empty()) throw ConfigError("--config is required");
    RunConfig rc = load_run_config(opt.config_path);
    if (opt.seed.has_value()) {
        rc.gen.seed = *opt.seed;
        rc.gen_seed_set = true;
        rc.train.seed = *opt.seed;
    }
    if (opt.threshold.has_value()) {
        if (*opt.threshold <= 0.0 || *opt.threshold > 1.0)
            throw ConfigError("--threshold must lie in (0,1]");
        rc.eval.threshold = *opt.threshold;
    }
    std::filesystem::create_directories(rc.io.out_dir);
    return rc;
}

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint parse error in " + path + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    write_text_file(path, checkpoint_to_json(state).dump());
}

} // namespace detail

/// Generates a corpus file and prints the per-camera tracklet counts.
inline int cmd_gen(const Options& opt, std::ostream& out = std::cout) {
    RunConfig rc = detail::load_config(opt);
    if (!rc.has_gen) throw ConfigError("config: missing required section [gen]");
    if (!rc.gen_seed_set) throw ConfigError("config: missing required key gen.seed");
    const auto corpus_path = rc.io.resolve(rc.io.corpus);
    if (std::filesystem::exists(corpus_path) && !opt.force)
        throw IoError("output exists (use --force to overwrite): " + corpus_path.string());

    const Corpus corpus = generate_corpus(rc.gen);
    if (corpus_path.has_parent_path()) std::filesystem::create_directories(corpus_path.parent_path());
    save_corpus(corpus, corpus_path.string());
    detail::write_resolved_config(rc, "gen");

    for (const auto& cam : corpus.cameras)
        out << "camera " << cam.index << ": M_t=" << cam.num_tracklets() << '\n';
    out << "cameras=" << corpus.num_cameras() << " tracklets=" << corpus.total_tracklets() << '\n';
    return kExitOk;
}

/// Trains on the configured corpus; writes the log CSV, checkpoints, and a
/// final metrics JSON when identities are available.
inline int cmd_train(const Options& opt, std::ostream& out = std::cout) {
    RunConfig rc = detail::load_config(opt);
    const Corpus corpus = load_corpus(rc.io.resolve(rc.io.corpus).string());

    const auto ckpt_dir = rc.io.resolve(rc.io.checkpoints);
    std::filesystem::create_directories(ckpt_dir);

    std::optional<TrainState> resume_state;
    if (!opt.resume.empty()) resume_state = detail::load_checkpoint(opt.resume);

    std::ofstream pairs_out;
    if (!rc.io.pairs_dump.empty()) {
        const auto pairs_path = rc.io.resolve(rc.io.pairs_dump);
        pairs_out.open(pairs_path, resume_state.has_value() ? std::ios::app : std::ios::out);
        if (!pairs_out) throw IoError("cannot open for writing: " + pairs_path.string());
    }

    TrainHooks hooks;
    hooks.on_epoch = [&out](const EpochRecord& rec) {
        if (rec.epoch % 25 == 0 || rec.epoch < 3)
            out << "epoch " << rec.epoch << ": pctd=" << utal::detail::format_double(rec.pctd_loss)
                << " ccta=" << utal::detail::format_double(rec.ccta_loss) << " pairs=" << rec.num_pairs << '\n';
    };
    hooks.on_checkpoint = [&ckpt_dir](const TrainState& st) {
        detail::save_checkpoint(ckpt_dir / ("epoch_" + std::to_string(st.epochs_completed) + ".json"), st);
        detail::save_checkpoint(ckpt_dir / "latest.json", st);
    };

    TrainResult result = train(corpus, rc.train, hooks, resume_state ? &*resume_state : nullptr);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';

    if (pairs_out.is_open() && !result.matches.matches.empty())
        dump_match_pairs(pairs_out, result.state.epochs_completed - 1, result.matches, result.state.reprs);
    if (!rc.io.affinity_dump.empty()) {
        std::ofstream aff(rc.io.resolve(rc.io.affinity_dump));
        if (!aff) throw IoError("cannot open for writing: " + rc.io.resolve(rc.io.affinity_dump).string());
        for (std::size_t t = 0; t < result.soft_labels.size(); ++t)
            dump_sparse_triples(aff, static_cast<int>(t), result.soft_labels[t]);
    }

    // Resume appends to an existing log; fresh runs rewrite it.
    TrainLog full_log;
    const auto log_path = rc.io.resolve(rc.io.log);
    if (resume_state.has_value() && std::filesystem::exists(log_path)) {
        std::ofstream log_out(log_path, std::ios::app);
        TrainLog tail;
        tail.records = result.log.records;
        std::ostringstream tmp;
        write_log_csv(tail, tmp);
        const std::string text = tmp.str();
        log_out << text.substr(text.find('\n') + 1); // drop the duplicate header
    } else {
        std::ofstream log_out(log_path, std::ios::binary);
        if (!log_out) throw IoError("cannot open for writing: " + log_path.string());
        write_log_csv(result.log, log_out);
    }

    if (corpus.all_gt_present()) {
        const MetricsReport metrics = cmc_map(make_protocol(corpus, result.state.model));
        detail::write_text_file(rc.io.resolve(rc.io.metrics), metrics_to_json(metrics).dump(2) + "\n");
        out << "final rank1=" << utal::detail::format_double(metrics.rank1) << " map=" << utal::detail::format_double(metrics.map) << '\n';
    }
    detail::write_resolved_config(rc, "train");
    out << "trained " << result.state.epochs_completed << " epochs\n";
    return kExitOk;
}

/// Evaluates a checkpointed model on the configured corpus.
inline int cmd_eval(const Options& opt, std::ostream& out = std::cout) {
    RunConfig rc = detail::load_config(opt);
    if (opt.checkpoint.empty()) throw ConfigError("--checkpoint is required for eval");
    const TrainState state = detail::load_checkpoint(opt.checkpoint);
    const Corpus corpus = load_corpus(rc.io.resolve(rc.io.corpus).string());

    const MetricsReport metrics = cmc_map(make_protocol(corpus, state.model));
    const std::string text = metrics_to_json(metrics).dump(2) + "\n";
    detail::write_text_file(rc.io.resolve(rc.io.metrics), text);
    detail::write_resolved_config(rc, "eval");
    out << text;
    return kExitOk;
}

/// Merges per-camera tracklets into trajectories from a checkpoint's
/// representations and writes the score report CSV.
inline int cmd_merge(const Options& opt, std::ostream& out = std::cout) {
    RunConfig rc = detail::load_config(opt);
    if (opt.checkpoint.empty()) throw ConfigError("--checkpoint is required for merge");
    const TrainState state = detail::load_checkpoint(opt.checkpoint);
    const Corpus corpus = load_corpus(rc.io.resolve(rc.io.corpus).string());

    const MergeReport report = merge_and_score(corpus, state.reprs, rc.train.k, rc.eval.threshold);
    std::ostringstream csv;
    csv << "original,mergeable,trajectories,nmi\n";
    csv << report.original << ',' << report.mergeable << ',' << report.trajectories << ','
        << utal::detail::format_double(report.nmi) << '\n';
    detail::write_text_file(rc.io.resolve(rc.io.merge_report), csv.str());
    detail::write_resolved_config(rc, "merge");
    out << csv.str();
    return kExitOk;
}

/// Maps exceptions onto the exit-code scheme shared by all subcommands.
template <typename Fn>
int run_command(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kExitIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    }
}

} // namespace utal::cli
