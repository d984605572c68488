#include <cstdint>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "utal/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Unsupervised tracklet association learning: corpus synthesis, "
                 "joint per-camera discrimination + cross-camera association training, "
                 "re-id evaluation, and trajectory merging"};
    app.require_subcommand(1);

    utal::cli::Options opt;
    double threshold = 0.0;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "Run configuration file")->required();
        sub->add_option("--seed", seed, "Override the configured seed(s)");
    };

    CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
    add_common(gen);
    gen->add_flag("--force", opt.force, "Overwrite an existing corpus file");

    CLI::App* train = app.add_subcommand("train", "Train on the configured corpus");
    add_common(train);
    train->add_option("--resume", opt.resume, "Continue from a checkpoint");

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint (CMC / mAP)");
    add_common(eval);
    eval->add_option("--checkpoint", opt.checkpoint, "Checkpoint to evaluate")->required();

    CLI::App* merge = app.add_subcommand("merge", "Merge tracklets into trajectories and score NMI");
    add_common(merge);
    merge->add_option("--checkpoint", opt.checkpoint, "Checkpoint providing representations")->required();
    merge->add_option("--threshold", threshold, "Affinity threshold in (0,1)");

    CLI11_PARSE(app, argc, argv);

    for (CLI::App* sub : {gen, train, eval, merge}) {
        if (!sub->parsed()) continue;
        const CLI::Option* seed_opt = sub->get_option_no_throw("--seed");
        if (seed_opt != nullptr && seed_opt->count() > 0) opt.seed = seed;
        const CLI::Option* thr_opt = sub->get_option_no_throw("--threshold");
        if (thr_opt != nullptr && thr_opt->count() > 0) opt.threshold = threshold;
    }

    return utal::cli::run_command([&]() {
        if (gen->parsed()) return utal::cli::cmd_gen(opt);
        if (train->parsed()) return utal::cli::cmd_train(opt);
        if (eval->parsed()) return utal::cli::cmd_eval(opt);
        return utal::cli::cmd_merge(opt);
    });
}
