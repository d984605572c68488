#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <sstream>

#include "utal/datagen.hpp"
#include "utal/trainer.hpp"

using namespace utal;

namespace {

Corpus small_corpus(std::uint64_t seed = 3) {
    GenConfig cfg;
    cfg.num_cameras = 2;
    cfg.num_identities = 4;
    cfg.raw_dim = 6;
    cfg.frames_per_tracklet = {3, 5};
    cfg.fragmentation_factor = {1, 2};
    cfg.identity_spread = 0.1;
    cfg.camera_shift_scale = 0.2;
    cfg.seed = seed;
    return generate_corpus(cfg);
}

TrainConfig fast_config() {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.frames_per_tracklet = 2;
    cfg.k = 2;
    cfg.hidden_dim = 8;
    cfg.embed_dim = 4;
    cfg.checkpoint_every = 0;
    cfg.seed = 9;
    return cfg;
}

std::string model_bytes(const EmbeddingModel& m) { return model_to_json(m).dump(); }

std::string log_bytes(const TrainLog& log) {
    std::ostringstream oss;
    write_log_csv(log, oss);
    return oss.str();
}

} // namespace

TEST_CASE("sample_batch: balanced tracklet counts per camera") {
    const Corpus corpus = small_corpus();
    TrainConfig cfg = fast_config();
    cfg.batch_size = 8;
    cfg.frames_per_tracklet = 4;
    rng::Engine eng(1);
    const Batch batch = sample_batch(corpus, cfg, eng);
    std::map<int, int> tracklets_per_cam, frames_per_cam;
    for (const auto& g : batch.groups) {
        ++tracklets_per_cam[g.camera];
        frames_per_cam[g.camera] += static_cast<int>(g.frames.size());
    }
    REQUIRE(tracklets_per_cam[0] == 1);
    REQUIRE(tracklets_per_cam[1] == 1);
    REQUIRE(frames_per_cam[0] == 4);
    REQUIRE(frames_per_cam[1] == 4);
    REQUIRE(batch.num_frames() == 8);
}

TEST_CASE("sample_batch: short tracklets repeat frames evenly") {
    Corpus corpus;
    corpus.raw_dim = 1;
    corpus.cameras.resize(2);
    for (int t = 0; t < 2; ++t) {
        corpus.cameras[static_cast<std::size_t>(t)].index = t;
        Tracklet tr;
        tr.label = 0;
        tr.gt_identity = 0;
        tr.frames = {Vec{10.0 * t + 1.0}, Vec{10.0 * t + 2.0}};
        corpus.cameras[static_cast<std::size_t>(t)].tracklets.push_back(std::move(tr));
    }
    TrainConfig cfg = fast_config();
    cfg.batch_size = 8;
    cfg.frames_per_tracklet = 4;
    rng::Engine eng(2);
    const Batch batch = sample_batch(corpus, cfg, eng);
    for (const auto& g : batch.groups) {
        REQUIRE(g.frames.size() == 4);
        std::map<double, int> counts;
        for (const auto& f : g.frames) ++counts[f[0]];
        for (const auto& [v, c] : counts) REQUIRE(c == 2);
    }
}

TEST_CASE("sample_batch: fixed seed gives an identical batch sequence") {
    const Corpus corpus = small_corpus();
    const TrainConfig cfg = fast_config();
    rng::Engine a(42), b(42);
    for (int i = 0; i < 5; ++i) {
        const Batch ba = sample_batch(corpus, cfg, a);
        const Batch bb = sample_batch(corpus, cfg, b);
        REQUIRE(ba.groups.size() == bb.groups.size());
        for (std::size_t g = 0; g < ba.groups.size(); ++g) {
            REQUIRE(ba.groups[g].camera == bb.groups[g].camera);
            REQUIRE(ba.groups[g].tracklet == bb.groups[g].tracklet);
            REQUIRE(ba.groups[g].frames == bb.groups[g].frames);
        }
    }
}

TEST_CASE("sample_batch: indivisible batch size is rejected at startup") {
    const Corpus corpus = small_corpus();
    TrainConfig cfg = fast_config();
    cfg.batch_size = 10; // not divisible by 2 cameras * 2 frames
    REQUIRE_THROWS_MATCHES(train(corpus, cfg), ConfigError,
                           Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("divisible")));
}

TEST_CASE("total_loss: lambda 0 equals the discrimination loss alone") {
    const Corpus corpus = small_corpus();
    TrainConfig cfg = fast_config();
    rng::Engine eng(7);
    ModelConfig mc{corpus.raw_dim, cfg.hidden_dim, cfg.embed_dim, cfg.activation};
    std::vector<int> classes;
    std::vector<ReprBank> reprs;
    for (const auto& cam : corpus.cameras) {
        classes.push_back(cam.num_tracklets());
        ReprBank bank;
        for (const auto& tr : cam.tracklets) bank.push_back(rng::normal_vector(eng, 4));
        reprs.push_back(std::move(bank));
    }
    EmbeddingModel model = init_model(mc, classes, eng);
    std::vector<SparseMatrix> targets;
    for (const auto& bank : reprs) targets.push_back(soft_labels(build_affinity(bank, 2)));
    const MatchSet matches = discover_matches(reprs, MatchMode::TwoWay1NN);
    const Batch batch = sample_batch(corpus, cfg, eng);

    const TotalLossResult with = total_loss(model, batch, targets, &matches, reprs, 0.0);
    const PctdBatchResult pctd = pctd_batch_loss(model, batch, targets);
    REQUIRE(with.loss == pctd.loss);

    // before activation the term is omitted entirely, lambda notwithstanding
    const TotalLossResult pre = total_loss(model, batch, targets, nullptr, reprs, 10.0);
    REQUIRE(pre.loss == pctd.loss);
    REQUIRE(pre.ccta == 0.0);
    for (const auto& g : pre.grads) REQUIRE(g.embed_grad.empty());

    // weighted sum arithmetic
    const TotalLossResult full = total_loss(model, batch, targets, &matches, reprs, 10.0);
    REQUIRE_THAT(full.loss, Catch::Matchers::WithinRel(full.pctd + 10.0 * full.ccta, 1e-12));
}

TEST_CASE("train: zero epochs returns the initialized model and empty log") {
    const Corpus corpus = small_corpus();
    TrainConfig cfg = fast_config();
    cfg.epochs = 0;
    const TrainResult r = train(corpus, cfg);
    REQUIRE(r.log.records.empty());
    REQUIRE(r.state.epochs_completed == 0);
    // the model matches a fresh init from the same seed
    rng::Engine eng(cfg.seed);
    ModelConfig mc{corpus.raw_dim, cfg.hidden_dim, cfg.embed_dim, cfg.activation};
    std::vector<int> classes;
    for (const auto& cam : corpus.cameras) classes.push_back(cam.num_tracklets());
    const EmbeddingModel fresh = init_model(mc, classes, eng);
    REQUIRE(model_bytes(r.state.model) == model_bytes(fresh));
}

TEST_CASE("train: identical seeds give byte-identical logs") {
    const Corpus corpus = small_corpus();
    const TrainConfig cfg = fast_config();
    const TrainResult a = train(corpus, cfg);
    const TrainResult b = train(corpus, cfg);
    REQUIRE(log_bytes(a.log) == log_bytes(b.log));
    REQUIRE(model_bytes(a.state.model) == model_bytes(b.state.model));
}

TEST_CASE("train: ground truth is invisible to unsupervised optimization") {
    const Corpus corpus = small_corpus();
    Corpus shuffled = corpus;
    // derange the identities; diagnostics change, the model must not
    std::vector<int> ids;
    for (const auto& cam : shuffled.cameras)
        for (const auto& tr : cam.tracklets) ids.push_back(*tr.gt_identity);
    std::rotate(ids.begin(), ids.begin() + 3, ids.end());
    std::size_t pos = 0;
    for (auto& cam : shuffled.cameras)
        for (auto& tr : cam.tracklets) tr.gt_identity = ids[pos++];

    TrainConfig cfg = fast_config();
    cfg.epochs = 4;
    cfg.ccta_start_fraction = 0.5;
    const TrainResult a = train(corpus, cfg);
    const TrainResult b = train(shuffled, cfg);
    REQUIRE(model_bytes(a.state.model) == model_bytes(b.state.model));
}

TEST_CASE("train: the association term contributes nothing before activation") {
    const Corpus corpus = small_corpus();
    TrainConfig never = fast_config();
    never.epochs = 4;
    never.lambda = 10.0;
    never.ccta_start_fraction = 1.0; // activation epoch = 4, past the end
    TrainConfig zero = fast_config();
    zero.epochs = 4;
    zero.lambda = 0.0;
    zero.ccta_start_fraction = 0.0;
    const TrainResult a = train(corpus, never);
    const TrainResult b = train(corpus, zero);
    REQUIRE(model_bytes(a.state.model) == model_bytes(b.state.model));
    for (std::size_t i = 0; i < a.log.records.size(); ++i) {
        REQUIRE(a.log.records[i].pctd_loss == b.log.records[i].pctd_loss);
        REQUIRE(a.log.records[i].ccta_loss == 0.0);
    }
}

TEST_CASE("train: soft label snapshot comes from the epoch boundary") {
    const Corpus corpus = small_corpus();
    TrainConfig cfg = fast_config();
    cfg.epochs = 1;
    const TrainResult r = train(corpus, cfg);

    // the snapshot used during epoch 0 derives from the initial representations
    rng::Engine eng(cfg.seed);
    ModelConfig mc{corpus.raw_dim, cfg.hidden_dim, cfg.embed_dim, cfg.activation};
    std::vector<int> classes;
    for (const auto& cam : corpus.cameras) classes.push_back(cam.num_tracklets());
    const EmbeddingModel fresh = init_model(mc, classes, eng);
    for (std::size_t t = 0; t < corpus.cameras.size(); ++t) {
        ReprBank bank;
        for (const auto& tr : corpus.cameras[t].tracklets)
            bank.push_back(mean_frame_embedding(fresh, tr));
        const SparseMatrix expect = soft_labels(build_affinity(bank, cfg.k));
        for (int i = 0; i < expect.num_rows(); ++i)
            REQUIRE(expect.rows[static_cast<std::size_t>(i)].entries ==
                    r.soft_labels[t].rows[static_cast<std::size_t>(i)].entries);
    }
}

TEST_CASE("train: degenerate camera falls back to K=0 with a warning") {
    Corpus corpus;
    corpus.raw_dim = 2;
    corpus.cameras.resize(2);
    corpus.cameras[0].index = 0;
    corpus.cameras[1].index = 1;
    for (int i = 0; i < 3; ++i) {
        Tracklet tr;
        tr.label = i;
        tr.gt_identity = i;
        tr.frames = {Vec{1.0 * i, 0.5}, Vec{1.0 * i, 0.75}};
        corpus.cameras[0].tracklets.push_back(std::move(tr));
    }
    Tracklet lone;
    lone.label = 0;
    lone.gt_identity = 0;
    lone.frames = {Vec{0.0, 0.0}};
    corpus.cameras[1].tracklets.push_back(std::move(lone));

    TrainConfig cfg = fast_config();
    cfg.batch_size = 4;
    cfg.frames_per_tracklet = 1;
    cfg.k = 4;
    cfg.epochs = 2;
    const TrainResult r = train(corpus, cfg);
    REQUIRE_FALSE(r.warnings.empty());
    REQUIRE(r.soft_labels[1].rows[0].entries == std::vector<std::pair<int, double>>{{0, 1.0}});
}

TEST_CASE("train: weakly supervised relabels by identity") {
    const Corpus corpus = small_corpus();
    TrainConfig cfg = fast_config();
    cfg.mode = TrainMode::WeaklySupervised;
    const TrainResult r = train(corpus, cfg);
    for (std::size_t t = 0; t < corpus.cameras.size(); ++t) {
        std::map<int, int> distinct;
        for (const auto& tr : corpus.cameras[t].tracklets) distinct.emplace(*tr.gt_identity, 0);
        REQUIRE(r.state.model.num_classes(static_cast<int>(t)) == static_cast<int>(distinct.size()));
    }
}

TEST_CASE("train: weakly supervised equals unsupervised K=0 when labels coincide") {
    GenConfig gcfg;
    gcfg.num_cameras = 2;
    gcfg.num_identities = 5;
    gcfg.raw_dim = 4;
    gcfg.frames_per_tracklet = {2, 3};
    gcfg.fragmentation_factor = {1, 1}; // one tracklet per identity per camera
    gcfg.seed = 12;
    const Corpus corpus = generate_corpus(gcfg);

    TrainConfig wsl = fast_config();
    wsl.mode = TrainMode::WeaklySupervised;
    TrainConfig unsup = fast_config();
    unsup.mode = TrainMode::Unsupervised;
    unsup.k = 0;
    const TrainResult a = train(corpus, wsl);
    const TrainResult b = train(corpus, unsup);
    REQUIRE(model_bytes(a.state.model) == model_bytes(b.state.model));
}

TEST_CASE("train: weakly supervised requires identities") {
    Corpus corpus = small_corpus();
    corpus.cameras[0].tracklets[0].gt_identity.reset();
    TrainConfig cfg = fast_config();
    cfg.mode = TrainMode::WeaklySupervised;
    REQUIRE_THROWS_AS(train(corpus, cfg), ConfigError);
}

TEST_CASE("checkpoint: round-trips and resumes to the same trajectory") {
    const Corpus corpus = small_corpus();
    TrainConfig cfg = fast_config();
    cfg.epochs = 4;
    cfg.checkpoint_every = 2;

    std::vector<TrainState> checkpoints;
    TrainHooks hooks;
    hooks.on_checkpoint = [&checkpoints](const TrainState& st) { checkpoints.push_back(st); };
    const TrainResult full = train(corpus, cfg, hooks);
    REQUIRE(checkpoints.size() == 2); // after epochs 2 and 4

    // serialize/deserialize the midpoint, then continue
    const nlohmann::json j = checkpoint_to_json(checkpoints[0]);
    const TrainState mid = checkpoint_from_json(j);
    REQUIRE(mid.epochs_completed == 2);
    const TrainResult resumed = train(corpus, cfg, {}, &mid);
    REQUIRE(model_bytes(resumed.state.model) == model_bytes(full.state.model));
    REQUIRE(resumed.log.records.size() == 2);
    REQUIRE(resumed.log.records[0].epoch == 2);
}

TEST_CASE("train: every logged loss is finite") {
    const Corpus corpus = small_corpus();
    TrainConfig cfg = fast_config();
    cfg.epochs = 6;
    cfg.ccta_start_fraction = 0.5;
    const TrainResult r = train(corpus, cfg);
    REQUIRE(r.log.records.size() == 6);
    for (const auto& rec : r.log.records) {
        REQUIRE(std::isfinite(rec.pctd_loss));
        REQUIRE(std::isfinite(rec.ccta_loss));
    }
    // association stays inactive for the first half
    for (int e = 0; e < 3; ++e) REQUIRE(r.log.records[static_cast<std::size_t>(e)].num_pairs == 0);
}
