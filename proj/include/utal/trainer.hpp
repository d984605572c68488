#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "utal/batch.hpp"
#include "utal/ccta.hpp"
#include "utal/corpus.hpp"
#include "utal/errors.hpp"
#include "utal/eval.hpp"
#include "utal/model.hpp"
#include "utal/optimizer.hpp"
#include "utal/pctd.hpp"
#include "utal/rng.hpp"

// Joint training loop: balanced per-camera batch sampling, the weighted
// two-term objective with cross-camera association activated halfway through
// training, and per-epoch refreshes of soft labels and matches.

namespace utal {

enum class TrainMode { Unsupervised, WeaklySupervised };

inline std::string to_string(TrainMode m) {
    return m == TrainMode::Unsupervised ? "unsupervised" : "weakly_supervised";
}

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "unsupervised") return TrainMode::Unsupervised;
    if (s == "weakly_supervised") return TrainMode::WeaklySupervised;
    throw ConfigError("unknown mode: " + s);
}

/// Whether the incremental representation update uses embeddings from before
/// or after the optimizer step of the same batch.
enum class ReprUpdate { PreStep, PostStep };

inline std::string to_string(ReprUpdate r) {
    return r == ReprUpdate::PreStep ? "pre_step" : "post_step";
}

inline ReprUpdate repr_update_from_string(const std::string& s) {
    if (s == "pre_step") return ReprUpdate::PreStep;
    if (s == "post_step") return ReprUpdate::PostStep;
    throw ConfigError("unknown repr_update: " + s);
}

struct TrainConfig {
    int epochs = 200;
    int batch_size = 128;
    int frames_per_tracklet = 4;
    double lambda = 10.0;
    double alpha = 1.0;
    int k = 4;
    MatchMode ccta_mode = MatchMode::TwoWay1NN;
    int ccta_knn = 1;
    double ccta_start_fraction = 0.5;
    TrainMode mode = TrainMode::Unsupervised;
    std::uint64_t seed = 0;
    double learning_rate = 3.5e-4;
    int hidden_dim = 64;
    int embed_dim = 32;
    Activation activation = Activation::Tanh;
    ReprUpdate repr_update = ReprUpdate::PreStep;
    int checkpoint_every = 25;
    int eval_cadence = 0; // 0 disables in-training metric snapshots

    int tracklets_per_camera(int num_cameras) const {
        return batch_size / (num_cameras * frames_per_tracklet);
    }

    /// First epoch index at which the association loss is active.
    int ccta_start_epoch() const {
        return static_cast<int>(std::ceil(ccta_start_fraction * static_cast<double>(epochs)));
    }

    void validate(const Corpus& corpus) const {
        if (epochs < 0) throw ConfigError("train config: epochs must be non-negative");
        if (frames_per_tracklet < 1) throw ConfigError("train config: frames_per_tracklet must be positive");
        if (batch_size < 1) throw ConfigError("train config: batch_size must be positive");
        const int denom = corpus.num_cameras() * frames_per_tracklet;
        if (batch_size % denom != 0)
            throw ConfigError("train config: batch_size " + std::to_string(batch_size) +
                              " not divisible by cameras*frames_per_tracklet = " + std::to_string(denom));
        if (lambda < 0.0) throw ConfigError("train config: lambda must be non-negative");
        if (alpha < 0.0) throw ConfigError("train config: alpha must be non-negative");
        if (k < 0) throw ConfigError("train config: k must be non-negative");
        if (ccta_start_fraction < 0.0 || ccta_start_fraction > 1.0)
            throw ConfigError("train config: ccta_start_fraction must be in [0,1]");
        if (ccta_mode == MatchMode::TwoWayKNN && ccta_knn < 1)
            throw ConfigError("train config: ccta_knn must be at least 1");
        if (learning_rate <= 0.0) throw ConfigError("train config: learning_rate must be positive");
        for (const auto& cam : corpus.cameras)
            if (cam.tracklets.empty())
                throw ConfigError("train config: camera " + std::to_string(cam.index) + " has no tracklets");
    }
};

struct EpochRecord {
    int epoch = 0;
    double pctd_loss = 0.0;
    double ccta_loss = 0.0;
    int num_pairs = 0;
    std::optional<double> pair_precision;
    std::optional<double> mps;
    std::optional<double> rank1;
    std::optional<double> map;
};

struct TrainLog {
    std::vector<EpochRecord> records;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline std::string format_optional(const std::optional<double>& v) {
    return v.has_value() ? format_double(*v) : std::string{};
}

} // namespace detail

inline void write_log_csv(const TrainLog& log, std::ostream& out) {
    out << "epoch,pctd_loss,ccta_loss,num_pairs,pair_precision,mps,rank1,map\n";
    for (const auto& r : log.records) {
        out << r.epoch << ',' << detail::format_double(r.pctd_loss) << ','
            << detail::format_double(r.ccta_loss) << ',' << r.num_pairs << ','
            << detail::format_optional(r.pair_precision) << ',' << detail::format_optional(r.mps) << ','
            << detail::format_optional(r.rank1) << ',' << detail::format_optional(r.map) << '\n';
    }
}

/// Balanced sampler: batch_size/(T*frames) tracklets per camera, frames
/// drawn without replacement when a tracklet has enough, cycled through a
/// random permutation otherwise so short tracklets repeat evenly.
inline Batch sample_batch(const Corpus& corpus, const TrainConfig& cfg, rng::Engine& eng) {
    const int per_camera = cfg.tracklets_per_camera(corpus.num_cameras());
    if (per_camera < 1) throw ConfigError("sample_batch: batch too small for camera count");
    Batch batch;
    for (const auto& cam : corpus.cameras) {
        const int mt = cam.num_tracklets();
        std::vector<int> chosen;
        if (per_camera <= mt) {
            chosen = rng::sample_without_replacement(eng, mt, per_camera);
        } else {
            chosen.reserve(static_cast<std::size_t>(per_camera));
            for (int i = 0; i < per_camera; ++i)
                chosen.push_back(static_cast<int>(rng::below(eng, static_cast<std::size_t>(mt))));
        }
        // Coalesce duplicates so groups stay unique per (camera, tracklet).
        std::sort(chosen.begin(), chosen.end());
        std::vector<std::pair<int, int>> counted; // (tracklet, multiplicity)
        for (int idx : chosen) {
            if (!counted.empty() && counted.back().first == idx)
                ++counted.back().second;
            else
                counted.emplace_back(idx, 1);
        }
        for (const auto& [idx, mult] : counted) {
            const auto& frames = cam.tracklets[static_cast<std::size_t>(idx)].frames;
            const int nf = static_cast<int>(frames.size());
            const int want = cfg.frames_per_tracklet * mult;
            BatchGroup group;
            group.camera = cam.index;
            group.tracklet = idx;
            group.frames.reserve(static_cast<std::size_t>(want));
            if (want <= nf) {
                for (int f : rng::sample_without_replacement(eng, nf, want))
                    group.frames.push_back(frames[static_cast<std::size_t>(f)]);
            } else {
                const auto perm = rng::sample_without_replacement(eng, nf, nf);
                for (int i = 0; i < want; ++i)
                    group.frames.push_back(frames[static_cast<std::size_t>(perm[static_cast<std::size_t>(i % nf)])]);
            }
            batch.groups.push_back(std::move(group));
        }
    }
    return batch;
}

struct TotalLossResult {
    double loss = 0.0;
    double pctd = 0.0;
    double ccta = 0.0;
    int matched_tracklets = 0;
    std::vector<SampleGrad> grads;  // per frame, group-major
    std::vector<Vec> embeddings;    // per frame, group-major
};

/// L = L_pctd + lambda * L_ccta over one batch. Passing no match set (the
/// epochs before association activates) omits the second term entirely.
inline TotalLossResult total_loss(const EmbeddingModel& model, const Batch& batch,
                                  const std::vector<SparseMatrix>& targets, const MatchSet* matches,
                                  const std::vector<ReprBank>& reprs, double lambda) {
    std::vector<Vec> embeddings;
    embeddings.reserve(batch.num_frames());
    for (const auto& g : batch.groups)
        for (const auto& f : g.frames) embeddings.push_back(model.forward(f));

    TotalLossResult out;
    PctdBatchResult pctd = pctd_batch_loss_with_embeddings(model, batch, embeddings, targets);
    out.pctd = pctd.loss;
    out.loss = pctd.loss;

    out.grads.resize(embeddings.size());
    std::size_t frame = 0;
    for (const auto& g : batch.groups)
        for (std::size_t f = 0; f < g.frames.size(); ++f, ++frame) {
            out.grads[frame].camera = g.camera;
            out.grads[frame].logit_grad = std::move(pctd.logit_grads[frame]);
        }

    if (matches != nullptr) {
        CctaBatchResult ccta = batch_ccta_loss_with_embeddings(batch, embeddings, *matches, reprs,
                                                               model.cfg.embed_dim);
        out.ccta = ccta.loss;
        out.matched_tracklets = ccta.matched_tracklets;
        out.loss += lambda * ccta.loss;
        for (std::size_t i = 0; i < out.grads.size(); ++i) {
            Vec& eg = ccta.embed_grads[i];
            for (auto& v : eg) v *= lambda;
            out.grads[i].embed_grad = std::move(eg);
        }
    }
    if (!std::isfinite(out.loss)) throw NumericError("total_loss: non-finite loss");
    out.embeddings = std::move(embeddings);
    return out;
}

/// Full training snapshot, also the checkpoint payload.
struct TrainState {
    EmbeddingModel model;
    AdamState opt;
    std::vector<ReprBank> reprs;
    std::string rng_state;
    int epochs_completed = 0;
    TrainMode mode = TrainMode::Unsupervised;
};

constexpr const char* kCheckpointFormat = "utal.checkpoint.v1";

inline nlohmann::json checkpoint_to_json(const TrainState& s) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["model"] = model_to_json(s.model);
    j["opt"] = adam_to_json(s.opt);
    j["reprs"] = s.reprs;
    j["rng"] = s.rng_state;
    j["epochs_completed"] = s.epochs_completed;
    j["mode"] = to_string(s.mode);
    return j;
}

inline TrainState checkpoint_from_json(const nlohmann::json& j) {
    if (!j.contains("format") || j.at("format").get<std::string>() != kCheckpointFormat)
        throw IoError("checkpoint: unknown or missing format tag");
    TrainState s;
    s.model = model_from_json(j.at("model"));
    s.opt = adam_from_json(j.at("opt"), s.model);
    s.reprs = j.at("reprs").get<std::vector<ReprBank>>();
    s.rng_state = j.at("rng").get<std::string>();
    s.epochs_completed = j.at("epochs_completed").get<int>();
    s.mode = train_mode_from_string(j.at("mode").get<std::string>());
    return s;
}

struct TrainResult {
    TrainState state;
    std::vector<SparseMatrix> soft_labels; // snapshot used in the last epoch
    MatchSet matches;                      // snapshot used in the last epoch
    TrainLog log;
    std::vector<std::string> warnings;
};

struct TrainHooks {
    /// Called after each epoch's record is finalized.
    std::function<void(const EpochRecord&)> on_epoch;
    /// Called at the checkpoint cadence and after the final epoch.
    std::function<void(const TrainState&)> on_checkpoint;
};

namespace detail {

/// Per-camera classification setup. Unsupervised keeps one class per
/// tracklet; weakly supervised reuses the hidden identities as per-camera
/// class labels, so fragments of one person share a class.
struct LabelSpace {
    std::vector<int> classes_per_camera;
    std::vector<std::vector<int>> class_of; // [camera][tracklet]
};

inline LabelSpace make_label_space(const Corpus& corpus, TrainMode mode) {
    LabelSpace ls;
    for (const auto& cam : corpus.cameras) {
        if (mode == TrainMode::Unsupervised) {
            ls.classes_per_camera.push_back(cam.num_tracklets());
            std::vector<int> ids(static_cast<std::size_t>(cam.num_tracklets()));
            for (int i = 0; i < cam.num_tracklets(); ++i) ids[static_cast<std::size_t>(i)] = i;
            ls.class_of.push_back(std::move(ids));
        } else {
            std::map<int, int> id_to_class;
            for (const auto& tr : cam.tracklets) {
                if (!tr.gt_identity.has_value())
                    throw ConfigError("weakly_supervised mode requires gt_identity on every tracklet");
                id_to_class.emplace(*tr.gt_identity, 0);
            }
            int next = 0;
            for (auto& [id, cls] : id_to_class) cls = next++;
            std::vector<int> classes;
            classes.reserve(cam.tracklets.size());
            for (const auto& tr : cam.tracklets) classes.push_back(id_to_class.at(*tr.gt_identity));
            ls.classes_per_camera.push_back(next);
            ls.class_of.push_back(std::move(classes));
        }
    }
    return ls;
}

/// One-hot target rows from fixed class labels (the weakly supervised path).
inline SparseMatrix one_hot_targets(const std::vector<int>& class_of, int num_classes) {
    SparseMatrix m;
    m.cols = num_classes;
    m.rows.resize(class_of.size());
    for (std::size_t i = 0; i < class_of.size(); ++i) m.rows[i].entries = {{class_of[i], 1.0}};
    return m;
}

inline std::string serialize_rng(const rng::Engine& eng) {
    std::ostringstream oss;
    oss << eng;
    return oss.str();
}

inline rng::Engine deserialize_rng(const std::string& s) {
    rng::Engine eng;
    std::istringstream iss(s);
    iss >> eng;
    if (iss.fail()) throw IoError("checkpoint: bad rng state");
    return eng;
}

} // namespace detail

/// Runs the joint optimization. The first half of training uses only the
/// per-camera soft label loss; the association term joins at
/// ccta_start_epoch(). Soft labels and matches refresh once per epoch.
/// Pass `resume` to continue a checkpointed run.
inline TrainResult train(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks = {},
                         const TrainState* resume = nullptr) {
    corpus.validate();
    cfg.validate(corpus);
    const int num_cameras = corpus.num_cameras();

    TrainResult result;
    const detail::LabelSpace labels = detail::make_label_space(corpus, cfg.mode);

    rng::Engine eng(cfg.seed);
    TrainState state;
    int start_epoch = 0;
    if (resume != nullptr) {
        state = *resume;
        if (state.mode != cfg.mode) throw ConfigError("resume: checkpoint mode differs from config");
        if (state.model.num_cameras() != num_cameras)
            throw ConfigError("resume: checkpoint camera count differs from corpus");
        for (int t = 0; t < num_cameras; ++t)
            if (state.model.num_classes(t) != labels.classes_per_camera[static_cast<std::size_t>(t)])
                throw ConfigError("resume: checkpoint class count differs from corpus in camera " +
                                  std::to_string(t));
        eng = detail::deserialize_rng(state.rng_state);
        start_epoch = state.epochs_completed;
    } else {
        ModelConfig mc{corpus.raw_dim, cfg.hidden_dim, cfg.embed_dim, cfg.activation};
        state.model = init_model(mc, labels.classes_per_camera, eng);
        state.opt = AdamState::create(state.model, cfg.learning_rate);
        state.mode = cfg.mode;
        // Representations start as the mean frame embedding under the fresh model.
        state.reprs.resize(static_cast<std::size_t>(num_cameras));
        for (int t = 0; t < num_cameras; ++t) {
            const auto& cam = corpus.cameras[static_cast<std::size_t>(t)];
            state.reprs[static_cast<std::size_t>(t)].resize(cam.tracklets.size());
            for (std::size_t i = 0; i < cam.tracklets.size(); ++i)
                state.reprs[static_cast<std::size_t>(t)][i] =
                    mean_frame_embedding(state.model, cam.tracklets[i]);
        }
    }

    // Per-camera neighbour counts, degraded to 0 where a camera is too small.
    std::vector<int> k_per_camera(static_cast<std::size_t>(num_cameras), cfg.k);
    for (int t = 0; t < num_cameras; ++t) {
        const int mt = corpus.cameras[static_cast<std::size_t>(t)].num_tracklets();
        if (cfg.k >= 1 && mt < 2) {
            k_per_camera[static_cast<std::size_t>(t)] = 0;
            result.warnings.push_back("camera " + std::to_string(t) +
                                      " has fewer than 2 tracklets; using K=0 for it");
        } else if (cfg.k > mt - 1) {
            k_per_camera[static_cast<std::size_t>(t)] = mt - 1;
            result.warnings.push_back("camera " + std::to_string(t) + ": K clamped to " +
                                      std::to_string(mt - 1));
        }
    }

    const std::size_t total_frames = corpus.total_frames();
    const int batches_per_epoch = static_cast<int>(
        (total_frames + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size));
    const int ccta_start = cfg.ccta_start_epoch();

    auto refresh_targets = [&]() {
        std::vector<SparseMatrix> targets;
        targets.reserve(static_cast<std::size_t>(num_cameras));
        for (int t = 0; t < num_cameras; ++t) {
            if (cfg.mode == TrainMode::WeaklySupervised) {
                targets.push_back(detail::one_hot_targets(labels.class_of[static_cast<std::size_t>(t)],
                                                          labels.classes_per_camera[static_cast<std::size_t>(t)]));
            } else {
                targets.push_back(soft_labels(
                    build_affinity(state.reprs[static_cast<std::size_t>(t)], k_per_camera[static_cast<std::size_t>(t)])));
            }
        }
        return targets;
    };

    if (cfg.epochs == 0 || start_epoch >= cfg.epochs) {
        result.soft_labels = refresh_targets();
        state.rng_state = detail::serialize_rng(eng);
        result.state = std::move(state);
        return result;
    }

    std::vector<SparseMatrix> targets;
    MatchSet matches;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // Epoch-boundary refresh from the frozen representation banks.
        targets = refresh_targets();
        const bool ccta_active = epoch >= ccta_start && cfg.lambda > 0.0;
        if (ccta_active) matches = discover_matches(state.reprs, cfg.ccta_mode, cfg.ccta_knn);

        double pctd_sum = 0.0;
        double ccta_sum = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            Batch batch = sample_batch(corpus, cfg, eng);
            TotalLossResult tl = total_loss(state.model, batch, targets, ccta_active ? &matches : nullptr,
                                            state.reprs, cfg.lambda);
            if (!std::isfinite(tl.loss))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            pctd_sum += tl.pctd;
            ccta_sum += tl.ccta;

            std::vector<Vec> inputs;
            inputs.reserve(batch.num_frames());
            for (const auto& g : batch.groups)
                for (const auto& f : g.frames) inputs.push_back(f);

            Gradients grads = backward(state.model, inputs, tl.grads);
            adam_step(state.model, state.opt, grads);

            // Incremental representation update for the in-batch tracklets;
            // pre_step reuses the embeddings already computed for the loss.
            std::size_t frame = 0;
            for (const auto& g : batch.groups) {
                std::vector<Vec> embeds;
                embeds.reserve(g.frames.size());
                for (std::size_t f = 0; f < g.frames.size(); ++f, ++frame) {
                    if (cfg.repr_update == ReprUpdate::PreStep)
                        embeds.push_back(tl.embeddings[frame]);
                    else
                        embeds.push_back(state.model.forward(g.frames[f]));
                }
                Vec& s = state.reprs[static_cast<std::size_t>(g.camera)][static_cast<std::size_t>(g.tracklet)];
                s = update_repr(s, embeds, cfg.alpha);
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.pctd_loss = pctd_sum / batches_per_epoch;
        rec.ccta_loss = ccta_sum / batches_per_epoch;
        if (!std::isfinite(rec.pctd_loss) || !std::isfinite(rec.ccta_loss))
            throw NumericError("train: non-finite epoch loss at epoch " + std::to_string(epoch));
        if (ccta_active) {
            const PairPrecisionReport pp = pair_precision(matches, corpus);
            rec.num_pairs = pp.count;
            rec.pair_precision = pp.precision;
        }
        if (cfg.mode == TrainMode::Unsupervised) rec.mps = mps(targets, corpus);
        if (cfg.eval_cadence > 0 && ((epoch + 1) % cfg.eval_cadence == 0 || epoch + 1 == cfg.epochs) &&
            corpus.all_gt_present()) {
            const MetricsReport m = cmc_map(make_protocol(corpus, state.model));
            rec.rank1 = m.rank1;
            rec.map = m.map;
        }
        result.log.records.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(rec);

        state.epochs_completed = epoch + 1;
        if (hooks.on_checkpoint &&
            (epoch + 1 == cfg.epochs || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0))) {
            state.rng_state = detail::serialize_rng(eng);
            hooks.on_checkpoint(state);
        }
    }

    result.soft_labels = std::move(targets);
    result.matches = std::move(matches);
    state.rng_state = detail::serialize_rng(eng);
    result.state = std::move(state);
    return result;
}

/// Hard one-hot classification over per-camera identity labels; the
/// association term is unchanged. Every tracklet must carry gt_identity.
inline TrainResult train_weakly_supervised(const Corpus& corpus, const TrainConfig& cfg,
                                           const TrainHooks& hooks = {}, const TrainState* resume = nullptr) {
    TrainConfig wsl = cfg;
    wsl.mode = TrainMode::WeaklySupervised;
    return train(corpus, wsl, hooks, resume);
}

} // namespace utal
