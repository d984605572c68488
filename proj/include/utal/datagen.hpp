#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "utal/corpus.hpp"
#include "utal/errors.hpp"
#include "utal/rng.hpp"
#include "utal/vec.hpp"

namespace utal {

struct IntRange {
    int min = 1;
    int max = 1;
};

/// Knobs for the synthetic multi-camera corpus. Generation is a pure
/// function of this struct: identical configs give bit-identical corpora.
struct GenConfig {
    int num_cameras = 3;
    int num_identities = 20;
    int raw_dim = 32;
    IntRange frames_per_tracklet{4, 8};
    IntRange fragmentation_factor{1, 2}; // tracklets per identity per camera
    double identity_spread = 0.1;        // within-identity frame noise std
    double camera_shift_scale = 0.3;     // per-camera affine distortion magnitude
    double presence_prob = 1.0;          // chance an identity appears in a camera
    std::uint64_t seed = 0;

    void validate() const {
        auto bad = [](const std::string& field) { return ConfigError("gen config: invalid " + field); };
        if (num_cameras < 2) throw bad("num_cameras (need at least 2)");
        if (num_identities < 1) throw bad("num_identities");
        if (raw_dim < 1) throw bad("raw_dim");
        if (frames_per_tracklet.min < 1 || frames_per_tracklet.max < frames_per_tracklet.min)
            throw bad("frames_per_tracklet range");
        if (fragmentation_factor.min < 1 || fragmentation_factor.max < fragmentation_factor.min)
            throw bad("fragmentation_factor range");
        if (identity_spread < 0.0) throw bad("identity_spread");
        if (camera_shift_scale < 0.0) throw bad("camera_shift_scale");
        if (presence_prob < 0.0 || presence_prob > 1.0) throw bad("presence_prob");
    }
};

namespace detail {

// Mixing gain applied on top of camera_shift_scale. Sized so that a shift
// scale around 0.3 makes raw cross-camera matching substantially harder than
// within-camera discrimination, which is what the trained shared space has
// to undo.
constexpr double kCameraMixGain = 1.5;

// Per-coordinate std of identity prototypes. Together with the appearance
// walk this sets how crowded the identity space is relative to
// within-identity drift.
constexpr double kPrototypeScale = 1.0;

// Identities come in small groups of look-alikes: archetypes far apart,
// group members offset from their archetype by this fraction of the
// prototype scale. Nearest wrong-identity neighbours are then plausibly
// similar rather than arbitrary.
constexpr int kLookalikeGroupSize = 4;
constexpr double kLookalikeRadius = 0.5;

// Offset gain on top of camera_shift_scale. Large offsets place each
// camera's appearance cloud in its own region of raw space, so a shared
// nonlinear map can recognize and undo that camera's distortion.
constexpr double kCameraOffsetGain = 6.0;

// Per-camera appearance distortion x -> x + scale*gain*(G x / sqrt(dim)) + offset.
// With scale = 0 the transform is exactly the identity.
struct CameraTransform {
    double scale = 0.0;
    Matrix mix;  // raw_dim x raw_dim, standard normal entries
    Vec offset;  // raw_dim, scaled by camera_shift_scale

    Vec apply(const Vec& x) const {
        Vec y = x;
        if (scale != 0.0) {
            const double c = scale * kCameraMixGain / std::sqrt(static_cast<double>(x.size()));
            for (int r = 0; r < mix.rows; ++r) {
                double s = 0.0;
                const double* row = mix.row(r);
                for (std::size_t j = 0; j < x.size(); ++j) s += row[j] * x[j];
                y[static_cast<std::size_t>(r)] += c * s;
            }
            for (std::size_t j = 0; j < x.size(); ++j) y[j] += offset[j];
        }
        return y;
    }
};

} // namespace detail

/// Synthesizes a corpus: one Gaussian prototype per identity, a fixed affine
/// distortion per camera, several tracklets per (identity, camera) with
/// independent frame noise. Hidden identities are recorded for evaluation.
inline Corpus generate_corpus(const GenConfig& cfg) {
    cfg.validate();
    rng::Engine eng(cfg.seed);

    const std::size_t dim = static_cast<std::size_t>(cfg.raw_dim);
    std::vector<Vec> prototypes(static_cast<std::size_t>(cfg.num_identities));
    Vec archetype;
    for (int id = 0; id < cfg.num_identities; ++id) {
        if (id % detail::kLookalikeGroupSize == 0)
            archetype = rng::normal_vector(eng, dim, detail::kPrototypeScale);
        Vec p = archetype;
        axpy(p, 1.0, rng::normal_vector(eng, dim, detail::kPrototypeScale * detail::kLookalikeRadius));
        prototypes[static_cast<std::size_t>(id)] = std::move(p);
    }

    std::vector<detail::CameraTransform> transforms(static_cast<std::size_t>(cfg.num_cameras));
    for (auto& tf : transforms) {
        tf.scale = cfg.camera_shift_scale;
        tf.mix = Matrix(cfg.raw_dim, cfg.raw_dim);
        for (auto& v : tf.mix.data) v = rng::normal(eng);
        tf.offset = rng::normal_vector(eng, dim, cfg.camera_shift_scale * detail::kCameraOffsetGain);
    }

    // Presence flags drawn up front in (camera, identity) order.
    std::vector<std::vector<bool>> present(static_cast<std::size_t>(cfg.num_cameras),
                                           std::vector<bool>(static_cast<std::size_t>(cfg.num_identities), false));
    for (int t = 0; t < cfg.num_cameras; ++t)
        for (int id = 0; id < cfg.num_identities; ++id)
            present[t][id] = rng::uniform01(eng) < cfg.presence_prob;
    // A camera with no identities would be degenerate; pin one deterministically.
    for (int t = 0; t < cfg.num_cameras; ++t) {
        bool any = false;
        for (int id = 0; id < cfg.num_identities; ++id) any = any || present[t][id];
        if (!any) present[t][t % cfg.num_identities] = true;
    }

    Corpus corpus;
    corpus.raw_dim = cfg.raw_dim;
    corpus.cameras.resize(static_cast<std::size_t>(cfg.num_cameras));
    for (int t = 0; t < cfg.num_cameras; ++t) {
        Camera& cam = corpus.cameras[static_cast<std::size_t>(t)];
        cam.index = t;
        for (int id = 0; id < cfg.num_identities; ++id) {
            if (!present[t][id]) continue;
            const int fragments =
                rng::uniform_int(eng, cfg.fragmentation_factor.min, cfg.fragmentation_factor.max);
            const Vec base = transforms[static_cast<std::size_t>(t)].apply(prototypes[static_cast<std::size_t>(id)]);
            // Appearance evolves as a random walk along the trajectory, and
            // fragments are consecutive time segments of that one walk. The
            // frames on either side of a fragment boundary are therefore
            // near-duplicates carrying different tracklet labels.
            Vec walk(dim, 0.0);
            for (int frag = 0; frag < fragments; ++frag) {
                Tracklet tr;
                tr.label = cam.num_tracklets();
                tr.gt_identity = id;
                const int nframes =
                    rng::uniform_int(eng, cfg.frames_per_tracklet.min, cfg.frames_per_tracklet.max);
                tr.frames.reserve(static_cast<std::size_t>(nframes));
                for (int f = 0; f < nframes; ++f) {
                    for (auto& v : walk) v += cfg.identity_spread * rng::normal(eng);
                    Vec frame = base;
                    for (std::size_t j = 0; j < dim; ++j) frame[j] += walk[j];
                    tr.frames.push_back(std::move(frame));
                }
                cam.tracklets.push_back(std::move(tr));
            }
        }
    }
    corpus.validate();
    return corpus;
}

} // namespace utal
