#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "utal/batch.hpp"
#include "utal/errors.hpp"
#include "utal/model.hpp"
#include "utal/parallel.hpp"
#include "utal/pctd.hpp"
#include "utal/vec.hpp"

// Cross-camera tracklet association: self-discovered reciprocal nearest
// neighbour matches over the frozen representation banks, and the pull loss
// that moves in-batch tracklet means toward their matched representations.

namespace utal {

constexpr double kDistanceEps = 1e-8;

enum class MatchMode { TwoWay1NN, OneWay1NN, TwoWayKNN };

inline std::string to_string(MatchMode m) {
    switch (m) {
        case MatchMode::TwoWay1NN: return "two_way_1nn";
        case MatchMode::OneWay1NN: return "one_way_1nn";
        case MatchMode::TwoWayKNN: return "two_way_knn";
    }
    return "two_way_1nn";
}

inline MatchMode match_mode_from_string(const std::string& s) {
    if (s == "two_way_1nn") return MatchMode::TwoWay1NN;
    if (s == "one_way_1nn") return MatchMode::OneWay1NN;
    if (s == "two_way_knn") return MatchMode::TwoWayKNN;
    throw ConfigError("unknown ccta_mode: " + s);
}

struct TrackletRef {
    int camera = 0;
    int index = 0;

    bool operator==(const TrackletRef&) const = default;
    bool operator<(const TrackletRef& o) const {
        return camera != o.camera ? camera < o.camera : index < o.index;
    }
};

/// Matches per tracklet, strictly cross-camera. Two-way modes are symmetric
/// by construction.
struct MatchSet {
    MatchMode mode = MatchMode::TwoWay1NN;
    int knn = 1;
    std::vector<std::vector<std::vector<TrackletRef>>> matches; // [camera][tracklet]

    bool empty() const {
        for (const auto& cam : matches)
            for (const auto& refs : cam)
                if (!refs.empty()) return false;
        return true;
    }

    const std::vector<TrackletRef>& of(int camera, int index) const {
        return matches[static_cast<std::size_t>(camera)][static_cast<std::size_t>(index)];
    }

    /// Deduplicated unordered match pairs in canonical (low, high) order.
    std::vector<std::pair<TrackletRef, TrackletRef>> unordered_pairs() const {
        std::vector<std::pair<TrackletRef, TrackletRef>> pairs;
        for (std::size_t t = 0; t < matches.size(); ++t)
            for (std::size_t i = 0; i < matches[t].size(); ++i) {
                const TrackletRef self{static_cast<int>(t), static_cast<int>(i)};
                for (const TrackletRef& other : matches[t][i]) {
                    if (self < other)
                        pairs.emplace_back(self, other);
                    else
                        pairs.emplace_back(other, self);
                }
            }
        std::sort(pairs.begin(), pairs.end());
        pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
        return pairs;
    }
};

namespace detail {

/// k nearest tracklets of `anchor` pooled over all other cameras, ordered by
/// (distance, camera, index).
inline std::vector<TrackletRef> cross_camera_knn(const std::vector<ReprBank>& reprs, int anchor_cam,
                                                 int anchor_idx, int k) {
    const Vec& s = reprs[static_cast<std::size_t>(anchor_cam)][static_cast<std::size_t>(anchor_idx)];
    std::vector<std::pair<double, TrackletRef>> cand;
    for (std::size_t u = 0; u < reprs.size(); ++u) {
        if (static_cast<int>(u) == anchor_cam) continue;
        for (std::size_t j = 0; j < reprs[u].size(); ++j)
            cand.emplace_back(squared_distance(s, reprs[u][j]),
                              TrackletRef{static_cast<int>(u), static_cast<int>(j)});
    }
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [](const auto& a, const auto& b) {
                          return a.first != b.first ? a.first < b.first : a.second < b.second;
                      });
    std::vector<TrackletRef> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.push_back(cand[i].second);
    return out;
}

} // namespace detail

/// Discovers cross-camera matches over frozen representation banks.
/// two_way modes keep a pair only when each side lies in the other's
/// cross-camera k-NN set; one_way keeps every anchor's nearest neighbour.
inline MatchSet discover_matches(const std::vector<ReprBank>& reprs, MatchMode mode, int knn = 1) {
    if (reprs.size() < 2) throw ConfigError("discover_matches: needs at least 2 cameras");
    for (const auto& bank : reprs)
        if (bank.empty()) throw ConfigError("discover_matches: camera with no tracklets");
    const int k = mode == MatchMode::TwoWayKNN ? knn : 1;
    if (k < 1) throw ConfigError("discover_matches: knn must be at least 1");

    std::vector<std::vector<std::vector<TrackletRef>>> nn(reprs.size());
    std::vector<std::pair<int, int>> anchors;
    for (std::size_t t = 0; t < reprs.size(); ++t) {
        nn[t].resize(reprs[t].size());
        for (std::size_t i = 0; i < reprs[t].size(); ++i) anchors.emplace_back(static_cast<int>(t), static_cast<int>(i));
    }
    parallel_for(anchors.size(), [&](std::size_t a) {
        const auto [t, i] = anchors[a];
        nn[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] =
            detail::cross_camera_knn(reprs, t, i, k);
    });

    MatchSet ms;
    ms.mode = mode;
    ms.knn = k;
    ms.matches.resize(reprs.size());
    for (std::size_t t = 0; t < reprs.size(); ++t) ms.matches[t].resize(reprs[t].size());

    auto contains = [&nn](const TrackletRef& owner, const TrackletRef& needle) {
        const auto& set = nn[static_cast<std::size_t>(owner.camera)][static_cast<std::size_t>(owner.index)];
        return std::find(set.begin(), set.end(), needle) != set.end();
    };
    for (std::size_t t = 0; t < reprs.size(); ++t)
        for (std::size_t i = 0; i < reprs[t].size(); ++i) {
            const TrackletRef self{static_cast<int>(t), static_cast<int>(i)};
            for (const TrackletRef& other : nn[t][i]) {
                if (mode == MatchMode::OneWay1NN || contains(other, self))
                    ms.matches[t][i].push_back(other);
            }
        }
    return ms;
}

/// Pull loss for one tracklet: sum of Euclidean distances from the
/// differentiable in-batch mean embedding to each frozen matched
/// representation. The gradient denominator is clamped at kDistanceEps.
inline LossGrad ccta_loss(const Vec& mean_embedding, std::span<const Vec* const> match_reprs) {
    LossGrad out;
    out.grad.assign(mean_embedding.size(), 0.0);
    for (const Vec* s : match_reprs) {
        if (s->size() != mean_embedding.size()) throw ShapeError("ccta_loss: dimension mismatch");
        const double dist = euclidean_distance(mean_embedding, *s);
        out.loss += dist;
        const double denom = std::max(dist, kDistanceEps);
        for (std::size_t i = 0; i < mean_embedding.size(); ++i)
            out.grad[i] += (mean_embedding[i] - (*s)[i]) / denom;
    }
    return out;
}

struct CctaBatchResult {
    double loss = 0.0;
    int matched_tracklets = 0;
    /// d(loss)/d(embedding) per frame in group-major order; zero for frames
    /// of unmatched tracklets.
    std::vector<Vec> embed_grads;
};

/// Mean of per-tracklet pull losses over the in-batch tracklets that have
/// matches; zero when none do. Each frame of a matched tracklet receives an
/// equal share of its tracklet's gradient through the mean.
inline CctaBatchResult batch_ccta_loss_with_embeddings(const Batch& batch, std::span<const Vec> embeddings,
                                                       const MatchSet& match_set,
                                                       const std::vector<ReprBank>& reprs,
                                                       int embed_dim) {
    const std::size_t n = batch.num_frames();
    if (embeddings.size() != n) throw ShapeError("batch_ccta_loss: embeddings size mismatch");
    CctaBatchResult out;
    out.embed_grads.assign(n, Vec(static_cast<std::size_t>(embed_dim), 0.0));

    struct GroupTerm {
        std::size_t first_frame;
        std::size_t nframes;
        LossGrad lg;
    };
    std::vector<GroupTerm> terms;
    std::size_t frame = 0;
    for (const auto& g : batch.groups) {
        const std::size_t first = frame;
        frame += g.frames.size();
        const auto& refs = match_set.of(g.camera, g.tracklet);
        if (refs.empty()) continue;
        Vec mean(static_cast<std::size_t>(embed_dim), 0.0);
        for (std::size_t f = first; f < frame; ++f) axpy(mean, 1.0, embeddings[f]);
        for (auto& v : mean) v /= static_cast<double>(g.frames.size());
        std::vector<const Vec*> match_reprs;
        match_reprs.reserve(refs.size());
        for (const TrackletRef& r : refs)
            match_reprs.push_back(&reprs[static_cast<std::size_t>(r.camera)][static_cast<std::size_t>(r.index)]);
        terms.push_back({first, g.frames.size(), ccta_loss(mean, match_reprs)});
    }
    if (terms.empty()) return out;

    out.matched_tracklets = static_cast<int>(terms.size());
    const double inv_m = 1.0 / static_cast<double>(terms.size());
    for (const auto& term : terms) {
        out.loss += term.lg.loss * inv_m;
        const double share = inv_m / static_cast<double>(term.nframes);
        for (std::size_t f = term.first_frame; f < term.first_frame + term.nframes; ++f)
            axpy(out.embed_grads[f], share, term.lg.grad);
    }
    return out;
}

inline CctaBatchResult batch_ccta_loss(const EmbeddingModel& model, const Batch& batch,
                                       const MatchSet& match_set, const std::vector<ReprBank>& reprs) {
    std::vector<Vec> embeddings;
    embeddings.reserve(batch.num_frames());
    for (const auto& g : batch.groups)
        for (const auto& f : g.frames) embeddings.push_back(model.forward(f));
    return batch_ccta_loss_with_embeddings(batch, embeddings, match_set, reprs, model.cfg.embed_dim);
}

/// Pair dump consumed by the pair-precision diagnostic:
/// "epoch cam_a idx_a cam_b idx_b distance" per line.
inline void dump_match_pairs(std::ostream& out, int epoch, const MatchSet& ms,
                             const std::vector<ReprBank>& reprs) {
    char buf[64];
    for (const auto& [a, b] : ms.unordered_pairs()) {
        const double dist = euclidean_distance(reprs[static_cast<std::size_t>(a.camera)][static_cast<std::size_t>(a.index)],
                                               reprs[static_cast<std::size_t>(b.camera)][static_cast<std::size_t>(b.index)]);
        std::snprintf(buf, sizeof(buf), "%.17g", dist);
        out << epoch << ' ' << a.camera << ' ' << a.index << ' ' << b.camera << ' ' << b.index << ' '
            << buf << '\n';
    }
}

} // namespace utal
