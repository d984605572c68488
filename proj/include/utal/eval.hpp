#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "utal/ccta.hpp"
#include "utal/corpus.hpp"
#include "utal/errors.hpp"
#include "utal/model.hpp"
#include "utal/parallel.hpp"
#include "utal/pctd.hpp"
#include "utal/vec.hpp"

namespace utal {

/// One probe/gallery entry: a tracklet's camera, hidden identity, and its
/// test-time feature (mean of frame embeddings).
struct ProtocolEntry {
    int camera = 0;
    int index = 0;
    int gt = 0;
    Vec feature;
};

/// Single-query protocol: every tracklet is a probe ranked against all
/// tracklets of other cameras under Euclidean distance.
struct EvalProtocol {
    std::vector<ProtocolEntry> entries;
};

inline Vec mean_frame_embedding(const EmbeddingModel& model, const Tracklet& tr) {
    Vec mean(static_cast<std::size_t>(model.cfg.embed_dim), 0.0);
    for (const auto& f : tr.frames) axpy(mean, 1.0, model.forward(f));
    for (auto& v : mean) v /= static_cast<double>(tr.frames.size());
    return mean;
}

inline EvalProtocol make_protocol(const Corpus& corpus, const EmbeddingModel& model) {
    if (!corpus.all_gt_present())
        throw ConfigError("evaluation requires gt_identity on every tracklet");
    EvalProtocol p;
    for (const auto& cam : corpus.cameras)
        for (const auto& tr : cam.tracklets)
            p.entries.push_back({cam.index, tr.label, *tr.gt_identity, Vec{}});
    parallel_for(p.entries.size(), [&](std::size_t i) {
        const auto& e = p.entries[i];
        p.entries[i].feature = mean_frame_embedding(
            model, corpus.cameras[static_cast<std::size_t>(e.camera)].tracklets[static_cast<std::size_t>(e.index)]);
    });
    return p;
}

struct MetricsReport {
    double rank1 = 0.0;
    double rank5 = 0.0;
    double rank20 = 0.0;
    double map = 0.0;
    int probes = 0;
    int dropped = 0;
};

/// CMC and mAP. Galleries exclude the probe's own camera; probes with no
/// cross-camera entry of their identity are dropped and counted. Distance
/// ties rank by gallery position for determinism.
inline MetricsReport cmc_map(const EvalProtocol& protocol) {
    const std::size_t n = protocol.entries.size();
    std::vector<double> ap(n, -1.0);
    std::vector<int> first_rank(n, 0);

    parallel_for(n, [&](std::size_t p) {
        const auto& probe = protocol.entries[p];
        std::vector<std::pair<double, std::size_t>> ranked;
        ranked.reserve(n);
        std::size_t total_correct = 0;
        for (std::size_t gidx = 0; gidx < n; ++gidx) {
            const auto& g = protocol.entries[gidx];
            if (g.camera == probe.camera) continue;
            ranked.emplace_back(squared_distance(probe.feature, g.feature), gidx);
            if (g.gt == probe.gt) ++total_correct;
        }
        if (total_correct == 0) return; // dropped
        std::sort(ranked.begin(), ranked.end());
        double ap_sum = 0.0;
        std::size_t correct_seen = 0;
        int first = 0;
        for (std::size_t pos = 0; pos < ranked.size(); ++pos) {
            if (protocol.entries[ranked[pos].second].gt != probe.gt) continue;
            ++correct_seen;
            if (first == 0) first = static_cast<int>(pos) + 1;
            ap_sum += static_cast<double>(correct_seen) / static_cast<double>(pos + 1);
        }
        ap[p] = ap_sum / static_cast<double>(total_correct);
        first_rank[p] = first;
    });

    MetricsReport r;
    for (std::size_t p = 0; p < n; ++p) {
        if (ap[p] < 0.0) {
            ++r.dropped;
            continue;
        }
        ++r.probes;
        r.map += ap[p];
        if (first_rank[p] <= 1) r.rank1 += 1.0;
        if (first_rank[p] <= 5) r.rank5 += 1.0;
        if (first_rank[p] <= 20) r.rank20 += 1.0;
    }
    if (r.probes > 0) {
        r.rank1 /= r.probes;
        r.rank5 /= r.probes;
        r.rank20 /= r.probes;
        r.map /= r.probes;
    }
    return r;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
    return nlohmann::json{{"rank1", r.rank1}, {"rank5", r.rank5},   {"rank20", r.rank20},
                          {"map", r.map},     {"probes", r.probes}, {"dropped", r.dropped}};
}

namespace detail {

/// Cluster ids remapped to first-occurrence order, so equal partitions get
/// equal vectors regardless of their original labelling.
inline std::vector<int> canonical_assignment(const std::vector<int>& assign) {
    std::vector<int> out(assign.size());
    std::map<int, int> remap;
    for (std::size_t i = 0; i < assign.size(); ++i) {
        const auto [it, fresh] = remap.emplace(assign[i], static_cast<int>(remap.size()));
        out[i] = it->second;
    }
    return out;
}

} // namespace detail

/// Normalized mutual information of two cluster assignments over the same
/// elements, normalized by the arithmetic mean of the entropies. Identical
/// partitions return exactly 1.0 (which also resolves the 0/0 case of two
/// trivial partitions), and the value is bit-exact under argument swap.
inline double nmi(const std::vector<int>& assign_a, const std::vector<int>& assign_b) {
    if (assign_a.size() != assign_b.size()) throw ShapeError("nmi: partitions cover different element sets");
    if (assign_a.empty()) throw ShapeError("nmi: empty partitions");

    std::vector<int> a = detail::canonical_assignment(assign_a);
    std::vector<int> b = detail::canonical_assignment(assign_b);
    if (a == b) return 1.0;
    if (b < a) std::swap(a, b); // canonical argument order for exact symmetry

    const double n = static_cast<double>(a.size());
    std::map<int, int> count_a, count_b;
    std::map<std::pair<int, int>, int> joint;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++count_a[a[i]];
        ++count_b[b[i]];
        ++joint[{a[i], b[i]}];
    }
    auto entropy = [n](const std::map<int, int>& counts) {
        double h = 0.0;
        for (const auto& [k, c] : counts) {
            const double p = c / n;
            h -= p * std::log(p);
        }
        return h;
    };
    const double ha = entropy(count_a);
    const double hb = entropy(count_b);
    double mi = 0.0;
    for (const auto& [ab, c] : joint) {
        const double pab = c / n;
        const double pa = count_a.at(ab.first) / n;
        const double pb = count_b.at(ab.second) / n;
        mi += pab * std::log(pab / (pa * pb));
    }
    const double denom = 0.5 * (ha + hb);
    if (denom <= 0.0) return 1.0;
    return std::clamp(mi / denom, 0.0, 1.0);
}

/// Converts components over elements 0..n-1 to a cluster assignment vector.
inline std::vector<int> partition_to_assignment(const std::vector<std::vector<int>>& components, int n) {
    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    for (std::size_t c = 0; c < components.size(); ++c)
        for (int e : components[c]) {
            if (e < 0 || e >= n) throw ShapeError("partition: element out of range");
            if (assign[static_cast<std::size_t>(e)] != -1) throw ShapeError("partition: duplicate element");
            assign[static_cast<std::size_t>(e)] = static_cast<int>(c);
        }
    for (int a : assign)
        if (a == -1) throw ShapeError("partition: element not covered");
    return assign;
}

struct MergeReport {
    int original = 0;
    int mergeable = 0;    // tracklets absorbed into multi-tracklet components
    int trajectories = 0; // components with at least two tracklets
    double nmi = 0.0;
    std::vector<std::vector<std::vector<int>>> components_per_camera;
};

/// Builds per-camera affinities from trained representations, merges
/// tracklets by thresholded connected components, and scores the pooled
/// partition against the hidden (camera, identity) grouping.
inline MergeReport merge_and_score(const Corpus& corpus, const std::vector<ReprBank>& reprs, int k,
                                   double threshold) {
    if (reprs.size() != corpus.cameras.size()) throw ShapeError("merge_and_score: repr bank count mismatch");
    if (!corpus.all_gt_present()) throw ConfigError("merge_and_score requires gt_identity");
    MergeReport report;
    std::vector<int> pred_assign, gt_assign;
    int cluster_offset = 0;
    std::map<std::pair<int, int>, int> gt_clusters;

    for (std::size_t t = 0; t < corpus.cameras.size(); ++t) {
        const auto& bank = reprs[t];
        const int mt = static_cast<int>(bank.size());
        if (mt != corpus.cameras[t].num_tracklets())
            throw ShapeError("merge_and_score: repr bank size mismatch in camera " + std::to_string(t));
        const int k_eff = std::min(k, std::max(mt - 1, 0));
        const SparseMatrix a = build_affinity(bank, k_eff);
        auto components = mergeable_components(a, threshold);
        const auto assign = partition_to_assignment(components, mt);
        for (int i = 0; i < mt; ++i) {
            pred_assign.push_back(cluster_offset + assign[static_cast<std::size_t>(i)]);
            const int gt = *corpus.cameras[t].tracklets[static_cast<std::size_t>(i)].gt_identity;
            const auto key = std::make_pair(static_cast<int>(t), gt);
            auto [it, inserted] = gt_clusters.emplace(key, static_cast<int>(gt_clusters.size()));
            gt_assign.push_back(it->second);
        }
        cluster_offset += static_cast<int>(components.size());
        for (const auto& comp : components) {
            if (comp.size() >= 2) {
                report.mergeable += static_cast<int>(comp.size());
                ++report.trajectories;
            }
        }
        report.original += mt;
        report.components_per_camera.push_back(std::move(components));
    }
    report.nmi = nmi(pred_assign, gt_assign);
    return report;
}

/// Mean cosine similarity of soft label rows over all same-camera,
/// same-identity tracklet pairs; absent when no such pair exists.
inline std::optional<double> mps(const std::vector<SparseMatrix>& soft_label_banks, const Corpus& corpus) {
    if (soft_label_banks.size() != corpus.cameras.size())
        throw ShapeError("mps: soft label bank count mismatch");
    auto sparse_cosine = [](const SparseRow& a, const SparseRow& b) {
        double dot_ab = 0.0, na = 0.0, nb = 0.0;
        for (const auto& [c, v] : a.entries) {
            na += v * v;
            dot_ab += v * b.value_at(c);
        }
        for (const auto& [c, v] : b.entries) nb += v * v;
        if (na == 0.0 || nb == 0.0) return 0.0;
        return dot_ab / (std::sqrt(na) * std::sqrt(nb));
    };

    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t t = 0; t < corpus.cameras.size(); ++t) {
        const auto& cam = corpus.cameras[t];
        std::map<int, std::vector<int>> by_id;
        for (const auto& tr : cam.tracklets)
            if (tr.gt_identity.has_value()) by_id[*tr.gt_identity].push_back(tr.label);
        for (const auto& [id, members] : by_id)
            for (std::size_t i = 0; i < members.size(); ++i)
                for (std::size_t j = i + 1; j < members.size(); ++j) {
                    total += sparse_cosine(soft_label_banks[t].rows[static_cast<std::size_t>(members[i])],
                                           soft_label_banks[t].rows[static_cast<std::size_t>(members[j])]);
                    ++pairs;
                }
    }
    if (pairs == 0) return std::nullopt;
    return total / static_cast<double>(pairs);
}

struct PairPrecisionReport {
    int count = 0;
    std::optional<double> precision;
};

/// Number of deduplicated matched pairs and the fraction whose endpoints
/// share a hidden identity.
inline PairPrecisionReport pair_precision(const MatchSet& match_set, const Corpus& corpus) {
    PairPrecisionReport report;
    const auto pairs = match_set.unordered_pairs();
    report.count = static_cast<int>(pairs.size());
    if (pairs.empty()) return report;
    if (!corpus.all_gt_present()) return report; // count only, precision absent
    int correct = 0;
    for (const auto& [a, b] : pairs) {
        const auto& ta = corpus.cameras[static_cast<std::size_t>(a.camera)].tracklets[static_cast<std::size_t>(a.index)];
        const auto& tb = corpus.cameras[static_cast<std::size_t>(b.camera)].tracklets[static_cast<std::size_t>(b.index)];
        if (*ta.gt_identity == *tb.gt_identity) ++correct;
    }
    report.precision = static_cast<double>(correct) / static_cast<double>(pairs.size());
    return report;
}

} // namespace utal
