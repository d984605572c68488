#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "utal/batch.hpp"
#include "utal/errors.hpp"
#include "utal/model.hpp"
#include "utal/parallel.hpp"
#include "utal/vec.hpp"

// Per-camera tracklet discrimination: incrementally updated tracklet
// representations, a sparse K-NN affinity over them with a neighbourhood
// structure-aware scale, L1-normalized soft labels, and the soft
// cross-entropy loss those labels feed.

namespace utal {

constexpr double kSigmaFloor = 1e-12;

/// Sparse row as (column, value) pairs sorted by column.
struct SparseRow {
    std::vector<std::pair<int, double>> entries;

    double value_at(int col) const {
        for (const auto& [c, v] : entries)
            if (c == col) return v;
        return 0.0;
    }
    double sum() const {
        double s = 0.0;
        for (const auto& [c, v] : entries) s += v;
        return s;
    }
};

struct SparseMatrix {
    int cols = 0;
    std::vector<SparseRow> rows;

    int num_rows() const { return static_cast<int>(rows.size()); }

    static SparseMatrix identity(int n) {
        SparseMatrix m;
        m.cols = n;
        m.rows.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) m.rows[static_cast<std::size_t>(i)].entries = {{i, 1.0}};
        return m;
    }
};

/// Running tracklet representation: returns (s + alpha * mean(batch)) / (1 + alpha).
/// With alpha = 0 the representation is unchanged.
inline Vec update_repr(const Vec& s, std::span<const Vec> batch_embeddings, double alpha) {
    if (alpha < 0.0) throw ShapeError("update_repr: alpha must be non-negative");
    if (batch_embeddings.empty()) throw ShapeError("update_repr: empty batch slice");
    Vec mean(s.size(), 0.0);
    for (const Vec& e : batch_embeddings) {
        if (e.size() != s.size()) throw ShapeError("update_repr: embedding dimension mismatch");
        axpy(mean, 1.0, e);
    }
    const double inv_n = 1.0 / static_cast<double>(batch_embeddings.size());
    Vec out(s.size());
    const double scale = 1.0 / (1.0 + alpha);
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = scale * (s[i] + alpha * mean[i] * inv_n);
    return out;
}

namespace detail {

/// K nearest neighbours of each repr, self excluded, ties broken by
/// (distance, index) for determinism. Also returns squared distances.
inline std::vector<std::vector<std::pair<double, int>>> knn_sqdist(const ReprBank& reprs, int k) {
    const int n = static_cast<int>(reprs.size());
    std::vector<std::vector<std::pair<double, int>>> out(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        std::vector<std::pair<double, int>> cand;
        cand.reserve(static_cast<std::size_t>(n) - 1);
        for (int j = 0; j < n; ++j) {
            if (j == static_cast<int>(i)) continue;
            cand.emplace_back(squared_distance(reprs[i], reprs[static_cast<std::size_t>(j)]), j);
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        cand.resize(static_cast<std::size_t>(k));
        out[i] = std::move(cand);
    });
    return out;
}

inline void check_neighbourable(const ReprBank& reprs, int k) {
    if (k < 0) throw ShapeError("affinity: K must be non-negative");
    if (k == 0) return;
    if (reprs.size() < 2)
        throw DegenerateCameraError("affinity: camera with fewer than 2 tracklets cannot use K >= 1");
    if (k > static_cast<int>(reprs.size()) - 1)
        throw ShapeError("affinity: K exceeds number of other tracklets");
}

} // namespace detail

/// Mean squared distance from each tracklet to its K nearest neighbours,
/// floored at kSigmaFloor so coincident banks stay usable.
inline double compute_sigma2(const ReprBank& reprs, int k) {
    detail::check_neighbourable(reprs, k);
    if (k == 0) throw ShapeError("compute_sigma2: K must be at least 1");
    const auto knn = detail::knn_sqdist(reprs, k);
    double total = 0.0;
    for (const auto& row : knn)
        for (const auto& [d2, j] : row) total += d2;
    const double sigma2 = total / (static_cast<double>(reprs.size()) * static_cast<double>(k));
    return std::max(sigma2, kSigmaFloor);
}

/// A(i,j) = exp(-|s_i - s_j|^2 / sigma^2) for the K nearest neighbours of i,
/// zero elsewhere, with A(i,i) pinned to 1 so every row normalizes and K = 0
/// degenerates to exact one-hot labels.
inline SparseMatrix build_affinity(const ReprBank& reprs, int k) {
    const int n = static_cast<int>(reprs.size());
    if (k == 0) return SparseMatrix::identity(n);
    detail::check_neighbourable(reprs, k);
    const double sigma2 = compute_sigma2(reprs, k);
    const auto knn = detail::knn_sqdist(reprs, k);
    SparseMatrix a;
    a.cols = n;
    a.rows.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& entries = a.rows[static_cast<std::size_t>(i)].entries;
        entries.reserve(static_cast<std::size_t>(k) + 1);
        entries.emplace_back(i, 1.0);
        for (const auto& [d2, j] : knn[static_cast<std::size_t>(i)])
            entries.emplace_back(j, std::exp(-d2 / sigma2));
        std::sort(entries.begin(), entries.end(),
                  [](const auto& x, const auto& y) { return x.first < y.first; });
    }
    return a;
}

/// L1-normalizes each affinity row into a soft label distribution.
inline SparseMatrix soft_labels(const SparseMatrix& affinity) {
    SparseMatrix y = affinity;
    for (auto& row : y.rows) {
        const double s = row.sum();
        if (s <= 0.0) throw ShapeError("soft_labels: row with non-positive sum");
        for (auto& [c, v] : row.entries) v /= s;
    }
    return y;
}

struct LossGrad {
    double loss = 0.0;
    Vec grad;
};

/// Soft cross-entropy of one frame: -sum_j y(j) * log softmax(logits)_j via
/// max-subtracted log-sum-exp. Gradient w.r.t. logits is softmax - y.
inline LossGrad soft_ce_loss(const Vec& logits, const SparseRow& target) {
    if (!all_finite(logits)) throw NumericError("soft_ce_loss: non-finite logits");
    const std::size_t m = logits.size();
    double maxv = logits[0];
    for (double v : logits) maxv = std::max(maxv, v);
    double z = 0.0;
    Vec softmax(m);
    for (std::size_t j = 0; j < m; ++j) {
        softmax[j] = std::exp(logits[j] - maxv);
        z += softmax[j];
    }
    const double log_z = maxv + std::log(z);
    for (auto& v : softmax) v /= z;

    double loss = 0.0;
    double mass = 0.0;
    LossGrad out;
    out.grad = softmax;
    for (const auto& [j, w] : target.entries) {
        if (j < 0 || static_cast<std::size_t>(j) >= m)
            throw ShapeError("soft_ce_loss: target column out of range");
        if (w < 0.0) throw ShapeError("soft_ce_loss: negative target mass");
        loss -= w * (logits[static_cast<std::size_t>(j)] - log_z);
        mass += w;
        out.grad[static_cast<std::size_t>(j)] -= w;
    }
    if (std::abs(mass - 1.0) > 1e-6) throw ShapeError("soft_ce_loss: target does not sum to 1");
    out.loss = loss;
    return out;
}

struct PctdBatchResult {
    double loss = 0.0;
    /// d(loss)/d(logits) per frame in group-major order, already divided by
    /// the batch size.
    std::vector<Vec> logit_grads;
};

/// Mean soft cross-entropy over all frames in the batch. targets[t] holds
/// one soft label row per tracklet of camera t (row index = tracklet index).
inline PctdBatchResult pctd_batch_loss_with_embeddings(const EmbeddingModel& model, const Batch& batch,
                                                       std::span<const Vec> embeddings,
                                                       const std::vector<SparseMatrix>& targets) {
    const std::size_t n = batch.num_frames();
    if (embeddings.size() != n) throw ShapeError("pctd_batch_loss: embeddings size mismatch");
    if (n == 0) throw ShapeError("pctd_batch_loss: empty batch");
    PctdBatchResult out;
    out.logit_grads.resize(n);
    const double inv_n = 1.0 / static_cast<double>(n);
    std::size_t frame = 0;
    for (const auto& g : batch.groups) {
        if (g.camera < 0 || g.camera >= static_cast<int>(targets.size()))
            throw std::out_of_range("pctd_batch_loss: camera out of range");
        const SparseMatrix& cam_targets = targets[static_cast<std::size_t>(g.camera)];
        if (g.tracklet < 0 || g.tracklet >= cam_targets.num_rows())
            throw std::out_of_range("pctd_batch_loss: tracklet label out of range");
        const SparseRow& target = cam_targets.rows[static_cast<std::size_t>(g.tracklet)];
        for (std::size_t f = 0; f < g.frames.size(); ++f, ++frame) {
            const Vec logit = model.logits(embeddings[frame], g.camera);
            LossGrad lg = soft_ce_loss(logit, target);
            out.loss += lg.loss * inv_n;
            for (auto& v : lg.grad) v *= inv_n;
            out.logit_grads[frame] = std::move(lg.grad);
        }
    }
    return out;
}

inline PctdBatchResult pctd_batch_loss(const EmbeddingModel& model, const Batch& batch,
                                       const std::vector<SparseMatrix>& targets) {
    std::vector<Vec> embeddings;
    embeddings.reserve(batch.num_frames());
    for (const auto& g : batch.groups)
        for (const auto& f : g.frames) embeddings.push_back(model.forward(f));
    return pctd_batch_loss_with_embeddings(model, batch, embeddings, targets);
}

/// Connected components of the graph with an edge wherever the affinity in
/// either direction exceeds the threshold. Components come out sorted.
inline std::vector<std::vector<int>> mergeable_components(const SparseMatrix& affinity, double threshold) {
    const int n = affinity.num_rows();
    std::vector<int> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    std::vector<int> rank_(static_cast<std::size_t>(n), 0);
    auto find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    };
    auto unite = [&](int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (rank_[static_cast<std::size_t>(a)] < rank_[static_cast<std::size_t>(b)]) std::swap(a, b);
        parent[static_cast<std::size_t>(b)] = a;
        if (rank_[static_cast<std::size_t>(a)] == rank_[static_cast<std::size_t>(b)]) ++rank_[static_cast<std::size_t>(a)];
    };
    for (int i = 0; i < n; ++i)
        for (const auto& [j, v] : affinity.rows[static_cast<std::size_t>(i)].entries)
            if (j != i && v > threshold) unite(i, j);

    std::vector<std::vector<int>> components;
    std::vector<int> root_to_comp(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        const int r = find(i);
        if (root_to_comp[static_cast<std::size_t>(r)] < 0) {
            root_to_comp[static_cast<std::size_t>(r)] = static_cast<int>(components.size());
            components.emplace_back();
        }
        components[static_cast<std::size_t>(root_to_comp[static_cast<std::size_t>(r)])].push_back(i);
    }
    return components;
}

/// Debug dump: one "camera i j value" line per stored entry.
inline void dump_sparse_triples(std::ostream& out, int camera, const SparseMatrix& m) {
    char buf[64];
    for (int i = 0; i < m.num_rows(); ++i)
        for (const auto& [j, v] : m.rows[static_cast<std::size_t>(i)].entries) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << camera << ' ' << i << ' ' << j << ' ' << buf << '\n';
        }
}

} // namespace utal
