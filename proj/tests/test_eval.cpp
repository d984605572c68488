#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "utal/datagen.hpp"
#include "utal/eval.hpp"
#include "utal/rng.hpp"

#include "oracles.hpp"

using namespace utal;

namespace {

using oracles::random_protocol;

} // namespace

TEST_CASE("cmc_map: identical-feature twins rank first") {
    EvalProtocol p;
    for (int id = 0; id < 3; ++id)
        for (int cam = 0; cam < 2; ++cam)
            p.entries.push_back({cam, id, id, Vec{static_cast<double>(id) * 10.0, 1.0}});
    const MetricsReport r = cmc_map(p);
    REQUIRE(r.probes == 6);
    REQUIRE(r.dropped == 0);
    REQUIRE(r.rank1 == 1.0);
    REQUIRE(r.map == 1.0);
}

TEST_CASE("cmc_map: probe with its single correct entry at rank 2 has AP 0.5") {
    EvalProtocol p;
    p.entries.push_back({0, 0, 7, Vec{0.0}});      // probe of interest
    p.entries.push_back({1, 0, 9, Vec{1.0}});      // wrong, closer
    p.entries.push_back({1, 1, 7, Vec{2.0}});      // correct, rank 2
    p.entries.push_back({1, 2, 8, Vec{3.0}});      // wrong
    const MetricsReport r = cmc_map(p);
    // Probe (0,0): correct at rank 2 of 3, AP 1/2, misses rank-1.
    // Probe (1,1): the camera-0 entry is its whole gallery, AP 1, rank 1.
    // Probes (1,0) and (1,2) have no cross-camera identity mate: dropped.
    REQUIRE(r.probes == 2);
    REQUIRE(r.dropped == 2);
    REQUIRE_THAT(r.rank1, Catch::Matchers::WithinAbs(0.5, 1e-15));
    REQUIRE(r.rank5 == 1.0);
    REQUIRE_THAT(r.map, Catch::Matchers::WithinAbs(0.75, 1e-15));
}

TEST_CASE("cmc_map: matches the brute-force oracle on random instances") {
    rng::Engine eng(211);
    for (int trial = 0; trial < 100; ++trial) {
        const EvalProtocol p = random_protocol(eng, 20);
        const MetricsReport got = cmc_map(p);
        const MetricsReport want = oracles::cmc_map(p);
        REQUIRE(got.probes == want.probes);
        REQUIRE(got.dropped == want.dropped);
        REQUIRE_THAT(got.rank1, Catch::Matchers::WithinAbs(want.rank1, 1e-10));
        REQUIRE_THAT(got.rank5, Catch::Matchers::WithinAbs(want.rank5, 1e-10));
        REQUIRE_THAT(got.rank20, Catch::Matchers::WithinAbs(want.rank20, 1e-10));
        REQUIRE_THAT(got.map, Catch::Matchers::WithinAbs(want.map, 1e-10));
    }
}

TEST_CASE("cmc monotonicity and map bounds on random instances") {
    rng::Engine eng(223);
    for (int trial = 0; trial < 50; ++trial) {
        const MetricsReport r = cmc_map(random_protocol(eng, 20));
        REQUIRE(r.rank1 <= r.rank5);
        REQUIRE(r.rank5 <= r.rank20);
        REQUIRE(r.map >= 0.0);
        REQUIRE(r.map <= 1.0);
        REQUIRE(r.rank1 >= 0.0);
        REQUIRE(r.rank20 <= 1.0);
    }
}

TEST_CASE("nmi: identical partitions") {
    const std::vector<int> a{0, 0, 1, 2, 2};
    REQUIRE(nmi(a, a) == 1.0);
}

TEST_CASE("nmi: one cluster against singletons") {
    const std::vector<int> one(5, 0);
    const std::vector<int> singletons{0, 1, 2, 3, 4};
    REQUIRE(nmi(one, singletons) == 0.0);
}

TEST_CASE("nmi: all singletons against all singletons is 1") {
    const std::vector<int> s{0, 1, 2, 3};
    REQUIRE(nmi(s, s) == 1.0);
}

TEST_CASE("nmi: hand-derived three-element example") {
    // {{1,2},{3}} vs {{1},{2,3}}
    const std::vector<int> a{0, 0, 1};
    const std::vector<int> b{0, 1, 1};
    REQUIRE_THAT(nmi(a, b), Catch::Matchers::WithinAbs(0.2740175421212808, 1e-10));
}

TEST_CASE("nmi: symmetric and equal to the contingency oracle") {
    rng::Engine eng(227);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng::below(eng, 19));
        std::vector<int> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            a[static_cast<std::size_t>(i)] = static_cast<int>(rng::below(eng, 4));
            b[static_cast<std::size_t>(i)] = static_cast<int>(rng::below(eng, 4));
        }
        const double got = nmi(a, b);
        REQUIRE(got == nmi(b, a));
        REQUIRE_THAT(got, Catch::Matchers::WithinAbs(oracles::nmi(a, b), 1e-10));
        REQUIRE(got >= 0.0);
        REQUIRE(got <= 1.0);
    }
}

TEST_CASE("nmi: mismatched element sets") {
    REQUIRE_THROWS_AS(nmi(std::vector<int>{0, 1}, std::vector<int>{0, 1, 2}), ShapeError);
}

namespace {

Corpus fragment_corpus() {
    GenConfig cfg;
    cfg.num_cameras = 2;
    cfg.num_identities = 4;
    cfg.raw_dim = 3;
    cfg.frames_per_tracklet = {2, 2};
    cfg.fragmentation_factor = {2, 2};
    cfg.identity_spread = 0.01;
    cfg.camera_shift_scale = 0.1;
    cfg.seed = 77;
    return generate_corpus(cfg);
}

} // namespace

TEST_CASE("merge_and_score: coincident fragments merge perfectly") {
    const Corpus corpus = fragment_corpus();
    // representations: same vector for fragments of one identity, far apart otherwise
    std::vector<ReprBank> reprs;
    for (const auto& cam : corpus.cameras) {
        ReprBank bank;
        for (const auto& tr : cam.tracklets)
            bank.push_back(Vec{static_cast<double>(*tr.gt_identity) * 100.0, 0.0});
        reprs.push_back(std::move(bank));
    }
    const MergeReport report = merge_and_score(corpus, reprs, 4, 0.5);
    REQUIRE(report.nmi == 1.0);
    REQUIRE(report.original == static_cast<int>(corpus.total_tracklets()));
    REQUIRE(report.trajectories == 2 * 4); // every (identity, camera) pair, fragmentation 2
    REQUIRE(report.mergeable == report.original);
}

TEST_CASE("merge_and_score: K=0 leaves every tracklet alone") {
    const Corpus corpus = fragment_corpus();
    std::vector<ReprBank> reprs;
    for (const auto& cam : corpus.cameras) {
        ReprBank bank;
        for (const auto& tr : cam.tracklets)
            bank.push_back(Vec{static_cast<double>(tr.label), 1.0});
        reprs.push_back(std::move(bank));
    }
    const MergeReport report = merge_and_score(corpus, reprs, 0, 0.5);
    REQUIRE(report.mergeable == 0);
    REQUIRE(report.trajectories == 0);
    // singleton partition scored against the fragmented ground truth
    REQUIRE(report.nmi < 1.0);
    REQUIRE(report.nmi > 0.0);
}

TEST_CASE("merge_and_score: counts reconcile with the partition") {
    const Corpus corpus = fragment_corpus();
    rng::Engine eng(229);
    std::vector<ReprBank> reprs;
    for (const auto& cam : corpus.cameras) {
        ReprBank bank;
        for (int i = 0; i < cam.num_tracklets(); ++i) bank.push_back(rng::normal_vector(eng, 2));
        reprs.push_back(std::move(bank));
    }
    const MergeReport report = merge_and_score(corpus, reprs, 3, 0.5);
    int mergeable = 0, trajectories = 0, covered = 0;
    for (const auto& cam_comps : report.components_per_camera)
        for (const auto& comp : cam_comps) {
            covered += static_cast<int>(comp.size());
            if (comp.size() >= 2) {
                ++trajectories;
                mergeable += static_cast<int>(comp.size());
            }
        }
    REQUIRE(covered == report.original);
    REQUIRE(mergeable == report.mergeable);
    REQUIRE(trajectories == report.trajectories);
}

TEST_CASE("mps: identical soft label rows give 1") {
    const Corpus corpus = fragment_corpus();
    std::vector<SparseMatrix> banks;
    for (const auto& cam : corpus.cameras) {
        SparseMatrix m;
        m.cols = cam.num_tracklets();
        m.rows.resize(static_cast<std::size_t>(cam.num_tracklets()));
        for (auto& row : m.rows) row.entries = {{0, 0.5}, {1, 0.5}};
        banks.push_back(std::move(m));
    }
    const auto v = mps(banks, corpus);
    REQUIRE(v.has_value());
    REQUIRE_THAT(*v, Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("mps: one-hot labels of distinct fragments are orthogonal") {
    const Corpus corpus = fragment_corpus();
    std::vector<SparseMatrix> banks;
    for (const auto& cam : corpus.cameras) banks.push_back(SparseMatrix::identity(cam.num_tracklets()));
    const auto v = mps(banks, corpus);
    REQUIRE(v.has_value());
    REQUIRE(*v == 0.0);
}

TEST_CASE("mps: hand-evaluated cosine") {
    // rows [0.5, 0.5, 0] and [0.5, 0, 0.5] -> cosine 0.5
    Corpus corpus;
    corpus.raw_dim = 1;
    corpus.cameras.resize(2);
    for (int t = 0; t < 2; ++t) {
        corpus.cameras[static_cast<std::size_t>(t)].index = t;
        for (int i = 0; i < (t == 0 ? 3 : 1); ++i) {
            Tracklet tr;
            tr.label = i;
            tr.gt_identity = t == 0 ? (i < 2 ? 0 : 1) : 0;
            tr.frames = {Vec{0.0}};
            corpus.cameras[static_cast<std::size_t>(t)].tracklets.push_back(std::move(tr));
        }
    }
    // the only same-identity pair is tracklets 0 and 1 of camera 0
    std::vector<SparseMatrix> banks(2);
    banks[0].cols = 3;
    banks[0].rows.resize(3);
    banks[0].rows[0].entries = {{0, 0.5}, {1, 0.5}};
    banks[0].rows[1].entries = {{0, 0.5}, {2, 0.5}};
    banks[0].rows[2].entries = {{2, 1.0}};
    banks[1].cols = 1;
    banks[1].rows.resize(1);
    banks[1].rows[0].entries = {{0, 1.0}};
    const auto v = mps(banks, corpus);
    REQUIRE(v.has_value());
    REQUIRE_THAT(*v, Catch::Matchers::WithinAbs(0.5, 1e-12));
}

TEST_CASE("mps: absent when no same-identity pair exists") {
    GenConfig cfg;
    cfg.num_cameras = 2;
    cfg.num_identities = 3;
    cfg.raw_dim = 2;
    cfg.fragmentation_factor = {1, 1};
    cfg.frames_per_tracklet = {1, 1};
    cfg.seed = 5;
    const Corpus corpus = generate_corpus(cfg);
    std::vector<SparseMatrix> banks;
    for (const auto& cam : corpus.cameras) banks.push_back(SparseMatrix::identity(cam.num_tracklets()));
    REQUIRE_FALSE(mps(banks, corpus).has_value());
}

TEST_CASE("pair_precision: counting and fractions") {
    const Corpus corpus = fragment_corpus();
    MatchSet ms;
    ms.matches.resize(2);
    for (int t = 0; t < 2; ++t) ms.matches[static_cast<std::size_t>(t)].resize(
        corpus.cameras[static_cast<std::size_t>(t)].tracklets.size());

    // all-correct single pair (identities align because generation is deterministic)
    const int id0 = *corpus.cameras[0].tracklets[0].gt_identity;
    int partner = -1;
    for (const auto& tr : corpus.cameras[1].tracklets)
        if (*tr.gt_identity == id0) partner = tr.label;
    REQUIRE(partner >= 0);
    ms.matches[0][0] = {TrackletRef{1, partner}};
    PairPrecisionReport r = pair_precision(ms, corpus);
    REQUIRE(r.count == 1);
    REQUIRE(r.precision == 1.0);

    // add two wrong pairs: 3 pairs, 2 wrong -> precision 1/3
    int wrong = -1;
    for (const auto& tr : corpus.cameras[1].tracklets)
        if (*tr.gt_identity != id0) wrong = tr.label;
    REQUIRE(wrong >= 0);
    ms.matches[0][1] = {TrackletRef{1, wrong}};
    ms.matches[0][2] = {TrackletRef{1, wrong}};
    r = pair_precision(ms, corpus);
    REQUIRE(r.count == 3);
    const bool second_correct = *corpus.cameras[0].tracklets[1].gt_identity ==
                                *corpus.cameras[1].tracklets[static_cast<std::size_t>(wrong)].gt_identity;
    const bool third_correct = *corpus.cameras[0].tracklets[2].gt_identity ==
                               *corpus.cameras[1].tracklets[static_cast<std::size_t>(wrong)].gt_identity;
    const double expected = (1.0 + (second_correct ? 1.0 : 0.0) + (third_correct ? 1.0 : 0.0)) / 3.0;
    REQUIRE_THAT(*r.precision, Catch::Matchers::WithinAbs(expected, 1e-15));
}

TEST_CASE("pair_precision: empty match set") {
    const Corpus corpus = fragment_corpus();
    MatchSet ms;
    ms.matches.resize(2);
    for (int t = 0; t < 2; ++t)
        ms.matches[static_cast<std::size_t>(t)].resize(corpus.cameras[static_cast<std::size_t>(t)].tracklets.size());
    const PairPrecisionReport r = pair_precision(ms, corpus);
    REQUIRE(r.count == 0);
    REQUIRE_FALSE(r.precision.has_value());
}
