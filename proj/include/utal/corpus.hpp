#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "utal/errors.hpp"
#include "utal/vec.hpp"

namespace utal {

/// A short single-camera track fragment: per-camera label, raw frame
/// features, and an optional hidden identity used only for evaluation and
/// the weakly supervised mode.
struct Tracklet {
    int label = 0;
    std::optional<int> gt_identity;
    std::vector<Vec> frames;
};

struct Camera {
    int index = 0;
    std::vector<Tracklet> tracklets;

    int num_tracklets() const { return static_cast<int>(tracklets.size()); }
};

/// Immutable after construction; shareable read-only across threads.
struct Corpus {
    int raw_dim = 0;
    std::vector<Camera> cameras;

    int num_cameras() const { return static_cast<int>(cameras.size()); }

    std::size_t total_tracklets() const {
        std::size_t n = 0;
        for (const auto& c : cameras) n += c.tracklets.size();
        return n;
    }

    std::size_t total_frames() const {
        std::size_t n = 0;
        for (const auto& c : cameras)
            for (const auto& t : c.tracklets) n += t.frames.size();
        return n;
    }

    bool all_gt_present() const {
        for (const auto& c : cameras)
            for (const auto& t : c.tracklets)
                if (!t.gt_identity.has_value()) return false;
        return true;
    }

    /// Throws ShapeError on any structural invariant violation: camera
    /// indices contiguous from 0 with at least two cameras, labels contiguous
    /// 0..M_t-1 in storage order, non-empty frame lists of width raw_dim.
    void validate() const {
        if (cameras.size() < 2) throw ShapeError("corpus: needs at least 2 cameras");
        if (raw_dim <= 0) throw ShapeError("corpus: raw_dim must be positive");
        for (std::size_t t = 0; t < cameras.size(); ++t) {
            const auto& cam = cameras[t];
            if (cam.index != static_cast<int>(t))
                throw ShapeError("corpus: camera indices must be contiguous from 0");
            for (std::size_t i = 0; i < cam.tracklets.size(); ++i) {
                const auto& tr = cam.tracklets[i];
                if (tr.label != static_cast<int>(i))
                    throw ShapeError("corpus: tracklet labels must be contiguous from 0 in camera " +
                                     std::to_string(t));
                if (tr.frames.empty())
                    throw ShapeError("corpus: tracklet with no frames in camera " + std::to_string(t));
                for (const auto& f : tr.frames)
                    if (static_cast<int>(f.size()) != raw_dim)
                        throw ShapeError("corpus: frame dimension mismatch in camera " + std::to_string(t));
            }
        }
    }
};

namespace detail {

inline nlohmann::json tracklet_to_json(int camera, const Tracklet& tr) {
    nlohmann::json j;
    j["camera"] = camera;
    j["label"] = tr.label;
    if (tr.gt_identity.has_value())
        j["gt_identity"] = *tr.gt_identity;
    else
        j["gt_identity"] = nullptr;
    j["frames"] = tr.frames;
    return j;
}

} // namespace detail

/// One JSON object per line: camera, label, gt_identity (int or null),
/// frames (array of arrays of floats). Cameras in index order, tracklets in
/// label order, so equal corpora serialize to equal bytes.
inline void save_corpus(const Corpus& corpus, std::ostream& out) {
    for (const auto& cam : corpus.cameras) {
        std::vector<const Tracklet*> ordered;
        ordered.reserve(cam.tracklets.size());
        for (const auto& tr : cam.tracklets) ordered.push_back(&tr);
        std::sort(ordered.begin(), ordered.end(),
                  [](const Tracklet* a, const Tracklet* b) { return a->label < b->label; });
        for (const Tracklet* tr : ordered)
            out << detail::tracklet_to_json(cam.index, *tr).dump() << '\n';
    }
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    save_corpus(corpus, out);
    if (!out) throw IoError("write failed: " + path);
}

inline Corpus load_corpus(std::istream& in, const std::string& origin = "<stream>") {
    std::map<int, std::vector<Tracklet>> by_camera;
    int raw_dim = -1;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(origin + ":" + std::to_string(lineno) + ": parse error: " + e.what());
        }
        Tracklet tr;
        int camera = 0;
        try {
            camera = j.at("camera").get<int>();
            tr.label = j.at("label").get<int>();
            const auto& gt = j.at("gt_identity");
            if (!gt.is_null()) tr.gt_identity = gt.get<int>();
            tr.frames = j.at("frames").get<std::vector<Vec>>();
        } catch (const nlohmann::json::exception& e) {
            throw IoError(origin + ":" + std::to_string(lineno) + ": parse error: " + e.what());
        }
        if (camera < 0)
            throw IoError(origin + ":" + std::to_string(lineno) + ": negative camera index");
        if (tr.frames.empty())
            throw IoError(origin + ":" + std::to_string(lineno) + ": tracklet has no frames");
        for (const auto& f : tr.frames) {
            if (raw_dim < 0) raw_dim = static_cast<int>(f.size());
            if (static_cast<int>(f.size()) != raw_dim)
                throw IoError(origin + ":" + std::to_string(lineno) + ": frame dimension " +
                              std::to_string(f.size()) + " inconsistent with raw_dim " +
                              std::to_string(raw_dim));
        }
        if (raw_dim == 0)
            throw IoError(origin + ":" + std::to_string(lineno) + ": zero-dimensional frames");
        by_camera[camera].push_back(std::move(tr));
    }
    if (by_camera.empty()) throw IoError(origin + ": no tracklets");

    Corpus corpus;
    corpus.raw_dim = raw_dim;
    // Densify camera indices and per-camera labels, keeping input order.
    for (auto& [cam_idx, tracklets] : by_camera) {
        (void)cam_idx;
        Camera cam;
        cam.index = static_cast<int>(corpus.cameras.size());
        std::stable_sort(tracklets.begin(), tracklets.end(),
                         [](const Tracklet& a, const Tracklet& b) { return a.label < b.label; });
        for (std::size_t i = 0; i + 1 < tracklets.size(); ++i)
            if (tracklets[i].label == tracklets[i + 1].label)
                throw IoError(origin + ": duplicate label " + std::to_string(tracklets[i].label) +
                              " in camera " + std::to_string(cam_idx));
        for (std::size_t i = 0; i < tracklets.size(); ++i) tracklets[i].label = static_cast<int>(i);
        cam.tracklets = std::move(tracklets);
        corpus.cameras.push_back(std::move(cam));
    }
    corpus.validate();
    return corpus;
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return load_corpus(in, path);
}

} // namespace utal
