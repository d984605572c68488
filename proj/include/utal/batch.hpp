#pragma once

#include <cstddef>
#include <vector>

#include "utal/vec.hpp"

namespace utal {

/// All frames sampled from one tracklet in one mini-batch.
struct BatchGroup {
    int camera = 0;
    int tracklet = 0;
    std::vector<Vec> frames;
};

/// A balanced mini-batch. Groups are unique per (camera, tracklet); frames
/// flatten in group-major order wherever per-frame results are indexed.
struct Batch {
    std::vector<BatchGroup> groups;

    std::size_t num_frames() const {
        std::size_t n = 0;
        for (const auto& g : groups) n += g.frames.size();
        return n;
    }

    std::vector<const Vec*> flat_frames() const {
        std::vector<const Vec*> out;
        out.reserve(num_frames());
        for (const auto& g : groups)
            for (const auto& f : g.frames) out.push_back(&f);
        return out;
    }
};

} // namespace utal
