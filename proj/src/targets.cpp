#include "fsed/targets.hpp"

#include <algorithm>

#include "fsed/backbones.hpp"
#include "fsed/features.hpp"

namespace fsed {

std::vector<int> window_targets(std::span<const GtEvent> events, std::span<const int> starts, int no_event) {
    std::vector<int> labels(starts.size(), no_event);
    for (std::size_t w = 0; w < starts.size(); ++w) {
        const double ws = starts[w] * kFrameSeconds;
        const double we = (starts[w] + kWindowFrames) * kFrameSeconds;
        const double half = 0.5 * kWindowFrames * kFrameSeconds;
        double best = -1.0;
        double best_start = 0.0;
        for (const GtEvent& e : events) {
            const double cover = std::min(we, e.end_s) - std::max(ws, e.start_s);
            // Tolerance absorbs the seconds/frames round trip.
            if (cover < half - 1e-9) continue;
            if (cover > best + 1e-12 || (cover > best - 1e-12 && e.start_s < best_start)) {
                best = cover;
                best_start = e.start_s;
                labels[w] = e.slot;
            }
        }
    }
    return labels;
}

int interval_target(const Interval& region, std::span<const GtEvent> events, double threshold, int no_event) {
    double best = 0.0;
    int label = no_event;
    for (const GtEvent& e : events) {
        const double v = iou(region, e.frames());
        if (v > best) {
            best = v;
            label = e.slot;
        }
    }
    return best >= threshold ? label : no_event;
}

}  // namespace fsed
