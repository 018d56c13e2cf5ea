#pragma once

#include <span>
#include <vector>

#include "fsed/proposals.hpp"

namespace fsed {

/// One ground-truth event of a query, in episode-slot terms.
struct GtEvent {
    int slot = 0;        // index into the episode's class list
    double start_s = 0.0;
    double end_s = 0.0;
    double ebr_db = 0.0;

    [[nodiscard]] Interval frames() const { return {start_s / kFeatureFrameSeconds, end_s / kFeatureFrameSeconds}; }
};

/// Label per window (start frame, 128 spectrogram frames): the slot of an event
/// covering at least half of the window, else `no_event`. Among qualifying events
/// the larger coverage wins, then the earlier start.
std::vector<int> window_targets(std::span<const GtEvent> events, std::span<const int> starts, int no_event);

/// Slot of the ground truth with the best IoU when it reaches `threshold`, else `no_event`.
int interval_target(const Interval& region, std::span<const GtEvent> events, double threshold, int no_event);

}  // namespace fsed
