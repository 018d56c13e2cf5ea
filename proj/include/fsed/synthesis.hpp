#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "fsed/audio.hpp"
#include "fsed/rng.hpp"

namespace fsed {

inline constexpr double kQuerySeconds = 30.0;
inline constexpr std::array<double, 5> kEbrLevels{-12.0, -6.0, 0.0, 6.0, 12.0};

struct SourceClip {
    std::string class_id;
    AudioClip audio;
    std::string origin;  // "<corpus>:<file key>"
};

struct EventAnnotation {
    std::string class_id;
    double start_s = 0.0;
    double end_s = 0.0;
    double ebr_db = 0.0;
};

struct QueryClip {
    AudioClip audio;
    std::vector<EventAnnotation> annotations;  // sorted by start
    std::string background_id;
};

/// A query together with the components it was mixed from; `rescale` is the
/// global gain applied afterwards (1 unless the mix left [-1, 1]).
struct QueryMix {
    QueryClip query;
    AudioClip background;
    std::vector<AudioClip> scaled_events;
    std::vector<std::size_t> event_offsets;
    double rescale = 1.0;
};

struct EventSpec {
    const SourceClip* clip = nullptr;
    double ebr_db = 0.0;
};

/// Clips longer than 5 s get a uniform [1, 5] s crop at a uniform position.
AudioClip crop_support(const AudioClip& clip, Rng& rng);

/// Speaker-clip variant: clips longer than 5 s get a uniform [2, 5] s crop.
AudioClip crop_vox_event(const AudioClip& clip, Rng& rng);

/// Gain putting an event `ebr_db` above the background it covers (RMS ratio).
double ebr_gain(double event_rms, double bg_rms, double ebr_db);

QueryMix synthesize_query_stems(const SourceClip& background, const std::vector<EventSpec>& events,
                                Rng& rng, double query_seconds = kQuerySeconds);

QueryClip synthesize_query(const SourceClip& background, const std::vector<EventSpec>& events, Rng& rng,
                           double query_seconds = kQuerySeconds);

/// Measured event-to-background ratio of one mixed event, before any global rescale.
double measured_ebr_db(const QueryMix& mix, std::size_t event);

// Procedural corpus: self-contained event classes and backgrounds for desk-scale runs.

enum class SignalKind { Tone, Chirp, NoiseBurst, AmTone };

struct ProceduralClass {
    std::string class_id;
    SignalKind kind = SignalKind::Tone;
    double freq_hz = 440.0;      // tone / carrier / chirp start / band centre
    double freq_end_hz = 880.0;  // chirp end
    double bandwidth_hz = 200.0; // noise burst
    double mod_hz = 6.0;         // amplitude modulation rate
};

ProceduralClass procedural_class(int index);

AudioClip render_procedural(const ProceduralClass& cls, double seconds, Rng& rng);

std::vector<SourceClip> procedural_corpus(int num_classes, int clips_per_class, std::uint64_t seed);

/// Pink-ish noise beds, each `seconds` long.
std::vector<SourceClip> procedural_backgrounds(int count, double seconds, std::uint64_t seed);

}  // namespace fsed
