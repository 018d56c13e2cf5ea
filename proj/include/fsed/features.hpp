#pragma once

#include <cstddef>
#include <vector>

#include "fsed/audio.hpp"

namespace fsed {

/// Front-end parameters. Defaults: 25 ms Hann window, 10 ms hop, 64 mel bands over 0-8 kHz.
struct MelConfig {
    int sample_rate = kSampleRate;
    int window = 400;
    int hop = 160;
    int fft_size = 512;
    int num_bands = 64;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-10;
};

inline constexpr int kMelBands = 64;
inline constexpr double kFrameSeconds = 0.010;

/// Row-major (num_frames x 64) natural-log mel energies.
struct LogMelSpectrogram {
    std::vector<float> values;
    int num_frames = 0;
    int num_bands = kMelBands;

    [[nodiscard]] float at(int frame, int band) const {
        return values[static_cast<std::size_t>(frame) * num_bands + band];
    }
    [[nodiscard]] const float* row(int frame) const {
        return values.data() + static_cast<std::size_t>(frame) * num_bands;
    }
};

/// floor((num_samples - window) / hop) + 1; no centering or padding.
int frame_count(std::size_t num_samples, int window = 400, int hop = 160);

/// Triangular, area-normalized filters on the HTK mel scale; (num_bands x fft_size/2+1).
std::vector<double> mel_filterbank(const MelConfig& cfg = {});

LogMelSpectrogram log_mel(const AudioClip& clip, const MelConfig& cfg = {});

}  // namespace fsed
