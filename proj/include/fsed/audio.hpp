#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsed {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kSampleRate = 16000;

/// Mono audio in [-1, 1] at a positive sample rate.
struct AudioClip {
    std::vector<float> samples;
    int sample_rate = kSampleRate;

    [[nodiscard]] std::size_t size() const { return samples.size(); }
    [[nodiscard]] double duration() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

/// Multi-channel PCM as read from disk, interleaved.
struct WavData {
    std::vector<float> interleaved;
    int channels = 1;
    int sample_rate = 0;
};

WavData read_wav(const std::filesystem::path& path);

/// Writes 32-bit IEEE float mono WAV.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

AudioClip to_mono(const WavData& wav);

/// Band-limited polyphase resampling (Kaiser-windowed sinc).
AudioClip resample(const AudioClip& clip, int target_rate);

/// Reads any supported WAV file and normalizes it to 16 kHz mono.
AudioClip load_audio(const std::filesystem::path& path);

double rms(std::span<const float> samples);

/// FNV-1a over the raw sample bits; used for regeneration checks.
std::uint64_t audio_hash(const AudioClip& clip);

std::string hash_hex(std::uint64_t hash);

}  // namespace fsed
