#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <unistd.h>

#include "fsed/audio.hpp"
#include "fsed/rng.hpp"

namespace fsed::test {

/// Directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("fsed_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline AudioClip sine(double freq, double seconds, int rate = kSampleRate, double amp = 0.5) {
    AudioClip c;
    c.sample_rate = rate;
    c.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
    for (std::size_t i = 0; i < c.samples.size(); ++i) {
        c.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate));
    }
    return c;
}

inline AudioClip noise(double seconds, std::uint64_t seed, double amp = 0.1) {
    Rng rng(seed);
    AudioClip c;
    c.samples.resize(static_cast<std::size_t>(std::llround(seconds * kSampleRate)));
    for (float& s : c.samples) s = static_cast<float>(amp * normal(rng));
    return c;
}

/// Relative error used by gradient checks: |a - n| / max(1e-8, |a| + |n|) * 2.
inline double rel_err(double analytic, double numeric) {
    const double denom = std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    return 2.0 * std::abs(analytic - numeric) / denom;
}

}  // namespace fsed::test
