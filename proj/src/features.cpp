#include "fsed/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <unordered_map>

namespace fsed {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct FftwBuffer {
    void operator()(void* p) const { fftw_free(p); }
};

// Plans are created once per size under a lock (planning is not thread-safe);
// execution through the new-array interface is.
fftw_plan plan_for(int n) {
    static std::mutex mutex;
    static std::unordered_map<int, fftw_plan> plans;
    std::lock_guard lock(mutex);
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;
    std::unique_ptr<double, FftwBuffer> in(fftw_alloc_real(static_cast<std::size_t>(n)));
    std::unique_ptr<fftw_complex, FftwBuffer> out(fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1)));
    fftw_plan plan = fftw_plan_dft_r2c_1d(n, in.get(), out.get(), FFTW_ESTIMATE);
    plans.emplace(n, plan);
    return plan;
}

}  // namespace

int frame_count(std::size_t num_samples, int window, int hop) {
    if (window <= 0 || hop <= 0) throw Error("window and hop must be positive");
    if (num_samples < static_cast<std::size_t>(window)) {
        throw Error("clip shorter than one analysis window");
    }
    return static_cast<int>((num_samples - static_cast<std::size_t>(window)) / static_cast<std::size_t>(hop)) + 1;
}

std::vector<double> mel_filterbank(const MelConfig& cfg) {
    const int bins = cfg.fft_size / 2 + 1;
    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(static_cast<std::size_t>(cfg.num_bands + 2));
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const double m = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(cfg.num_bands + 1);
        edges[i] = mel_to_hz(m);
    }

    std::vector<double> fb(static_cast<std::size_t>(cfg.num_bands * bins), 0.0);
    for (int b = 0; b < cfg.num_bands; ++b) {
        const double lo = edges[static_cast<std::size_t>(b)];
        const double mid = edges[static_cast<std::size_t>(b + 1)];
        const double hi = edges[static_cast<std::size_t>(b + 2)];
        const double norm = 2.0 / (hi - lo);
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            double w = 0.0;
            if (f > lo && f <= mid) {
                w = (f - lo) / (mid - lo);
            } else if (f > mid && f < hi) {
                w = (hi - f) / (hi - mid);
            }
            fb[static_cast<std::size_t>(b * bins + k)] = w * norm;
        }
    }
    return fb;
}

LogMelSpectrogram log_mel(const AudioClip& clip, const MelConfig& cfg) {
    if (clip.sample_rate != cfg.sample_rate) {
        throw Error("log_mel expects audio at the configured sample rate");
    }
    const int frames = frame_count(clip.samples.size(), cfg.window, cfg.hop);
    const int bins = cfg.fft_size / 2 + 1;

    static const auto default_fb = mel_filterbank(MelConfig{});
    const bool is_default = cfg.fft_size == 512 && cfg.num_bands == 64 && cfg.fmin == 0.0 &&
                            cfg.fmax == 8000.0 && cfg.sample_rate == kSampleRate;
    const std::vector<double> custom_fb = is_default ? std::vector<double>{} : mel_filterbank(cfg);
    const std::vector<double>& fb = is_default ? default_fb : custom_fb;

    std::vector<double> window(static_cast<std::size_t>(cfg.window));
    for (int i = 0; i < cfg.window; ++i) {
        window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.window);
    }

    fftw_plan plan = plan_for(cfg.fft_size);
    std::unique_ptr<double, FftwBuffer> in(fftw_alloc_real(static_cast<std::size_t>(cfg.fft_size)));
    std::unique_ptr<fftw_complex, FftwBuffer> out(fftw_alloc_complex(static_cast<std::size_t>(bins)));
    std::vector<double> power(static_cast<std::size_t>(bins));

    LogMelSpectrogram spec;
    spec.num_frames = frames;
    spec.num_bands = cfg.num_bands;
    spec.values.resize(static_cast<std::size_t>(frames) * cfg.num_bands);

    for (int t = 0; t < frames; ++t) {
        const float* src = clip.samples.data() + static_cast<std::size_t>(t) * cfg.hop;
        double* buf = in.get();
        for (int i = 0; i < cfg.window; ++i) buf[i] = window[static_cast<std::size_t>(i)] * src[i];
        std::fill(buf + cfg.window, buf + cfg.fft_size, 0.0);
        fftw_execute_dft_r2c(plan, buf, out.get());
        for (int k = 0; k < bins; ++k) {
            const double re = out.get()[k][0];
            const double im = out.get()[k][1];
            power[static_cast<std::size_t>(k)] = re * re + im * im;
        }
        for (int b = 0; b < cfg.num_bands; ++b) {
            const double* w = fb.data() + static_cast<std::size_t>(b) * bins;
            double e = 0.0;
            for (int k = 0; k < bins; ++k) e += w[k] * power[static_cast<std::size_t>(k)];
            spec.values[static_cast<std::size_t>(t) * cfg.num_bands + b] =
                static_cast<float>(std::log(std::max(e, cfg.log_floor)));
        }
    }
    return spec;
}

}  // namespace fsed
