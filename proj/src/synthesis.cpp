#include "fsed/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fsed {

namespace {

AudioClip random_crop(const AudioClip& clip, double min_s, double max_s, Rng& rng) {
    const auto max_len = static_cast<std::size_t>(std::llround(max_s * clip.sample_rate));
    if (clip.samples.size() <= max_len) return clip;
    const double seconds = uniform(rng, min_s, max_s);
    const auto len = std::min(clip.samples.size(),
                              static_cast<std::size_t>(std::llround(seconds * clip.sample_rate)));
    const auto start = static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(clip.samples.size() - len)));
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(start + len));
    return out;
}

void apply_fades(std::vector<float>& x, int rate) {
    const std::size_t fade = std::min<std::size_t>(static_cast<std::size_t>(rate / 100), x.size() / 2);
    for (std::size_t i = 0; i < fade; ++i) {
        const auto w = static_cast<float>(0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / fade));
        x[i] *= w;
        x[x.size() - 1 - i] *= w;
    }
}

void normalize_rms(std::vector<float>& x, double target) {
    const double r = rms(x);
    if (r <= 0.0) return;
    const double g = target / r;
    for (float& v : x) v = static_cast<float>(v * g);
}

// RBJ constant-peak band-pass biquad.
void bandpass(std::vector<double>& x, double centre_hz, double bandwidth_hz, int rate) {
    const double w0 = 2.0 * std::numbers::pi * centre_hz / rate;
    const double q = std::max(0.3, centre_hz / std::max(bandwidth_hz, 1.0));
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0;
    const double b2 = -alpha / a0;
    const double a1 = -2.0 * std::cos(w0) / a0;
    const double a2 = (1.0 - alpha) / a0;
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    for (double& v : x) {
        const double y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = v;
        y2 = y1;
        y1 = y;
        v = y;
    }
}

}  // namespace

AudioClip crop_support(const AudioClip& clip, Rng& rng) {
    if (clip.samples.size() < static_cast<std::size_t>(clip.sample_rate)) {
        throw Error("support clip too short");
    }
    return random_crop(clip, 1.0, 5.0, rng);
}

AudioClip crop_vox_event(const AudioClip& clip, Rng& rng) {
    if (clip.samples.size() < static_cast<std::size_t>(2 * clip.sample_rate)) {
        throw Error("speaker clip too short");
    }
    return random_crop(clip, 2.0, 5.0, rng);
}

double ebr_gain(double event_rms, double bg_rms, double ebr_db) {
    if (!(event_rms > 0.0) || !(bg_rms > 0.0)) throw Error("degenerate signal");
    return std::pow(10.0, ebr_db / 20.0) * bg_rms / event_rms;
}

QueryMix synthesize_query_stems(const SourceClip& background, const std::vector<EventSpec>& events,
                                Rng& rng, double query_seconds) {
    const int rate = background.audio.sample_rate;
    const auto length = static_cast<std::size_t>(std::llround(query_seconds * rate));
    if (events.empty()) throw Error("a query needs at least one event");
    if (background.audio.samples.size() < length) throw Error("background shorter than a query");

    QueryMix mix;
    const auto bg_start = static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(background.audio.samples.size() - length)));
    mix.background.sample_rate = rate;
    mix.background.samples.assign(background.audio.samples.begin() + static_cast<std::ptrdiff_t>(bg_start),
                                  background.audio.samples.begin() + static_cast<std::ptrdiff_t>(bg_start + length));

    struct Placed {
        std::size_t start;
        std::size_t len;
    };
    std::vector<Placed> placed;
    constexpr int kRetries = 100;
    for (const EventSpec& ev : events) {
        const std::size_t len = ev.clip->audio.samples.size();
        if (len == 0 || len > length) throw Error("placement infeasible");
        bool ok = false;
        std::size_t start = 0;
        for (int attempt = 0; attempt < kRetries && !ok; ++attempt) {
            start = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(length - len)));
            ok = std::none_of(placed.begin(), placed.end(), [&](const Placed& p) {
                return start < p.start + p.len && p.start < start + len;
            });
        }
        if (!ok) throw Error("placement infeasible");
        placed.push_back({start, len});
    }

    mix.query.audio = mix.background;
    mix.query.background_id = background.origin;
    for (std::size_t e = 0; e < events.size(); ++e) {
        const auto& src = events[e].clip->audio.samples;
        const Placed p = placed[e];
        const double bg_rms = rms(std::span<const float>(mix.background.samples).subspan(p.start, p.len));
        const double g = ebr_gain(rms(src), bg_rms, events[e].ebr_db);
        AudioClip scaled;
        scaled.sample_rate = rate;
        scaled.samples.resize(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            scaled.samples[i] = static_cast<float>(g * src[i]);
            mix.query.audio.samples[p.start + i] += scaled.samples[i];
        }
        mix.scaled_events.push_back(std::move(scaled));
        mix.event_offsets.push_back(p.start);
        mix.query.annotations.push_back({events[e].clip->class_id,
                                         static_cast<double>(p.start) / rate,
                                         static_cast<double>(p.start + p.len) / rate, events[e].ebr_db});
    }

    float peak = 0.0f;
    for (float v : mix.query.audio.samples) peak = std::max(peak, std::abs(v));
    if (peak > 1.0f) {
        mix.rescale = 1.0 / peak;
        for (float& v : mix.query.audio.samples) v = static_cast<float>(v * mix.rescale);
    }
    std::sort(mix.query.annotations.begin(), mix.query.annotations.end(),
              [](const EventAnnotation& a, const EventAnnotation& b) { return a.start_s < b.start_s; });
    return mix;
}

QueryClip synthesize_query(const SourceClip& background, const std::vector<EventSpec>& events, Rng& rng,
                           double query_seconds) {
    return synthesize_query_stems(background, events, rng, query_seconds).query;
}

double measured_ebr_db(const QueryMix& mix, std::size_t event) {
    const auto& ev = mix.scaled_events.at(event);
    const std::size_t start = mix.event_offsets.at(event);
    const double ev_rms = rms(ev.samples);
    const double bg_rms = rms(std::span<const float>(mix.background.samples).subspan(start, ev.samples.size()));
    return 20.0 * std::log10(ev_rms / bg_rms);
}

ProceduralClass procedural_class(int index) {
    ProceduralClass cls;
    cls.class_id = "proc" + std::to_string(index);
    cls.kind = static_cast<SignalKind>(index % 4);
    // Low-discrepancy spread of centre frequencies over 300 Hz - 4 kHz.
    const double u = std::fmod(0.5 + 0.6180339887498949 * index, 1.0);
    cls.freq_hz = 300.0 * std::pow(4000.0 / 300.0, u);
    cls.freq_end_hz = cls.freq_hz < 2000.0 ? cls.freq_hz * 1.8 : cls.freq_hz / 1.8;
    cls.bandwidth_hz = 0.3 * cls.freq_hz;
    cls.mod_hz = 3.0 + 2.0 * (index % 5);
    return cls;
}

AudioClip render_procedural(const ProceduralClass& cls, double seconds, Rng& rng) {
    const int rate = kSampleRate;
    const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
    const double jitter = 1.0 + uniform(rng, -0.02, 0.02);
    const double phase0 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    AudioClip clip;
    clip.sample_rate = rate;
    clip.samples.resize(n);

    const double f0 = cls.freq_hz * jitter;
    const double f1 = cls.freq_end_hz * jitter;
    const double dur = static_cast<double>(n) / rate;
    switch (cls.kind) {
        case SignalKind::Tone:
            for (std::size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / rate;
                clip.samples[i] = static_cast<float>(std::sin(2.0 * std::numbers::pi * f0 * t + phase0));
            }
            break;
        case SignalKind::Chirp:
            for (std::size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / rate;
                const double phase = 2.0 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t);
                clip.samples[i] = static_cast<float>(std::sin(phase + phase0));
            }
            break;
        case SignalKind::NoiseBurst: {
            std::vector<double> x(n);
            for (double& v : x) v = normal(rng);
            bandpass(x, f0, cls.bandwidth_hz, rate);
            bandpass(x, f0, cls.bandwidth_hz, rate);
            for (std::size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<float>(x[i]);
            break;
        }
        case SignalKind::AmTone:
            for (std::size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / rate;
                const double env = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * cls.mod_hz * t);
                clip.samples[i] = static_cast<float>(env * std::sin(2.0 * std::numbers::pi * f0 * t + phase0));
            }
            break;
    }
    apply_fades(clip.samples, rate);
    normalize_rms(clip.samples, 0.1);
    return clip;
}

std::vector<SourceClip> procedural_corpus(int num_classes, int clips_per_class, std::uint64_t seed) {
    if (num_classes < 1) throw Error("procedural corpus needs at least one class");
    std::vector<SourceClip> corpus;
    corpus.reserve(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(std::max(clips_per_class, 0)));
    for (int c = 0; c < num_classes; ++c) {
        const ProceduralClass cls = procedural_class(c);
        for (int j = 0; j < clips_per_class; ++j) {
            Rng rng(derive_seed({seed, 0x636c6970ull, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(j)}));
            const double seconds = uniform(rng, 1.0, 5.0);
            corpus.push_back({cls.class_id, render_procedural(cls, seconds, rng),
                              "procedural:" + cls.class_id + "/" + std::to_string(j)});
        }
    }
    return corpus;
}

std::vector<SourceClip> procedural_backgrounds(int count, double seconds, std::uint64_t seed) {
    std::vector<SourceClip> out;
    const auto n = static_cast<std::size_t>(std::llround(seconds * kSampleRate));
    for (int b = 0; b < count; ++b) {
        Rng rng(derive_seed({seed, 0x62676e64ull, static_cast<std::uint64_t>(b)}));
        const double white_mix = uniform(rng, 0.0, 0.3);
        const double mod_depth = uniform(rng, 0.0, 0.3);
        const double mod_rate = uniform(rng, 0.05, 0.3);
        const double mod_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        AudioClip clip;
        clip.samples.resize(n);
        // Paul Kellet's pink filter.
        double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = normal(rng);
            b0 = 0.99886 * b0 + w * 0.0555179;
            b1 = 0.99332 * b1 + w * 0.0750759;
            b2 = 0.96900 * b2 + w * 0.1538520;
            b3 = 0.86650 * b3 + w * 0.3104856;
            b4 = 0.55000 * b4 + w * 0.5329522;
            b5 = -0.7616 * b5 - w * 0.0168980;
            const double pink = (b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362) * 0.11;
            b6 = w * 0.115926;
            const double t = static_cast<double>(i) / kSampleRate;
            const double env = 1.0 + mod_depth * std::sin(2.0 * std::numbers::pi * mod_rate * t + mod_phase);
            clip.samples[i] = static_cast<float>(env * (pink + white_mix * 0.1 * w));
        }
        normalize_rms(clip.samples, 0.05);
        out.push_back({"background", std::move(clip), "procedural:bg" + std::to_string(b)});
    }
    return out;
}

}  // namespace fsed
