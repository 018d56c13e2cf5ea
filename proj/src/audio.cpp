#include "fsed/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

namespace fsed {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open wav file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw Error("not a RIFF/WAVE file: " + path.string());
    }

    std::uint16_t format = 0;
    int channels = 0;
    int rate = 0;
    int bits = 0;
    const unsigned char* data = nullptr;
    std::size_t data_size = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::uint32_t size = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (avail < 16) throw Error("truncated fmt chunk: " + path.string());
            format = read_u16(chunk + 8);
            channels = read_u16(chunk + 10);
            rate = static_cast<int>(read_u32(chunk + 12));
            bits = read_u16(chunk + 22);
            if (format == kFormatExtensible && avail >= 26) {
                format = read_u16(chunk + 32);
            }
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = chunk + 8;
            data_size = avail;
        }
        pos = body + size + (size & 1u);
    }
    if (format == 0 || data == nullptr) throw Error("missing fmt or data chunk: " + path.string());
    if (channels <= 0 || rate <= 0) throw Error("invalid wav header: " + path.string());

    const int bytes_per_sample = bits / 8;
    if (bytes_per_sample <= 0) throw Error("invalid bit depth: " + path.string());
    const std::size_t count = data_size / static_cast<std::size_t>(bytes_per_sample);

    WavData wav;
    wav.channels = channels;
    wav.sample_rate = rate;
    wav.interleaved.resize(count - count % static_cast<std::size_t>(channels));
    for (std::size_t i = 0; i < wav.interleaved.size(); ++i) {
        const unsigned char* p = data + i * static_cast<std::size_t>(bytes_per_sample);
        float v = 0.0f;
        if (format == kFormatPcm) {
            switch (bits) {
                case 8: v = (static_cast<float>(p[0]) - 128.0f) / 128.0f; break;
                case 16: v = static_cast<float>(static_cast<std::int16_t>(read_u16(p))) / 32768.0f; break;
                case 24: {
                    std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
                    if (s & 0x800000) s |= ~0xffffff;
                    v = static_cast<float>(s) / 8388608.0f;
                    break;
                }
                case 32: v = static_cast<float>(static_cast<std::int32_t>(read_u32(p)) / 2147483648.0); break;
                default: throw Error("unsupported PCM bit depth: " + path.string());
            }
        } else if (format == kFormatFloat) {
            if (bits == 32) {
                v = std::bit_cast<float>(read_u32(p));
            } else if (bits == 64) {
                std::uint64_t u = static_cast<std::uint64_t>(read_u32(p)) |
                                  (static_cast<std::uint64_t>(read_u32(p + 4)) << 32);
                v = static_cast<float>(std::bit_cast<double>(u));
            } else {
                throw Error("unsupported float bit depth: " + path.string());
            }
        } else {
            throw Error("unsupported wav encoding: " + path.string());
        }
        wav.interleaved[i] = v;
    }
    return wav;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
    const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 4);
    std::vector<unsigned char> out;
    out.reserve(44 + data_bytes);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, kFormatFloat);
    put_u16(out, 1);
    put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 4);
    put_u16(out, 4);
    put_u16(out, 32);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_bytes);
    for (float s : clip.samples) put_u32(out, std::bit_cast<std::uint32_t>(s));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write wav file: " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

AudioClip to_mono(const WavData& wav) {
    AudioClip clip;
    clip.sample_rate = wav.sample_rate;
    const auto ch = static_cast<std::size_t>(wav.channels);
    const std::size_t frames = wav.interleaved.size() / ch;
    clip.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < ch; ++c) acc += wav.interleaved[i * ch + c];
        clip.samples[i] = static_cast<float>(acc / static_cast<double>(ch));
    }
    return clip;
}

AudioClip resample(const AudioClip& clip, int target_rate) {
    if (clip.samples.empty()) throw Error("empty audio");
    if (clip.sample_rate <= 0 || target_rate <= 0) throw Error("sample rate must be positive");
    if (clip.sample_rate == target_rate) return clip;

    const int g = std::gcd(clip.sample_rate, target_rate);
    const auto up = static_cast<std::int64_t>(target_rate / g);
    const auto down = static_cast<std::int64_t>(clip.sample_rate / g);

    // Cutoff relative to the input rate, a little below the lower Nyquist.
    const double rolloff = 0.95;
    const double cutoff = rolloff * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
    const int zero_crossings = 16;
    const int half_width = static_cast<int>(std::ceil(zero_crossings / cutoff));
    const double beta = 8.6;
    const double i0_beta = std::cyl_bessel_i(0.0, beta);

    // One filter per output phase; tap j covers input index k0 - half_width + 1 + j.
    const int taps = 2 * half_width;
    std::vector<double> table(static_cast<std::size_t>(up * taps));
    for (std::int64_t phase = 0; phase < up; ++phase) {
        const double frac = static_cast<double>(phase) / static_cast<double>(up);
        for (int j = 0; j < taps; ++j) {
            const double tau = frac + static_cast<double>(half_width - 1 - j);
            const double x = cutoff * tau;
            const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
            const double r = tau / static_cast<double>(half_width);
            const double window = std::abs(r) >= 1.0
                                      ? 0.0
                                      : std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / i0_beta;
            table[static_cast<std::size_t>(phase * taps + j)] = cutoff * sinc * window;
        }
    }

    const auto n_in = static_cast<std::int64_t>(clip.samples.size());
    const std::int64_t n_out = (n_in * up + down - 1) / down;
    AudioClip out;
    out.sample_rate = target_rate;
    out.samples.resize(static_cast<std::size_t>(n_out));
    for (std::int64_t n = 0; n < n_out; ++n) {
        const std::int64_t pos = n * down;
        const std::int64_t k0 = pos / up;
        const std::int64_t phase = pos % up;
        const double* h = &table[static_cast<std::size_t>(phase * taps)];
        double acc = 0.0;
        for (int j = 0; j < taps; ++j) {
            const std::int64_t k = k0 - half_width + 1 + j;
            if (k < 0 || k >= n_in) continue;
            acc += h[j] * clip.samples[static_cast<std::size_t>(k)];
        }
        out.samples[static_cast<std::size_t>(n)] = static_cast<float>(acc);
    }
    return out;
}

AudioClip load_audio(const std::filesystem::path& path) {
    AudioClip mono = to_mono(read_wav(path));
    if (mono.samples.empty()) throw Error("empty audio");
    return resample(mono, kSampleRate);
}

double rms(std::span<const float> samples) {
    if (samples.empty()) return 0.0;
    double acc = 0.0;
    for (float s : samples) acc += static_cast<double>(s) * s;
    return std::sqrt(acc / static_cast<double>(samples.size()));
}

std::uint64_t audio_hash(const AudioClip& clip) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint32_t word) {
        for (int i = 0; i < 4; ++i) {
            h ^= (word >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    mix(static_cast<std::uint32_t>(clip.sample_rate));
    for (float s : clip.samples) mix(std::bit_cast<std::uint32_t>(s));
    return h;
}

std::string hash_hex(std::uint64_t hash) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[hash & 0xf];
        hash >>= 4;
    }
    return out;
}

}  // namespace fsed
