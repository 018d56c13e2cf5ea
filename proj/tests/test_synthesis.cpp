#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include "fsed/corpus.hpp"
#include "fsed/dataset.hpp"
#include "fsed/features.hpp"
#include "fsed/synthesis.hpp"
#include "helpers.hpp"

using namespace fsed;

namespace {

// Samples encode their own index so a crop reveals its offset.
AudioClip indexed(double seconds) {
    AudioClip c;
    c.samples.resize(static_cast<std::size_t>(seconds * kSampleRate));
    for (std::size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = static_cast<float>(i) / 262144.0f;
    return c;
}

bool is_contiguous_slice(const AudioClip& crop, const AudioClip& src) {
    if (crop.samples.empty() || crop.samples.size() > src.samples.size()) return false;
    const auto off = static_cast<std::size_t>(crop.samples[0] * 262144.0f);
    if (off + crop.samples.size() > src.samples.size()) return false;
    return std::equal(crop.samples.begin(), crop.samples.end(), src.samples.begin() + static_cast<std::ptrdiff_t>(off));
}

// Kolmogorov-Smirnov statistic against Uniform[lo, hi].
double ks_uniform(std::vector<double> xs, double lo, double hi) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double cdf = std::clamp((xs[i] - lo) / (hi - lo), 0.0, 1.0);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - cdf, cdf - static_cast<double>(i) / n});
    }
    return d;
}

// Minimal PCM16 writer, independent of the library's float writer.
void write_pcm16(const std::filesystem::path& path, const std::vector<float>& interleaved, int channels, int rate) {
    std::ofstream f(path, std::ios::binary);
    auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
    const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
    f.write("RIFF", 4);
    u32(36 + data_bytes);
    f.write("WAVEfmt ", 8);
    u32(16);
    u16(1);
    u16(static_cast<std::uint16_t>(channels));
    u32(static_cast<std::uint32_t>(rate));
    u32(static_cast<std::uint32_t>(rate * channels * 2));
    u16(static_cast<std::uint16_t>(channels * 2));
    u16(16);
    f.write("data", 4);
    u32(data_bytes);
    for (float s : interleaved) u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(s * 32767.0f))));
}

SourceClip as_source(AudioClip a, const std::string& cls) { return {cls, std::move(a), "test:" + cls}; }

}  // namespace

TEST_SUITE("synthesis") {

TEST_CASE("crop_support examples") {
    Rng rng(1);
    const AudioClip four = indexed(4.0);
    CHECK(crop_support(four, rng).samples == four.samples);
    const AudioClip ten = indexed(10.0);
    for (int i = 0; i < 200; ++i) {
        const AudioClip c = crop_support(ten, rng);
        CHECK(c.duration() >= 1.0);
        CHECK(c.duration() <= 5.0);
        CHECK(is_contiguous_slice(c, ten));
    }
    CHECK_THROWS_WITH_AS(crop_support(indexed(0.5), rng), "support clip too short", Error);
}

TEST_CASE("crop_support lengths are uniform on [1, 5] s") {
    Rng rng(2);
    AudioClip ten;
    ten.samples.assign(160000, 0.1f);
    std::vector<double> lengths;
    for (int i = 0; i < 10000; ++i) lengths.push_back(crop_support(ten, rng).duration());
    // Critical value for p = 0.01 at n = 10000.
    CHECK(ks_uniform(lengths, 1.0, 5.0) < 1.628 / 100.0);
}

TEST_CASE("crop_vox_event examples") {
    Rng rng(3);
    const AudioClip three = indexed(3.0);
    CHECK(crop_vox_event(three, rng).samples == three.samples);
    const AudioClip twenty = indexed(15.0);
    std::vector<double> lengths;
    for (int i = 0; i < 10000; ++i) {
        const AudioClip c = crop_vox_event(twenty, rng);
        lengths.push_back(c.duration());
        if (i < 100) CHECK(is_contiguous_slice(c, twenty));
    }
    CHECK(*std::min_element(lengths.begin(), lengths.end()) >= 2.0);
    CHECK(*std::max_element(lengths.begin(), lengths.end()) <= 5.0);
    CHECK(ks_uniform(lengths, 2.0, 5.0) < 1.628 / 100.0);
    CHECK_THROWS_AS(crop_vox_event(indexed(1.5), rng), Error);
}

TEST_CASE("ebr_gain examples") {
    CHECK(ebr_gain(0.1, 0.1, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ebr_gain(0.2, 0.1, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ebr_gain(0.1, 0.1, -6.0) == doctest::Approx(std::pow(10.0, -0.3)).epsilon(1e-12));
    CHECK(ebr_gain(0.1, 0.1, -6.0) == doctest::Approx(0.5012).epsilon(1e-4));
    CHECK_THROWS_WITH_AS(ebr_gain(0.0, 0.1, 0.0), "degenerate signal", Error);
    CHECK_THROWS_WITH_AS(ebr_gain(0.1, 0.0, 0.0), "degenerate signal", Error);
}

TEST_CASE("synthesize_query bookkeeping and errors") {
    Rng rng(4);
    SourceClip silent_bg{"background", AudioClip{std::vector<float>(480000, 0.0f), kSampleRate}, "bg:zero"};
    const SourceClip ev = as_source(test::sine(500.0, 2.0), "tone");
    CHECK_THROWS_WITH_AS(synthesize_query(silent_bg, {{&ev, 0.0}}, rng), "degenerate signal", Error);

    const SourceClip bg{"background", test::noise(31.0, 9, 0.05), "bg:noise"};
    const QueryClip q = synthesize_query(bg, {{&ev, 6.0}}, rng);
    CHECK(q.audio.samples.size() == 480000);
    REQUIRE(q.annotations.size() == 1);
    CHECK(q.annotations[0].end_s - q.annotations[0].start_s == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(q.annotations[0].class_id == "tone");
    CHECK(q.annotations[0].ebr_db == 6.0);
    CHECK(q.background_id == "bg:noise");

    const SourceClip huge = as_source(test::sine(500.0, 31.0), "huge");
    CHECK_THROWS_WITH_AS(synthesize_query(bg, {{&huge, 0.0}}, rng), "placement infeasible", Error);
    const SourceClip ten = as_source(test::sine(500.0, 10.0), "ten");
    // Four 10 s events never fit into 30 s.
    CHECK_THROWS_WITH_AS(synthesize_query(bg, {{&ten, 0.0}, {&ten, 0.0}, {&ten, 0.0}, {&ten, 0.0}}, rng),
                         "placement infeasible", Error);
}

TEST_CASE("three 5 s events never overlap over 1000 seeds and honour their EBR") {
    const SourceClip bg{"background", test::noise(35.0, 10, 0.05), "bg"};
    const SourceClip a = as_source(test::sine(300.0, 5.0), "a");
    const SourceClip b = as_source(test::noise(5.0, 77, 0.2), "b");
    const SourceClip c = as_source(test::sine(1200.0, 5.0, kSampleRate, 0.9), "c");
    int overlaps = 0;
    double worst_ebr = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        const double e = kEbrLevels[seed % 5];
        const QueryMix mix = synthesize_query_stems(bg, {{&a, e}, {&b, -e}, {&c, 12.0}}, rng);
        const auto& ann = mix.query.annotations;
        for (std::size_t i = 0; i < ann.size(); ++i) {
            CHECK(ann[i].start_s >= 0.0);
            CHECK(ann[i].end_s <= 30.0);
            for (std::size_t j = i + 1; j < ann.size(); ++j) {
                if (ann[i].start_s < ann[j].end_s && ann[j].start_s < ann[i].end_s) ++overlaps;
            }
        }
        for (std::size_t i = 0; i < mix.scaled_events.size(); ++i) {
            const double target = i == 0 ? e : i == 1 ? -e : 12.0;
            worst_ebr = std::max(worst_ebr, std::abs(measured_ebr_db(mix, i) - target));
        }
    }
    CHECK(overlaps == 0);
    CHECK(worst_ebr <= 0.1);
}

TEST_CASE("loud mixes are rescaled globally without moving annotations") {
    const SourceClip bg{"background", test::noise(31.0, 12, 0.3), "bg"};
    const SourceClip ev = as_source(test::sine(700.0, 3.0, kSampleRate, 0.9), "loud");
    Rng r1(5);
    Rng r2(5);
    const QueryMix mix = synthesize_query_stems(bg, {{&ev, 12.0}}, r1);
    const QueryClip q = synthesize_query(bg, {{&ev, 12.0}}, r2);
    CHECK(mix.rescale < 1.0);
    const float peak = *std::max_element(q.audio.samples.begin(), q.audio.samples.end(),
                                         [](float x, float y) { return std::abs(x) < std::abs(y); });
    CHECK(std::abs(peak) <= 1.0f);
    CHECK(q.annotations[0].start_s == mix.query.annotations[0].start_s);
}

TEST_CASE("procedural corpus counts, lengths and determinism") {
    const auto corpus = procedural_corpus(5, 10, 42);
    CHECK(corpus.size() == 50);
    std::map<std::string, int> per_class;
    for (const auto& c : corpus) {
        ++per_class[c.class_id];
        CHECK(c.audio.sample_rate == kSampleRate);
        CHECK(c.audio.duration() >= 1.0);
        CHECK(c.audio.duration() <= 5.0);
    }
    CHECK(per_class.size() == 5);
    for (const auto& [cls, n] : per_class) CHECK(n == 10);
    const auto again = procedural_corpus(5, 10, 42);
    for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(audio_hash(corpus[i].audio) == audio_hash(again[i].audio));
    const auto other = procedural_corpus(5, 10, 43);
    CHECK(audio_hash(other[0].audio) != audio_hash(corpus[0].audio));
}

TEST_CASE("procedural tones at 440 Hz and 880 Hz have distinct dominant bands") {
    ProceduralClass lo;
    lo.kind = SignalKind::Tone;
    lo.freq_hz = 440.0;
    ProceduralClass hi = lo;
    hi.freq_hz = 880.0;
    Rng rng(1);
    const auto sa = log_mel(render_procedural(lo, 1.0, rng));
    const auto sb = log_mel(render_procedural(hi, 1.0, rng));
    auto band = [](const LogMelSpectrogram& s) {
        const float* r = s.row(s.num_frames / 2);
        return std::max_element(r, r + 64) - r;
    };
    CHECK(band(sa) != band(sb));
}

TEST_CASE("ingest_corpus flat layout, resampling and errors") {
    test::TempDir dir("ingest");
    for (const char* cls : {"dog", "rain"}) {
        std::filesystem::create_directories(dir.path() / cls);
        for (int i = 0; i < 3; ++i) {
            write_wav(dir.path() / cls / ("clip" + std::to_string(i) + ".wav"), test::sine(200.0 + 100 * i, 1.5));
        }
    }
    // 44.1 kHz stereo PCM16 with opposite-sign channels plus a DC offset on the left.
    std::vector<float> stereo;
    for (int i = 0; i < 44100 * 2; ++i) {
        const float s = 0.3f * static_cast<float>(std::sin(2.0 * std::numbers::pi * 300.0 * i / 44100.0));
        stereo.push_back(s + 0.2f);
        stereo.push_back(-s + 0.2f);
    }
    write_pcm16(dir.path() / "rain" / "stereo.wav", stereo, 2, 44100);
    std::ofstream(dir.path() / "rain" / "broken.wav") << "not audio";

    const auto clips = ingest_corpus(dir.path(), CorpusLayout::Flat);
    CHECK(clips.size() == 7);
    const auto it = std::find_if(clips.begin(), clips.end(), [](const SourceClip& c) { return c.origin.find("stereo") != std::string::npos; });
    REQUIRE(it != clips.end());
    CHECK(it->class_id == "rain");
    CHECK(it->audio.sample_rate == 16000);
    CHECK(std::abs(static_cast<long>(it->audio.samples.size()) - 32000) <= 1);
    // Channels cancel except for the DC term.
    CHECK(it->audio.samples[16000] == doctest::Approx(0.2).epsilon(0.01));
    CHECK(std::is_sorted(clips.begin(), clips.end(), [](const SourceClip& a, const SourceClip& b) { return a.origin < b.origin; }));

    CHECK_THROWS_WITH_AS(ingest_corpus(dir.path() / "nope", CorpusLayout::Flat), doctest::Contains("corpus not found"), Error);
}

TEST_CASE("split presets") {
    CHECK(SynthConfig::esc_case().class_split.train == 30);
    CHECK(SynthConfig::esc_case().class_split.val == 10);
    CHECK(SynthConfig::esc_case().class_split.test == 10);
    CHECK(SynthConfig::vox_case().class_split.train == 4417);
    CHECK(SynthConfig::vox_case().class_split.val == 1473);
    CHECK(SynthConfig::vox_case().class_split.test == 1473);
    CHECK(SynthConfig::esc_case().background_split.total() == 1122);
    CHECK(SynthConfig{}.episodes.train == 25000);
}

}  // TEST_SUITE

namespace {

SynthConfig tiny_config() {
    SynthConfig cfg;
    cfg.n_way = 3;
    cfg.k_shot = 2;
    cfg.queries_per_episode = 3;
    cfg.episodes = {3, 2, 2};
    cfg.class_split = {4, 3, 3};
    cfg.background_split = {2, 1, 1};
    cfg.procedural_classes = 10;
    cfg.procedural_clips_per_class = 4;
    cfg.procedural_background_seconds = 31.0;
    cfg.seed = 5;
    return cfg;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("generated dataset respects episode and split invariants") {
    const SynthConfig cfg = tiny_config();
    const Corpora corpora = load_corpora(cfg);
    test::TempDir dir("ds");
    const DatasetManifest m = generate_dataset(cfg, corpora, 99, dir.path());
    CHECK(m.episodes.size() == 7);
    for (int a = 0; a < 3; ++a) {
        for (int b = a + 1; b < 3; ++b) {
            for (const auto& id : m.class_splits[static_cast<std::size_t>(a)]) {
                CHECK(std::count(m.class_splits[static_cast<std::size_t>(b)].begin(), m.class_splits[static_cast<std::size_t>(b)].end(), id) == 0);
            }
            for (const auto& id : m.background_pools[static_cast<std::size_t>(a)]) {
                CHECK(std::count(m.background_pools[static_cast<std::size_t>(b)].begin(), m.background_pools[static_cast<std::size_t>(b)].end(), id) == 0);
            }
        }
    }
    for (const auto& rec : m.episodes) {
        const auto& pool = m.class_splits[static_cast<std::size_t>(rec.split)];
        CHECK(rec.classes.size() == 3);
        CHECK(std::set<std::string>(rec.classes.begin(), rec.classes.end()).size() == 3);
        for (const auto& c : rec.classes) CHECK(std::count(pool.begin(), pool.end(), c) == 1);
        const Episode ep = load_episode(rec, dir.path());
        REQUIRE(ep.support.size() == 3);
        for (const auto& group : ep.support) {
            CHECK(group.size() == 2);
            for (const auto& clip : group) {
                CHECK(clip.duration() >= 1.0);
                CHECK(clip.duration() <= 5.0);
            }
        }
        CHECK(ep.queries.size() == 3);
        for (const auto& q : ep.queries) {
            CHECK(q.audio.samples.size() == 480000);
            CHECK(q.annotations.size() >= 1);
            CHECK(q.annotations.size() <= 3);
            for (const auto& a : q.annotations) {
                CHECK(std::count(rec.classes.begin(), rec.classes.end(), a.class_id) == 1);
                CHECK(std::count(kEbrLevels.begin(), kEbrLevels.end(), a.ebr_db) == 1);
            }
        }
    }
}

TEST_CASE("regeneration is byte-identical, serial or parallel") {
    const SynthConfig cfg = tiny_config();
    const Corpora corpora = load_corpora(cfg);
    test::TempDir a("regen_a");
    test::TempDir b("regen_b");
    const DatasetManifest ma = generate_dataset(cfg, corpora, 7, a.path(), 1);
    const DatasetManifest mb = generate_dataset(cfg, load_corpora(cfg), 7, b.path(), 2);
    CHECK(file_bytes(a.path() / "manifest.json") == file_bytes(b.path() / "manifest.json"));
    for (const auto& rec : ma.episodes) {
        for (const auto& q : rec.queries) CHECK(file_bytes(a.path() / q.clip.path) == file_bytes(b.path() / q.clip.path));
    }
    test::TempDir c("regen_c");
    generate_dataset(cfg, corpora, 8, c.path(), 1);
    CHECK(file_bytes(a.path() / "manifest.json") != file_bytes(c.path() / "manifest.json"));
}

TEST_CASE("manifest round trip") {
    const SynthConfig cfg = tiny_config();
    test::TempDir dir("manifest");
    const DatasetManifest m = generate_dataset(cfg, load_corpora(cfg), 3, dir.path());
    const DatasetManifest back = load_manifest(dir.path() / "manifest.json");
    CHECK(back.seed == 3);
    CHECK(back.episodes.size() == m.episodes.size());
    CHECK(nlohmann::json(back).dump() == nlohmann::json(m).dump());
    CHECK_THROWS_AS(load_manifest(dir.path() / "missing.json"), Error);
}

TEST_CASE("generator errors") {
    SynthConfig cfg = tiny_config();
    cfg.n_way = 5;  // val pool only has 3 classes
    const Corpora corpora = load_corpora(cfg);
    CHECK_THROWS_AS(DatasetGenerator(cfg, corpora, 1), Error);
    SynthConfig empty_bg = tiny_config();
    empty_bg.background_split = {2, 0, 1};
    CHECK_THROWS_AS(DatasetGenerator(empty_bg, load_corpora(empty_bg), 1), Error);
    CHECK_THROWS_AS(parse_split("dev"), Error);
}

}  // TEST_SUITE
