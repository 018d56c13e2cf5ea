#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsed/synthesis.hpp"

namespace fsed {

enum class Split { Train = 0, Val = 1, Test = 2 };

std::string split_name(Split split);
Split parse_split(const std::string& name);

struct SplitCounts {
    int train = 0;
    int val = 0;
    int test = 0;

    [[nodiscard]] int get(Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }
    [[nodiscard]] int total() const { return train + val + test; }
};

enum class CropPolicy { Support, Vox };

struct SynthConfig {
    int n_way = 5;
    int k_shot = 5;
    int queries_per_episode = 8;
    int min_events = 1;
    int max_events = 3;
    double query_seconds = kQuerySeconds;
    SplitCounts episodes{25000, 5000, 5000};
    std::vector<double> ebr_db{kEbrLevels.begin(), kEbrLevels.end()};
    SplitCounts class_split{30, 10, 10};
    SplitCounts background_split{822, 150, 150};
    CropPolicy event_crop = CropPolicy::Support;

    // Where the CLI takes its corpora from.
    std::string corpus_layout = "procedural";  // procedural | flat | esc50 | voxceleb2
    std::string corpus_root;
    int procedural_classes = 20;
    int procedural_clips_per_class = 10;
    std::string background_source = "procedural";  // procedural | directory
    std::string background_root;
    double procedural_background_seconds = 35.0;
    std::uint64_t seed = 0;

    /// ESC-50 events over TUT backgrounds: classes 30/10/10.
    static SynthConfig esc_case();
    /// VoxCeleb2 speakers over TUT backgrounds: classes 4417/1473/1473, [2, 5] s event crops.
    static SynthConfig vox_case();
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct Corpora {
    std::vector<SourceClip> events;
    std::vector<SourceClip> backgrounds;
};

/// Corpora described by the config (procedural or ingested from disk).
Corpora load_corpora(const SynthConfig& cfg);

/// An episode held in memory. Support groups follow the order of `classes`.
struct Episode {
    std::string id;
    Split split = Split::Train;
    int index = 0;
    std::vector<std::string> classes;
    std::vector<std::vector<AudioClip>> support;
    std::vector<QueryClip> queries;
};

struct ClipRecord {
    std::string path;  // relative to the manifest directory
    std::string hash;
};

struct QueryRecord {
    ClipRecord clip;
    std::string background_id;
    std::vector<EventAnnotation> annotations;
};

struct EpisodeRecord {
    std::string id;
    Split split = Split::Train;
    int index = 0;
    std::vector<std::string> classes;
    std::vector<std::vector<ClipRecord>> support;
    std::vector<QueryRecord> queries;
};

struct DatasetManifest {
    static constexpr int kSchemaVersion = 1;
    int schema_version = kSchemaVersion;
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::array<std::vector<std::string>, 3> class_splits;
    std::array<std::vector<std::string>, 3> background_pools;
    std::vector<EpisodeRecord> episodes;

    [[nodiscard]] std::vector<const EpisodeRecord*> split(Split s) const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Shuffles sorted ids with `rng` and cuts consecutive train/val/test groups.
std::array<std::vector<std::string>, 3> split_ids(std::vector<std::string> ids, const SplitCounts& sizes, Rng& rng);

/// Deterministic episode factory. Each (split, index) pair draws from its own
/// RNG stream, so episodes can be produced in any order or in parallel.
class DatasetGenerator {
public:
    DatasetGenerator(SynthConfig cfg, const Corpora& corpora, std::uint64_t seed);

    [[nodiscard]] Episode make_episode(Split split, int index) const;
    [[nodiscard]] const std::vector<std::string>& classes(Split split) const {
        return class_splits_[static_cast<std::size_t>(split)];
    }
    [[nodiscard]] std::vector<std::string> background_ids(Split split) const;
    [[nodiscard]] const SynthConfig& config() const { return cfg_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }

private:
    SynthConfig cfg_;
    const Corpora* corpora_;
    std::uint64_t seed_;
    std::array<std::vector<std::string>, 3> class_splits_;
    std::array<std::vector<std::size_t>, 3> background_pools_;
    std::vector<std::vector<std::size_t>> clips_by_class_;  // parallel to the sorted class list
    std::vector<std::string> all_classes_;
};

/// Writes audio under `<out>/<split>/<episode_id>/` and returns the manifest
/// (also saved as `<out>/manifest.json`).
DatasetManifest generate_dataset(const SynthConfig& cfg, const Corpora& corpora, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, int jobs = 1);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

Episode load_episode(const EpisodeRecord& record, const std::filesystem::path& root);

}  // namespace fsed
