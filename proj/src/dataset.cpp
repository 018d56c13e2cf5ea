#include "fsed/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "fsed/corpus.hpp"

namespace fsed {

namespace fs = std::filesystem;
using nlohmann::json;

std::string split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val" || name == "validation") return Split::Val;
    if (name == "test") return Split::Test;
    throw Error("unknown split: " + name);
}

SynthConfig SynthConfig::esc_case() {
    SynthConfig c;
    c.corpus_layout = "esc50";
    c.class_split = {30, 10, 10};
    c.background_source = "directory";
    c.background_split = {822, 150, 150};
    return c;
}

SynthConfig SynthConfig::vox_case() {
    SynthConfig c;
    c.corpus_layout = "voxceleb2";
    c.class_split = {4417, 1473, 1473};
    c.event_crop = CropPolicy::Vox;
    c.background_source = "directory";
    c.background_split = {822, 150, 150};
    return c;
}

namespace {

json counts_json(const SplitCounts& c) { return json{{"train", c.train}, {"val", c.val}, {"test", c.test}}; }

SplitCounts counts_from(const json& j, SplitCounts fallback) {
    fallback.train = j.value("train", fallback.train);
    fallback.val = j.value("val", fallback.val);
    fallback.test = j.value("test", fallback.test);
    return fallback;
}

}  // namespace

void to_json(json& j, const SynthConfig& c) {
    j = json{{"n_way", c.n_way},
             {"k_shot", c.k_shot},
             {"queries_per_episode", c.queries_per_episode},
             {"min_events", c.min_events},
             {"max_events", c.max_events},
             {"query_seconds", c.query_seconds},
             {"episodes", counts_json(c.episodes)},
             {"ebr_db", c.ebr_db},
             {"class_split", counts_json(c.class_split)},
             {"background_split", counts_json(c.background_split)},
             {"event_crop", c.event_crop == CropPolicy::Vox ? "vox" : "support"},
             {"corpus_layout", c.corpus_layout},
             {"corpus_root", c.corpus_root},
             {"procedural_classes", c.procedural_classes},
             {"procedural_clips_per_class", c.procedural_clips_per_class},
             {"background_source", c.background_source},
             {"background_root", c.background_root},
             {"procedural_background_seconds", c.procedural_background_seconds},
             {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
    if (j.contains("preset")) {
        const std::string preset = j.at("preset");
        if (preset == "esc-case") {
            c = SynthConfig::esc_case();
        } else if (preset == "vox-case") {
            c = SynthConfig::vox_case();
        } else if (preset != "procedural") {
            throw Error("unknown synth preset: " + preset);
        }
    }
    c.n_way = j.value("n_way", c.n_way);
    c.k_shot = j.value("k_shot", c.k_shot);
    c.queries_per_episode = j.value("queries_per_episode", c.queries_per_episode);
    c.min_events = j.value("min_events", c.min_events);
    c.max_events = j.value("max_events", c.max_events);
    c.query_seconds = j.value("query_seconds", c.query_seconds);
    if (j.contains("episodes")) c.episodes = counts_from(j["episodes"], c.episodes);
    c.ebr_db = j.value("ebr_db", c.ebr_db);
    if (j.contains("class_split")) c.class_split = counts_from(j["class_split"], c.class_split);
    if (j.contains("background_split")) c.background_split = counts_from(j["background_split"], c.background_split);
    if (j.contains("event_crop")) c.event_crop = j["event_crop"] == "vox" ? CropPolicy::Vox : CropPolicy::Support;
    c.corpus_layout = j.value("corpus_layout", c.corpus_layout);
    c.corpus_root = j.value("corpus_root", c.corpus_root);
    c.procedural_classes = j.value("procedural_classes", c.procedural_classes);
    c.procedural_clips_per_class = j.value("procedural_clips_per_class", c.procedural_clips_per_class);
    c.background_source = j.value("background_source", c.background_source);
    c.background_root = j.value("background_root", c.background_root);
    c.procedural_background_seconds = j.value("procedural_background_seconds", c.procedural_background_seconds);
    c.seed = j.value("seed", c.seed);
}

Corpora load_corpora(const SynthConfig& cfg) {
    Corpora corpora;
    if (cfg.corpus_layout == "procedural") {
        corpora.events = procedural_corpus(cfg.procedural_classes, cfg.procedural_clips_per_class, cfg.seed);
    } else {
        corpora.events = ingest_corpus(cfg.corpus_root, parse_layout(cfg.corpus_layout));
    }
    if (cfg.background_source == "procedural") {
        corpora.backgrounds = procedural_backgrounds(cfg.background_split.total(),
                                                     cfg.procedural_background_seconds, cfg.seed);
    } else {
        corpora.backgrounds = ingest_corpus(cfg.background_root, CorpusLayout::Backgrounds);
    }
    return corpora;
}

std::vector<const EpisodeRecord*> DatasetManifest::split(Split s) const {
    std::vector<const EpisodeRecord*> out;
    for (const auto& e : episodes) {
        if (e.split == s) out.push_back(&e);
    }
    return out;
}

std::array<std::vector<std::string>, 3> split_ids(std::vector<std::string> ids, const SplitCounts& sizes, Rng& rng) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0) throw Error("split sizes must be non-negative");
    if (static_cast<std::size_t>(sizes.total()) > ids.size()) {
        throw Error("split sizes exceed the " + std::to_string(ids.size()) + " available ids");
    }
    shuffle(ids.begin(), ids.end(), rng);
    std::array<std::vector<std::string>, 3> out;
    auto it = ids.begin();
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        const int n = sizes.get(s);
        out[static_cast<std::size_t>(s)].assign(it, it + n);
        std::sort(out[static_cast<std::size_t>(s)].begin(), out[static_cast<std::size_t>(s)].end());
        it += n;
    }
    return out;
}

DatasetGenerator::DatasetGenerator(SynthConfig cfg, const Corpora& corpora, std::uint64_t seed)
    : cfg_(std::move(cfg)), corpora_(&corpora), seed_(seed) {
    if (cfg_.n_way < 1 || cfg_.k_shot < 1 || cfg_.queries_per_episode < 1) {
        throw Error("n_way, k_shot and queries_per_episode must be positive");
    }
    if (cfg_.episodes.train < 0 || cfg_.episodes.val < 0 || cfg_.episodes.test < 0) {
        throw Error("episode counts must be non-negative");
    }
    if (cfg_.min_events < 1 || cfg_.max_events < cfg_.min_events) throw Error("invalid events-per-query range");
    if (cfg_.ebr_db.empty()) throw Error("EBR set is empty");

    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < corpora.events.size(); ++i) by_class[corpora.events[i].class_id].push_back(i);
    for (auto& [id, clips] : by_class) {
        all_classes_.push_back(id);
        clips_by_class_.push_back(clips);
    }

    Rng class_rng(derive_seed({seed_, 0x636c6173ull}));
    class_splits_ = split_ids(all_classes_, cfg_.class_split, class_rng);

    std::vector<std::string> bg_ids;
    for (const auto& bg : corpora.backgrounds) bg_ids.push_back(bg.origin);
    Rng bg_rng(derive_seed({seed_, 0x62677370ull}));
    auto bg_split = split_ids(bg_ids, cfg_.background_split, bg_rng);
    std::map<std::string, std::size_t> bg_index;
    for (std::size_t i = 0; i < corpora.backgrounds.size(); ++i) bg_index.emplace(corpora.backgrounds[i].origin, i);
    for (std::size_t s = 0; s < 3; ++s) {
        for (const auto& id : bg_split[s]) background_pools_[s].push_back(bg_index.at(id));
    }

    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        if (cfg_.episodes.get(s) == 0) continue;
        if (class_splits_[static_cast<std::size_t>(s)].size() < static_cast<std::size_t>(cfg_.n_way)) {
            throw Error("class pool of split '" + split_name(s) + "' is smaller than n_way");
        }
        if (background_pools_[static_cast<std::size_t>(s)].empty()) {
            throw Error("empty background pool for split '" + split_name(s) + "'");
        }
    }
}

std::vector<std::string> DatasetGenerator::background_ids(Split split) const {
    std::vector<std::string> out;
    for (std::size_t i : background_pools_[static_cast<std::size_t>(split)]) out.push_back(corpora_->backgrounds[i].origin);
    return out;
}

Episode DatasetGenerator::make_episode(Split split, int index) const {
    const auto s = static_cast<std::size_t>(split);
    const auto& pool = class_splits_[s];
    if (pool.size() < static_cast<std::size_t>(cfg_.n_way)) throw Error("class pool smaller than n_way");
    const auto& bg_pool = background_pools_[s];
    if (bg_pool.empty()) throw Error("empty background pool");

    Rng rng(derive_seed({seed_, 0x65706973ull, s, static_cast<std::uint64_t>(index)}));
    auto crop_event = [&](const AudioClip& clip) {
        return cfg_.event_crop == CropPolicy::Vox ? crop_vox_event(clip, rng) : crop_support(clip, rng);
    };

    Episode ep;
    ep.split = split;
    ep.index = index;
    char id[64];
    std::snprintf(id, sizeof id, "%s_%06d", split_name(split).c_str(), index);
    ep.id = id;

    std::vector<std::string> shuffled = pool;
    shuffle(shuffled.begin(), shuffled.end(), rng);
    ep.classes.assign(shuffled.begin(), shuffled.begin() + cfg_.n_way);

    std::vector<std::vector<std::size_t>> event_pools;
    for (const auto& cls : ep.classes) {
        const auto pos = static_cast<std::size_t>(
            std::lower_bound(all_classes_.begin(), all_classes_.end(), cls) - all_classes_.begin());
        std::vector<std::size_t> clips = clips_by_class_[pos];
        if (clips.size() <= static_cast<std::size_t>(cfg_.k_shot)) {
            throw Error("class '" + cls + "' has too few clips for k_shot supports plus query events");
        }
        shuffle(clips.begin(), clips.end(), rng);
        std::vector<AudioClip> support;
        for (int j = 0; j < cfg_.k_shot; ++j) {
            support.push_back(crop_support(corpora_->events[clips[static_cast<std::size_t>(j)]].audio, rng));
        }
        ep.support.push_back(std::move(support));
        event_pools.emplace_back(clips.begin() + cfg_.k_shot, clips.end());
    }

    for (int q = 0; q < cfg_.queries_per_episode; ++q) {
        const auto num_events = uniform_int(rng, cfg_.min_events, cfg_.max_events);
        std::vector<SourceClip> cropped;
        std::vector<double> levels;
        for (std::int64_t e = 0; e < num_events; ++e) {
            const auto slot = static_cast<std::size_t>(uniform_int(rng, 0, cfg_.n_way - 1));
            const auto& candidates = event_pools[slot];
            const std::size_t clip_index =
                candidates[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(candidates.size()) - 1))];
            const SourceClip& src = corpora_->events[clip_index];
            cropped.push_back({src.class_id, crop_event(src.audio), src.origin});
            levels.push_back(cfg_.ebr_db[static_cast<std::size_t>(
                uniform_int(rng, 0, static_cast<std::int64_t>(cfg_.ebr_db.size()) - 1))]);
        }
        std::vector<EventSpec> specs;
        for (std::size_t e = 0; e < cropped.size(); ++e) specs.push_back({&cropped[e], levels[e]});
        const SourceClip& bg =
            corpora_->backgrounds[bg_pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(bg_pool.size()) - 1))]];
        ep.queries.push_back(synthesize_query(bg, specs, rng, cfg_.query_seconds));
    }
    return ep;
}

namespace {

EpisodeRecord write_episode(const Episode& ep, const fs::path& out_dir) {
    EpisodeRecord rec;
    rec.id = ep.id;
    rec.split = ep.split;
    rec.index = ep.index;
    rec.classes = ep.classes;
    const fs::path rel_dir = fs::path(split_name(ep.split)) / ep.id;
    fs::create_directories(out_dir / rel_dir);
    for (std::size_t c = 0; c < ep.support.size(); ++c) {
        std::vector<ClipRecord> group;
        for (std::size_t j = 0; j < ep.support[c].size(); ++j) {
            const fs::path rel = rel_dir / ("support_" + std::to_string(c) + "_" + std::to_string(j) + ".wav");
            write_wav(out_dir / rel, ep.support[c][j]);
            group.push_back({rel.generic_string(), hash_hex(audio_hash(ep.support[c][j]))});
        }
        rec.support.push_back(std::move(group));
    }
    for (std::size_t q = 0; q < ep.queries.size(); ++q) {
        const fs::path rel = rel_dir / ("query_" + std::to_string(q) + ".wav");
        write_wav(out_dir / rel, ep.queries[q].audio);
        rec.queries.push_back({{rel.generic_string(), hash_hex(audio_hash(ep.queries[q].audio))},
                               ep.queries[q].background_id,
                               ep.queries[q].annotations});
    }
    return rec;
}

}  // namespace

DatasetManifest generate_dataset(const SynthConfig& cfg, const Corpora& corpora, std::uint64_t seed,
                                 const fs::path& out_dir, int jobs) {
    const DatasetGenerator gen(cfg, corpora, seed);
    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.config = cfg;
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        manifest.class_splits[static_cast<std::size_t>(s)] = gen.classes(s);
        manifest.background_pools[static_cast<std::size_t>(s)] = gen.background_ids(s);
    }

    std::vector<std::pair<Split, int>> work;
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        for (int i = 0; i < cfg.episodes.get(s); ++i) work.emplace_back(s, i);
    }
    manifest.episodes.resize(work.size());
    fs::create_directories(out_dir);

    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    std::vector<std::exception_ptr> errors(workers);
    auto run = [&](std::size_t worker) {
        try {
            for (std::size_t i = worker; i < work.size(); i += workers) {
                manifest.episodes[i] = write_episode(gen.make_episode(work[i].first, work[i].second), out_dir);
            }
        } catch (...) {
            errors[worker] = std::current_exception();
        }
    };
    if (workers == 1) {
        run(0);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
        for (auto& t : threads) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

void to_json(json& j, const DatasetManifest& m) {
    json episodes = json::array();
    for (const auto& e : m.episodes) {
        json support = json::array();
        for (const auto& group : e.support) {
            json g = json::array();
            for (const auto& c : group) g.push_back({{"path", c.path}, {"hash", c.hash}});
            support.push_back(g);
        }
        json queries = json::array();
        for (const auto& q : e.queries) {
            json ann = json::array();
            for (const auto& a : q.annotations) {
                ann.push_back({{"class", a.class_id}, {"start_s", a.start_s}, {"end_s", a.end_s}, {"ebr_db", a.ebr_db}});
            }
            queries.push_back({{"path", q.clip.path},
                               {"hash", q.clip.hash},
                               {"background", q.background_id},
                               {"annotations", ann}});
        }
        episodes.push_back({{"id", e.id},
                            {"split", split_name(e.split)},
                            {"index", e.index},
                            {"classes", e.classes},
                            {"support", support},
                            {"queries", queries}});
    }
    j = json{{"schema_version", m.schema_version},
             {"seed", m.seed},
             {"config", m.config},
             {"class_splits",
              {{"train", m.class_splits[0]}, {"val", m.class_splits[1]}, {"test", m.class_splits[2]}}},
             {"background_pools",
              {{"train", m.background_pools[0]}, {"val", m.background_pools[1]}, {"test", m.background_pools[2]}}},
             {"episodes", episodes}};
}

void from_json(const json& j, DatasetManifest& m) {
    m.schema_version = j.at("schema_version");
    if (m.schema_version != DatasetManifest::kSchemaVersion) {
        throw Error("unsupported manifest schema version " + std::to_string(m.schema_version));
    }
    m.seed = j.at("seed");
    m.config = j.at("config");
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        m.class_splits[static_cast<std::size_t>(s)] = j.at("class_splits").at(split_name(s)).get<std::vector<std::string>>();
        m.background_pools[static_cast<std::size_t>(s)] =
            j.at("background_pools").at(split_name(s)).get<std::vector<std::string>>();
    }
    m.episodes.clear();
    for (const auto& e : j.at("episodes")) {
        EpisodeRecord rec;
        rec.id = e.at("id");
        rec.split = parse_split(e.at("split"));
        rec.index = e.at("index");
        rec.classes = e.at("classes").get<std::vector<std::string>>();
        for (const auto& g : e.at("support")) {
            std::vector<ClipRecord> group;
            for (const auto& c : g) group.push_back({c.at("path"), c.at("hash")});
            rec.support.push_back(std::move(group));
        }
        for (const auto& q : e.at("queries")) {
            QueryRecord qr;
            qr.clip = {q.at("path"), q.at("hash")};
            qr.background_id = q.at("background");
            for (const auto& a : q.at("annotations")) {
                qr.annotations.push_back({a.at("class"), a.at("start_s"), a.at("end_s"), a.at("ebr_db")});
            }
            rec.queries.push_back(std::move(qr));
        }
        m.episodes.push_back(std::move(rec));
    }
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest: " + path.string());
    out << json(manifest).dump(1) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("manifest not found: " + path.string());
    return json::parse(in).get<DatasetManifest>();
}

Episode load_episode(const EpisodeRecord& record, const fs::path& root) {
    Episode ep;
    ep.id = record.id;
    ep.split = record.split;
    ep.index = record.index;
    ep.classes = record.classes;
    for (const auto& group : record.support) {
        std::vector<AudioClip> clips;
        for (const auto& c : group) clips.push_back(load_audio(root / c.path));
        ep.support.push_back(std::move(clips));
    }
    for (const auto& q : record.queries) {
        ep.queries.push_back({load_audio(root / q.clip.path), q.annotations, q.background_id});
    }
    return ep;
}

}  // namespace fsed
