#pragma once

// Small in-memory episodes and models shared by the model, integration and acceptance tests.

#include <array>
#include <vector>

#include "fsed/dataset.hpp"
#include "fsed/models.hpp"
#include "fsed/training.hpp"

namespace fsed::test {

/// Features of generated episodes, computed once and kept in memory.
class MemorySource final : public EpisodeSource {
public:
    MemorySource(const SynthConfig& cfg, std::uint64_t seed) {
        const Corpora corpora = load_corpora(cfg);
        const DatasetGenerator gen(cfg, corpora, seed);
        for (Split s : {Split::Train, Split::Val, Split::Test}) {
            auto& list = eps_[static_cast<std::size_t>(s)];
            for (int i = 0; i < cfg.episodes.get(s); ++i) list.push_back(extract_features(gen.make_episode(s, i)));
        }
    }
    [[nodiscard]] int count(Split s) const override { return static_cast<int>(eps_[static_cast<std::size_t>(s)].size()); }
    [[nodiscard]] const EpisodeFeatures& features(Split s, int i) override {
        return eps_[static_cast<std::size_t>(s)].at(static_cast<std::size_t>(i));
    }
    void check_compatible(Variant) const override {}

private:
    std::array<std::vector<EpisodeFeatures>, 3> eps_;
};

/// 3-way 2-shot procedural episodes with 8 s queries holding one event each.
inline SynthConfig small_synth(int train = 3, int val = 2, int test = 2) {
    SynthConfig cfg;
    cfg.n_way = 3;
    cfg.k_shot = 2;
    cfg.queries_per_episode = 2;
    cfg.query_seconds = 8.0;
    cfg.max_events = 1;
    cfg.episodes = {train, val, test};
    cfg.class_split = {4, 3, 3};
    cfg.background_split = {2, 1, 1};
    cfg.procedural_classes = 10;
    cfg.procedural_clips_per_class = 5;
    cfg.procedural_background_seconds = 10.0;
    cfg.seed = 3;
    return cfg;
}

inline ModelConfig small_model(Variant v, std::uint64_t init_seed = 1) {
    ModelConfig c;
    c.variant = v;
    c.backbone.conv_channels = {4, 4, 6, 6, 8, 8, 8};
    c.backbone.hidden = 6;
    c.rpn.hidden = 8;
    c.perceiver.num_latents = 4;
    c.perceiver.latent_dim = 8;
    c.perceiver.cross_blocks = 1;
    c.perceiver.self_per_cross = 1;
    c.perceiver.heads = 2;
    c.window_crnn.conv_channels = {4, 4, 6, 6, 8};
    c.window_crnn.embedding = 8;
    c.stage2_width = 8;
    c.init_seed = init_seed;
    return c;
}

}  // namespace fsed::test
