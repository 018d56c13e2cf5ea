#include <doctest.h>

#include <fstream>

#include "fixtures.hpp"
#include "fsed/heads.hpp"
#include "helpers.hpp"

using namespace fsed;
using nn::Tensor;

namespace {

constexpr std::array kVariants{Variant::WindowCrnn, Variant::WindowPerceiver, Variant::ProtoRcrnn, Variant::ProtoRcrnnPerceiver};

test::MemorySource& shared_source() {
    static test::MemorySource src(test::small_synth(), 21);
    return src;
}

std::vector<double> flat_params(const Model& m) {
    std::vector<double> out;
    for (const auto& [name, t] : m.params().entries()) out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
}

std::vector<double> flat_prediction(const EpisodePrediction& p) {
    std::vector<double> out;
    for (const auto& q : p.queries) {
        for (const auto& s : q.stage1) out.insert(out.end(), {s.interval.start, s.interval.end, s.score});
        for (const auto& f : q.final) {
            out.insert(out.end(), {f.interval.start, f.interval.end, f.event_score, static_cast<double>(f.predicted)});
            out.insert(out.end(), f.class_probs.begin(), f.class_probs.end());
        }
        for (const auto& w : q.windows) {
            out.push_back(w.start);
            out.insert(out.end(), w.class_probs.begin(), w.class_probs.end());
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("variant names round-trip") {
    for (Variant v : kVariants) CHECK(parse_variant(variant_name(v)) == v);
    CHECK_THROWS_WITH_AS(parse_variant("rcnn"), doctest::Contains("unknown model variant"), Error);
    CHECK(is_proposal_variant(Variant::ProtoRcrnn));
    CHECK_FALSE(is_proposal_variant(Variant::WindowCrnn));
    CHECK_THROWS_AS(ProtoRcrnn(test::small_model(Variant::WindowCrnn)), Error);
    CHECK_THROWS_AS(WindowModel(test::small_model(Variant::ProtoRcrnn)), Error);
}

TEST_CASE("predictions are well formed and deterministic") {
    auto& data = shared_source();
    const EpisodeFeatures& ep = data.features(Split::Train, 0);
    for (Variant v : kVariants) {
        CAPTURE(variant_name(v));
        const auto a = make_model(test::small_model(v, 4));
        const auto b = make_model(test::small_model(v, 4));
        CHECK(flat_params(*a) == flat_params(*b));
        const auto pa = a->predict(ep);
        CHECK(flat_prediction(pa) == flat_prediction(b->predict(ep)));
        REQUIRE(pa.queries.size() == ep.queries.size());
        for (const auto& q : pa.queries) {
            for (const auto& f : q.final) {
                CHECK(f.class_probs.size() == 4);
                CHECK(std::abs(std::accumulate(f.class_probs.begin(), f.class_probs.end(), 0.0) - 1.0) <= 1e-9);
                CHECK(f.interval.start >= 0.0);
                CHECK(f.interval.end <= 100.0);  // ceil(798 / 8) feature frames
                CHECK(f.event_score >= 0.0);
                CHECK(f.event_score <= 1.0);
            }
            for (std::size_t i = 1; i < q.final.size(); ++i) CHECK(q.final[i - 1].event_score >= q.final[i].event_score);
            if (!is_proposal_variant(v)) CHECK(q.windows.size() == 11);  // (798 - 128) / 64 + 1
        }
        const auto c = make_model(test::small_model(v, 5));
        CHECK(flat_params(*c) != flat_params(*a));
    }
}

TEST_CASE("no-grad loss equals the training loss") {
    auto& data = shared_source();
    const EpisodeFeatures& ep = data.features(Split::Train, 1);
    for (Variant v : kVariants) {
        CAPTURE(variant_name(v));
        const auto m = make_model(test::small_model(v));
        const LossBreakdown eval = m->evaluate_loss(ep, {});
        m->params().zero_grad();
        const LossBreakdown train = m->accumulate_gradients(ep, {});
        CHECK(std::isfinite(eval.total));
        CHECK(std::abs(eval.total - train.total) <= 1e-9 * std::max(1.0, eval.total));
        CHECK(m->params().grad_norm() > 0.0);
        CHECK(std::isfinite(m->params().grad_norm()));
    }
}

TEST_CASE("episode gradients through shared prototypes match finite differences") {
    auto& data = shared_source();
    const EpisodeFeatures& ep = data.features(Split::Train, 2);
    for (Variant v : {Variant::WindowCrnn, Variant::WindowPerceiver}) {
        CAPTURE(variant_name(v));
        const auto m = make_model(test::small_model(v));
        m->params().zero_grad();
        (void)m->accumulate_gradients(ep, {});
        Rng rng(8);
        double worst = 0.0;
        for (auto& [name, t] : m->params().entries()) {
            // Zero-padded supports make max-pool ties in the conv stack, where differences are one-sided.
            if (name.find(".conv") != std::string::npos) continue;
            for (int k = 0; k < 2; ++k) {
                const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(t.size()) - 1));
                const double saved = t.mutable_values()[i];
                const double h = 1e-5;
                t.mutable_values()[i] = saved + h;
                const double up = m->evaluate_loss(ep, {}).total;
                t.mutable_values()[i] = saved - h;
                const double down = m->evaluate_loss(ep, {}).total;
                t.mutable_values()[i] = saved;
                const double num = (up - down) / (2 * h);
                const double ana = t.grad()[i];
                worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-4}));
            }
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("support embedding pools the whole feature map") {
    auto& data = shared_source();
    const auto& spec = data.features(Split::Train, 0).support[0][0];
    const ProtoRcrnn m(test::small_model(Variant::ProtoRcrnn));
    const Tensor fm = m.backbone().forward(spectrogram_tensor(spec, m.config().norm));
    const Tensor want = roi_pool(fm, {0.0, static_cast<double>(fm.rows())});
    const Tensor got = m.embed_support(spec);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.at(i) == want.at(i));
    const Tensor protos = m.prototypes(data.features(Split::Train, 0));
    CHECK(protos.rows() == 3);
    CHECK(protos.cols() == m.backbone().output_dim());
}

TEST_CASE("checkpoints round-trip and reject mismatches") {
    auto& data = shared_source();
    const EpisodeFeatures& ep = data.features(Split::Val, 0);
    test::TempDir dir("ckpt");
    for (Variant v : kVariants) {
        CAPTURE(variant_name(v));
        auto m = make_model(test::small_model(v, 9));
        m->params().zero_grad();
        (void)m->accumulate_gradients(ep, {});
        nn::Adam adam({1e-2});
        (void)adam.step(m->params());
        const auto path = dir.path() / variant_name(v);
        save_checkpoint(*m, path, {{"step", 1}});
        const LoadedCheckpoint loaded = load_checkpoint(path);
        CHECK(loaded.model->config().variant == v);
        CHECK(loaded.state.at("step") == 1);
        CHECK(flat_params(*loaded.model) == flat_params(*m));
        CHECK(flat_prediction(loaded.model->predict(ep)) == flat_prediction(m->predict(ep)));
    }

    const auto path = dir.path() / variant_name(Variant::ProtoRcrnn);
    nlohmann::json j;
    std::ifstream(path / "checkpoint.json") >> j;
    j["model"]["backbone"]["hidden"] = 7;
    std::ofstream(path / "checkpoint.json") << j.dump();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checkpoint/config mismatch"), Error);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.path() / "absent"), doctest::Contains("checkpoint not found"), Error);
    std::ofstream(path / "checkpoint.json") << "{\"format\": \"other\"}";
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("not a checkpoint"), Error);
}

TEST_CASE("model config JSON round-trip") {
    const ModelConfig c = test::small_model(Variant::ProtoRcrnnPerceiver, 12);
    const nlohmann::json j = c;
    const ModelConfig back = j.get<ModelConfig>();
    CHECK(nlohmann::json(back) == j);
    CHECK(back.backbone.conv_channels == c.backbone.conv_channels);
    CHECK(back.init_seed == 12);
}

}  // TEST_SUITE
