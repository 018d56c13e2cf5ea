#include "fsed/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fsed {

using nn::Tensor;

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::WindowCrnn: return "window-crnn";
        case Variant::WindowPerceiver: return "window-perceiver";
        case Variant::ProtoRcrnn: return "proto-rcrnn";
        case Variant::ProtoRcrnnPerceiver: return "proto-rcrnn-perceiver";
    }
    throw Error("unknown variant");
}

Variant parse_variant(const std::string& name) {
    for (Variant v : {Variant::WindowCrnn, Variant::WindowPerceiver, Variant::ProtoRcrnn, Variant::ProtoRcrnnPerceiver}) {
        if (variant_name(v) == name) return v;
    }
    throw Error("unknown model variant: " + name);
}

bool is_proposal_variant(Variant v) { return v == Variant::ProtoRcrnn || v == Variant::ProtoRcrnnPerceiver; }

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"variant", variant_name(c.variant)},
         {"norm", {{"shift", c.norm.shift}, {"scale", c.norm.scale}}},
         {"backbone", c.backbone},
         {"rpn", c.rpn},
         {"perceiver", c.perceiver},
         {"window_crnn", c.window_crnn},
         {"stage2_width", c.stage2_width},
         {"train_with_gt_proposals", c.train_with_gt_proposals},
         {"final_nms", c.final_nms},
         {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("norm")) {
        c.norm.shift = j.at("norm").value("shift", c.norm.shift);
        c.norm.scale = j.at("norm").value("scale", c.norm.scale);
    }
    if (j.contains("backbone")) c.backbone = j.at("backbone").get<BackboneConfig>();
    if (j.contains("rpn")) c.rpn = j.at("rpn").get<RpnConfig>();
    if (j.contains("perceiver")) c.perceiver = j.at("perceiver").get<PerceiverConfig>();
    if (j.contains("window_crnn")) c.window_crnn = j.at("window_crnn").get<WindowCrnnConfig>();
    c.stage2_width = j.value("stage2_width", c.stage2_width);
    c.train_with_gt_proposals = j.value("train_with_gt_proposals", c.train_with_gt_proposals);
    c.final_nms = j.value("final_nms", c.final_nms);
    c.init_seed = j.value("init_seed", c.init_seed);
}

EpisodeFeatures extract_features(const Episode& episode, const MelConfig& mel) {
    EpisodeFeatures f;
    f.id = episode.id;
    f.classes = episode.classes;
    for (const auto& group : episode.support) {
        auto& out = f.support.emplace_back();
        for (const auto& clip : group) out.push_back(log_mel(clip, mel));
    }
    for (const auto& q : episode.queries) {
        QueryFeatures qf;
        qf.spec = log_mel(q.audio, mel);
        for (const auto& a : q.annotations) {
            const auto it = std::find(f.classes.begin(), f.classes.end(), a.class_id);
            if (it == f.classes.end()) throw Error("annotation class " + a.class_id + " not in episode " + episode.id);
            qf.events.push_back({static_cast<int>(it - f.classes.begin()), a.start_s, a.end_s, a.ebr_db});
            qf.event_classes.push_back(a.class_id);
        }
        f.queries.push_back(std::move(qf));
    }
    return f;
}

namespace {

std::vector<Interval> gt_intervals(const QueryFeatures& q, int feature_len) {
    std::vector<Interval> gt;
    for (const auto& e : q.events) {
        Interval i = e.frames();
        i.start = std::clamp(i.start, 0.0, static_cast<double>(feature_len));
        i.end = std::clamp(i.end, 0.0, static_cast<double>(feature_len));
        gt.push_back(i);
    }
    return gt;
}

std::vector<Interval> anchor_intervals(const std::vector<Anchor>& anchors) {
    std::vector<Interval> out;
    out.reserve(anchors.size());
    for (const auto& a : anchors) out.push_back(a.interval());
    return out;
}

int argmax(std::span<const double> v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Per-query backward with the prototypes cut out of the graph, then one pass
/// through the support graph with the accumulated prototype gradient.
template <typename QueryLoss>
LossBreakdown episode_backward(const EpisodeFeatures& ep, const Tensor& protos, QueryLoss&& query_loss) {
    if (ep.queries.empty()) throw Error("episode has no queries");
    const Tensor leaf = protos.detach(protos.requires_grad());
    LossBreakdown sum;
    const double inv = 1.0 / static_cast<double>(ep.queries.size());
    for (const auto& q : ep.queries) {
        LossBreakdown parts;
        Tensor loss = nn::scale(query_loss(q, leaf, parts), inv);
        if (loss.requires_grad()) loss.backward();
        sum += parts;
    }
    if (protos.requires_grad()) {
        Tensor p = protos;
        Tensor l = leaf;
        p.backward(l.grad());
    }
    sum /= static_cast<double>(ep.queries.size());
    return sum;
}

}  // namespace

// ---------------------------------------------------------------- ProtoRcrnn

ProtoRcrnn::ProtoRcrnn(const ModelConfig& cfg) : Model(cfg) {
    if (!is_proposal_variant(cfg.variant)) throw Error("ProtoRcrnn needs a proposal variant");
    Rng rng(derive_seed({cfg.init_seed, 0x6d6f64656cull}));
    backbone_ = std::make_unique<CrnnBackbone>(cfg.backbone, params_, "backbone", rng);
    const int d = backbone_->output_dim();
    rpn_ = std::make_unique<Rpn>(cfg.rpn, d, params_, "rpn", rng);
    if (cfg.variant == Variant::ProtoRcrnnPerceiver) {
        head_ = std::make_unique<RoiPerceiverHead>(cfg.perceiver, d, params_, "roi_perceiver", rng);
    } else {
        head_ = std::make_unique<RoiPoolHead>(d);
    }
    second_ = std::make_unique<SecondStage>(head_->output_dim(), cfg.stage2_width, params_, "stage2", rng);
    no_event_ = params_.add_zeros("proto.no_event", {1});
}

Tensor ProtoRcrnn::embed_support(const LogMelSpectrogram& spec) const {
    const Tensor fm = backbone_->forward(spectrogram_tensor(spec, cfg_.norm));
    return head_->embed(fm, {0.0, static_cast<double>(fm.rows())});
}

Tensor ProtoRcrnn::prototypes(const EpisodeFeatures& ep) const {
    std::vector<std::vector<Tensor>> embs;
    for (const auto& group : ep.support) {
        auto& g = embs.emplace_back();
        for (const auto& s : group) g.push_back(embed_support(s));
    }
    return compute_prototypes(embs);
}

Tensor ProtoRcrnn::query_loss(const QueryFeatures& q, const Tensor& protos, int n_way, const LossConfig& loss,
                              LossBreakdown& parts) const {
    const Tensor fm = backbone_->forward(spectrogram_tensor(q.spec, cfg_.norm));
    const int tf = fm.rows();
    const auto& rcfg = rpn_->config();
    const RpnOutput rpn = rpn_->forward(fm);
    const auto anchors = generate_anchors(tf, rcfg);
    const auto gt = gt_intervals(q, tf);

    ProposalOutputs out;
    ProposalTargets targets;
    out.rpn_logits = rpn.logits;
    out.rpn_offsets = rpn.offsets;
    targets.rpn = stage_targets(assign_targets(anchor_intervals(anchors), gt, rcfg));

    std::vector<Interval> regions;
    for (const auto& p : filter_proposals(decode_proposals(anchors, rpn), tf, rcfg)) regions.push_back(p.interval);
    if (cfg_.train_with_gt_proposals) {
        for (const auto& g : gt) {
            if (g.length() >= 1.0) regions.push_back(g);
        }
    }
    if (!regions.empty()) {
        std::vector<Tensor> embs;
        for (const auto& r : regions) embs.push_back(head_->embed(fm, r));
        const auto s2 = second_->forward(nn::concat_rows(embs));
        out.refine_logits = s2.logits;
        out.refine_offsets = s2.offsets;
        targets.refine = stage_targets(assign_targets(regions, gt, rcfg));

        std::vector<Tensor> final_embs;
        for (std::size_t i = 0; i < regions.size(); ++i) {
            Proposal p;
            p.interval = refine(regions[i], s2.offsets.at(2 * i), s2.offsets.at(2 * i + 1));
            const auto kept = clamp_proposals({p}, tf);
            if (kept.empty()) continue;
            final_embs.push_back(head_->embed(fm, kept.front().interval));
            targets.proto.push_back(interval_target(kept.front().interval, q.events, loss.proto_iou, n_way));
        }
        if (!final_embs.empty()) out.proto_probs = proto_classify(nn::concat_rows(final_embs), protos, no_event_);
    }
    return episode_loss_proposal(out, targets, loss, &parts);
}

LossBreakdown ProtoRcrnn::accumulate_gradients(const EpisodeFeatures& ep, const LossConfig& loss) {
    const Tensor protos = prototypes(ep);
    return episode_backward(ep, protos, [&](const QueryFeatures& q, const Tensor& p, LossBreakdown& parts) {
        return query_loss(q, p, ep.n_way(), loss, parts);
    });
}

LossBreakdown ProtoRcrnn::evaluate_loss(const EpisodeFeatures& ep, const LossConfig& loss) const {
    nn::NoGradGuard guard;
    const Tensor protos = prototypes(ep);
    LossBreakdown sum;
    for (const auto& q : ep.queries) {
        LossBreakdown parts;
        (void)query_loss(q, protos, ep.n_way(), loss, parts);
        sum += parts;
    }
    sum /= static_cast<double>(ep.queries.size());
    return sum;
}

QueryPrediction ProtoRcrnn::predict_query(const QueryFeatures& q, const Tensor& protos, int n_way) const {
    nn::NoGradGuard guard;
    QueryPrediction pred;
    const Tensor fm = backbone_->forward(spectrogram_tensor(q.spec, cfg_.norm));
    const int tf = fm.rows();
    const RpnOutput rpn = rpn_->forward(fm);
    pred.stage1 = filter_proposals(decode_proposals(generate_anchors(tf, rpn_->config()), rpn), tf, rpn_->config());
    if (pred.stage1.empty()) return pred;

    std::vector<Tensor> embs;
    for (const auto& p : pred.stage1) embs.push_back(head_->embed(fm, p.interval));
    const auto s2 = second_->forward(nn::concat_rows(embs));
    std::vector<Proposal> refined;
    for (std::size_t i = 0; i < pred.stage1.size(); ++i) {
        Proposal p;
        p.lo = s2.offsets.at(2 * i);
        p.co = s2.offsets.at(2 * i + 1);
        p.interval = refine(pred.stage1[i].interval, p.lo, p.co);
        p.score = 1.0 / (1.0 + std::exp(-s2.logits.at(i)));
        p.source = static_cast<int>(i);
        refined.push_back(p);
    }
    refined = clamp_proposals(std::move(refined), tf);
    if (cfg_.final_nms) {
        refined = nms(std::move(refined), rpn_->config().nms_threshold);
    } else {
        std::stable_sort(refined.begin(), refined.end(), [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
    }
    if (refined.empty()) return pred;

    std::vector<Tensor> final_embs;
    for (const auto& p : refined) final_embs.push_back(head_->embed(fm, p.interval));
    const Tensor probs = proto_classify(nn::concat_rows(final_embs), protos, no_event_);
    const int cols = n_way + 1;
    for (std::size_t i = 0; i < refined.size(); ++i) {
        ClassifiedProposal c;
        c.interval = refined[i].interval;
        c.event_score = refined[i].score;
        c.class_probs.assign(probs.data() + i * cols, probs.data() + (i + 1) * cols);
        c.predicted = argmax(c.class_probs);
        pred.final.push_back(std::move(c));
    }
    return pred;
}

EpisodePrediction ProtoRcrnn::predict(const EpisodeFeatures& ep) const {
    nn::NoGradGuard guard;
    const Tensor protos = prototypes(ep);
    EpisodePrediction out;
    for (const auto& q : ep.queries) out.queries.push_back(predict_query(q, protos, ep.n_way()));
    return out;
}

// --------------------------------------------------------------- WindowModel

WindowModel::WindowModel(const ModelConfig& cfg) : Model(cfg) {
    Rng rng(derive_seed({cfg.init_seed, 0x6d6f64656cull}));
    if (cfg.variant == Variant::WindowCrnn) {
        encoder_ = std::make_unique<WindowCrnn>(cfg.window_crnn, params_, "window_crnn", rng);
    } else if (cfg.variant == Variant::WindowPerceiver) {
        encoder_ = std::make_unique<WindowPerceiver>(cfg.perceiver, params_, "window_perceiver", rng);
    } else {
        throw Error("WindowModel needs a window variant");
    }
    no_event_ = params_.add_zeros("proto.no_event", {1});
}

Tensor WindowModel::prototypes(const EpisodeFeatures& ep) const {
    std::vector<std::vector<Tensor>> embs;
    for (const auto& group : ep.support) {
        auto& g = embs.emplace_back();
        for (const auto& s : group) g.push_back(encoder_->encode(fit_to_window(spectrogram_tensor(s, cfg_.norm))));
    }
    return compute_prototypes(embs);
}

Tensor WindowModel::window_probs(const QueryFeatures& q, const Tensor& protos, std::vector<int>& starts) const {
    const Tensor spec = spectrogram_tensor(q.spec, cfg_.norm);
    starts = window_starts(spec.rows());
    std::vector<Tensor> embs;
    embs.reserve(starts.size());
    for (int s : starts) embs.push_back(encoder_->encode(nn::slice_rows(spec, s, s + kWindowFrames)));
    return proto_classify(nn::concat_rows(embs), protos, no_event_);
}

Tensor WindowModel::query_loss(const QueryFeatures& q, const Tensor& protos, int n_way, const LossConfig& loss,
                               LossBreakdown& parts) const {
    std::vector<int> starts;
    const Tensor probs = window_probs(q, protos, starts);
    const auto targets = window_targets(q.events, starts, n_way);
    const Tensor l = focal_multiclass(probs, targets, loss.focal_gamma, loss.focal_alpha);
    parts = {};
    parts.proto = l.item();
    parts.total = l.item();
    return l;
}

LossBreakdown WindowModel::accumulate_gradients(const EpisodeFeatures& ep, const LossConfig& loss) {
    const Tensor protos = prototypes(ep);
    return episode_backward(ep, protos, [&](const QueryFeatures& q, const Tensor& p, LossBreakdown& parts) {
        return query_loss(q, p, ep.n_way(), loss, parts);
    });
}

LossBreakdown WindowModel::evaluate_loss(const EpisodeFeatures& ep, const LossConfig& loss) const {
    nn::NoGradGuard guard;
    const Tensor protos = prototypes(ep);
    LossBreakdown sum;
    for (const auto& q : ep.queries) {
        LossBreakdown parts;
        (void)query_loss(q, protos, ep.n_way(), loss, parts);
        sum += parts;
    }
    sum /= static_cast<double>(ep.queries.size());
    return sum;
}

EpisodePrediction WindowModel::predict(const EpisodeFeatures& ep) const {
    nn::NoGradGuard guard;
    const Tensor protos = prototypes(ep);
    const int cols = ep.n_way() + 1;
    EpisodePrediction out;
    for (const auto& q : ep.queries) {
        std::vector<int> starts;
        const Tensor probs = window_probs(q, protos, starts);
        QueryPrediction qp;
        for (std::size_t w = 0; w < starts.size(); ++w) {
            WindowPrediction wp;
            wp.start = starts[w];
            wp.class_probs.assign(probs.data() + w * cols, probs.data() + (w + 1) * cols);
            wp.predicted = argmax(wp.class_probs);
            qp.windows.push_back(std::move(wp));
        }
        out.queries.push_back(std::move(qp));
    }
    return out;
}

std::unique_ptr<Model> make_model(const ModelConfig& cfg) {
    if (is_proposal_variant(cfg.variant)) return std::make_unique<ProtoRcrnn>(cfg);
    return std::make_unique<WindowModel>(cfg);
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir, const nlohmann::json& state) {
    std::filesystem::create_directories(dir);
    nn::save_parameters(model.params(), dir / "params.bin");
    nlohmann::json j = {{"format", "fsed-checkpoint"},
                        {"version", 1},
                        {"model", model.config()},
                        {"parameters", model.params().scalar_count()},
                        {"state", state}};
    std::ofstream out(dir / "checkpoint.json", std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "checkpoint.json").string());
    out << j.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "checkpoint.json");
    if (!in) throw Error("checkpoint not found: " + dir.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed checkpoint.json: " + std::string(e.what()));
    }
    if (j.value("format", "") != "fsed-checkpoint") throw Error("not a checkpoint: " + dir.string());
    LoadedCheckpoint out;
    out.model = make_model(j.at("model").get<ModelConfig>());
    if (j.contains("parameters") && j.at("parameters").get<std::size_t>() != out.model->params().scalar_count()) {
        throw Error("checkpoint/config mismatch: parameter count differs");
    }
    nn::load_parameters(out.model->params(), dir / "params.bin");
    out.state = j.value("state", nlohmann::json::object());
    return out;
}

}  // namespace fsed
