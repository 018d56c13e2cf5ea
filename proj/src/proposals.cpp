#include "fsed/proposals.hpp"

#include <algorithm>
#include <cmath>

namespace fsed {

using nn::Tensor;

double iou(const Interval& a, const Interval& b) {
    const double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
    if (inter <= 0.0) return 0.0;
    const double uni = a.length() + b.length() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

void to_json(nlohmann::json& j, const RpnConfig& c) {
    j = {{"anchor_base", c.anchor_base},   {"anchor_scales", c.anchor_scales}, {"anchor_stride", c.anchor_stride},
         {"hidden", c.hidden},             {"kernel", c.kernel},               {"iou_positive", c.iou_positive},
         {"iou_negative", c.iou_negative}, {"nms_threshold", c.nms_threshold}, {"top_s", c.top_s},
         {"force_best_anchor", c.force_best_anchor}};
}

void from_json(const nlohmann::json& j, RpnConfig& c) {
    c.anchor_base = j.value("anchor_base", c.anchor_base);
    c.anchor_scales = j.value("anchor_scales", c.anchor_scales);
    c.anchor_stride = j.value("anchor_stride", c.anchor_stride);
    c.hidden = j.value("hidden", c.hidden);
    c.kernel = j.value("kernel", c.kernel);
    c.iou_positive = j.value("iou_positive", c.iou_positive);
    c.iou_negative = j.value("iou_negative", c.iou_negative);
    c.nms_threshold = j.value("nms_threshold", c.nms_threshold);
    c.top_s = j.value("top_s", c.top_s);
    c.force_best_anchor = j.value("force_best_anchor", c.force_best_anchor);
    if (!(0.0 <= c.iou_negative && c.iou_negative < c.iou_positive && c.iou_positive <= 1.0)) {
        throw Error("rpn config needs 0 <= iou_negative < iou_positive <= 1");
    }
    if (!(c.nms_threshold > 0.0 && c.nms_threshold < 1.0)) throw Error("nms_threshold must lie in (0, 1)");
    if (c.top_s < 1 || c.anchor_stride < 1 || c.kernel < 1 || c.anchor_scales.empty()) {
        throw Error("invalid rpn config");
    }
}

std::vector<Anchor> generate_anchors(int feature_len, const RpnConfig& cfg) {
    std::vector<Anchor> anchors;
    for (int c = 0; c < feature_len; c += cfg.anchor_stride) {
        for (int s : cfg.anchor_scales) anchors.push_back({static_cast<double>(c), static_cast<double>(cfg.anchor_base * s)});
    }
    return anchors;
}

int TargetAssignment::count(AnchorLabel label) const {
    return static_cast<int>(std::count(labels.begin(), labels.end(), label));
}

TargetAssignment assign_targets(std::span<const Interval> regions, std::span<const Interval> gt, const RpnConfig& cfg) {
    const std::size_t n = regions.size();
    TargetAssignment t;
    t.labels.assign(n, AnchorLabel::Negative);
    t.matched.assign(n, -1);
    t.lo.assign(n, 0.0);
    t.co.assign(n, 0.0);
    if (gt.empty()) return t;

    std::vector<double> best(n, 0.0);
    std::vector<int> arg(n, 0);
    std::vector<double> gt_best(gt.size(), 0.0);
    std::vector<double> ious(n * gt.size());
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const double v = iou(regions[a], gt[g]);
            ious[a * gt.size() + g] = v;
            if (v > best[a]) {
                best[a] = v;
                arg[a] = static_cast<int>(g);
            }
            gt_best[g] = std::max(gt_best[g], v);
        }
    }
    for (std::size_t a = 0; a < n; ++a) {
        if (best[a] >= cfg.iou_positive) {
            t.labels[a] = AnchorLabel::Positive;
        } else if (best[a] > cfg.iou_negative) {
            t.labels[a] = AnchorLabel::Ignore;
        }
    }
    if (cfg.force_best_anchor) {
        for (std::size_t g = 0; g < gt.size(); ++g) {
            if (gt_best[g] <= 0.0) continue;
            for (std::size_t a = 0; a < n; ++a) {
                if (ious[a * gt.size() + g] == gt_best[g]) t.labels[a] = AnchorLabel::Positive;
            }
        }
    }
    for (std::size_t a = 0; a < n; ++a) {
        if (t.labels[a] != AnchorLabel::Positive) continue;
        const Interval& m = gt[static_cast<std::size_t>(arg[a])];
        t.matched[a] = arg[a];
        t.lo[a] = m.length() - regions[a].length();
        t.co[a] = m.center() - regions[a].center();
    }
    return t;
}

Interval refine(const Interval& region, double lo, double co) {
    return Interval::from_center(region.center() + co, region.length() + lo);
}

nlohmann::json proposal_json(const Proposal& p) {
    return {{"start_frame", p.interval.start},
            {"end_frame", p.interval.end},
            {"start_s", p.interval.start * kFeatureFrameSeconds},
            {"end_s", p.interval.end * kFeatureFrameSeconds},
            {"score", p.score}};
}

std::vector<Proposal> nms(std::vector<Proposal> proposals, double threshold) {
    std::stable_sort(proposals.begin(), proposals.end(), [](const Proposal& a, const Proposal& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.interval.start != b.interval.start) return a.interval.start < b.interval.start;
        return a.interval.length() < b.interval.length();
    });
    std::vector<Proposal> kept;
    for (const Proposal& p : proposals) {
        bool suppressed = false;
        for (const Proposal& k : kept) {
            if (iou(p.interval, k.interval) >= threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(p);
    }
    return kept;
}

std::vector<Proposal> clamp_proposals(std::vector<Proposal> proposals, int feature_len) {
    std::vector<Proposal> out;
    out.reserve(proposals.size());
    const double hi = static_cast<double>(feature_len);
    for (Proposal p : proposals) {
        if (!(p.interval.length() >= 1.0)) continue;
        p.interval.start = std::clamp(p.interval.start, 0.0, hi);
        p.interval.end = std::clamp(p.interval.end, 0.0, hi);
        // Clamping can shrink a box that lay mostly outside the map.
        if (p.interval.length() < 1.0) continue;
        out.push_back(p);
    }
    return out;
}

std::vector<Proposal> filter_proposals(std::vector<Proposal> proposals, int feature_len, const RpnConfig& cfg) {
    auto kept = nms(clamp_proposals(std::move(proposals), feature_len), cfg.nms_threshold);
    if (kept.size() > static_cast<std::size_t>(cfg.top_s)) kept.resize(static_cast<std::size_t>(cfg.top_s));
    return kept;
}

Rpn::Rpn(const RpnConfig& cfg, int input_dim, nn::ParameterSet& params, const std::string& prefix, Rng& rng) : cfg_(cfg) {
    const int a = cfg.anchors_per_position();
    conv_w_ = params.add_xavier(prefix + ".conv.weight", {cfg.hidden, cfg.kernel * input_dim}, cfg.kernel * input_dim,
                                cfg.hidden, rng);
    conv_b_ = params.add_zeros(prefix + ".conv.bias", {cfg.hidden});
    cls_w_ = params.add_xavier(prefix + ".cls.weight", {a, cfg.hidden}, cfg.hidden, a, rng);
    // Prior of 0.01 on the event class keeps the initial loss from being swamped by background.
    cls_b_ = params.add_constant(prefix + ".cls.bias", {a}, -std::log((1.0 - 0.01) / 0.01));
    reg_w_ = params.add_zeros(prefix + ".reg.weight", {2 * a, cfg.hidden});
    reg_b_ = params.add_zeros(prefix + ".reg.bias", {2 * a});
}

RpnOutput Rpn::forward(const Tensor& fm) const {
    const Tensor h = nn::leaky_relu(nn::conv1d(fm, conv_w_, conv_b_, cfg_.kernel, cfg_.anchor_stride), 0.01);
    return {nn::linear(h, cls_w_, cls_b_), nn::linear(h, reg_w_, reg_b_)};
}

std::vector<Proposal> decode_proposals(const std::vector<Anchor>& anchors, const RpnOutput& out) {
    if (out.logits.size() != anchors.size() || out.offsets.size() != 2 * anchors.size()) {
        throw Error("rpn output does not match the anchor inventory");
    }
    std::vector<Proposal> props(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const double lo = out.offsets.at(2 * i);
        const double co = out.offsets.at(2 * i + 1);
        props[i].interval = refine(anchors[i].interval(), lo, co);
        props[i].score = 1.0 / (1.0 + std::exp(-out.logits.at(i)));
        props[i].source = static_cast<int>(i);
        props[i].lo = lo;
        props[i].co = co;
    }
    return props;
}

}  // namespace fsed
