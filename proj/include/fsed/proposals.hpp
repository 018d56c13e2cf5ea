#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsed/nn/ops.hpp"
#include "fsed/nn/parameters.hpp"

namespace fsed {

/// Seconds spanned by one backbone feature frame (8 spectrogram frames of 10 ms).
inline constexpr double kFeatureFrameSeconds = 0.08;

/// Closed interval [start, end] in feature frames.
struct Interval {
    double start = 0.0;
    double end = 0.0;

    [[nodiscard]] double length() const { return end - start; }
    [[nodiscard]] double center() const { return 0.5 * (start + end); }
    static Interval from_center(double center, double length) {
        return {center - 0.5 * length, center + 0.5 * length};
    }
    bool operator==(const Interval&) const = default;
};

double iou(const Interval& a, const Interval& b);

struct Anchor {
    double center = 0.0;
    double length = 0.0;
    [[nodiscard]] Interval interval() const { return Interval::from_center(center, length); }
};

struct RpnConfig {
    int anchor_base = 4;
    std::vector<int> anchor_scales{1, 2, 4, 8, 16};
    int anchor_stride = 2;
    int hidden = 512;
    int kernel = 3;
    double iou_positive = 0.7;
    double iou_negative = 0.3;
    double nms_threshold = 0.1;
    int top_s = 10;
    bool force_best_anchor = true;

    [[nodiscard]] int anchors_per_position() const { return static_cast<int>(anchor_scales.size()); }
};

void to_json(nlohmann::json& j, const RpnConfig& c);
void from_json(const nlohmann::json& j, RpnConfig& c);

/// Anchor index = position * scales + scale index; centres at 0, stride, 2*stride, ...
std::vector<Anchor> generate_anchors(int feature_len, const RpnConfig& cfg);

enum class AnchorLabel { Negative = 0, Positive = 1, Ignore = -1 };

struct TargetAssignment {
    std::vector<AnchorLabel> labels;
    std::vector<int> matched;  // ground-truth index, -1 unless positive
    std::vector<double> lo;    // L_gt - L, positives only
    std::vector<double> co;    // C_gt - C, positives only

    [[nodiscard]] int count(AnchorLabel label) const;
};

/// Labels each reference region against the ground truth: positive at IoU >= iou_positive,
/// negative at <= iou_negative, ignored between. With forcing on, every reference tied
/// for a ground truth's best (non-zero) IoU becomes positive.
TargetAssignment assign_targets(std::span<const Interval> regions, std::span<const Interval> gt, const RpnConfig& cfg);

/// L' = L + lo, C' = C + co. The result may have non-positive length.
Interval refine(const Interval& region, double lo, double co);

struct Proposal {
    Interval interval;
    double score = 0.0;
    int source = -1;  // anchor or parent index
    double lo = 0.0;
    double co = 0.0;
};

nlohmann::json proposal_json(const Proposal& p);

/// Greedy NMS in descending score; ties by earlier start, then shorter length.
/// Suppresses any box with IoU >= threshold against a kept box.
std::vector<Proposal> nms(std::vector<Proposal> proposals, double threshold);

/// Drop length < 1, clamp to [0, feature_len], drop again, NMS, keep top_s.
std::vector<Proposal> filter_proposals(std::vector<Proposal> proposals, int feature_len, const RpnConfig& cfg);

/// Drop length < 1 and clamp, without NMS.
std::vector<Proposal> clamp_proposals(std::vector<Proposal> proposals, int feature_len);

struct RpnOutput {
    nn::Tensor logits;   // (positions x scales): one event logit per anchor
    nn::Tensor offsets;  // (positions x 2*scales): (lo, co) per anchor
};

/// Kernel-3 temporal convolution to a 512-d hidden layer at anchor positions,
/// followed by the classification and regression heads.
class Rpn {
public:
    Rpn(const RpnConfig& cfg, int input_dim, nn::ParameterSet& params, const std::string& prefix, Rng& rng);
    [[nodiscard]] RpnOutput forward(const nn::Tensor& fm) const;
    [[nodiscard]] const RpnConfig& config() const { return cfg_; }

private:
    RpnConfig cfg_;
    nn::Tensor conv_w_, conv_b_, cls_w_, cls_b_, reg_w_, reg_b_;
};

/// Scores (sigmoid) and refines every anchor into a proposal.
std::vector<Proposal> decode_proposals(const std::vector<Anchor>& anchors, const RpnOutput& out);

}  // namespace fsed
