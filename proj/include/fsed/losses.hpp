#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "fsed/nn/tensor.hpp"
#include "fsed/proposals.hpp"

namespace fsed {

struct LossConfig {
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    double smooth_l1_beta = 1.0;
    double lambda_rpn = 1.0;
    double lambda_refine = 1.0;
    double lambda_cls = 1.0;
    double reg_weight = 1.0;  // regression term relative to classification inside a stage
    double proto_iou = 0.5;   // proposal takes its matched class at this IoU
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

inline constexpr double kProbClamp = 1e-7;

/// y = 1: -alpha (1-p)^gamma ln p ; y = 0: -(1-alpha) p^gamma ln(1-p); p clamped to [1e-7, 1-1e-7].
double focal_loss(double p, int y, double gamma, double alpha);
/// d focal_loss / dp (zero where the clamp is active).
double focal_loss_grad(double p, int y, double gamma, double alpha);

/// d < beta: 0.5 d^2 / beta, else d - 0.5 beta, with d = |pred - target|.
double smooth_l1(double pred, double target, double beta);
/// d smooth_l1 / d pred.
double smooth_l1_grad(double pred, double target, double beta);

/// Mean binary focal loss over logits whose label is 0 or 1; label -1 is ignored.
/// Returns a zero scalar when nothing contributes.
nn::Tensor focal_binary(const nn::Tensor& logits, std::span<const int> labels, double gamma, double alpha);

/// Smooth L1 summed over the two offsets of each selected row, averaged over the
/// selected rows. `pred` holds (lo, co) pairs at [2*i, 2*i+1]; targets follow `rows`.
nn::Tensor smooth_l1_rows(const nn::Tensor& pred, std::span<const int> rows, std::span<const double> target_lo,
                          std::span<const double> target_co, double beta);

/// Mean over rows of the positive-class focal term applied to the target column
/// of a probability matrix.
nn::Tensor focal_multiclass(const nn::Tensor& probs, std::span<const int> targets, double gamma, double alpha);

/// Loss terms (scalar values) of one query or the mean over an episode.
struct LossBreakdown {
    double total = 0.0;
    double rpn_cls = 0.0;
    double rpn_reg = 0.0;
    double refine_cls = 0.0;
    double refine_reg = 0.0;
    double proto = 0.0;

    LossBreakdown& operator+=(const LossBreakdown& o);
    LossBreakdown& operator/=(double d);
};

nlohmann::json to_json(const LossBreakdown& l);

/// Binary labels (1, 0, -1 for ignore) and regression targets of the positives.
struct StageTargets {
    std::vector<int> labels;
    std::vector<int> positives;
    std::vector<double> lo;
    std::vector<double> co;
};

StageTargets stage_targets(const TargetAssignment& t);

/// Raw outputs entering the proposal-model loss. Stage-II and prototype tensors
/// may be undefined when a query produced no proposals.
struct ProposalOutputs {
    nn::Tensor rpn_logits;   // one per anchor
    nn::Tensor rpn_offsets;  // (lo, co) per anchor
    nn::Tensor refine_logits;
    nn::Tensor refine_offsets;
    nn::Tensor proto_probs;  // (proposals x n+1)
};

struct ProposalTargets {
    StageTargets rpn;
    StageTargets refine;
    std::vector<int> proto;  // slot or n (no-event), one per proto_probs row
};

/// lambda_rpn (focal + w smooth_l1)_I + lambda_refine (focal + w smooth_l1)_II + lambda_cls focal_multiclass.
nn::Tensor episode_loss_proposal(const ProposalOutputs& out, const ProposalTargets& targets, const LossConfig& cfg,
                                 LossBreakdown* parts = nullptr);

}  // namespace fsed
