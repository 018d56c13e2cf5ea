#include "fsed/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fsed/nn/ops.hpp"

namespace fsed {

using nn::Tensor;

void to_json(nlohmann::json& j, const LossConfig& c) {
    j = {{"focal_gamma", c.focal_gamma},     {"focal_alpha", c.focal_alpha}, {"smooth_l1_beta", c.smooth_l1_beta},
         {"lambda_rpn", c.lambda_rpn},       {"lambda_refine", c.lambda_refine}, {"lambda_cls", c.lambda_cls},
         {"reg_weight", c.reg_weight},       {"proto_iou", c.proto_iou}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
    c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
    c.focal_alpha = j.value("focal_alpha", c.focal_alpha);
    c.smooth_l1_beta = j.value("smooth_l1_beta", c.smooth_l1_beta);
    c.lambda_rpn = j.value("lambda_rpn", c.lambda_rpn);
    c.lambda_refine = j.value("lambda_refine", c.lambda_refine);
    c.lambda_cls = j.value("lambda_cls", c.lambda_cls);
    c.reg_weight = j.value("reg_weight", c.reg_weight);
    c.proto_iou = j.value("proto_iou", c.proto_iou);
    if (c.focal_gamma < 0.0 || !(c.focal_alpha > 0.0 && c.focal_alpha <= 1.0) || !(c.smooth_l1_beta > 0.0)) {
        throw Error("invalid loss config");
    }
    if (c.lambda_rpn < 0.0 || c.lambda_refine < 0.0 || c.lambda_cls < 0.0 || c.reg_weight < 0.0) {
        throw Error("loss weights must be non-negative");
    }
}

double focal_loss(double p, int y, double gamma, double alpha) {
    p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    if (y == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

double focal_loss_grad(double p, int y, double gamma, double alpha) {
    if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
    if (y == 1) {
        double g = -alpha * std::pow(1.0 - p, gamma) / p;
        if (gamma != 0.0) g += alpha * gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p);
        return g;
    }
    double g = (1.0 - alpha) * std::pow(p, gamma) / (1.0 - p);
    if (gamma != 0.0) g -= (1.0 - alpha) * gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p);
    return g;
}

double smooth_l1(double pred, double target, double beta) {
    const double d = std::abs(pred - target);
    return d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
}

double smooth_l1_grad(double pred, double target, double beta) {
    const double diff = pred - target;
    if (std::abs(diff) < beta) return diff / beta;
    return diff > 0.0 ? 1.0 : -1.0;
}

Tensor focal_binary(const Tensor& logits, std::span<const int> labels, double gamma, double alpha) {
    if (labels.size() != logits.size()) throw Error("focal_binary: one label per logit required");
    std::vector<double> dlogit(labels.size(), 0.0);
    double total = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) continue;
        const double p = 1.0 / (1.0 + std::exp(-logits.at(i)));
        total += focal_loss(p, labels[i], gamma, alpha);
        dlogit[i] = focal_loss_grad(p, labels[i], gamma, alpha) * p * (1.0 - p);
        ++count;
    }
    if (count == 0) return Tensor::scalar(0.0);
    for (double& g : dlogit) g /= count;
    return nn::make_result({1}, {total / count}, {logits}, [dlogit = std::move(dlogit)](nn::Node& self) {
        auto& g = self.parents[0]->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dlogit[i];
    });
}

Tensor smooth_l1_rows(const Tensor& pred, std::span<const int> rows, std::span<const double> target_lo,
                      std::span<const double> target_co, double beta) {
    if (rows.size() != target_lo.size() || rows.size() != target_co.size()) throw Error("smooth_l1_rows: size mismatch");
    if (rows.empty()) return Tensor::scalar(0.0);
    std::vector<double> dpred(pred.size(), 0.0);
    double total = 0.0;
    const double n = static_cast<double>(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<std::size_t>(rows[i]);
        if (2 * r + 1 >= pred.size()) throw Error("smooth_l1_rows: row out of range");
        total += smooth_l1(pred.at(2 * r), target_lo[i], beta) + smooth_l1(pred.at(2 * r + 1), target_co[i], beta);
        dpred[2 * r] += smooth_l1_grad(pred.at(2 * r), target_lo[i], beta) / n;
        dpred[2 * r + 1] += smooth_l1_grad(pred.at(2 * r + 1), target_co[i], beta) / n;
    }
    return nn::make_result({1}, {total / n}, {pred}, [dpred = std::move(dpred)](nn::Node& self) {
        auto& g = self.parents[0]->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dpred[i];
    });
}

Tensor focal_multiclass(const Tensor& probs, std::span<const int> targets, double gamma, double alpha) {
    const int rows = probs.rows();
    const int cols = probs.cols();
    if (targets.size() != static_cast<std::size_t>(rows)) throw Error("focal_multiclass: one target per row required");
    if (rows == 0) return Tensor::scalar(0.0);
    std::vector<double> dprob(probs.size(), 0.0);
    double total = 0.0;
    for (int r = 0; r < rows; ++r) {
        const int t = targets[static_cast<std::size_t>(r)];
        if (t < 0 || t >= cols) throw Error("focal_multiclass: target out of range");
        const std::size_t idx = static_cast<std::size_t>(r) * cols + t;
        total += focal_loss(probs.at(idx), 1, gamma, alpha);
        dprob[idx] = focal_loss_grad(probs.at(idx), 1, gamma, alpha) / rows;
    }
    return nn::make_result({1}, {total / rows}, {probs}, [dprob = std::move(dprob)](nn::Node& self) {
        auto& g = self.parents[0]->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dprob[i];
    });
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
    total += o.total;
    rpn_cls += o.rpn_cls;
    rpn_reg += o.rpn_reg;
    refine_cls += o.refine_cls;
    refine_reg += o.refine_reg;
    proto += o.proto;
    return *this;
}

LossBreakdown& LossBreakdown::operator/=(double d) {
    total /= d;
    rpn_cls /= d;
    rpn_reg /= d;
    refine_cls /= d;
    refine_reg /= d;
    proto /= d;
    return *this;
}

nlohmann::json to_json(const LossBreakdown& l) {
    return {{"total", l.total},           {"rpn_cls", l.rpn_cls}, {"rpn_reg", l.rpn_reg},
            {"refine_cls", l.refine_cls}, {"refine_reg", l.refine_reg}, {"proto", l.proto}};
}

StageTargets stage_targets(const TargetAssignment& t) {
    StageTargets s;
    s.labels.resize(t.labels.size());
    for (std::size_t i = 0; i < t.labels.size(); ++i) {
        s.labels[i] = static_cast<int>(t.labels[i]);
        if (t.labels[i] == AnchorLabel::Positive) {
            s.positives.push_back(static_cast<int>(i));
            s.lo.push_back(t.lo[i]);
            s.co.push_back(t.co[i]);
        }
    }
    return s;
}

Tensor episode_loss_proposal(const ProposalOutputs& out, const ProposalTargets& targets, const LossConfig& cfg,
                             LossBreakdown* parts) {
    const Tensor rpn_cls = focal_binary(out.rpn_logits, targets.rpn.labels, cfg.focal_gamma, cfg.focal_alpha);
    const Tensor rpn_reg = smooth_l1_rows(out.rpn_offsets, targets.rpn.positives, targets.rpn.lo, targets.rpn.co,
                                          cfg.smooth_l1_beta);
    Tensor total = nn::scale(nn::add(rpn_cls, nn::scale(rpn_reg, cfg.reg_weight)), cfg.lambda_rpn);
    Tensor ref_cls = Tensor::scalar(0.0);
    Tensor ref_reg = Tensor::scalar(0.0);
    Tensor proto = Tensor::scalar(0.0);
    if (out.refine_logits.defined()) {
        ref_cls = focal_binary(out.refine_logits, targets.refine.labels, cfg.focal_gamma, cfg.focal_alpha);
        ref_reg = smooth_l1_rows(out.refine_offsets, targets.refine.positives, targets.refine.lo, targets.refine.co,
                                 cfg.smooth_l1_beta);
        total = nn::add(total, nn::scale(nn::add(ref_cls, nn::scale(ref_reg, cfg.reg_weight)), cfg.lambda_refine));
    }
    if (out.proto_probs.defined()) {
        proto = focal_multiclass(out.proto_probs, targets.proto, cfg.focal_gamma, cfg.focal_alpha);
        total = nn::add(total, nn::scale(proto, cfg.lambda_cls));
    }
    if (parts) {
        parts->total = total.item();
        parts->rpn_cls = rpn_cls.item();
        parts->rpn_reg = rpn_reg.item();
        parts->refine_cls = ref_cls.item();
        parts->refine_reg = ref_reg.item();
        parts->proto = proto.item();
    }
    return total;
}

}  // namespace fsed
