#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fsed/backbones.hpp"
#include "fsed/proposals.hpp"

namespace fsed {

/// Feature-map rows covered by a region: [floor(start), ceil(end)).
std::pair<int, int> region_rows(const Interval& region, int rows);

/// Column-wise max over the covered rows -> (1 x D).
nn::Tensor roi_pool(const nn::Tensor& fm, const Interval& region);

/// Maps a feature-map region to a fixed-length vector.
class RegionHead {
public:
    virtual ~RegionHead() = default;
    [[nodiscard]] virtual nn::Tensor embed(const nn::Tensor& fm, const Interval& region) const = 0;
    [[nodiscard]] virtual int output_dim() const = 0;
};

class RoiPoolHead final : public RegionHead {
public:
    explicit RoiPoolHead(int dim) : dim_(dim) {}
    [[nodiscard]] nn::Tensor embed(const nn::Tensor& fm, const Interval& region) const override {
        return roi_pool(fm, region);
    }
    [[nodiscard]] int output_dim() const override { return dim_; }

private:
    int dim_;
};

/// Perceiver over the covered rows, positions relative to the region start.
class RoiPerceiverHead final : public RegionHead {
public:
    RoiPerceiverHead(const PerceiverConfig& cfg, int input_dim, nn::ParameterSet& params, const std::string& prefix,
                     Rng& rng)
        : perceiver_(cfg, input_dim, params, prefix, rng) {}
    [[nodiscard]] nn::Tensor embed(const nn::Tensor& fm, const Interval& region) const override;
    [[nodiscard]] int output_dim() const override { return perceiver_.output_dim(); }

private:
    Perceiver perceiver_;
};

struct SecondStageOutput {
    nn::Tensor logits;   // (s x 1)
    nn::Tensor offsets;  // (s x 2): lo, co
};

/// Two dense LeakyReLU layers then an event logit and (lo, co) per row.
class SecondStage {
public:
    SecondStage(int input_dim, int width, nn::ParameterSet& params, const std::string& prefix, Rng& rng);
    /// (s x D) embeddings.
    [[nodiscard]] SecondStageOutput forward(const nn::Tensor& embeddings) const;

private:
    nn::Tensor w1_, b1_, w2_, b2_, cls_w_, cls_b_, reg_w_, reg_b_;
};

/// Rows sorted lexicographically by value, then averaged; the result does not
/// depend on the input order.
nn::Tensor sorted_mean_rows(const nn::Tensor& rows);

/// One prototype row per class -> (n x D).
nn::Tensor compute_prototypes(const std::vector<std::vector<nn::Tensor>>& support_embeddings);

/// z_m = -||q - c_m||^2 for each class, plus the no-event logit -> (m x n+1).
nn::Tensor proto_logits(const nn::Tensor& queries, const nn::Tensor& prototypes, const nn::Tensor& no_event);

/// softmax(proto_logits).
nn::Tensor proto_classify(const nn::Tensor& queries, const nn::Tensor& prototypes, const nn::Tensor& no_event);

}  // namespace fsed
