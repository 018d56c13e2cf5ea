#include "fsed/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fsed {

using nn::Tensor;

std::pair<int, int> region_rows(const Interval& region, int rows) {
    const int begin = std::max(0, static_cast<int>(std::floor(region.start)));
    const int end = std::min(rows, static_cast<int>(std::ceil(region.end)));
    if (end <= begin) throw Error("degenerate region");
    return {begin, end};
}

Tensor roi_pool(const Tensor& fm, const Interval& region) {
    const auto [b, e] = region_rows(region, fm.rows());
    return nn::max_rows(fm, b, e);
}

Tensor RoiPerceiverHead::embed(const Tensor& fm, const Interval& region) const {
    const auto [b, e] = region_rows(region, fm.rows());
    std::vector<double> pos(static_cast<std::size_t>(e - b));
    std::iota(pos.begin(), pos.end(), 0.0);
    return perceiver_.encode(nn::slice_rows(fm, b, e), pos);
}

SecondStage::SecondStage(int input_dim, int width, nn::ParameterSet& params, const std::string& prefix, Rng& rng) {
    w1_ = params.add_xavier(prefix + ".fc1.weight", {width, input_dim}, input_dim, width, rng);
    b1_ = params.add_zeros(prefix + ".fc1.bias", {width});
    w2_ = params.add_xavier(prefix + ".fc2.weight", {width, width}, width, width, rng);
    b2_ = params.add_zeros(prefix + ".fc2.bias", {width});
    cls_w_ = params.add_xavier(prefix + ".cls.weight", {1, width}, width, 1, rng);
    // Event logit starts at a 0.01 prior; offsets start at zero.
    cls_b_ = params.add_constant(prefix + ".cls.bias", {1}, -std::log(99.0));
    reg_w_ = params.add_zeros(prefix + ".reg.weight", {2, width});
    reg_b_ = params.add_zeros(prefix + ".reg.bias", {2});
}

SecondStageOutput SecondStage::forward(const Tensor& embeddings) const {
    Tensor h = nn::leaky_relu(nn::linear(embeddings, w1_, b1_), 0.01);
    h = nn::leaky_relu(nn::linear(h, w2_, b2_), 0.01);
    return {nn::linear(h, cls_w_, cls_b_), nn::linear(h, reg_w_, reg_b_)};
}

Tensor sorted_mean_rows(const Tensor& rows) {
    const int m = rows.rows();
    const int d = rows.cols();
    if (m < 1) throw Error("empty class");
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    const double* v = rows.data();
    std::stable_sort(order.begin(), order.end(), [v, d](int a, int b) {
        return std::lexicographical_compare(v + static_cast<std::size_t>(a) * d, v + static_cast<std::size_t>(a + 1) * d,
                                            v + static_cast<std::size_t>(b) * d, v + static_cast<std::size_t>(b + 1) * d);
    });
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int r : order) {
        for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(c)] += v[static_cast<std::size_t>(r) * d + c];
    }
    for (double& x : out) x /= m;
    return nn::make_result({1, d}, std::move(out), {rows}, [m, d](nn::Node& self) {
        auto& g = self.parents[0]->grad;
        for (int r = 0; r < m; ++r) {
            for (int c = 0; c < d; ++c) g[static_cast<std::size_t>(r) * d + c] += self.grad[static_cast<std::size_t>(c)] / m;
        }
    });
}

Tensor compute_prototypes(const std::vector<std::vector<Tensor>>& support_embeddings) {
    if (support_embeddings.empty()) throw Error("no classes");
    std::vector<Tensor> protos;
    for (const auto& cls : support_embeddings) {
        if (cls.empty()) throw Error("empty class");
        protos.push_back(sorted_mean_rows(nn::concat_rows(cls)));
    }
    return nn::concat_rows(protos);
}

Tensor proto_logits(const Tensor& queries, const Tensor& prototypes, const Tensor& no_event) {
    if (queries.cols() != prototypes.cols()) throw Error("dimension mismatch");
    return nn::append_column(nn::scale(nn::sq_distances(queries, prototypes), -1.0), no_event);
}

Tensor proto_classify(const Tensor& queries, const Tensor& prototypes, const Tensor& no_event) {
    return nn::softmax_rows(proto_logits(queries, prototypes, no_event));
}

}  // namespace fsed
