#pragma once

#include <vector>

#include "fsed/nn/tensor.hpp"

namespace fsed::nn {

// Elementwise. Operands of binary ops must have equal element counts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);

// Row-structured ops treat a tensor as (rows x cols).
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int begin, int end);
Tensor select_rows(const Tensor& a, const std::vector<int>& rows);
/// Column-wise max over rows [begin, end) -> (1 x cols).
Tensor max_rows(const Tensor& a, int begin, int end);
Tensor mean_rows(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
/// Appends a column filled with the scalar `s` -> (rows x cols+1).
Tensor append_column(const Tensor& a, const Tensor& s);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x (m x in) * W^T (in x out) + b.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Same-padded stride-1 convolution: x (C x H x W), weight (O x C x kh x kw), bias (O).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Non-overlapping max pooling with window (ph, pw); trailing remainder dropped.
Tensor maxpool2d(const Tensor& x, int ph, int pw);
/// (C x T x F) -> (T x C*F).
Tensor chw_to_sequence(const Tensor& x);

/// Zero-padded temporal convolution over rows of x (T x D), evaluated at rows
/// 0, stride, 2*stride, ... ; weight (O x k*D) with window-major layout.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, int kernel, int stride);

/// Single-direction LSTM over x (T x In); gate order i, f, g, o. Returns (T x H).
Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Attention probabilities captured during a forward pass: [head][query][key].
struct AttentionTrace {
    std::vector<std::vector<double>> weights;
    int queries = 0;
    int keys = 0;
};

/// Multi-head scaled dot-product attention; q (m x d), k and v (n x d).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, AttentionTrace* trace = nullptr);

/// Squared Euclidean distances between rows: (m x d), (n x d) -> (m x n).
Tensor sq_distances(const Tensor& q, const Tensor& c);

}  // namespace fsed::nn
