#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsed/features.hpp"
#include "fsed/nn/ops.hpp"
#include "fsed/nn/parameters.hpp"

namespace fsed {

inline constexpr int kBackboneStride = 8;
inline constexpr int kWindowFrames = 128;
inline constexpr int kWindowHop = 64;

/// Affine map applied to log-mel values before any encoder: (x + shift) * scale.
struct InputNorm {
    double shift = 5.0;
    double scale = 0.6;
};

/// Row-major (T x 64) tensor of normalized log-mel values (no gradient).
nn::Tensor spectrogram_tensor(const LogMelSpectrogram& spec, const InputNorm& norm);

struct BackboneConfig {
    std::vector<int> conv_channels{32, 32, 64, 64, 128, 128, 128};
    std::vector<int> time_pool{2, 1, 2, 1, 2, 1, 1};  // product must be 8
    std::vector<int> freq_pool{2, 2, 2, 2, 2, 2, 1};
    double leaky_slope = 0.01;
    int hidden = 128;  // per LSTM direction; output width is 2 * hidden
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

struct BiLstmParams {
    nn::Tensor fw_ih, fw_hh, fw_b, bw_ih, bw_hh, bw_b;
};

BiLstmParams add_bilstm(nn::ParameterSet& params, const std::string& prefix, int in, int hidden, Rng& rng);
nn::Tensor bilstm(const nn::Tensor& x, const BiLstmParams& p);

/// Conv2d layer stack shared by the CRNN encoders.
struct ConvStack {
    std::vector<nn::Tensor> weights;
    std::vector<nn::Tensor> biases;
    std::vector<int> time_pool;
    std::vector<int> freq_pool;
    double slope = 0.01;

    /// (C x T x F) -> (C' x T' x F').
    [[nodiscard]] nn::Tensor forward(const nn::Tensor& x) const;
};

ConvStack add_conv_stack(nn::ParameterSet& params, const std::string& prefix, const std::vector<int>& channels,
                         std::vector<int> time_pool, std::vector<int> freq_pool, double slope, Rng& rng);

/// Seven-layer convolutional front followed by a bidirectional LSTM; time is
/// downsampled by 8.
class CrnnBackbone {
public:
    CrnnBackbone(const BackboneConfig& cfg, nn::ParameterSet& params, const std::string& prefix, Rng& rng);

    /// spec: normalized (T x 64) -> (ceil(T/8) x 2H). Time is right-padded with zeros.
    [[nodiscard]] nn::Tensor forward(const nn::Tensor& spec) const;
    [[nodiscard]] int output_dim() const { return 2 * cfg_.hidden; }
    [[nodiscard]] static int output_length(int frames);

private:
    BackboneConfig cfg_;
    ConvStack convs_;
    BiLstmParams lstm_;
};

/// Start frames of the 128-frame windows at hop 64; the trailing partial window is dropped.
std::vector<int> window_starts(int num_frames);

struct PerceiverConfig {
    int num_latents = 32;
    int latent_dim = 128;
    int cross_blocks = 2;
    int self_per_cross = 2;
    int heads = 4;
    int mlp_ratio = 2;
};

void to_json(nlohmann::json& j, const PerceiverConfig& c);
void from_json(const nlohmann::json& j, PerceiverConfig& c);

/// Sinusoidal encoding of width `dim` for each position -> (positions x dim).
std::vector<double> sinusoidal_encoding(std::span<const double> positions, int dim);

/// Latent array cross-attending to a variable-length input, then self-attending;
/// the output is the mean latent.
class Perceiver {
public:
    Perceiver(const PerceiverConfig& cfg, int input_dim, nn::ParameterSet& params, const std::string& prefix, Rng& rng);

    /// seq (T x input_dim) with one position per row -> (1 x latent_dim).
    /// Cross-attention weights are appended to `trace` when given.
    [[nodiscard]] nn::Tensor encode(const nn::Tensor& seq, std::span<const double> positions,
                                    std::vector<nn::AttentionTrace>* trace = nullptr) const;
    /// Positions 0..T-1.
    [[nodiscard]] nn::Tensor encode(const nn::Tensor& seq) const;
    [[nodiscard]] int output_dim() const { return cfg_.latent_dim; }
    [[nodiscard]] int input_dim() const { return input_dim_; }

private:
    struct Block {
        nn::Tensor ln_q_g, ln_q_b, ln_kv_g, ln_kv_b;
        nn::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        nn::Tensor ln_m_g, ln_m_b, w1, b1, w2, b2;
    };

    Block add_block(nn::ParameterSet& params, const std::string& prefix, bool cross, Rng& rng) const;
    nn::Tensor apply(const Block& b, const nn::Tensor& latents, const nn::Tensor* inputs, nn::AttentionTrace* trace) const;

    PerceiverConfig cfg_;
    int input_dim_;
    nn::Tensor latents_, w_in_, b_in_;
    std::vector<Block> cross_;
    std::vector<Block> self_;  // cross_blocks * self_per_cross
};

/// Maps a spectrogram of any length onto exactly 128 frames: zero rows appended
/// when shorter, centre crop when longer.
nn::Tensor fit_to_window(const nn::Tensor& spec);

struct WindowCrnnConfig {
    std::vector<int> conv_channels{16, 32, 64, 64, 128};
    std::vector<int> time_pool{2, 2, 2, 2, 2};
    std::vector<int> freq_pool{2, 2, 2, 2, 2};
    double leaky_slope = 0.01;
    int embedding = 256;  // 2 * LSTM hidden
};

void to_json(nlohmann::json& j, const WindowCrnnConfig& c);
void from_json(const nlohmann::json& j, WindowCrnnConfig& c);

/// Window encoder interface: a (128 x 64) normalized window -> (1 x E).
class WindowEncoder {
public:
    virtual ~WindowEncoder() = default;
    [[nodiscard]] virtual nn::Tensor encode(const nn::Tensor& window) const = 0;
    [[nodiscard]] virtual int output_dim() const = 0;
};

/// Five conv layers and a two-layer bidirectional LSTM, averaged over time.
class WindowCrnn final : public WindowEncoder {
public:
    WindowCrnn(const WindowCrnnConfig& cfg, nn::ParameterSet& params, const std::string& prefix, Rng& rng);
    [[nodiscard]] nn::Tensor encode(const nn::Tensor& window) const override;
    [[nodiscard]] int output_dim() const override { return cfg_.embedding; }

private:
    WindowCrnnConfig cfg_;
    ConvStack convs_;
    BiLstmParams lstm1_, lstm2_;
};

/// Perceiver over the window's spectrogram frames with frame-index positions.
class WindowPerceiver final : public WindowEncoder {
public:
    WindowPerceiver(const PerceiverConfig& cfg, nn::ParameterSet& params, const std::string& prefix, Rng& rng);
    [[nodiscard]] nn::Tensor encode(const nn::Tensor& window) const override;
    [[nodiscard]] int output_dim() const override { return perceiver_.output_dim(); }
    [[nodiscard]] const Perceiver& perceiver() const { return perceiver_; }

private:
    Perceiver perceiver_;
};

}  // namespace fsed
