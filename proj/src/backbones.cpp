#include "fsed/backbones.hpp"

#include <cmath>
#include <numeric>

namespace fsed {

using nn::Tensor;

Tensor spectrogram_tensor(const LogMelSpectrogram& spec, const InputNorm& norm) {
    std::vector<double> values(spec.values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = (static_cast<double>(spec.values[i]) + norm.shift) * norm.scale;
    }
    return Tensor::from({spec.num_frames, spec.num_bands}, std::move(values));
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = {{"conv_channels", c.conv_channels}, {"time_pool", c.time_pool}, {"freq_pool", c.freq_pool},
         {"leaky_slope", c.leaky_slope}, {"hidden", c.hidden}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
    c.conv_channels = j.value("conv_channels", c.conv_channels);
    c.time_pool = j.value("time_pool", c.time_pool);
    c.freq_pool = j.value("freq_pool", c.freq_pool);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.hidden = j.value("hidden", c.hidden);
}

void to_json(nlohmann::json& j, const PerceiverConfig& c) {
    j = {{"num_latents", c.num_latents}, {"latent_dim", c.latent_dim}, {"cross_blocks", c.cross_blocks},
         {"self_per_cross", c.self_per_cross}, {"heads", c.heads}, {"mlp_ratio", c.mlp_ratio}};
}

void from_json(const nlohmann::json& j, PerceiverConfig& c) {
    c.num_latents = j.value("num_latents", c.num_latents);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.cross_blocks = j.value("cross_blocks", c.cross_blocks);
    c.self_per_cross = j.value("self_per_cross", c.self_per_cross);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    if (c.num_latents < 1 || c.latent_dim < 1 || c.heads < 1 || c.latent_dim % c.heads != 0) {
        throw Error("invalid perceiver config");
    }
}

void to_json(nlohmann::json& j, const WindowCrnnConfig& c) {
    j = {{"conv_channels", c.conv_channels}, {"time_pool", c.time_pool}, {"freq_pool", c.freq_pool},
         {"leaky_slope", c.leaky_slope}, {"embedding", c.embedding}};
}

void from_json(const nlohmann::json& j, WindowCrnnConfig& c) {
    c.conv_channels = j.value("conv_channels", c.conv_channels);
    c.time_pool = j.value("time_pool", c.time_pool);
    c.freq_pool = j.value("freq_pool", c.freq_pool);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.embedding = j.value("embedding", c.embedding);
    if (c.embedding % 2 != 0) throw Error("window embedding must be even");
}

BiLstmParams add_bilstm(nn::ParameterSet& params, const std::string& prefix, int in, int hidden, Rng& rng) {
    auto bias = [&](const std::string& name) -> Tensor& {
        // Forget gate starts open.
        std::vector<double> b(static_cast<std::size_t>(4 * hidden), 0.0);
        std::fill(b.begin() + hidden, b.begin() + 2 * hidden, 1.0);
        return params.add(name, {4 * hidden}, std::move(b));
    };
    BiLstmParams p;
    p.fw_ih = params.add_xavier(prefix + ".fw.w_ih", {4 * hidden, in}, in, hidden, rng);
    p.fw_hh = params.add_xavier(prefix + ".fw.w_hh", {4 * hidden, hidden}, hidden, hidden, rng);
    p.fw_b = bias(prefix + ".fw.bias");
    p.bw_ih = params.add_xavier(prefix + ".bw.w_ih", {4 * hidden, in}, in, hidden, rng);
    p.bw_hh = params.add_xavier(prefix + ".bw.w_hh", {4 * hidden, hidden}, hidden, hidden, rng);
    p.bw_b = bias(prefix + ".bw.bias");
    return p;
}

Tensor bilstm(const Tensor& x, const BiLstmParams& p) {
    return nn::concat_cols({nn::lstm(x, p.fw_ih, p.fw_hh, p.fw_b, false), nn::lstm(x, p.bw_ih, p.bw_hh, p.bw_b, true)});
}

ConvStack add_conv_stack(nn::ParameterSet& params, const std::string& prefix, const std::vector<int>& channels,
                         std::vector<int> time_pool, std::vector<int> freq_pool, double slope, Rng& rng) {
    if (time_pool.size() != channels.size() || freq_pool.size() != channels.size()) {
        throw Error("pool schedule must list one factor per conv layer");
    }
    ConvStack s;
    int in = 1;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        const int out = channels[i];
        const std::string name = prefix + ".conv" + std::to_string(i + 1);
        // He-style range suits the leaky rectifier.
        s.weights.push_back(params.add_xavier(name + ".weight", {out, in, 3, 3}, in * 9, in * 9, rng));
        s.biases.push_back(params.add_zeros(name + ".bias", {out}));
        in = out;
    }
    s.time_pool = std::move(time_pool);
    s.freq_pool = std::move(freq_pool);
    s.slope = slope;
    return s;
}

Tensor ConvStack::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        h = nn::leaky_relu(nn::conv2d(h, weights[i], biases[i]), slope);
        if (time_pool[i] > 1 || freq_pool[i] > 1) h = nn::maxpool2d(h, time_pool[i], freq_pool[i]);
    }
    return h;
}

CrnnBackbone::CrnnBackbone(const BackboneConfig& cfg, nn::ParameterSet& params, const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
    const int tp = std::accumulate(cfg.time_pool.begin(), cfg.time_pool.end(), 1, std::multiplies<>());
    if (tp != kBackboneStride) throw Error("backbone temporal pooling must multiply to 8");
    const int fp = std::accumulate(cfg.freq_pool.begin(), cfg.freq_pool.end(), 1, std::multiplies<>());
    if (fp < 1 || kMelBands % fp != 0) throw Error("frequency pooling must divide 64");
    convs_ = add_conv_stack(params, prefix, cfg.conv_channels, cfg.time_pool, cfg.freq_pool, cfg.leaky_slope, rng);
    const int lstm_in = cfg.conv_channels.back() * (kMelBands / fp);
    lstm_ = add_bilstm(params, prefix + ".lstm", lstm_in, cfg.hidden, rng);
}

int CrnnBackbone::output_length(int frames) { return (frames + kBackboneStride - 1) / kBackboneStride; }

Tensor CrnnBackbone::forward(const Tensor& spec) const {
    if (spec.ndim() != 2 || spec.dim(1) != kMelBands) throw Error("backbone expects (T x 64) input");
    const int t = spec.rows();
    if (t < kBackboneStride) throw Error("input too short for backbone");
    const int padded = output_length(t) * kBackboneStride;
    Tensor x = spec;
    if (padded != t) x = nn::concat_rows({spec, Tensor::zeros({padded - t, kMelBands})});
    x = nn::reshape(x, {1, padded, kMelBands});
    const Tensor features = convs_.forward(x);
    return bilstm(nn::chw_to_sequence(features), lstm_);
}

std::vector<int> window_starts(int num_frames) {
    if (num_frames < kWindowFrames) throw Error("spectrogram shorter than one 128-frame window");
    std::vector<int> starts;
    for (int s = 0; s + kWindowFrames <= num_frames; s += kWindowHop) starts.push_back(s);
    return starts;
}

std::vector<double> sinusoidal_encoding(std::span<const double> positions, int dim) {
    std::vector<double> pe(positions.size() * static_cast<std::size_t>(dim));
    for (std::size_t p = 0; p < positions.size(); ++p) {
        for (int i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
            const double a = positions[p] * rate;
            pe[p * static_cast<std::size_t>(dim) + static_cast<std::size_t>(i)] = (i % 2 == 0) ? std::sin(a) : std::cos(a);
        }
    }
    return pe;
}

Perceiver::Perceiver(const PerceiverConfig& cfg, int input_dim, nn::ParameterSet& params, const std::string& prefix,
                     Rng& rng)
    : cfg_(cfg), input_dim_(input_dim) {
    if (cfg.latent_dim % cfg.heads != 0) throw Error("latent_dim must be divisible by heads");
    const int d = cfg.latent_dim;
    std::vector<double> lat(static_cast<std::size_t>(cfg.num_latents) * d);
    for (double& v : lat) v = 0.5 * normal(rng);
    latents_ = params.add(prefix + ".latents", {cfg.num_latents, d}, std::move(lat));
    w_in_ = params.add_xavier(prefix + ".input.weight", {d, input_dim}, input_dim, d, rng);
    b_in_ = params.add_zeros(prefix + ".input.bias", {d});
    for (int c = 0; c < cfg.cross_blocks; ++c) {
        cross_.push_back(add_block(params, prefix + ".cross" + std::to_string(c), true, rng));
        for (int s = 0; s < cfg.self_per_cross; ++s) {
            self_.push_back(add_block(params, prefix + ".self" + std::to_string(c) + "_" + std::to_string(s), false, rng));
        }
    }
}

Perceiver::Block Perceiver::add_block(nn::ParameterSet& params, const std::string& prefix, bool cross, Rng& rng) const {
    const int d = cfg_.latent_dim;
    const int m = d * cfg_.mlp_ratio;
    Block b;
    b.ln_q_g = params.add_constant(prefix + ".ln_q.gamma", {d}, 1.0);
    b.ln_q_b = params.add_zeros(prefix + ".ln_q.beta", {d});
    if (cross) {
        b.ln_kv_g = params.add_constant(prefix + ".ln_kv.gamma", {d}, 1.0);
        b.ln_kv_b = params.add_zeros(prefix + ".ln_kv.beta", {d});
    }
    b.wq = params.add_xavier(prefix + ".q.weight", {d, d}, d, d, rng);
    b.bq = params.add_zeros(prefix + ".q.bias", {d});
    b.wk = params.add_xavier(prefix + ".k.weight", {d, d}, d, d, rng);
    b.bk = params.add_zeros(prefix + ".k.bias", {d});
    b.wv = params.add_xavier(prefix + ".v.weight", {d, d}, d, d, rng);
    b.bv = params.add_zeros(prefix + ".v.bias", {d});
    b.wo = params.add_xavier(prefix + ".o.weight", {d, d}, d, d, rng);
    b.bo = params.add_zeros(prefix + ".o.bias", {d});
    b.ln_m_g = params.add_constant(prefix + ".ln_mlp.gamma", {d}, 1.0);
    b.ln_m_b = params.add_zeros(prefix + ".ln_mlp.beta", {d});
    b.w1 = params.add_xavier(prefix + ".mlp1.weight", {m, d}, d, m, rng);
    b.b1 = params.add_zeros(prefix + ".mlp1.bias", {m});
    b.w2 = params.add_xavier(prefix + ".mlp2.weight", {d, m}, m, d, rng);
    b.b2 = params.add_zeros(prefix + ".mlp2.bias", {d});
    return b;
}

Tensor Perceiver::apply(const Block& b, const Tensor& latents, const Tensor* inputs, nn::AttentionTrace* trace) const {
    const Tensor q_in = nn::layer_norm(latents, b.ln_q_g, b.ln_q_b);
    const Tensor kv_in = inputs ? nn::layer_norm(*inputs, b.ln_kv_g, b.ln_kv_b) : q_in;
    const Tensor q = nn::linear(q_in, b.wq, b.bq);
    const Tensor k = nn::linear(kv_in, b.wk, b.bk);
    const Tensor v = nn::linear(kv_in, b.wv, b.bv);
    Tensor h = nn::add(latents, nn::linear(nn::attention(q, k, v, cfg_.heads, trace), b.wo, b.bo));
    const Tensor m = nn::leaky_relu(nn::linear(nn::layer_norm(h, b.ln_m_g, b.ln_m_b), b.w1, b.b1), 0.01);
    return nn::add(h, nn::linear(m, b.w2, b.b2));
}

Tensor Perceiver::encode(const Tensor& seq, std::span<const double> positions,
                         std::vector<nn::AttentionTrace>* trace) const {
    if (seq.ndim() != 2 || seq.rows() < 1) throw Error("perceiver input sequence is empty");
    if (seq.cols() != input_dim_) throw Error("perceiver input width mismatch");
    if (positions.size() != static_cast<std::size_t>(seq.rows())) throw Error("one position per input row required");
    const Tensor pe = Tensor::from({seq.rows(), cfg_.latent_dim}, sinusoidal_encoding(positions, cfg_.latent_dim));
    const Tensor inputs = nn::add(nn::linear(seq, w_in_, b_in_), pe);
    Tensor lat = latents_;
    std::size_t s = 0;
    for (const Block& c : cross_) {
        nn::AttentionTrace* t = nullptr;
        if (trace) t = &trace->emplace_back();
        lat = apply(c, lat, &inputs, t);
        for (int i = 0; i < cfg_.self_per_cross; ++i) lat = apply(self_[s++], lat, nullptr, nullptr);
    }
    return nn::mean_rows(lat);
}

Tensor Perceiver::encode(const Tensor& seq) const {
    std::vector<double> pos(static_cast<std::size_t>(seq.rows()));
    std::iota(pos.begin(), pos.end(), 0.0);
    return encode(seq, pos);
}

Tensor fit_to_window(const Tensor& spec) {
    const int t = spec.rows();
    if (t == kWindowFrames) return spec;
    if (t < kWindowFrames) return nn::concat_rows({spec, Tensor::zeros({kWindowFrames - t, spec.cols()})});
    const int start = (t - kWindowFrames) / 2;
    return nn::slice_rows(spec, start, start + kWindowFrames);
}

WindowCrnn::WindowCrnn(const WindowCrnnConfig& cfg, nn::ParameterSet& params, const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
    int tp = 1;
    int fp = 1;
    for (int p : cfg.time_pool) tp *= p;
    for (int p : cfg.freq_pool) fp *= p;
    if (kWindowFrames % tp != 0 || kMelBands % fp != 0) throw Error("window pooling must divide the 128 x 64 window");
    convs_ = add_conv_stack(params, prefix, cfg.conv_channels, cfg.time_pool, cfg.freq_pool, cfg.leaky_slope, rng);
    const int hidden = cfg.embedding / 2;
    lstm1_ = add_bilstm(params, prefix + ".lstm1", cfg.conv_channels.back() * (kMelBands / fp), hidden, rng);
    lstm2_ = add_bilstm(params, prefix + ".lstm2", 2 * hidden, hidden, rng);
}

Tensor WindowCrnn::encode(const Tensor& window) const {
    if (window.ndim() != 2 || window.rows() != kWindowFrames || window.cols() != kMelBands) {
        throw Error("window encoder expects a (128 x 64) window");
    }
    const Tensor f = convs_.forward(nn::reshape(window, {1, kWindowFrames, kMelBands}));
    return nn::mean_rows(bilstm(bilstm(nn::chw_to_sequence(f), lstm1_), lstm2_));
}

WindowPerceiver::WindowPerceiver(const PerceiverConfig& cfg, nn::ParameterSet& params, const std::string& prefix,
                                 Rng& rng)
    : perceiver_(cfg, kMelBands, params, prefix, rng) {}

Tensor WindowPerceiver::encode(const Tensor& window) const {
    if (window.ndim() != 2 || window.rows() != kWindowFrames || window.cols() != kMelBands) {
        throw Error("window encoder expects a (128 x 64) window");
    }
    return perceiver_.encode(window);
}

}  // namespace fsed
