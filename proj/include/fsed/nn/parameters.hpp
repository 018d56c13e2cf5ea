#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fsed/nn/tensor.hpp"
#include "fsed/rng.hpp"

namespace fsed::nn {

/// Named trainable tensors in registration order. Names are module paths
/// such as "backbone.conv3.weight".
class ParameterSet {
public:
    Tensor& add(const std::string& name, Shape shape, std::vector<double> values);
    Tensor& add_zeros(const std::string& name, Shape shape);
    /// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
    Tensor& add_xavier(const std::string& name, Shape shape, int fan_in, int fan_out, Rng& rng);
    Tensor& add_constant(const std::string& name, Shape shape, double value);

    [[nodiscard]] Tensor& get(const std::string& name);
    [[nodiscard]] const Tensor& get(const std::string& name) const;
    [[nodiscard]] bool contains(const std::string& name) const;

    [[nodiscard]] std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    [[nodiscard]] const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    [[nodiscard]] std::size_t scalar_count() const;

    void zero_grad();
    /// L2 norm over all gradient buffers.
    [[nodiscard]] double grad_norm() const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;  // <= 0 disables clipping
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    /// One update from the accumulated gradients; returns the pre-clip norm.
    double step(ParameterSet& params);
    [[nodiscard]] long long steps() const { return t_; }
    [[nodiscard]] const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    long long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

/// Binary blob: magic, count, then per tensor (name, rank, dims, float64 values).
void save_parameters(const ParameterSet& params, const std::filesystem::path& path);
/// Loads into an already-built set; names, order and shapes must match.
void load_parameters(ParameterSet& params, const std::filesystem::path& path);

}  // namespace fsed::nn
