#include "fsed/nn/parameters.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace fsed::nn {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'E', 'D', 'P', 'A', 'R', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated parameter file: " + path.string());
    return v;
}

}  // namespace

Tensor& ParameterSet::add(const std::string& name, Shape shape, std::vector<double> values) {
    if (contains(name)) throw Error("duplicate parameter: " + name);
    entries_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(values)));
    return entries_.back().second;
}

Tensor& ParameterSet::add_zeros(const std::string& name, Shape shape) {
    const std::size_t n = numel(shape);
    return add(name, std::move(shape), std::vector<double>(n, 0.0));
}

Tensor& ParameterSet::add_constant(const std::string& name, Shape shape, double value) {
    const std::size_t n = numel(shape);
    return add(name, std::move(shape), std::vector<double>(n, value));
}

Tensor& ParameterSet::add_xavier(const std::string& name, Shape shape, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> values(numel(shape));
    for (double& v : values) v = uniform(rng, -bound, bound);
    return add(name, std::move(shape), std::move(values));
}

Tensor& ParameterSet::get(const std::string& name) {
    for (auto& [n, t] : entries_) {
        if (n == name) return t;
    }
    throw Error("unknown parameter: " + name);
}

const Tensor& ParameterSet::get(const std::string& name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) return t;
    }
    throw Error("unknown parameter: " + name);
}

bool ParameterSet::contains(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.first == name) return true;
    }
    return false;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

double ParameterSet::grad_norm() const {
    double s = 0.0;
    for (const auto& e : entries_) {
        for (double g : e.second.node()->grad) s += g * g;
    }
    return std::sqrt(s);
}

double Adam::step(ParameterSet& params) {
    auto& entries = params.entries();
    if (m_.empty()) {
        for (auto& e : entries) {
            m_.emplace_back(e.second.size(), 0.0);
            v_.emplace_back(e.second.size(), 0.0);
        }
    }
    if (m_.size() != entries.size()) throw Error("optimizer state does not match parameter set");

    const double norm = params.grad_norm();
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < entries.size(); ++p) {
        Tensor& t = entries[p].second;
        auto& g = t.grad();
        auto& w = t.mutable_values();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            w[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
    }
    return norm;
}

void save_parameters(const ParameterSet& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put(out, static_cast<std::uint64_t>(params.entries().size()));
    for (const auto& [name, t] : params.entries()) {
        put(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put(out, static_cast<std::uint32_t>(t.ndim()));
        for (int d : t.shape()) put(out, static_cast<std::int32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw Error("failed writing " + path.string());
}

void load_parameters(ParameterSet& params, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw Error("not a parameter file: " + path.string());
    }
    const auto count = take<std::uint64_t>(in, path);
    if (count != params.entries().size()) {
        throw Error("parameter count mismatch: file has " + std::to_string(count) + ", model has " +
                    std::to_string(params.entries().size()));
    }
    for (auto& [name, t] : params.entries()) {
        const auto len = take<std::uint32_t>(in, path);
        std::string stored(len, '\0');
        if (!in.read(stored.data(), len)) throw Error("truncated parameter file: " + path.string());
        if (stored != name) throw Error("parameter name mismatch: expected " + name + ", found " + stored);
        const auto rank = take<std::uint32_t>(in, path);
        Shape shape(rank);
        for (auto& d : shape) d = take<std::int32_t>(in, path);
        if (shape != t.shape()) {
            throw Error("shape mismatch for " + name + ": " + shape_str(shape) + " vs " + shape_str(t.shape()));
        }
        auto& values = t.mutable_values();
        if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
            throw Error("truncated parameter file: " + path.string());
        }
    }
}

}  // namespace fsed::nn
