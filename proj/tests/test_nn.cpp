#include <doctest.h>

#include <numeric>

#include "fsed/nn/ops.hpp"
#include "fsed/nn/parameters.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace fsed;
using namespace fsed::nn;
using test::grad_check;
using test::project;
using test::random_param;

namespace {
constexpr double kTol = 1e-6;
}

TEST_SUITE("nn") {

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(1);
    Tensor a = random_param({3, 4}, rng);
    Tensor b = random_param({3, 4}, rng);
    CHECK(grad_check([&] { return project(add(a, b)); }, {a, b}).worst < kTol);
    CHECK(grad_check([&] { return project(sub(a, b)); }, {a, b}).worst < kTol);
    CHECK(grad_check([&] { return project(mul(a, b)); }, {a, b}).worst < kTol);
    CHECK(grad_check([&] { return project(scale(a, -2.5)); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(leaky_relu(a, 0.01)); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(sigmoid(a)); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(tanh(a)); }, {a}).worst < kTol);
}

TEST_CASE("shape ops match finite differences") {
    Rng rng(2);
    Tensor a = random_param({4, 3}, rng);
    Tensor b = random_param({2, 3}, rng);
    Tensor c = random_param({4, 2}, rng);
    Tensor s = random_param({1}, rng);
    CHECK(grad_check([&] { return project(reshape(a, {2, 6})); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(transpose(a)); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(concat_rows({a, b})); }, {a, b}).worst < kTol);
    CHECK(grad_check([&] { return project(concat_cols({a, c})); }, {a, c}).worst < kTol);
    CHECK(grad_check([&] { return project(slice_rows(a, 1, 3)); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(select_rows(a, {3, 0, 3})); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(max_rows(a, 0, 4)); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(mean_rows(a)); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return mean(a); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(softmax_rows(a)); }, {a}).worst < kTol);
    CHECK(grad_check([&] { return project(append_column(a, s)); }, {a, s}).worst < kTol);
}

TEST_CASE("matmul, linear and distances match finite differences") {
    Rng rng(3);
    Tensor a = random_param({3, 5}, rng);
    Tensor b = random_param({5, 2}, rng);
    Tensor w = random_param({4, 5}, rng);
    Tensor bias = random_param({4}, rng);
    Tensor c = random_param({6, 5}, rng);
    CHECK(grad_check([&] { return project(matmul(a, b)); }, {a, b}).worst < kTol);
    CHECK(grad_check([&] { return project(linear(a, w, bias)); }, {a, w, bias}).worst < kTol);
    CHECK(grad_check([&] { return project(sq_distances(a, c)); }, {a, c}).worst < kTol);
}

TEST_CASE("sq_distances agrees with a direct sum") {
    Rng rng(4);
    Tensor a = test::random_const({3, 7}, rng);
    Tensor c = test::random_const({4, 7}, rng);
    const Tensor d = sq_distances(a, c);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 7; ++k) {
                const double diff = a.at(static_cast<std::size_t>(i * 7 + k)) - c.at(static_cast<std::size_t>(j * 7 + k));
                s += diff * diff;
            }
            CHECK(d.at(static_cast<std::size_t>(i * 4 + j)) == doctest::Approx(s).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv2d matches a direct convolution and finite differences") {
    Rng rng(5);
    Tensor x = random_param({2, 5, 6}, rng);
    Tensor w = random_param({3, 2, 3, 3}, rng);
    Tensor b = random_param({3}, rng);
    const Tensor y = conv2d(x, w, b);
    REQUIRE(y.shape() == Shape{3, 5, 6});
    for (int o = 0; o < 3; ++o) {
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 6; ++j) {
                double s = b.at(static_cast<std::size_t>(o));
                for (int c = 0; c < 2; ++c) {
                    for (int di = 0; di < 3; ++di) {
                        for (int dj = 0; dj < 3; ++dj) {
                            const int ii = i + di - 1;
                            const int jj = j + dj - 1;
                            if (ii < 0 || ii >= 5 || jj < 0 || jj >= 6) continue;
                            s += w.at(static_cast<std::size_t>(((o * 2 + c) * 3 + di) * 3 + dj)) *
                                 x.at(static_cast<std::size_t>((c * 5 + ii) * 6 + jj));
                        }
                    }
                }
                CHECK(y.at(static_cast<std::size_t>((o * 5 + i) * 6 + j)) == doctest::Approx(s).epsilon(1e-12));
            }
        }
    }
    CHECK(grad_check([&] { return project(conv2d(x, w, b)); }, {x, w, b}).worst < kTol);
}

TEST_CASE("maxpool2d and sequence reshaping") {
    Rng rng(6);
    Tensor x = random_param({2, 5, 4}, rng);
    const Tensor p = maxpool2d(x, 2, 2);
    REQUIRE(p.shape() == Shape{2, 2, 2});
    double m = -1e9;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) m = std::max(m, x.at(static_cast<std::size_t>(i * 4 + j)));
    }
    CHECK(p.at(0) == m);
    CHECK(grad_check([&] { return project(maxpool2d(x, 2, 2)); }, {x}).worst < kTol);
    const Tensor s = chw_to_sequence(x);
    REQUIRE(s.shape() == Shape{5, 8});
    // Row t holds channel 0 bands then channel 1 bands.
    CHECK(s.at(static_cast<std::size_t>(3 * 8 + 4 + 1)) == x.at(static_cast<std::size_t>((1 * 5 + 3) * 4 + 1)));
    CHECK(grad_check([&] { return project(chw_to_sequence(x)); }, {x}).worst < kTol);
}

TEST_CASE("conv1d with stride matches a direct evaluation") {
    Rng rng(7);
    Tensor x = random_param({9, 3}, rng);
    Tensor w = random_param({4, 3 * 3}, rng);
    Tensor b = random_param({4}, rng);
    const Tensor y = conv1d(x, w, b, 3, 2);
    REQUIRE(y.shape() == Shape{5, 4});
    for (int t = 0; t < 5; ++t) {
        for (int o = 0; o < 4; ++o) {
            double s = b.at(static_cast<std::size_t>(o));
            for (int k = 0; k < 3; ++k) {
                const int src = 2 * t + k - 1;
                if (src < 0 || src >= 9) continue;
                for (int d = 0; d < 3; ++d) {
                    s += w.at(static_cast<std::size_t>(o * 9 + k * 3 + d)) * x.at(static_cast<std::size_t>(src * 3 + d));
                }
            }
            CHECK(y.at(static_cast<std::size_t>(t * 4 + o)) == doctest::Approx(s).epsilon(1e-12));
        }
    }
    CHECK(grad_check([&] { return project(conv1d(x, w, b, 3, 2)); }, {x, w, b}).worst < kTol);
}

TEST_CASE("lstm matches a scalar reference and finite differences") {
    Rng rng(8);
    const int T = 5, In = 3, H = 2;
    Tensor x = random_param({T, In}, rng, 0.5);
    Tensor wih = random_param({4 * H, In}, rng, 0.5);
    Tensor whh = random_param({4 * H, H}, rng, 0.5);
    Tensor b = random_param({4 * H}, rng, 0.5);
    for (bool reverse : {false, true}) {
        const Tensor y = lstm(x, wih, whh, b, reverse);
        REQUIRE(y.shape() == Shape{T, H});
        std::vector<double> h(H, 0.0), c(H, 0.0);
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        for (int s = 0; s < T; ++s) {
            const int t = reverse ? T - 1 - s : s;
            std::vector<double> z(4 * H);
            for (int g = 0; g < 4 * H; ++g) {
                z[static_cast<std::size_t>(g)] = b.at(static_cast<std::size_t>(g));
                for (int i = 0; i < In; ++i) z[static_cast<std::size_t>(g)] += wih.at(static_cast<std::size_t>(g * In + i)) * x.at(static_cast<std::size_t>(t * In + i));
                for (int j = 0; j < H; ++j) z[static_cast<std::size_t>(g)] += whh.at(static_cast<std::size_t>(g * H + j)) * h[static_cast<std::size_t>(j)];
            }
            for (int j = 0; j < H; ++j) {
                const auto u = static_cast<std::size_t>(j);
                const double ig = sig(z[u]), fg = sig(z[H + u]), gg = std::tanh(z[2 * H + u]), og = sig(z[3 * H + u]);
                c[u] = fg * c[u] + ig * gg;
                h[u] = og * std::tanh(c[u]);
            }
            for (int j = 0; j < H; ++j) CHECK(y.at(static_cast<std::size_t>(t * H + j)) == doctest::Approx(h[static_cast<std::size_t>(j)]).epsilon(1e-12));
        }
        CHECK(grad_check([&] { return project(lstm(x, wih, whh, b, reverse)); }, {x, wih, whh, b}).worst < kTol);
    }
}

TEST_CASE("layer_norm and attention match finite differences") {
    Rng rng(9);
    Tensor x = random_param({4, 6}, rng);
    Tensor g = random_param({6}, rng);
    Tensor be = random_param({6}, rng);
    CHECK(grad_check([&] { return project(layer_norm(x, g, be)); }, {x, g, be}).worst < kTol);
    Tensor q = random_param({3, 8}, rng);
    Tensor k = random_param({5, 8}, rng);
    Tensor v = random_param({5, 8}, rng);
    CHECK(grad_check([&] { return project(attention(q, k, v, 2)); }, {q, k, v}).worst < kTol);
}

TEST_CASE("attention rows are distributions and permutation-equivariant in keys") {
    Rng rng(10);
    Tensor q = test::random_const({3, 8}, rng);
    Tensor k = test::random_const({6, 8}, rng);
    Tensor v = test::random_const({6, 8}, rng);
    AttentionTrace trace;
    const Tensor out = attention(q, k, v, 4, &trace);
    REQUIRE(trace.weights.size() == 4);
    for (const auto& head : trace.weights) {
        for (int i = 0; i < trace.queries; ++i) {
            double s = 0.0;
            for (int j = 0; j < trace.keys; ++j) s += head[static_cast<std::size_t>(i * trace.keys + j)];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    const std::vector<int> perm{5, 2, 0, 4, 1, 3};
    const Tensor out2 = attention(q, select_rows(k, perm), select_rows(v, perm), 4);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out2.at(i) == doctest::Approx(out.at(i)).epsilon(1e-12));
}

TEST_CASE("no-grad mode builds no graph") {
    Rng rng(11);
    Tensor a = random_param({2, 2}, rng);
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_enabled());
        const Tensor y = mul(a, a);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node()->parents.empty());
    }
    CHECK(grad_enabled());
    CHECK(mul(a, a).requires_grad());
}

TEST_CASE("gradients accumulate across backward calls") {
    Tensor a = Tensor::parameter({1}, {3.0});
    mul(a, a).backward();
    mul(a, a).backward();
    CHECK(a.grad()[0] == doctest::Approx(12.0));
    a.zero_grad();
    CHECK(a.grad()[0] == 0.0);
}

TEST_CASE("shape mismatches throw") {
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), Error);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
    CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {4, 2}), Error);
    CHECK_THROWS_AS(slice_rows(Tensor::zeros({2, 3}), 1, 3), Error);
}

TEST_CASE("adam step, clipping and parameter files") {
    Rng rng(12);
    ParameterSet ps;
    ps.add_xavier("a.weight", {3, 4}, 4, 3, rng);
    ps.add_zeros("a.bias", {3});
    ps.add_constant("b", {1}, 2.0);
    CHECK(ps.scalar_count() == 16);
    const double bound = std::sqrt(6.0 / 7.0);
    for (double v : ps.get("a.weight").values()) CHECK(std::abs(v) <= bound);

    ps.get("b").grad()[0] = 100.0;
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.clip_norm = 5.0;
    Adam adam(cfg);
    CHECK(adam.step(ps) == doctest::Approx(100.0));
    // First Adam step moves each coordinate by lr regardless of gradient scale.
    CHECK(ps.get("b").at(0) == doctest::Approx(1.9).epsilon(1e-6));

    test::TempDir dir("params");
    save_parameters(ps, dir.path() / "p.bin");
    ParameterSet other;
    other.add_zeros("a.weight", {3, 4});
    other.add_zeros("a.bias", {3});
    other.add_zeros("b", {1});
    load_parameters(other, dir.path() / "p.bin");
    for (std::size_t i = 0; i < ps.entries().size(); ++i) {
        const auto& x = ps.entries()[i].second.values();
        const auto& y = other.entries()[i].second.values();
        CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
    }
    ParameterSet wrong;
    wrong.add_zeros("a.weight", {4, 3});
    wrong.add_zeros("a.bias", {3});
    wrong.add_zeros("b", {1});
    CHECK_THROWS_WITH_AS(load_parameters(wrong, dir.path() / "p.bin"), doctest::Contains("shape mismatch"), Error);
    ParameterSet fewer;
    fewer.add_zeros("a.weight", {3, 4});
    CHECK_THROWS_WITH_AS(load_parameters(fewer, dir.path() / "p.bin"), doctest::Contains("parameter count mismatch"), Error);
}

}  // TEST_SUITE
