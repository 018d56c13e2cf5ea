#include "fsed/nn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace fsed::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

CMap cmat(const std::vector<double>& v, int rows, int cols) { return CMap(v.data(), rows, cols); }
Map mat(std::vector<double>& v, int rows, int cols) { return Map(v.data(), rows, cols); }

void require(bool ok, const char* what) {
    if (!ok) throw Error(what);
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }
bool wants(Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.size() == b.size(), "add: size mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (!wants(self, p)) continue;
            auto& g = parent(self, p).grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.size() == b.size(), "sub: size mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) {
            auto& g = parent(self, 0).grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(self, 1)) {
            auto& g = parent(self, 1).grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.size() == b.size(), "mul: size mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = parent(self, 0).value;
        const auto& bv = parent(self, 1).value;
        if (wants(self, 0)) {
            auto& g = parent(self, 0).grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (wants(self, 1)) {
            auto& g = parent(self, 1).grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out[i] = x > 0.0 ? x : slope * x;
    }
    return make_result(a.shape(), std::move(out), {a}, [slope](Node& self) {
        const auto& x = parent(self, 0).value;
        auto& g = parent(self, 0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (x[i] > 0.0 ? 1.0 : slope);
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigm(a.data()[i]);
    return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor tanh(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
    return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    require(numel(shape) == a.size(), "reshape: element count mismatch");
    std::vector<double> out(a.values().begin(), a.values().end());
    return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor transpose(const Tensor& a) {
    const int r = a.rows();
    const int c = a.cols();
    std::vector<double> out(a.size());
    mat(out, c, r) = cmat(a.node()->value, r, c).transpose();
    return make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
        mat(parent(self, 0).grad, r, c) += cmat(self.grad, c, r).transpose();
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const int cols = parts.front().cols();
    int rows = 0;
    for (const auto& p : parts) {
        require(p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rows) * cols);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_result({rows, cols}, std::move(out), parts, [](Node& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const std::size_t n = self.parents[p]->value.size();
            if (wants(self, p)) {
                auto& g = parent(self, p).grad;
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            }
            offset += n;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const int rows = parts.front().rows();
    int cols = 0;
    for (const auto& p : parts) {
        require(p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * cols);
    int offset = 0;
    for (const auto& p : parts) {
        mat(out, rows, cols).middleCols(offset, p.cols()) = cmat(p.node()->value, rows, p.cols());
        offset += p.cols();
    }
    return make_result({rows, cols}, std::move(out), parts, [rows, cols](Node& self) {
        int off = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const int c = static_cast<int>(self.parents[p]->value.size()) / rows;
            if (wants(self, p)) mat(parent(self, p).grad, rows, c) += cmat(self.grad, rows, cols).middleCols(off, c);
            off += c;
        }
    });
}

Tensor slice_rows(const Tensor& a, int begin, int end) {
    require(0 <= begin && begin < end && end <= a.rows(), "slice_rows: bad range");
    const int cols = a.cols();
    const auto first = static_cast<std::size_t>(begin) * cols;
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(first),
                            a.values().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(end) * cols));
    return make_result({end - begin, cols}, std::move(out), {a}, [first](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[first + i] += self.grad[i];
    });
}

Tensor select_rows(const Tensor& a, const std::vector<int>& rows) {
    const int cols = a.cols();
    std::vector<double> out(rows.size() * static_cast<std::size_t>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r] >= 0 && rows[r] < a.rows(), "select_rows: index out of range");
        std::copy_n(a.data() + static_cast<std::size_t>(rows[r]) * cols, cols, out.data() + r * cols);
    }
    return make_result({static_cast<int>(rows.size()), cols}, std::move(out), {a}, [rows, cols](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (int c = 0; c < cols; ++c) {
                g[static_cast<std::size_t>(rows[r]) * cols + c] += self.grad[r * cols + static_cast<std::size_t>(c)];
            }
        }
    });
}

Tensor max_rows(const Tensor& a, int begin, int end) {
    require(0 <= begin && begin < end && end <= a.rows(), "degenerate region");
    const int cols = a.cols();
    std::vector<double> out(static_cast<std::size_t>(cols), -std::numeric_limits<double>::infinity());
    std::vector<int> arg(static_cast<std::size_t>(cols), begin);
    for (int r = begin; r < end; ++r) {
        const double* row = a.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
            if (row[c] > out[static_cast<std::size_t>(c)]) {
                out[static_cast<std::size_t>(c)] = row[c];
                arg[static_cast<std::size_t>(c)] = r;
            }
        }
    }
    return make_result({1, cols}, std::move(out), {a}, [arg = std::move(arg), cols](Node& self) {
        auto& g = parent(self, 0).grad;
        for (int c = 0; c < cols; ++c) {
            g[static_cast<std::size_t>(arg[static_cast<std::size_t>(c)]) * cols + c] += self.grad[static_cast<std::size_t>(c)];
        }
    });
}

Tensor mean_rows(const Tensor& a) {
    const int rows = a.rows();
    const int cols = a.cols();
    std::vector<double> out(static_cast<std::size_t>(cols), 0.0);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c)] += a.data()[static_cast<std::size_t>(r) * cols + c];
    }
    for (double& v : out) v /= rows;
    return make_result({1, cols}, std::move(out), {a}, [rows, cols](Node& self) {
        auto& g = parent(self, 0).grad;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) g[static_cast<std::size_t>(r) * cols + c] += self.grad[static_cast<std::size_t>(c)] / rows;
        }
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_result({1}, {s}, {a}, [](Node& self) {
        auto& g = parent(self, 0).grad;
        for (double& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor softmax_rows(const Tensor& a) {
    const int rows = a.rows();
    const int cols = a.cols();
    std::vector<double> out(a.size());
    for (int r = 0; r < rows; ++r) {
        const double* x = a.data() + static_cast<std::size_t>(r) * cols;
        double* y = out.data() + static_cast<std::size_t>(r) * cols;
        const double m = *std::max_element(x, x + cols);
        double z = 0.0;
        for (int c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - m));
        for (int c = 0; c < cols; ++c) y[c] /= z;
    }
    return make_result(a.shape(), std::move(out), {a}, [rows, cols](Node& self) {
        auto& g = parent(self, 0).grad;
        for (int r = 0; r < rows; ++r) {
            const double* y = self.value.data() + static_cast<std::size_t>(r) * cols;
            const double* dy = self.grad.data() + static_cast<std::size_t>(r) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += dy[c] * y[c];
            for (int c = 0; c < cols; ++c) g[static_cast<std::size_t>(r) * cols + c] += y[c] * (dy[c] - dot);
        }
    });
}

Tensor append_column(const Tensor& a, const Tensor& s) {
    require(s.size() == 1, "append_column: scalar expected");
    const int rows = a.rows();
    const int cols = a.cols();
    std::vector<double> out(static_cast<std::size_t>(rows) * (cols + 1));
    for (int r = 0; r < rows; ++r) {
        std::copy_n(a.data() + static_cast<std::size_t>(r) * cols, cols, out.data() + static_cast<std::size_t>(r) * (cols + 1));
        out[static_cast<std::size_t>(r) * (cols + 1) + cols] = s.item();
    }
    return make_result({rows, cols + 1}, std::move(out), {a, s}, [rows, cols](Node& self) {
        for (int r = 0; r < rows; ++r) {
            const double* dy = self.grad.data() + static_cast<std::size_t>(r) * (cols + 1);
            if (wants(self, 0)) {
                auto& g = parent(self, 0).grad;
                for (int c = 0; c < cols; ++c) g[static_cast<std::size_t>(r) * cols + c] += dy[c];
            }
            if (wants(self, 1)) parent(self, 1).grad[0] += dy[cols];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int m = a.rows();
    const int k = a.cols();
    require(b.rows() == k, "matmul: inner dimension mismatch");
    const int n = b.cols();
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    mat(out, m, n).noalias() = cmat(a.node()->value, m, k) * cmat(b.node()->value, k, n);
    return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        const auto dy = cmat(self.grad, m, n);
        if (wants(self, 0)) mat(parent(self, 0).grad, m, k).noalias() += dy * cmat(parent(self, 1).value, k, n).transpose();
        if (wants(self, 1)) mat(parent(self, 1).grad, k, n).noalias() += cmat(parent(self, 0).value, m, k).transpose() * dy;
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const int m = x.rows();
    const int in = x.cols();
    const int out_dim = weight.rows();
    require(weight.cols() == in, "linear: input width mismatch");
    require(bias.size() == static_cast<std::size_t>(out_dim), "linear: bias size mismatch");
    std::vector<double> out(static_cast<std::size_t>(m) * out_dim);
    auto y = mat(out, m, out_dim);
    y.noalias() = cmat(x.node()->value, m, in) * cmat(weight.node()->value, out_dim, in).transpose();
    y.rowwise() += CVecMap(bias.data(), out_dim).transpose();
    return make_result({m, out_dim}, std::move(out), {x, weight, bias}, [m, in, out_dim](Node& self) {
        const auto dy = cmat(self.grad, m, out_dim);
        if (wants(self, 0)) mat(parent(self, 0).grad, m, in).noalias() += dy * cmat(parent(self, 1).value, out_dim, in);
        if (wants(self, 1)) mat(parent(self, 1).grad, out_dim, in).noalias() += dy.transpose() * cmat(parent(self, 0).value, m, in);
        if (wants(self, 2)) VecMap(parent(self, 2).grad.data(), out_dim) += dy.colwise().sum().transpose();
    });
}

namespace {

struct ConvGeom {
    int c, h, w, kh, kw, ph, pw;
};

// cols: (C*kh*kw) x (H*W)
void im2col(const double* x, const ConvGeom& g, double* cols) {
    const int hw = g.h * g.w;
    for (int c = 0; c < g.c; ++c) {
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                double* dst = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * hw;
                for (int y = 0; y < g.h; ++y) {
                    const int sy = y + i - g.ph;
                    double* row = dst + static_cast<std::size_t>(y) * g.w;
                    if (sy < 0 || sy >= g.h) {
                        std::fill_n(row, g.w, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<std::size_t>(c) * g.h + sy) * g.w;
                    for (int xx = 0; xx < g.w; ++xx) {
                        const int sx = xx + j - g.pw;
                        row[xx] = (sx < 0 || sx >= g.w) ? 0.0 : src[sx];
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, const ConvGeom& g, double* dx) {
    const int hw = g.h * g.w;
    for (int c = 0; c < g.c; ++c) {
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                const double* src = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * hw;
                for (int y = 0; y < g.h; ++y) {
                    const int sy = y + i - g.ph;
                    if (sy < 0 || sy >= g.h) continue;
                    double* dst = dx + (static_cast<std::size_t>(c) * g.h + sy) * g.w;
                    const double* row = src + static_cast<std::size_t>(y) * g.w;
                    for (int xx = 0; xx < g.w; ++xx) {
                        const int sx = xx + j - g.pw;
                        if (sx >= 0 && sx < g.w) dst[sx] += row[xx];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require(x.ndim() == 3 && weight.ndim() == 4, "conv2d: expects (C,H,W) input and (O,C,kh,kw) weight");
    const ConvGeom g{x.dim(0), x.dim(1), x.dim(2), weight.dim(2), weight.dim(3), weight.dim(2) / 2, weight.dim(3) / 2};
    require(weight.dim(1) == g.c, "conv2d: channel mismatch");
    const int out_ch = weight.dim(0);
    const int patch = g.c * g.kh * g.kw;
    const int hw = g.h * g.w;

    std::vector<double> cols(static_cast<std::size_t>(patch) * hw);
    im2col(x.data(), g, cols.data());
    std::vector<double> out(static_cast<std::size_t>(out_ch) * hw);
    auto y = mat(out, out_ch, hw);
    y.noalias() = cmat(weight.node()->value, out_ch, patch) * cmat(cols, patch, hw);
    y.colwise() += CVecMap(bias.data(), out_ch);
    cols = {};

    return make_result({out_ch, g.h, g.w}, std::move(out), {x, weight, bias}, [g, out_ch, patch, hw](Node& self) {
        const auto dy = cmat(self.grad, out_ch, hw);
        std::vector<double> cols(static_cast<std::size_t>(patch) * hw);
        if (wants(self, 1)) {
            im2col(parent(self, 0).value.data(), g, cols.data());
            mat(parent(self, 1).grad, out_ch, patch).noalias() += dy * cmat(cols, patch, hw).transpose();
        }
        if (wants(self, 2)) VecMap(parent(self, 2).grad.data(), out_ch) += dy.rowwise().sum();
        if (wants(self, 0)) {
            mat(cols, patch, hw).noalias() = cmat(parent(self, 1).value, out_ch, patch).transpose() * dy;
            col2im(cols.data(), g, parent(self, 0).grad.data());
        }
    });
}

Tensor maxpool2d(const Tensor& x, int ph, int pw) {
    require(x.ndim() == 3 && ph >= 1 && pw >= 1, "maxpool2d: expects (C,H,W) input");
    const int c = x.dim(0);
    const int h = x.dim(1);
    const int w = x.dim(2);
    const int oh = h / ph;
    const int ow = w / pw;
    require(oh >= 1 && ow >= 1, "maxpool2d: input smaller than the pooling window");
    std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
    std::vector<std::size_t> arg(out.size());
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (int a = 0; a < ph; ++a) {
                    for (int b = 0; b < pw; ++b) {
                        const std::size_t idx = (static_cast<std::size_t>(ch) * h + i * ph + a) * w + j * pw + b;
                        if (x.data()[idx] > best) {
                            best = x.data()[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t o = (static_cast<std::size_t>(ch) * oh + i) * ow + j;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    return make_result({c, oh, ow}, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
    });
}

Tensor chw_to_sequence(const Tensor& x) {
    require(x.ndim() == 3, "chw_to_sequence: expects (C,T,F)");
    const int c = x.dim(0);
    const int t = x.dim(1);
    const int f = x.dim(2);
    std::vector<double> out(x.size());
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < t; ++i) {
            for (int k = 0; k < f; ++k) {
                out[static_cast<std::size_t>(i) * c * f + ch * f + k] = x.data()[(static_cast<std::size_t>(ch) * t + i) * f + k];
            }
        }
    }
    return make_result({t, c * f}, std::move(out), {x}, [c, t, f](Node& self) {
        auto& g = parent(self, 0).grad;
        for (int ch = 0; ch < c; ++ch) {
            for (int i = 0; i < t; ++i) {
                for (int k = 0; k < f; ++k) {
                    g[(static_cast<std::size_t>(ch) * t + i) * f + k] += self.grad[static_cast<std::size_t>(i) * c * f + ch * f + k];
                }
            }
        }
    });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, int kernel, int stride) {
    const int t = x.rows();
    const int d = x.cols();
    const int out_dim = weight.rows();
    require(weight.cols() == kernel * d, "conv1d: weight width must be kernel * input width");
    require(stride >= 1 && kernel >= 1, "conv1d: kernel and stride must be positive");
    const int t_out = (t + stride - 1) / stride;
    const int half = (kernel - 1) / 2;
    const int width = kernel * d;

    auto build_rows = [t, d, t_out, stride, half, kernel, width](const double* src) {
        std::vector<double> r(static_cast<std::size_t>(t_out) * width, 0.0);
        for (int o = 0; o < t_out; ++o) {
            for (int j = 0; j < kernel; ++j) {
                const int s = o * stride + j - half;
                if (s < 0 || s >= t) continue;
                std::copy_n(src + static_cast<std::size_t>(s) * d, d, r.data() + static_cast<std::size_t>(o) * width + j * d);
            }
        }
        return r;
    };

    const std::vector<double> r = build_rows(x.data());
    std::vector<double> out(static_cast<std::size_t>(t_out) * out_dim);
    auto y = mat(out, t_out, out_dim);
    y.noalias() = cmat(r, t_out, width) * cmat(weight.node()->value, out_dim, width).transpose();
    y.rowwise() += CVecMap(bias.data(), out_dim).transpose();

    return make_result({t_out, out_dim}, std::move(out), {x, weight, bias},
                       [=](Node& self) {
                           const auto dy = cmat(self.grad, t_out, out_dim);
                           if (wants(self, 1)) {
                               const auto rows = build_rows(parent(self, 0).value.data());
                               mat(parent(self, 1).grad, out_dim, width).noalias() += dy.transpose() * cmat(rows, t_out, width);
                           }
                           if (wants(self, 2)) VecMap(parent(self, 2).grad.data(), out_dim) += dy.colwise().sum().transpose();
                           if (wants(self, 0)) {
                               std::vector<double> dr(static_cast<std::size_t>(t_out) * width);
                               mat(dr, t_out, width).noalias() = dy * cmat(parent(self, 1).value, out_dim, width);
                               auto& g = parent(self, 0).grad;
                               for (int o = 0; o < t_out; ++o) {
                                   for (int j = 0; j < kernel; ++j) {
                                       const int s = o * stride + j - half;
                                       if (s < 0 || s >= t) continue;
                                       for (int k = 0; k < d; ++k) {
                                           g[static_cast<std::size_t>(s) * d + k] += dr[static_cast<std::size_t>(o) * width + j * d + k];
                                       }
                                   }
                               }
                           }
                       });
}

Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse) {
    const int t_len = x.rows();
    const int in = x.cols();
    const int h = w_hh.cols();
    const int g4 = 4 * h;
    require(w_ih.rows() == g4 && w_ih.cols() == in, "lstm: input weight shape mismatch");
    require(w_hh.rows() == g4, "lstm: recurrent weight shape mismatch");
    require(bias.size() == static_cast<std::size_t>(g4), "lstm: bias size mismatch");

    // gates: activated i, f, g, o per step; cells: c_t per step.
    auto gates = std::make_shared<std::vector<double>>(static_cast<std::size_t>(t_len) * g4);
    auto cells = std::make_shared<std::vector<double>>(static_cast<std::size_t>(t_len) * h);
    std::vector<double> out(static_cast<std::size_t>(t_len) * h);

    auto pre = mat(*gates, t_len, g4);
    pre.noalias() = cmat(x.node()->value, t_len, in) * cmat(w_ih.node()->value, g4, in).transpose();
    pre.rowwise() += CVecMap(bias.data(), g4).transpose();
    const auto whh = cmat(w_hh.node()->value, g4, h);

    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(h);
    Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(h);
    Eigen::VectorXd z(g4);
    for (int s = 0; s < t_len; ++s) {
        const int t = reverse ? t_len - 1 - s : s;
        double* gt = gates->data() + static_cast<std::size_t>(t) * g4;
        z = VecMap(gt, g4) + whh * h_prev;
        double* ct = cells->data() + static_cast<std::size_t>(t) * h;
        double* ht = out.data() + static_cast<std::size_t>(t) * h;
        for (int k = 0; k < h; ++k) {
            const double ig = sigm(z[k]);
            const double fg = sigm(z[h + k]);
            const double gg = std::tanh(z[2 * h + k]);
            const double og = sigm(z[3 * h + k]);
            gt[k] = ig;
            gt[h + k] = fg;
            gt[2 * h + k] = gg;
            gt[3 * h + k] = og;
            ct[k] = fg * c_prev[k] + ig * gg;
            ht[k] = og * std::tanh(ct[k]);
        }
        h_prev = VecMap(ht, h);
        c_prev = VecMap(ct, h);
    }

    return make_result({t_len, h}, std::move(out), {x, w_ih, w_hh, bias},
                       [=](Node& self) {
                           const auto& hs = self.value;
                           std::vector<double> dgates(static_cast<std::size_t>(t_len) * g4);
                           const auto whh_m = cmat(parent(self, 2).value, g4, h);
                           Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(h);
                           Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(h);
                           for (int s = t_len - 1; s >= 0; --s) {
                               const int t = reverse ? t_len - 1 - s : s;
                               const int t_prev = reverse ? t + 1 : t - 1;
                               const bool has_prev = s > 0;
                               const double* gt = gates->data() + static_cast<std::size_t>(t) * g4;
                               const double* ct = cells->data() + static_cast<std::size_t>(t) * h;
                               const double* cp = has_prev ? cells->data() + static_cast<std::size_t>(t_prev) * h : nullptr;
                               double* dg = dgates.data() + static_cast<std::size_t>(t) * g4;
                               for (int k = 0; k < h; ++k) {
                                   const double ig = gt[k], fg = gt[h + k], gg = gt[2 * h + k], og = gt[3 * h + k];
                                   const double tc = std::tanh(ct[k]);
                                   const double dh = self.grad[static_cast<std::size_t>(t) * h + k] + dh_next[k];
                                   const double dc = dh * og * (1.0 - tc * tc) + dc_next[k];
                                   const double c_before = has_prev ? cp[k] : 0.0;
                                   dg[k] = dc * gg * ig * (1.0 - ig);
                                   dg[h + k] = dc * c_before * fg * (1.0 - fg);
                                   dg[2 * h + k] = dc * ig * (1.0 - gg * gg);
                                   dg[3 * h + k] = dh * tc * og * (1.0 - og);
                                   dc_next[k] = dc * fg;
                               }
                               const CVecMap dgv(dg, g4);
                               dh_next.noalias() = whh_m.transpose() * dgv;
                               if (has_prev && wants(self, 2)) {
                                   mat(parent(self, 2).grad, g4, h).noalias() +=
                                       dgv * CVecMap(hs.data() + static_cast<std::size_t>(t_prev) * h, h).transpose();
                               }
                           }
                           const auto dG = cmat(dgates, t_len, g4);
                           if (wants(self, 0)) mat(parent(self, 0).grad, t_len, in).noalias() += dG * cmat(parent(self, 1).value, g4, in);
                           if (wants(self, 1)) mat(parent(self, 1).grad, g4, in).noalias() += dG.transpose() * cmat(parent(self, 0).value, t_len, in);
                           if (wants(self, 3)) VecMap(parent(self, 3).grad.data(), g4) += dG.colwise().sum().transpose();
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int rows = x.rows();
    const int d = x.cols();
    require(gamma.size() == static_cast<std::size_t>(d) && beta.size() == static_cast<std::size_t>(d),
            "layer_norm: parameter size mismatch");
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    std::vector<double> out(x.size());
    for (int r = 0; r < rows; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * d;
        double mu = 0.0;
        for (int k = 0; k < d; ++k) mu += xr[k];
        mu /= d;
        double var = 0.0;
        for (int k = 0; k < d; ++k) var += (xr[k] - mu) * (xr[k] - mu);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (int k = 0; k < d; ++k) {
            const std::size_t i = static_cast<std::size_t>(r) * d + k;
            (*xhat)[i] = (xr[k] - mu) * is;
            out[i] = (*xhat)[i] * gamma.data()[k] + beta.data()[k];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, [=](Node& self) {
        const auto& gv = parent(self, 1).value;
        for (int r = 0; r < rows; ++r) {
            const std::size_t base = static_cast<std::size_t>(r) * d;
            double mean_dxhat = 0.0;
            double mean_dxhat_xhat = 0.0;
            for (int k = 0; k < d; ++k) {
                const double dxh = self.grad[base + k] * gv[static_cast<std::size_t>(k)];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * (*xhat)[base + k];
                if (wants(self, 1)) parent(self, 1).grad[static_cast<std::size_t>(k)] += self.grad[base + k] * (*xhat)[base + k];
                if (wants(self, 2)) parent(self, 2).grad[static_cast<std::size_t>(k)] += self.grad[base + k];
            }
            mean_dxhat /= d;
            mean_dxhat_xhat /= d;
            if (wants(self, 0)) {
                auto& g = parent(self, 0).grad;
                const double is = (*inv_std)[static_cast<std::size_t>(r)];
                for (int k = 0; k < d; ++k) {
                    const double dxh = self.grad[base + k] * gv[static_cast<std::size_t>(k)];
                    g[base + k] += is * (dxh - mean_dxhat - (*xhat)[base + k] * mean_dxhat_xhat);
                }
            }
        }
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, AttentionTrace* trace) {
    const int m = q.rows();
    const int n = k.rows();
    const int d = q.cols();
    require(k.cols() == d && v.cols() == d && v.rows() == n, "attention: shape mismatch");
    require(heads >= 1 && d % heads == 0, "attention: width must divide into heads");
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<std::vector<RowMat>>(static_cast<std::size_t>(heads));
    std::vector<double> out(static_cast<std::size_t>(m) * d);
    const auto Q = cmat(q.node()->value, m, d);
    const auto K = cmat(k.node()->value, n, d);
    const auto V = cmat(v.node()->value, n, d);
    auto O = mat(out, m, d);
    for (int hd = 0; hd < heads; ++hd) {
        RowMat s = (Q.middleCols(hd * dh, dh) * K.middleCols(hd * dh, dh).transpose()) * inv_sqrt;
        for (int i = 0; i < m; ++i) {
            const double mx = s.row(i).maxCoeff();
            s.row(i) = (s.row(i).array() - mx).exp();
            s.row(i) /= s.row(i).sum();
        }
        O.middleCols(hd * dh, dh).noalias() = s * V.middleCols(hd * dh, dh);
        if (trace) {
            trace->weights.emplace_back(s.data(), s.data() + s.size());
        }
        (*probs)[static_cast<std::size_t>(hd)] = std::move(s);
    }
    if (trace) {
        trace->queries = m;
        trace->keys = n;
    }

    return make_result({m, d}, std::move(out), {q, k, v}, [=](Node& self) {
        const auto dO = cmat(self.grad, m, d);
        const auto Qv = cmat(parent(self, 0).value, m, d);
        const auto Kv = cmat(parent(self, 1).value, n, d);
        const auto Vv = cmat(parent(self, 2).value, n, d);
        for (int hd = 0; hd < heads; ++hd) {
            const RowMat& a = (*probs)[static_cast<std::size_t>(hd)];
            const auto dOh = dO.middleCols(hd * dh, dh);
            if (wants(self, 2)) mat(parent(self, 2).grad, n, d).middleCols(hd * dh, dh).noalias() += a.transpose() * dOh;
            RowMat da = dOh * Vv.middleCols(hd * dh, dh).transpose();
            for (int i = 0; i < m; ++i) {
                const double dot = (da.row(i).array() * a.row(i).array()).sum();
                da.row(i) = a.row(i).array() * (da.row(i).array() - dot);
            }
            da *= inv_sqrt;
            if (wants(self, 0)) mat(parent(self, 0).grad, m, d).middleCols(hd * dh, dh).noalias() += da * Kv.middleCols(hd * dh, dh);
            if (wants(self, 1)) mat(parent(self, 1).grad, n, d).middleCols(hd * dh, dh).noalias() += da.transpose() * Qv.middleCols(hd * dh, dh);
        }
    });
}

Tensor sq_distances(const Tensor& q, const Tensor& c) {
    const int m = q.rows();
    const int n = c.rows();
    const int d = q.cols();
    require(c.cols() == d, "dimension mismatch");
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* qi = q.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < n; ++j) {
            const double* cj = c.data() + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += (qi[k] - cj[k]) * (qi[k] - cj[k]);
            out[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
    return make_result({m, n}, std::move(out), {q, c}, [m, n, d](Node& self) {
        const auto& qv = parent(self, 0).value;
        const auto& cv = parent(self, 1).value;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                const double gij = 2.0 * self.grad[static_cast<std::size_t>(i) * n + j];
                if (gij == 0.0) continue;
                for (int k = 0; k < d; ++k) {
                    const double diff = qv[static_cast<std::size_t>(i) * d + k] - cv[static_cast<std::size_t>(j) * d + k];
                    if (wants(self, 0)) parent(self, 0).grad[static_cast<std::size_t>(i) * d + k] += gij * diff;
                    if (wants(self, 1)) parent(self, 1).grad[static_cast<std::size_t>(j) * d + k] -= gij * diff;
                }
            }
        }
    });
}

}  // namespace fsed::nn
