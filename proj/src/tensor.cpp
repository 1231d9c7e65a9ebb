#include "gem/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "gem/error.hpp"

namespace gem::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

bool records(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Builds an op result. When recording, parents and the backward rule are kept.
Tensor make_result(Shape shape, std::vector<double> value, bool record,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (record) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

void accumulate(Node& target, std::span<const double> delta) {
    if (!target.requires_grad) return;
    auto& g = target.ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = nn::numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (nn::numel(shape) != values.size())
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

std::span<const double> Tensor::grad() const { return node_->ensure_grad(); }

Tensor Tensor::detach(bool requires_grad) const {
    return from(node_->shape, node_->value, requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    const bool rec = records({&a, &b});
    return make_result(a.shape(), std::move(out), rec, {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        accumulate(*self.parents[0], self.grad);
        accumulate(*self.parents[1], self.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "mul: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    const bool rec = records({&a, &b});
    return make_result(a.shape(), std::move(out), rec, {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const std::size_t n = self.grad.size();
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * s;
    const bool rec = records({&a});
    return make_result(a.shape(), std::move(out), rec, {a.node_ptr()}, [s](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require(bias.rank() == 1 && x.rank() >= 1 && x.shape().back() == bias.dim(0),
            "add_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
    const std::size_t d = bias.dim(0);
    std::vector<double> out(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.at(i % d);
    const bool rec = records({&x, &bias});
    return make_result(x.shape(), std::move(out), rec, {x.node_ptr(), bias.node_ptr()}, [d](Node& self) {
        accumulate(*self.parents[0], self.grad);
        Node& pb = *self.parents[1];
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
        }
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    const bool rec = records({&a});
    return make_result({}, {s}, rec, {a.node_ptr()}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor gelu(const Tensor& x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c = 0.044715;
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.at(i);
        out[i] = 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
    }
    const bool rec = records({&x});
    return make_result(x.shape(), std::move(out), rec, {x.node_ptr()}, [](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = p.value[i];
            const double u = k * (v + c * v * v * v);
            const double t = std::tanh(u);
            const double du = k * (1.0 + 3.0 * c * v * v);
            const double dy = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            g[i] += self.grad[i] * dy;
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& x, const Tensor& w) {
    require(w.rank() == 2 && x.rank() >= 1 && x.shape().back() == w.dim(0),
            "matmul: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    const std::size_t k = w.dim(0), m = w.dim(1);
    const std::size_t rows = x.numel() / k;
    Shape out_shape = x.shape();
    out_shape.back() = m;
    std::vector<double> out(rows * m);
    MapMat(out.data(), rows, m).noalias() =
        ConstMapMat(x.values().data(), rows, k) * ConstMapMat(w.values().data(), k, m);
    const bool rec = records({&x, &w});
    return make_result(std::move(out_shape), std::move(out), rec, {x.node_ptr(), w.node_ptr()},
                       [rows, k, m](Node& self) {
                           Node& px = *self.parents[0];
                           Node& pw = *self.parents[1];
                           ConstMapMat dy(self.grad.data(), rows, m);
                           if (px.requires_grad) {
                               MapMat(px.ensure_grad().data(), rows, k).noalias() +=
                                   dy * ConstMapMat(pw.value.data(), k, m).transpose();
                           }
                           if (pw.requires_grad) {
                               MapMat(pw.ensure_grad().data(), k, m).noalias() +=
                                   ConstMapMat(px.value.data(), rows, k).transpose() * dy;
                           }
                       });
}

Tensor transpose(const Tensor& w) {
    require(w.rank() == 2, "transpose: expected 2-D, got " + shape_str(w.shape()));
    const std::size_t r = w.dim(0), c = w.dim(1);
    std::vector<double> out(r * c);
    MapMat(out.data(), c, r) = ConstMapMat(w.values().data(), r, c).transpose();
    const bool rec = records({&w});
    return make_result({c, r}, std::move(out), rec, {w.node_ptr()}, [r, c](Node& self) {
        MapMat(self.parents[0]->ensure_grad().data(), r, c) +=
            ConstMapMat(self.grad.data(), c, r).transpose();
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0),
            "bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t G = a.dim(0), n = a.dim(1), k = a.dim(2);
    const std::size_t m = transpose_b ? b.dim(1) : b.dim(2);
    require((transpose_b ? b.dim(2) : b.dim(1)) == k,
            "bmm: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t b_rows = b.dim(1), b_cols = b.dim(2);
    std::vector<double> out(G * n * m);
    for (std::size_t g = 0; g < G; ++g) {
        ConstMapMat A(a.values().data() + g * n * k, n, k);
        ConstMapMat B(b.values().data() + g * b_rows * b_cols, b_rows, b_cols);
        MapMat C(out.data() + g * n * m, n, m);
        if (transpose_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A * B;
    }
    const bool rec = records({&a, &b});
    return make_result({G, n, m}, std::move(out), rec, {a.node_ptr(), b.node_ptr()},
                       [=](Node& self) {
                           Node& pa = *self.parents[0];
                           Node& pb = *self.parents[1];
                           for (std::size_t g = 0; g < G; ++g) {
                               ConstMapMat dC(self.grad.data() + g * n * m, n, m);
                               ConstMapMat A(pa.value.data() + g * n * k, n, k);
                               ConstMapMat B(pb.value.data() + g * b_rows * b_cols, b_rows, b_cols);
                               if (pa.requires_grad) {
                                   MapMat dA(pa.ensure_grad().data() + g * n * k, n, k);
                                   if (transpose_b)
                                       dA.noalias() += dC * B;
                                   else
                                       dA.noalias() += dC * B.transpose();
                               }
                               if (pb.requires_grad) {
                                   MapMat dB(pb.ensure_grad().data() + g * b_rows * b_cols, b_rows, b_cols);
                                   if (transpose_b)
                                       dB.noalias() += dC.transpose() * A;
                                   else
                                       dB.noalias() += A.transpose() * dC;
                               }
                           }
                       });
}

// ---------------------------------------------------------------------------
// Normalisation and probabilities

Tensor softmax(const Tensor& x, std::size_t axis) {
    require(axis < x.rank(), "softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    const std::size_t len = x.dim(axis);
    require(len > 0, "softmax: empty axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = -INFINITY;
            for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x.at(base + j * inner));
            double z = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const double e = std::exp(x.at(base + j * inner) - mx);
                out[base + j * inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
        }
    }
    const bool rec = records({&x});
    return make_result(x.shape(), std::move(out), rec, {x.node_ptr()}, [=](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j)
                    dot += self.grad[base + j * inner] * self.value[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t idx = base + j * inner;
                    g[idx] += self.value[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> key_mask, std::size_t group) {
    require(x.rank() == 3, "masked_softmax: expected [G,n,m], got " + shape_str(x.shape()));
    const std::size_t G = x.dim(0), n = x.dim(1), m = x.dim(2);
    require(group > 0 && G % group == 0 && key_mask.size() == (G / group) * m,
            "masked_softmax: mask of size " + std::to_string(key_mask.size()) +
                " does not fit scores " + shape_str(x.shape()));
    std::vector<double> out(x.numel(), 0.0);
    for (std::size_t g = 0; g < G; ++g) {
        const std::uint8_t* mask = key_mask.data() + (g / group) * m;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (g * n + i) * m;
            double mx = -INFINITY;
            for (std::size_t j = 0; j < m; ++j)
                if (mask[j]) mx = std::max(mx, x.at(base + j));
            if (mx == -INFINITY) throw ShapeError("masked_softmax: row with no unmasked keys");
            double z = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                if (!mask[j]) continue;
                const double e = std::exp(x.at(base + j) - mx);
                out[base + j] = e;
                z += e;
            }
            for (std::size_t j = 0; j < m; ++j) out[base + j] /= z;
        }
    }
    const bool rec = records({&x});
    return make_result(x.shape(), std::move(out), rec, {x.node_ptr()}, [G, n, m](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < G * n; ++r) {
            const std::size_t base = r * m;
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += self.grad[base + j] * self.value[base + j];
            for (std::size_t j = 0; j < m; ++j)
                g[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require(x.rank() >= 1, "layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (d == 0) throw ShapeError("layer_norm: normalised axis has size 0");
    require(gain.shape() == Shape{d} && bias.shape() == Shape{d},
            "layer_norm: gain/bias must have shape (" + std::to_string(d) + ")");
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.values().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (in[j] - mu) * rstd[r];
            out[r * d + j] = xhat[r * d + j] * gain.at(j) + bias.at(j);
        }
    }
    const bool rec = records({&x, &gain, &bias});
    return make_result(
        x.shape(), std::move(out), rec, {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
        [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* dy = self.grad.data() + r * d;
                const double* xh = xhat.data() + r * d;
                if (pg.requires_grad) {
                    auto& gg = pg.ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * xh[j];
                }
                if (pb.requires_grad) {
                    auto& gb = pb.ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) gb[j] += dy[j];
                }
                if (px.requires_grad) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = dy[j] * pg.value[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh *= inv_d;
                    mean_dxh_xh *= inv_d;
                    auto& gx = px.ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = dy[j] * pg.value[j];
                        gx[r * d + j] += rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
            }
        });
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
        out[i] = x.at(i) * mask[i];
    }
    const bool rec = records({&x});
    return make_result(x.shape(), std::move(out), rec, {x.node_ptr()}, [mask = std::move(mask)](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

// ---------------------------------------------------------------------------
// Indexing and layout

Tensor embedding(const Tensor& table, std::span<const int> ids, Shape leading) {
    require(table.rank() == 2, "embedding: table must be 2-D");
    require(numel(leading) == ids.size(), "embedding: id count does not match leading shape");
    const std::size_t V = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V)
            throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                             std::to_string(V));
        std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    Shape shape = std::move(leading);
    shape.push_back(d);
    const bool rec = records({&table});
    return make_result(std::move(shape), std::move(out), rec, {table.node_ptr()},
                       [d, idv = std::vector<int>(ids.begin(), ids.end())](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < idv.size(); ++i) {
                               double* row = g.data() + static_cast<std::size_t>(idv[i]) * d;
                               for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[i * d + j];
                           }
                       });
}

Tensor select_position(const Tensor& x, std::size_t pos) {
    require(x.rank() == 3 && pos < x.dim(1), "select_position: bad input " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
    std::vector<double> out(B * d);
    for (std::size_t b = 0; b < B; ++b)
        std::copy_n(x.values().data() + (b * T + pos) * d, d, out.data() + b * d);
    const bool rec = records({&x});
    return make_result({B, d}, std::move(out), rec, {x.node_ptr()}, [B, T, d, pos](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < d; ++j) g[(b * T + pos) * d + j] += self.grad[b * d + j];
    });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
            "concat_last: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t N = a.dim(0), p = a.dim(1), q = b.dim(1);
    std::vector<double> out(N * (p + q));
    for (std::size_t i = 0; i < N; ++i) {
        std::copy_n(a.values().data() + i * p, p, out.data() + i * (p + q));
        std::copy_n(b.values().data() + i * q, q, out.data() + i * (p + q) + p);
    }
    const bool rec = records({&a, &b});
    return make_result({N, p + q}, std::move(out), rec, {a.node_ptr(), b.node_ptr()}, [N, p, q](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t i = 0; i < N; ++i) {
            if (pa.requires_grad) {
                auto& g = pa.ensure_grad();
                for (std::size_t j = 0; j < p; ++j) g[i * p + j] += self.grad[i * (p + q) + j];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (std::size_t j = 0; j < q; ++j) g[i * q + j] += self.grad[i * (p + q) + p + j];
            }
        }
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require(x.rank() >= 1, "gather_rows: scalar input");
    const std::size_t d = x.shape().back();
    const std::size_t n = d == 0 ? 0 : x.numel() / d;
    std::vector<double> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < n, "gather_rows: row index out of range");
        std::copy_n(x.values().data() + rows[i] * d, d, out.data() + i * d);
    }
    const bool rec = records({&x});
    return make_result({rows.size(), d}, std::move(out), rec, {x.node_ptr()},
                       [d, rv = std::vector<std::size_t>(rows.begin(), rows.end())](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < rv.size(); ++i)
                               for (std::size_t j = 0; j < d; ++j) g[rv[i] * d + j] += self.grad[i * d + j];
                       });
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(numel(shape) == x.numel(), "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(x.values().begin(), x.values().end());
    const bool rec = records({&x});
    return make_result(std::move(shape), std::move(out), rec, {x.node_ptr()},
                       [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
    require(x.rank() == 3 && heads > 0 && x.dim(2) % heads == 0,
            "split_heads: " + shape_str(x.shape()) + " with " + std::to_string(heads) + " heads");
    const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2), dh = d / heads;
    std::vector<double> out(x.numel());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < T; ++t)
                std::copy_n(x.values().data() + (b * T + t) * d + h * dh, dh,
                            out.data() + ((b * heads + h) * T + t) * dh);
    const bool rec = records({&x});
    return make_result({B * heads, T, dh}, std::move(out), rec, {x.node_ptr()},
                       [B, T, d, dh, heads](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t h = 0; h < heads; ++h)
                                   for (std::size_t t = 0; t < T; ++t)
                                       for (std::size_t j = 0; j < dh; ++j)
                                           g[(b * T + t) * d + h * dh + j] +=
                                               self.grad[((b * heads + h) * T + t) * dh + j];
                       });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
    require(x.rank() == 3 && heads > 0 && x.dim(0) % heads == 0,
            "merge_heads: " + shape_str(x.shape()) + " with " + std::to_string(heads) + " heads");
    const std::size_t B = x.dim(0) / heads, T = x.dim(1), dh = x.dim(2), d = dh * heads;
    std::vector<double> out(x.numel());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < T; ++t)
                std::copy_n(x.values().data() + ((b * heads + h) * T + t) * dh, dh,
                            out.data() + (b * T + t) * d + h * dh);
    const bool rec = records({&x});
    return make_result({B, T, d}, std::move(out), rec, {x.node_ptr()}, [B, T, d, dh, heads](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t j = 0; j < dh; ++j)
                        g[((b * heads + h) * T + t) * dh + j] += self.grad[(b * T + t) * d + h * dh + j];
    });
}

// ---------------------------------------------------------------------------
// Loss

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    require(logits.rank() == 2, "cross_entropy: logits must be [N,C], got " + shape_str(logits.shape()));
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    require(targets.size() == N, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                     std::to_string(N) + " rows");
    require(N > 0, "cross_entropy: empty batch");
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= C)
            throw ValidationError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                                  std::to_string(C) + ")");
    std::vector<double> probs(N * C);
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double* row = logits.values().data() + i * C;
        const double mx = *std::max_element(row, row + C);
        double z = 0.0;
        for (std::size_t j = 0; j < C; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        total += lse - row[targets[i]];
        for (std::size_t j = 0; j < C; ++j) probs[i * C + j] = std::exp(row[j] - lse);
    }
    const bool rec = records({&logits});
    return make_result({}, {total / static_cast<double>(N)}, rec, {logits.node_ptr()},
                       [N, C, probs = std::move(probs),
                        tv = std::vector<int>(targets.begin(), targets.end())](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           const double s = self.grad[0] / static_cast<double>(N);
                           for (std::size_t i = 0; i < N; ++i)
                               for (std::size_t j = 0; j < C; ++j) {
                                   const double onehot = static_cast<int>(j) == tv[i] ? 1.0 : 0.0;
                                   g[i * C + j] += s * (probs[i * C + j] - onehot);
                               }
                       });
}

// ---------------------------------------------------------------------------
// Reverse pass

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    for (Node* node : order) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->parents.clear();
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& fn, std::span<Parameter> params, double h) {
    auto evaluate = [&]() {
        NoGradGuard guard;
        const double v = fn().item();
        if (!std::isfinite(v)) throw NumericError("finite_diff_check: function value is not finite");
        return v;
    };
    const double v0 = evaluate();
    const double v1 = evaluate();
    if (v0 != v1)
        throw NumericError("finite_diff_check: function is nondeterministic (is dropout enabled?)");

    for (auto& p : params) p.tensor.zero_grad();
    backward(fn());

    GradCheckReport report;
    for (auto& p : params) {
        GradCheckEntry entry{p.name, 0.0, 0};
        const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
        auto vals = p.tensor.mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + h;
            const double fp = evaluate();
            vals[i] = saved - h;
            const double fm = evaluate();
            vals[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
            const double err = std::abs(analytic[i] - numeric) / denom;
            if (err > entry.max_rel_error) {
                entry.max_rel_error = err;
                entry.worst_index = i;
            }
        }
        report.entries.push_back(std::move(entry));
    }
    std::stable_sort(report.entries.begin(), report.entries.end(),
                     [](const auto& a, const auto& b) { return a.max_rel_error > b.max_rel_error; });
    return report;
}

}  // namespace gem::nn
