#include "mae/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mae::ad {

namespace {

using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<Real> values, bool requires_grad) {
    require(shape_numel(shape) == static_cast<int64_t>(values.size()),
            "tensor value count does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->val = std::move(values);
    node->requires_grad = requires_grad;
    node->grad_path = requires_grad;
    return node;
}

// Creates the result node; records parents/backward only when some input is
// on a gradient path and recording is enabled.
Tensor make_result(Shape shape, std::vector<Real> values,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->val = std::move(values);
    bool track = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) track = track || p->grad_path;
    }
    if (track) {
        node->grad_path = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

int64_t last_dim(const Tensor& x) { return x.shape().back(); }

int64_t row_count(const Tensor& x) { return x.numel() / last_dim(x); }

constexpr Real kInvSqrt2 = Real(0.7071067811865475244);
constexpr Real kInvSqrt2Pi = Real(0.3989422804014326779);

}  // namespace

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        require(d >= 0, "negative dimension in shape");
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(Shape shape) {
    auto n = static_cast<size_t>(shape_numel(shape));
    return Tensor(make_leaf(std::move(shape), std::vector<Real>(n, Real(0)), false));
}

Tensor Tensor::full(Shape shape, Real value) {
    auto n = static_cast<size_t>(shape_numel(shape));
    return Tensor(make_leaf(std::move(shape), std::vector<Real>(n, value), false));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::scalar(Real value) { return from({1}, {value}); }

Tensor Tensor::param(Shape shape, std::vector<Real> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

const std::vector<Real>& Tensor::grad() const {
    require(node_ && !node_->grad.empty(), "tensor has no gradient");
    return node_->grad;
}

Real Tensor::item() const {
    require(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return node_->val[0];
}

void Tensor::zero_grad() {
    node_->grad.clear();
    node_->backward_done = false;
}

void Tensor::set_requires_grad(bool value) {
    require(node_->parents.empty(), "set_requires_grad is for leaf tensors");
    node_->requires_grad = value;
    node_->grad_path = value;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<Real> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    auto pa = a.node(), pb = b.node();
    return make_result(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->active())
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        if (pb->active())
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<Real> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    auto pa = a.node(), pb = b.node();
    return make_result(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->active())
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        if (pb->active())
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<Real> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    auto pa = a.node(), pb = b.node();
    return make_result(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->active())
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->val[i];
        if (pb->active())
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->val[i];
    });
}

Tensor scale(const Tensor& a, Real factor) {
    std::vector<Real> out(a.values());
    for (auto& v : out) v *= factor;
    auto pa = a.node();
    return make_result(a.shape(), std::move(out), {pa}, [pa, factor](Node& n) {
        if (pa->active())
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * factor;
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require(bias.rank() == 1 && bias.dim(0) == last_dim(x),
            "add_bias: bias " + shape_str(bias.shape()) + " does not match last dim of " +
                shape_str(x.shape()));
    int64_t rows = row_count(x), cols = last_dim(x);
    std::vector<Real> out(x.values());
    const auto& bv = bias.values();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out[static_cast<size_t>(r * cols + c)] += bv[static_cast<size_t>(c)];
    auto px = x.node(), pb = bias.node();
    return make_result(x.shape(), std::move(out), {px, pb}, [px, pb, rows, cols](Node& n) {
        if (px->active())
            for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
        if (pb->active())
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c)
                    pb->grad[static_cast<size_t>(c)] += n.grad[static_cast<size_t>(r * cols + c)];
    });
}

Tensor scale_rows(const Tensor& x, const std::vector<Real>& factors) {
    int64_t rows = row_count(x), cols = last_dim(x);
    require(static_cast<int64_t>(factors.size()) == rows,
            "scale_rows: factor count " + std::to_string(factors.size()) +
                " does not match row count " + std::to_string(rows));
    std::vector<Real> out(x.values());
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out[static_cast<size_t>(r * cols + c)] *= factors[static_cast<size_t>(r)];
    auto px = x.node();
    return make_result(x.shape(), std::move(out), {px}, [px, factors, rows, cols](Node& n) {
        if (!px->active()) return;
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c)
                px->grad[static_cast<size_t>(r * cols + c)] +=
                    n.grad[static_cast<size_t>(r * cols + c)] * factors[static_cast<size_t>(r)];
    });
}

// ---- matmul ----

namespace {

void matmul_shapes(const Tensor& a, const Tensor& b, int64_t& batch, int64_t& m, int64_t& k,
                   int64_t& n, bool& b_is_2d) {
    require(a.rank() >= 2 && b.rank() >= 2 && a.rank() <= 3 && b.rank() <= 3,
            "matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    b_is_2d = b.rank() == 2;
    if (a.rank() == 2) {
        require(b.rank() == 2, "matmul: 2D x 3D not supported");
        batch = 1;
        m = a.dim(0);
        k = a.dim(1);
    } else {
        batch = a.dim(0);
        m = a.dim(1);
        k = a.dim(2);
        if (!b_is_2d)
            require(b.dim(0) == batch, "matmul: batch mismatch " + shape_str(a.shape()) + " x " +
                                           shape_str(b.shape()));
    }
    int64_t bk = b_is_2d ? b.dim(0) : b.dim(1);
    n = b_is_2d ? b.dim(1) : b.dim(2);
    require(bk == k, "matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    int64_t batch, m, k, n;
    bool b_is_2d;
    matmul_shapes(a, b, batch, m, k, n, b_is_2d);

    std::vector<Real> out(static_cast<size_t>(batch * m * n));
    if (b_is_2d) {
        // [b*m,k] x [k,n] collapses to one GEMM.
        CMapM A(a.values().data(), batch * m, k);
        CMapM B(b.values().data(), k, n);
        MapM C(out.data(), batch * m, n);
        C.noalias() = A * B;
    } else {
        for (int64_t i = 0; i < batch; ++i) {
            CMapM A(a.values().data() + i * m * k, m, k);
            CMapM B(b.values().data() + i * k * n, k, n);
            MapM C(out.data() + i * m * n, m, n);
            C.noalias() = A * B;
        }
    }

    Shape out_shape = a.rank() == 2 ? Shape{m, n} : Shape{batch, m, n};
    auto pa = a.node(), pb = b.node();
    return make_result(std::move(out_shape), std::move(out), {pa, pb},
                       [pa, pb, batch, m, k, n, b_is_2d](Node& node) {
        if (b_is_2d) {
            CMapM G(node.grad.data(), batch * m, n);
            if (pa->active()) {
                CMapM B(pb->val.data(), k, n);
                MapM dA(pa->grad.data(), batch * m, k);
                dA.noalias() += G * B.transpose();
            }
            if (pb->active()) {
                CMapM A(pa->val.data(), batch * m, k);
                MapM dB(pb->grad.data(), k, n);
                dB.noalias() += A.transpose() * G;
            }
        } else {
            for (int64_t i = 0; i < batch; ++i) {
                CMapM G(node.grad.data() + i * m * n, m, n);
                if (pa->active()) {
                    CMapM B(pb->val.data() + i * k * n, k, n);
                    MapM dA(pa->grad.data() + i * m * k, m, k);
                    dA.noalias() += G * B.transpose();
                }
                if (pb->active()) {
                    CMapM A(pa->val.data() + i * m * k, m, k);
                    MapM dB(pb->grad.data() + i * k * n, k, n);
                    dB.noalias() += A.transpose() * G;
                }
            }
        }
    });
}

Tensor transpose_last2(const Tensor& x) {
    require(x.rank() >= 2, "transpose_last2 needs rank >= 2");
    int64_t m = x.dim(x.rank() - 2), n = x.dim(x.rank() - 1);
    int64_t batch = x.numel() / (m * n);
    Shape out_shape = x.shape();
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);

    std::vector<Real> out(static_cast<size_t>(x.numel()));
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                out[static_cast<size_t>(b * m * n + j * m + i)] =
                    x.values()[static_cast<size_t>(b * m * n + i * n + j)];

    auto px = x.node();
    return make_result(std::move(out_shape), std::move(out), {px}, [px, batch, m, n](Node& node) {
        if (!px->active()) return;
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    px->grad[static_cast<size_t>(b * m * n + i * n + j)] +=
                        node.grad[static_cast<size_t>(b * m * n + j * m + i)];
    });
}

// ---- nonlinearities and normalization ----

Tensor softmax(const Tensor& x) {
    int64_t rows = row_count(x), cols = last_dim(x);
    std::vector<Real> out(static_cast<size_t>(x.numel()));
    for (int64_t r = 0; r < rows; ++r) {
        const Real* in = x.values().data() + r * cols;
        Real* o = out.data() + r * cols;
        Real mx = in[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        Real sum = 0;
        for (int64_t c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (int64_t c = 0; c < cols; ++c) o[c] /= sum;
    }
    auto px = x.node();
    auto saved = std::make_shared<std::vector<Real>>(out);
    return make_result(x.shape(), std::move(out), {px}, [px, saved, rows, cols](Node& node) {
        if (!px->active()) return;
        for (int64_t r = 0; r < rows; ++r) {
            const Real* y = saved->data() + r * cols;
            const Real* dy = node.grad.data() + r * cols;
            Real dot = 0;
            for (int64_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
            Real* dx = px->grad.data() + r * cols;
            for (int64_t c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
    int64_t rows = row_count(x), cols = last_dim(x);
    require(gain.rank() == 1 && gain.dim(0) == cols && bias.rank() == 1 && bias.dim(0) == cols,
            "layer_norm: gain/bias must be [" + std::to_string(cols) + "]");

    std::vector<Real> out(static_cast<size_t>(x.numel()));
    auto xhat = std::make_shared<std::vector<Real>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const Real* in = x.values().data() + r * cols;
        Real mean = 0;
        for (int64_t c = 0; c < cols; ++c) mean += in[c];
        mean /= static_cast<Real>(cols);
        Real var = 0;
        for (int64_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= static_cast<Real>(cols);
        Real inv = Real(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = inv;
        for (int64_t c = 0; c < cols; ++c) {
            Real xh = (in[c] - mean) * inv;
            (*xhat)[static_cast<size_t>(r * cols + c)] = xh;
            out[static_cast<size_t>(r * cols + c)] =
                xh * gain.values()[static_cast<size_t>(c)] + bias.values()[static_cast<size_t>(c)];
        }
    }
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    return make_result(x.shape(), std::move(out), {px, pg, pb},
                       [px, pg, pb, xhat, inv_std, rows, cols](Node& node) {
        for (int64_t r = 0; r < rows; ++r) {
            const Real* dy = node.grad.data() + r * cols;
            const Real* xh = xhat->data() + r * cols;
            if (pg->active())
                for (int64_t c = 0; c < cols; ++c)
                    pg->grad[static_cast<size_t>(c)] += dy[c] * xh[c];
            if (pb->active())
                for (int64_t c = 0; c < cols; ++c) pb->grad[static_cast<size_t>(c)] += dy[c];
            if (px->active()) {
                Real mean_dxhat = 0, mean_dxhat_xhat = 0;
                for (int64_t c = 0; c < cols; ++c) {
                    Real dxh = dy[c] * pg->val[static_cast<size_t>(c)];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xh[c];
                }
                mean_dxhat /= static_cast<Real>(cols);
                mean_dxhat_xhat /= static_cast<Real>(cols);
                Real inv = (*inv_std)[static_cast<size_t>(r)];
                Real* dx = px->grad.data() + r * cols;
                for (int64_t c = 0; c < cols; ++c) {
                    Real dxh = dy[c] * pg->val[static_cast<size_t>(c)];
                    dx[c] += inv * (dxh - mean_dxhat - xh[c] * mean_dxhat_xhat);
                }
            }
        }
    });
}

Real gelu_scalar(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x * kInvSqrt2));
}

Tensor gelu(const Tensor& x) {
    std::vector<Real> out(static_cast<size_t>(x.numel()));
    for (size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(x.values()[i]);
    auto px = x.node();
    return make_result(x.shape(), std::move(out), {px}, [px](Node& node) {
        if (!px->active()) return;
        for (size_t i = 0; i < node.grad.size(); ++i) {
            Real v = px->val[i];
            Real cdf = Real(0.5) * (Real(1) + std::erf(v * kInvSqrt2));
            Real pdf = kInvSqrt2Pi * std::exp(Real(-0.5) * v * v);
            px->grad[i] += node.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<Real> out(x.values());
    for (auto& v : out) v = std::max(v, Real(0));
    auto px = x.node();
    return make_result(x.shape(), std::move(out), {px}, [px](Node& node) {
        if (!px->active()) return;
        for (size_t i = 0; i < node.grad.size(); ++i)
            if (px->val[i] > 0) px->grad[i] += node.grad[i];
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, Shape leading) {
    require(table.rank() == 2, "embedding_lookup: table must be [vocab, dim]");
    require(shape_numel(leading) == static_cast<int64_t>(ids.size()),
            "embedding_lookup: leading shape does not match id count");
    int64_t vocab = table.dim(0), dim = table.dim(1);
    for (int id : ids)
        require(id >= 0 && id < vocab, "embedding_lookup: id out of range: " + std::to_string(id));

    std::vector<Real> out(ids.size() * static_cast<size_t>(dim));
    for (size_t i = 0; i < ids.size(); ++i) {
        const Real* row = table.values().data() + static_cast<int64_t>(ids[i]) * dim;
        std::copy(row, row + dim, out.data() + i * static_cast<size_t>(dim));
    }
    Shape out_shape = std::move(leading);
    out_shape.push_back(dim);
    auto pt = table.node();
    return make_result(std::move(out_shape), std::move(out), {pt}, [pt, ids, dim](Node& node) {
        if (!pt->active()) return;
        for (size_t i = 0; i < ids.size(); ++i) {
            Real* row = pt->grad.data() + static_cast<int64_t>(ids[i]) * dim;
            const Real* g = node.grad.data() + i * static_cast<size_t>(dim);
            for (int64_t d = 0; d < dim; ++d) row[d] += g[d];
        }
    });
}

Tensor dropout(const Tensor& x, Real p, bool train, uint64_t key) {
    require(p >= 0 && p < 1, "dropout probability must be in [0, 1)");
    if (!train || p == 0) {
        // Identity that still participates in the graph.
        return scale(x, Real(1));
    }
    Rng rng(key);
    Real keep = Real(1) - p;
    auto mask = std::make_shared<std::vector<Real>>(static_cast<size_t>(x.numel()));
    std::vector<Real> out(static_cast<size_t>(x.numel()));
    for (size_t i = 0; i < out.size(); ++i) {
        Real m = rng.next_real() < p ? Real(0) : Real(1) / keep;
        (*mask)[i] = m;
        out[i] = x.values()[i] * m;
    }
    auto px = x.node();
    return make_result(x.shape(), std::move(out), {px}, [px, mask](Node& node) {
        if (!px->active()) return;
        for (size_t i = 0; i < node.grad.size(); ++i) px->grad[i] += node.grad[i] * (*mask)[i];
    });
}

// ---- shape ops ----

namespace {

void axis_split(const Shape& shape, int axis, int64_t& outer, int64_t& mid, int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    mid = shape[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    require(a.rank() == b.rank() && axis >= 0 && axis < a.rank(),
            "concat: invalid axis or rank mismatch");
    for (int i = 0; i < a.rank(); ++i)
        require(i == axis || a.dim(i) == b.dim(i),
                "concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                    " differ outside axis " + std::to_string(axis));

    int64_t outer, ma, inner;
    axis_split(a.shape(), axis, outer, ma, inner);
    int64_t mb = b.dim(axis);
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = ma + mb;

    std::vector<Real> out(static_cast<size_t>(shape_numel(out_shape)));
    for (int64_t o = 0; o < outer; ++o) {
        std::copy(a.values().data() + o * ma * inner, a.values().data() + (o + 1) * ma * inner,
                  out.data() + o * (ma + mb) * inner);
        std::copy(b.values().data() + o * mb * inner, b.values().data() + (o + 1) * mb * inner,
                  out.data() + o * (ma + mb) * inner + ma * inner);
    }
    auto pa = a.node(), pb = b.node();
    return make_result(std::move(out_shape), std::move(out), {pa, pb},
                       [pa, pb, outer, ma, mb, inner](Node& node) {
        for (int64_t o = 0; o < outer; ++o) {
            const Real* g = node.grad.data() + o * (ma + mb) * inner;
            if (pa->active()) {
                Real* dst = pa->grad.data() + o * ma * inner;
                for (int64_t i = 0; i < ma * inner; ++i) dst[i] += g[i];
            }
            if (pb->active()) {
                Real* dst = pb->grad.data() + o * mb * inner;
                for (int64_t i = 0; i < mb * inner; ++i) dst[i] += g[ma * inner + i];
            }
        }
    });
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
    require(axis >= 0 && axis < x.rank(), "slice: invalid axis");
    require(start >= 0 && len >= 0 && start + len <= x.dim(axis),
            "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                ") out of bounds for axis size " + std::to_string(x.dim(axis)));
    int64_t outer, mid, inner;
    axis_split(x.shape(), axis, outer, mid, inner);
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;

    std::vector<Real> out(static_cast<size_t>(shape_numel(out_shape)));
    for (int64_t o = 0; o < outer; ++o)
        std::copy(x.values().data() + (o * mid + start) * inner,
                  x.values().data() + (o * mid + start + len) * inner,
                  out.data() + o * len * inner);
    auto px = x.node();
    return make_result(std::move(out_shape), std::move(out), {px},
                       [px, outer, mid, inner, start, len](Node& node) {
        if (!px->active()) return;
        for (int64_t o = 0; o < outer; ++o) {
            const Real* g = node.grad.data() + o * len * inner;
            Real* dst = px->grad.data() + (o * mid + start) * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
        }
    });
}

Tensor split_heads(const Tensor& x, int64_t n_heads) {
    require(x.rank() == 3, "split_heads: input must be [B,S,D]");
    int64_t B = x.dim(0), S = x.dim(1), D = x.dim(2);
    require(D % n_heads == 0, "split_heads: model dim not divisible by head count");
    int64_t dh = D / n_heads;

    std::vector<Real> out(static_cast<size_t>(x.numel()));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s)
            for (int64_t h = 0; h < n_heads; ++h)
                std::copy(x.values().data() + (b * S + s) * D + h * dh,
                          x.values().data() + (b * S + s) * D + (h + 1) * dh,
                          out.data() + ((b * n_heads + h) * S + s) * dh);
    auto px = x.node();
    return make_result({B * n_heads, S, dh}, std::move(out), {px},
                       [px, B, S, D, n_heads, dh](Node& node) {
        if (!px->active()) return;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t s = 0; s < S; ++s)
                for (int64_t h = 0; h < n_heads; ++h) {
                    const Real* g = node.grad.data() + ((b * n_heads + h) * S + s) * dh;
                    Real* dst = px->grad.data() + (b * S + s) * D + h * dh;
                    for (int64_t d = 0; d < dh; ++d) dst[d] += g[d];
                }
    });
}

Tensor merge_heads(const Tensor& x, int64_t n_heads) {
    require(x.rank() == 3, "merge_heads: input must be [B*H,S,dh]");
    require(x.dim(0) % n_heads == 0, "merge_heads: batch not divisible by head count");
    int64_t B = x.dim(0) / n_heads, S = x.dim(1), dh = x.dim(2);
    int64_t D = dh * n_heads;

    std::vector<Real> out(static_cast<size_t>(x.numel()));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s)
            for (int64_t h = 0; h < n_heads; ++h)
                std::copy(x.values().data() + ((b * n_heads + h) * S + s) * dh,
                          x.values().data() + ((b * n_heads + h) * S + s + 1) * dh,
                          out.data() + (b * S + s) * D + h * dh);
    auto px = x.node();
    return make_result({B, S, D}, std::move(out), {px}, [px, B, S, D, n_heads, dh](Node& node) {
        if (!px->active()) return;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t s = 0; s < S; ++s)
                for (int64_t h = 0; h < n_heads; ++h) {
                    const Real* g = node.grad.data() + (b * S + s) * D + h * dh;
                    Real* dst = px->grad.data() + ((b * n_heads + h) * S + s) * dh;
                    for (int64_t d = 0; d < dh; ++d) dst[d] += g[d];
                }
    });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    require(shape_numel(new_shape) == x.numel(),
            "reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                shape_str(new_shape));
    std::vector<Real> out(x.values());
    auto px = x.node();
    return make_result(std::move(new_shape), std::move(out), {px}, [px](Node& node) {
        if (!px->active()) return;
        for (size_t i = 0; i < node.grad.size(); ++i) px->grad[i] += node.grad[i];
    });
}

Tensor sum(const Tensor& x) {
    Real total = 0;
    for (Real v : x.values()) total += v;
    auto px = x.node();
    return make_result({1}, {total}, {px}, [px](Node& node) {
        if (!px->active()) return;
        for (auto& g : px->grad) g += node.grad[0];
    });
}

// ---- losses ----

Tensor cross_entropy_label_smoothing(const Tensor& logits, const std::vector<int>& targets,
                                     const std::vector<Real>& weights, Real smoothing) {
    require(logits.rank() >= 2, "cross_entropy: logits must have rank >= 2");
    int64_t V = last_dim(logits), N = row_count(logits);
    require(static_cast<int64_t>(targets.size()) == N &&
                static_cast<int64_t>(weights.size()) == N,
            "cross_entropy: target/weight length mismatch with logits " +
                shape_str(logits.shape()));
    require(smoothing >= 0 && smoothing < 1, "cross_entropy: smoothing must be in [0, 1)");

    Real weight_total = 0;
    for (Real w : weights) weight_total += w;
    require(weight_total > 0, "cross_entropy: all positions are masked out");

    Real loss = 0;
    for (int64_t i = 0; i < N; ++i) {
        if (weights[static_cast<size_t>(i)] == 0) continue;
        int t = targets[static_cast<size_t>(i)];
        require(t >= 0 && t < V, "cross_entropy: target id out of range");
        const Real* l = logits.values().data() + i * V;
        Real mx = l[0];
        for (int64_t j = 1; j < V; ++j) mx = std::max(mx, l[j]);
        Real lse = 0, mean_logit = 0;
        for (int64_t j = 0; j < V; ++j) {
            lse += std::exp(l[j] - mx);
            mean_logit += l[j];
        }
        lse = std::log(lse) + mx;
        mean_logit /= static_cast<Real>(V);
        Real row = lse - (Real(1) - smoothing) * l[t] - smoothing * mean_logit;
        loss += weights[static_cast<size_t>(i)] * row;
    }
    loss /= weight_total;

    auto pl = logits.node();
    return make_result({1}, {loss}, {pl},
                       [pl, targets, weights, smoothing, weight_total, N, V](Node& node) {
        if (!pl->active()) return;
        Real go = node.grad[0];
        for (int64_t i = 0; i < N; ++i) {
            Real w = weights[static_cast<size_t>(i)];
            if (w == 0) continue;
            const Real* l = pl->val.data() + i * V;
            Real* dl = pl->grad.data() + i * V;
            Real mx = l[0];
            for (int64_t j = 1; j < V; ++j) mx = std::max(mx, l[j]);
            Real sum = 0;
            for (int64_t j = 0; j < V; ++j) sum += std::exp(l[j] - mx);
            Real coef = go * w / weight_total;
            for (int64_t j = 0; j < V; ++j) {
                Real p = std::exp(l[j] - mx) / sum;
                Real q = smoothing / static_cast<Real>(V) +
                         (j == targets[static_cast<size_t>(i)] ? Real(1) - smoothing : Real(0));
                dl[j] += coef * (p - q);
            }
        }
    });
}

Tensor soft_cross_entropy(const Tensor& student_logits, const std::vector<Real>& teacher_probs,
                          const std::vector<Real>& weights) {
    require(student_logits.rank() >= 2, "soft_cross_entropy: logits must have rank >= 2");
    int64_t V = last_dim(student_logits), N = row_count(student_logits);
    require(static_cast<int64_t>(teacher_probs.size()) == N * V,
            "soft_cross_entropy: teacher distribution size mismatch");
    require(static_cast<int64_t>(weights.size()) == N,
            "soft_cross_entropy: weight length mismatch");

    Real weight_total = 0;
    for (Real w : weights) weight_total += w;
    require(weight_total > 0, "soft_cross_entropy: all positions are masked out");

    Real loss = 0;
    for (int64_t i = 0; i < N; ++i) {
        if (weights[static_cast<size_t>(i)] == 0) continue;
        const Real* s = student_logits.values().data() + i * V;
        const Real* t = teacher_probs.data() + i * V;
        Real mx = s[0];
        for (int64_t j = 1; j < V; ++j) mx = std::max(mx, s[j]);
        Real lse = 0;
        for (int64_t j = 0; j < V; ++j) lse += std::exp(s[j] - mx);
        lse = std::log(lse) + mx;
        Real dot = 0;
        for (int64_t j = 0; j < V; ++j) dot += t[j] * s[j];
        loss += weights[static_cast<size_t>(i)] * (lse - dot);
    }
    loss /= weight_total;

    auto ps = student_logits.node();
    return make_result({1}, {loss}, {ps}, [ps, teacher_probs, weights, weight_total, N, V](Node& node) {
        if (!ps->active()) return;
        Real go = node.grad[0];
        for (int64_t i = 0; i < N; ++i) {
            Real w = weights[static_cast<size_t>(i)];
            if (w == 0) continue;
            const Real* s = ps->val.data() + i * V;
            const Real* t = teacher_probs.data() + i * V;
            Real* ds = ps->grad.data() + i * V;
            Real mx = s[0];
            for (int64_t j = 1; j < V; ++j) mx = std::max(mx, s[j]);
            Real sum = 0;
            for (int64_t j = 0; j < V; ++j) sum += std::exp(s[j] - mx);
            Real coef = go * w / weight_total;
            for (int64_t j = 0; j < V; ++j)
                ds[j] += coef * (std::exp(s[j] - mx) / sum - t[j]);
        }
    });
}

// ---- backward ----

void backward(const Tensor& loss) {
    require(loss.defined() && loss.numel() == 1,
            "backward: loss must be a scalar tensor");
    Node* root = loss.node().get();
    require(!root->backward_done, "backward: already ran for this loss; zero grads first");
    root->backward_done = true;

    // Topological order, inputs before outputs.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx].get();
            ++idx;
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // A node participates if it is a trainable leaf or feeds one.
    std::unordered_set<Node*> needed;
    for (Node* node : order) {
        bool need = node->requires_grad;
        for (const auto& p : node->parents)
            if (needed.count(p.get())) { need = true; break; }
        if (need) needed.insert(node);
    }
    if (!needed.count(root)) return;  // loss does not depend on any parameter

    for (Node* node : order) {
        if (needed.count(node) && node->grad.empty())
            node->grad.assign(node->val.size(), Real(0));
    }
    root->grad[0] = Real(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && needed.count(node)) node->backward_fn(*node);
    }
}

}  // namespace mae::ad
