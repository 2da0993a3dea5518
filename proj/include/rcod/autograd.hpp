#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rcod/errors.hpp"
#include "rcod/tensor.hpp"

namespace rcod {

namespace kernels {

// Eager kernels shared by the tape ops. Shapes follow the conventions
// x:[C,H,W], w:[O,C,kh,kw], matrices row-major [m,n].

template <class F>
Tensor<F> matmul(const Tensor<F>& a, const Tensor<F>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<F> c({m, n});
    for (int i = 0; i < m; ++i) {
        F* crow = &c.data[size_t(i) * n];
        for (int kk = 0; kk < k; ++kk) {
            const F av = a.at(i, kk);
            const F* brow = &b.data[size_t(kk) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// grad wrt a: g.bT ; grad wrt b: aT.g — accumulated in place.
template <class F>
void matmul_backward(const Tensor<F>& a, const Tensor<F>& b, const Tensor<F>& g,
                     Tensor<F>* ga, Tensor<F>* gb) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (ga) {
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
                const F* grow = &g.data[size_t(i) * n];
                const F* brow = &b.data[size_t(kk) * n];
                F acc = 0;
                for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                ga->at(i, kk) += acc;
            }
    }
    if (gb) {
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
                const F av = a.at(i, kk);
                const F* grow = &g.data[size_t(i) * n];
                F* gbrow = &gb->data[size_t(kk) * n];
                for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
    }
}

inline std::pair<int, int> conv_out_hw(int h, int w, int kh, int kw, int stride, int pad) {
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (w + 2 * pad - kw) / stride + 1;
    return {oh, ow};
}

// Patch matrix in [K, P] layout with K = C*kh*kw rows and P = OH*OW output
// positions; zero padding materializes as zero entries. With this layout the
// convolution and both of its gradients are plain matrix products over the
// row-major weight view [O, K].
template <class F>
std::vector<F> im2col(const Tensor<F>& x, int kh, int kw, int stride, int pad, int OH, int OW) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int P = OH * OW;
    std::vector<F> col(size_t(C) * kh * kw * P, F(0));
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                F* crow = &col[((size_t(c) * kh + ky) * kw + kx) * P];
                int lo = 0, hi = OW - 1;
                if (kx - pad < 0) lo = (pad - kx + stride - 1) / stride;
                hi = std::min(hi, (W - 1 - kx + pad) / stride);
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const F* xrow = &x.at(c, iy, 0);
                    F* dst = crow + size_t(oy) * OW;
                    if (stride == 1) {
                        const F* xs = xrow + (kx - pad);
                        for (int ox = lo; ox <= hi; ++ox) dst[ox] = xs[ox];
                    } else {
                        for (int ox = lo; ox <= hi; ++ox) dst[ox] = xrow[ox * stride + kx - pad];
                    }
                }
            }
    return col;
}

// C[m,n] += A[m,k] * B[k,n] over raw row-major buffers.
template <class F>
void gemm_acc(const F* a, const F* b, F* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        F* crow = c + size_t(i) * n;
        const F* arow = a + size_t(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const F av = arow[kk];
            const F* brow = b + size_t(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class F>
Tensor<F> conv2d(const Tensor<F>& x, const Tensor<F>& w, const Tensor<F>* bias, int stride,
                 int pad) {
    if (x.ndim() != 3 || w.ndim() != 4) throw DimensionError("conv2d: expects x[C,H,W], w[O,C,kh,kw]");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != C) throw DimensionError("conv2d: channel mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv2d: kernel dims must be odd");
    if (stride < 1 || pad < 0) throw DimensionError("conv2d: bad stride/pad");
    auto [OH, OW] = conv_out_hw(H, W, kh, kw, stride, pad);
    if (OH <= 0 || OW <= 0) throw DimensionError("conv2d: non-positive output dims");
    if (bias && (bias->ndim() != 1 || bias->dim(0) != O))
        throw DimensionError("conv2d: bias shape mismatch");

    const int K = C * kh * kw;
    const int P = OH * OW;
    const auto col = im2col(x, kh, kw, stride, pad, OH, OW);
    Tensor<F> out({O, OH, OW});
    if (bias)
        for (int o = 0; o < O; ++o) {
            F* orow = &out.data[size_t(o) * P];
            std::fill(orow, orow + P, bias->data[size_t(o)]);
        }
    gemm_acc(w.data.data(), col.data(), out.data.data(), O, K, P);
    return out;
}

template <class F>
void conv2d_backward(const Tensor<F>& x, const Tensor<F>& w, const Tensor<F>& g, int stride,
                     int pad, Tensor<F>* gx, Tensor<F>* gw, Tensor<F>* gb) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int OH = g.dim(1), OW = g.dim(2);
    const int K = C * kh * kw;
    const int P = OH * OW;
    if (gb) {
        for (int o = 0; o < O; ++o) {
            const F* grow = &g.data[size_t(o) * P];
            F acc = 0;
            for (int i = 0; i < P; ++i) acc += grow[i];
            gb->data[size_t(o)] += acc;
        }
    }
    if (gw) {
        // dW = G[O,P] . col^T[P,K]
        const auto col = im2col(x, kh, kw, stride, pad, OH, OW);
        std::vector<F> colT(size_t(P) * K);
        for (int k = 0; k < K; ++k)
            for (int p = 0; p < P; ++p) colT[size_t(p) * K + k] = col[size_t(k) * P + p];
        gemm_acc(g.data.data(), colT.data(), gw->data.data(), O, P, K);
    }
    if (gx) {
        // gcol[k,p] = sum_o W[o,k] G[o,p], then scatter back (col2im)
        std::vector<F> gcol(size_t(K) * P, F(0));
        for (int o = 0; o < O; ++o) {
            const F* wrow = &w.data[size_t(o) * K];
            const F* grow = &g.data[size_t(o) * P];
            for (int k = 0; k < K; ++k) {
                const F wv = wrow[k];
                F* crow = &gcol[size_t(k) * P];
                for (int p = 0; p < P; ++p) crow[p] += wv * grow[p];
            }
        }
        for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const F* crow = &gcol[((size_t(c) * kh + ky) * kw + kx) * P];
                    int lo = 0, hi = OW - 1;
                    if (kx - pad < 0) lo = (pad - kx + stride - 1) / stride;
                    hi = std::min(hi, (W - 1 - kx + pad) / stride);
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        F* gxrow = &gx->at(c, iy, 0);
                        const F* src = crow + size_t(oy) * OW;
                        if (stride == 1) {
                            F* gxs = gxrow + (kx - pad);
                            for (int ox = lo; ox <= hi; ++ox) gxs[ox] += src[ox];
                        } else {
                            for (int ox = lo; ox <= hi; ++ox)
                                gxrow[ox * stride + kx - pad] += src[ox];
                        }
                    }
                }
    }
}

template <class F>
Tensor<F> softmax_rows(const Tensor<F>& x) {
    if (x.ndim() != 2) throw DimensionError("softmax_rows: expects a matrix");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<F> y({m, n});
    for (int i = 0; i < m; ++i) {
        const F* xr = &x.data[size_t(i) * n];
        F* yr = &y.data[size_t(i) * n];
        F mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        F sum = 0;
        for (int j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (int j = 0; j < n; ++j) yr[j] /= sum;
    }
    return y;
}

}  // namespace kernels

// Reverse-mode tape. Ops append nodes in creation order (already a
// topological order); backward() walks the node list once in reverse.
template <class F>
class Tape {
public:
    using Id = int;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void set_check_finite(bool on) { check_finite_ = on; }

    Id constant(Tensor<F> v) { return push(std::move(v), false, {}, nullptr, ""); }

    // Registering the same name twice would silently split its gradient
    // between two leaves, so it is rejected.
    Id param(const std::string& name, Tensor<F> v) {
        if (name.empty()) throw ContractError("param needs a name");
        if (!param_names_.insert(name).second)
            throw ContractError("parameter registered twice on one tape: " + name);
        return push(std::move(v), true, {}, nullptr, name);
    }

    const Tensor<F>& value(Id id) const { return nodes_[size_t(id)].value; }
    const Tensor<F>& grad(Id id) const { return nodes_[size_t(id)].grad; }
    size_t size() const { return nodes_.size(); }

    // ---- elementwise ----

    Id add(Id a, Id b) {
        require_same_shape(a, b, "add");
        Tensor<F> out = value(a);
        const auto& vb = value(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb[i];
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        t.accumulate(n.parents[0], n.grad.data.data(), 1);
                        t.accumulate(n.parents[1], n.grad.data.data(), 1);
                    });
    }

    Id sub(Id a, Id b) {
        require_same_shape(a, b, "sub");
        Tensor<F> out = value(a);
        const auto& vb = value(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb[i];
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        t.accumulate(n.parents[0], n.grad.data.data(), 1);
                        t.accumulate(n.parents[1], n.grad.data.data(), -1);
                    });
    }

    Id mul(Id a, Id b) {
        require_same_shape(a, b, "mul");
        Tensor<F> out = value(a);
        const auto& vb = value(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb[i];
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0], b = n.parents[1];
                        if (t.needs(a)) {
                            auto& ga = t.grad_buf(a);
                            const auto& vb = t.value(b).data;
                            for (size_t i = 0; i < ga.data.size(); ++i)
                                ga.data[i] += n.grad.data[i] * vb[i];
                        }
                        if (t.needs(b)) {
                            auto& gb = t.grad_buf(b);
                            const auto& va = t.value(a).data;
                            for (size_t i = 0; i < gb.data.size(); ++i)
                                gb.data[i] += n.grad.data[i] * va[i];
                        }
                    });
    }

    Id scale(Id a, F c) {
        Tensor<F> out = value(a);
        for (auto& v : out.data) v *= c;
        return push(std::move(out), needs(a), {a},
                    [c](Tape& t, Id self) {
                        auto& n = t.node(self);
                        t.accumulate(n.parents[0], n.grad.data.data(), c);
                    });
    }

    Id add_scalar(Id a, F c) {
        Tensor<F> out = value(a);
        for (auto& v : out.data) v += c;
        return push(std::move(out), needs(a), {a},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        t.accumulate(n.parents[0], n.grad.data.data(), 1);
                    });
    }

    Id silu(Id a) {
        Tensor<F> out = value(a);
        for (auto& v : out.data) {
            const F s = F(1) / (F(1) + std::exp(-v));
            v = v * s;
        }
        return push(std::move(out), needs(a), {a},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0];
                        if (!t.needs(a)) return;
                        auto& ga = t.grad_buf(a);
                        const auto& x = t.value(a).data;
                        for (size_t i = 0; i < x.size(); ++i) {
                            const F s = F(1) / (F(1) + std::exp(-x[i]));
                            ga.data[i] += n.grad.data[i] * s * (F(1) + x[i] * (F(1) - s));
                        }
                    });
    }

    Id sqrt_op(Id a) {
        Tensor<F> out = value(a);
        for (auto& v : out.data) {
            if (v < F(0)) throw NumericRangeError("sqrt of negative value");
            v = std::sqrt(v);
        }
        return push(std::move(out), needs(a), {a},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0];
                        if (!t.needs(a)) return;
                        auto& ga = t.grad_buf(a);
                        for (size_t i = 0; i < ga.data.size(); ++i) {
                            const F y = std::max(n.value.data[i], F(1e-30));
                            ga.data[i] += n.grad.data[i] * F(0.5) / y;
                        }
                    });
    }

    Id clamp(Id a, F lo, F hi) {
        Tensor<F> out = value(a);
        for (auto& v : out.data) v = std::min(hi, std::max(lo, v));
        return push(std::move(out), needs(a), {a},
                    [lo, hi](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0];
                        if (!t.needs(a)) return;
                        auto& ga = t.grad_buf(a);
                        const auto& x = t.value(a).data;
                        for (size_t i = 0; i < x.size(); ++i)
                            if (x[i] >= lo && x[i] <= hi) ga.data[i] += n.grad.data[i];
                    });
    }

    // ---- shape ----

    Id reshape(Id a, std::vector<int> shape) {
        if (Tensor<F>::numel_of(shape) != value(a).numel())
            throw DimensionError("reshape: element count mismatch");
        Tensor<F> out(std::move(shape), value(a).data);
        return push(std::move(out), needs(a), {a},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        t.accumulate(n.parents[0], n.grad.data.data(), 1);
                    });
    }

    Id transpose(Id a) {
        const auto& v = value(a);
        if (v.ndim() != 2) throw DimensionError("transpose: expects a matrix");
        const int m = v.dim(0), n_ = v.dim(1);
        Tensor<F> out({n_, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n_; ++j) out.at(j, i) = v.at(i, j);
        return push(std::move(out), needs(a), {a},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0];
                        if (!t.needs(a)) return;
                        auto& ga = t.grad_buf(a);
                        const int m = ga.dim(0), n_ = ga.dim(1);
                        for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n_; ++j) ga.at(i, j) += n.grad.at(j, i);
                    });
    }

    Id concat(Id a, Id b) {
        const auto& va = value(a);
        const auto& vb = value(b);
        if (va.ndim() != 1 || vb.ndim() != 1) throw DimensionError("concat: expects vectors");
        Tensor<F> out({va.dim(0) + vb.dim(0)});
        std::copy(va.data.begin(), va.data.end(), out.data.begin());
        std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.dim(0));
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0], b = n.parents[1];
                        const int na = t.value(a).dim(0);
                        if (t.needs(a)) {
                            auto& ga = t.grad_buf(a);
                            for (int i = 0; i < na; ++i) ga.data[size_t(i)] += n.grad.data[size_t(i)];
                        }
                        if (t.needs(b)) {
                            auto& gb = t.grad_buf(b);
                            for (size_t i = 0; i < gb.data.size(); ++i)
                                gb.data[i] += n.grad.data[size_t(na) + i];
                        }
                    });
    }

    // ---- linear algebra ----

    Id matmul(Id a, Id b) {
        Tensor<F> out = kernels::matmul(value(a), value(b));
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0], b = n.parents[1];
                        kernels::matmul_backward(t.value(a), t.value(b), n.grad,
                                                 t.needs(a) ? &t.grad_buf(a) : nullptr,
                                                 t.needs(b) ? &t.grad_buf(b) : nullptr);
                    });
    }

    // x[m,n] + b[n], b broadcast over rows.
    Id add_rowvec(Id x, Id b) {
        const auto& vx = value(x);
        const auto& vb = value(b);
        if (vx.ndim() != 2 || vb.ndim() != 1 || vb.dim(0) != vx.dim(1))
            throw DimensionError("add_rowvec: shape mismatch");
        Tensor<F> out = vx;
        const int m = vx.dim(0), n_ = vx.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n_; ++j) out.at(i, j) += vb.data[size_t(j)];
        return push(std::move(out), needs(x) || needs(b), {x, b},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id x = n.parents[0], b = n.parents[1];
                        if (t.needs(x)) t.accumulate(x, n.grad.data.data(), 1);
                        if (t.needs(b)) {
                            auto& gb = t.grad_buf(b);
                            const int m = n.grad.dim(0), n_ = n.grad.dim(1);
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < n_; ++j) gb.data[size_t(j)] += n.grad.at(i, j);
                        }
                    });
    }

    Id softmax_rows(Id a) {
        Tensor<F> out = kernels::softmax_rows(value(a));
        return push(std::move(out), needs(a), {a},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0];
                        if (!t.needs(a)) return;
                        auto& ga = t.grad_buf(a);
                        const int m = n.value.dim(0), n_ = n.value.dim(1);
                        for (int i = 0; i < m; ++i) {
                            const F* y = &n.value.data[size_t(i) * n_];
                            const F* g = &n.grad.data[size_t(i) * n_];
                            F dot = 0;
                            for (int j = 0; j < n_; ++j) dot += g[j] * y[j];
                            F* gr = &ga.data[size_t(i) * n_];
                            for (int j = 0; j < n_; ++j) gr[j] += y[j] * (g[j] - dot);
                        }
                    });
    }

    // ---- conv / spatial ----

    Id conv2d(Id x, Id w, Id bias, int stride, int pad) {
        const Tensor<F>* bp = bias >= 0 ? &value(bias) : nullptr;
        Tensor<F> out = kernels::conv2d(value(x), value(w), bp, stride, pad);
        bool ng = needs(x) || needs(w) || (bias >= 0 && needs(bias));
        std::vector<Id> parents = {x, w};
        if (bias >= 0) parents.push_back(bias);
        return push(std::move(out), ng, std::move(parents),
                    [stride, pad](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id x = n.parents[0], w = n.parents[1];
                        Id b = n.parents.size() > 2 ? n.parents[2] : -1;
                        kernels::conv2d_backward(t.value(x), t.value(w), n.grad, stride, pad,
                                                 t.needs(x) ? &t.grad_buf(x) : nullptr,
                                                 t.needs(w) ? &t.grad_buf(w) : nullptr,
                                                 (b >= 0 && t.needs(b)) ? &t.grad_buf(b) : nullptr);
                    });
    }

    // Per-channel affine y[c,.,.] = x[c,.,.] * s[c] + t[c]; used for FiLM
    // conditioning and channel biases.
    Id channel_affine(Id x, Id s, Id t_) {
        const auto& vx = value(x);
        const auto& vs = value(s);
        const auto& vt = value(t_);
        if (vx.ndim() != 3 || vs.ndim() != 1 || vt.ndim() != 1 || vs.dim(0) != vx.dim(0) ||
            vt.dim(0) != vx.dim(0))
            throw DimensionError("channel_affine: shape mismatch");
        const int C = vx.dim(0);
        const int64_t hw = int64_t(vx.dim(1)) * vx.dim(2);
        Tensor<F> out = vx;
        for (int c = 0; c < C; ++c) {
            const F sv = vs.data[size_t(c)], tv = vt.data[size_t(c)];
            F* row = &out.data[size_t(c) * hw];
            for (int64_t i = 0; i < hw; ++i) row[i] = row[i] * sv + tv;
        }
        return push(std::move(out), needs(x) || needs(s) || needs(t_), {x, s, t_},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id x = n.parents[0], s = n.parents[1], tt = n.parents[2];
                        const auto& vx = t.value(x);
                        const auto& vs = t.value(s);
                        const int C = vx.dim(0);
                        const int64_t hw = int64_t(vx.dim(1)) * vx.dim(2);
                        for (int c = 0; c < C; ++c) {
                            const F* g = &n.grad.data[size_t(c) * hw];
                            const F* xr = &vx.data[size_t(c) * hw];
                            if (t.needs(x)) {
                                F* gx = &t.grad_buf(x).data[size_t(c) * hw];
                                const F sv = vs.data[size_t(c)];
                                for (int64_t i = 0; i < hw; ++i) gx[i] += g[i] * sv;
                            }
                            if (t.needs(s)) {
                                F acc = 0;
                                for (int64_t i = 0; i < hw; ++i) acc += g[i] * xr[i];
                                t.grad_buf(s).data[size_t(c)] += acc;
                            }
                            if (t.needs(tt)) {
                                F acc = 0;
                                for (int64_t i = 0; i < hw; ++i) acc += g[i];
                                t.grad_buf(tt).data[size_t(c)] += acc;
                            }
                        }
                    });
    }

    // Group normalization over [C,H,W] with fixed channels-per-group and
    // per-channel affine.
    Id group_norm(Id x, Id gamma, Id beta, int channels_per_group, F eps) {
        const auto& vx = value(x);
        if (vx.ndim() != 3) throw DimensionError("group_norm: expects [C,H,W]");
        const int C = vx.dim(0);
        if (channels_per_group <= 0 || C % channels_per_group != 0)
            throw DimensionError("group_norm: channels not divisible by group size");
        if (value(gamma).numel() != C || value(beta).numel() != C)
            throw DimensionError("group_norm: affine shape mismatch");
        const int64_t hw = int64_t(vx.dim(1)) * vx.dim(2);
        const int groups = C / channels_per_group;
        const int64_t gsize = channels_per_group * hw;

        Tensor<F> xhat = vx;
        std::vector<F> inv_std(static_cast<size_t>(groups));
        for (int g = 0; g < groups; ++g) {
            F* base = &xhat.data[size_t(g) * gsize];
            F mean = 0;
            for (int64_t i = 0; i < gsize; ++i) mean += base[i];
            mean /= F(gsize);
            F var = 0;
            for (int64_t i = 0; i < gsize; ++i) {
                const F d = base[i] - mean;
                var += d * d;
            }
            var /= F(gsize);
            const F is = F(1) / std::sqrt(var + eps);
            inv_std[size_t(g)] = is;
            for (int64_t i = 0; i < gsize; ++i) base[i] = (base[i] - mean) * is;
        }
        Tensor<F> out = xhat;
        const auto& vg = value(gamma);
        const auto& vb = value(beta);
        for (int c = 0; c < C; ++c) {
            const F gv = vg.data[size_t(c)], bv = vb.data[size_t(c)];
            F* row = &out.data[size_t(c) * hw];
            for (int64_t i = 0; i < hw; ++i) row[i] = row[i] * gv + bv;
        }
        auto xhat_ptr = std::make_shared<Tensor<F>>(std::move(xhat));
        auto istd_ptr = std::make_shared<std::vector<F>>(std::move(inv_std));
        return push(std::move(out), needs(x) || needs(gamma) || needs(beta), {x, gamma, beta},
                    [xhat_ptr, istd_ptr, channels_per_group, hw](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id x = n.parents[0], gamma = n.parents[1], beta = n.parents[2];
                        const auto& xh = *xhat_ptr;
                        const int C = xh.dim(0);
                        const int groups = C / channels_per_group;
                        const int64_t gsize = channels_per_group * hw;
                        const auto& vg = t.value(gamma);
                        if (t.needs(gamma)) {
                            auto& gg = t.grad_buf(gamma);
                            for (int c = 0; c < C; ++c) {
                                const F* g = &n.grad.data[size_t(c) * hw];
                                const F* xr = &xh.data[size_t(c) * hw];
                                F acc = 0;
                                for (int64_t i = 0; i < hw; ++i) acc += g[i] * xr[i];
                                gg.data[size_t(c)] += acc;
                            }
                        }
                        if (t.needs(beta)) {
                            auto& gb = t.grad_buf(beta);
                            for (int c = 0; c < C; ++c) {
                                const F* g = &n.grad.data[size_t(c) * hw];
                                F acc = 0;
                                for (int64_t i = 0; i < hw; ++i) acc += g[i];
                                gb.data[size_t(c)] += acc;
                            }
                        }
                        if (!t.needs(x)) return;
                        auto& gx = t.grad_buf(x);
                        std::vector<F> ghat(static_cast<size_t>(gsize));
                        for (int g = 0; g < groups; ++g) {
                            const int64_t base = int64_t(g) * gsize;
                            F sum_g = 0, sum_gx = 0;
                            for (int cc = 0; cc < channels_per_group; ++cc) {
                                const int c = g * channels_per_group + cc;
                                const F gv = vg.data[size_t(c)];
                                const F* gr = &n.grad.data[size_t(c) * hw];
                                const F* xr = &xh.data[size_t(c) * hw];
                                F* gh = &ghat[size_t(cc) * hw];
                                for (int64_t i = 0; i < hw; ++i) {
                                    gh[i] = gr[i] * gv;
                                    sum_g += gh[i];
                                    sum_gx += gh[i] * xr[i];
                                }
                            }
                            const F mg = sum_g / F(gsize);
                            const F mgx = sum_gx / F(gsize);
                            const F is = (*istd_ptr)[size_t(g)];
                            for (int64_t i = 0; i < gsize; ++i)
                                gx.data[size_t(base + i)] +=
                                    is * (ghat[size_t(i)] - mg - xh.data[size_t(base + i)] * mgx);
                        }
                    });
    }

    // Average pooling to an exact output grid (input dims divisible).
    Id avg_pool(Id x, int oh, int ow) {
        const auto& vx = value(x);
        if (vx.ndim() != 3) throw DimensionError("avg_pool: expects [C,H,W]");
        const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
        if (oh <= 0 || ow <= 0 || H % oh != 0 || W % ow != 0)
            throw DimensionError("avg_pool: output grid must divide input dims");
        const int bh = H / oh, bw = W / ow;
        Tensor<F> out({C, oh, ow});
        const F inv = F(1) / F(bh * bw);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < oh; ++y)
                for (int x2 = 0; x2 < ow; ++x2) {
                    F acc = 0;
                    for (int dy = 0; dy < bh; ++dy)
                        for (int dx = 0; dx < bw; ++dx) acc += vx.at(c, y * bh + dy, x2 * bw + dx);
                    out.at(c, y, x2) = acc * inv;
                }
        return push(std::move(out), needs(x), {x},
                    [bh, bw](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id x = n.parents[0];
                        if (!t.needs(x)) return;
                        auto& gx = t.grad_buf(x);
                        const int C = n.grad.dim(0), oh = n.grad.dim(1), ow = n.grad.dim(2);
                        const F inv = F(1) / F(bh * bw);
                        for (int c = 0; c < C; ++c)
                            for (int y = 0; y < oh; ++y)
                                for (int x2 = 0; x2 < ow; ++x2) {
                                    const F g = n.grad.at(c, y, x2) * inv;
                                    for (int dy = 0; dy < bh; ++dy)
                                        for (int dx = 0; dx < bw; ++dx)
                                            gx.at(c, y * bh + dy, x2 * bw + dx) += g;
                                }
                    });
    }

    Id upsample_nearest2(Id x) {
        const auto& vx = value(x);
        if (vx.ndim() != 3) throw DimensionError("upsample_nearest2: expects [C,H,W]");
        const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
        Tensor<F> out({C, 2 * H, 2 * W});
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x2 = 0; x2 < W; ++x2) {
                    const F v = vx.at(c, y, x2);
                    out.at(c, 2 * y, 2 * x2) = v;
                    out.at(c, 2 * y, 2 * x2 + 1) = v;
                    out.at(c, 2 * y + 1, 2 * x2) = v;
                    out.at(c, 2 * y + 1, 2 * x2 + 1) = v;
                }
        return push(std::move(out), needs(x), {x},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id x = n.parents[0];
                        if (!t.needs(x)) return;
                        auto& gx = t.grad_buf(x);
                        const int C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
                        for (int c = 0; c < C; ++c)
                            for (int y = 0; y < H; ++y)
                                for (int x2 = 0; x2 < W; ++x2)
                                    gx.at(c, y, x2) += n.grad.at(c, 2 * y, 2 * x2) +
                                                       n.grad.at(c, 2 * y, 2 * x2 + 1) +
                                                       n.grad.at(c, 2 * y + 1, 2 * x2) +
                                                       n.grad.at(c, 2 * y + 1, 2 * x2 + 1);
                    });
    }

    // ---- reductions ----

    Id sum_all(Id a) {
        F acc = 0;
        for (F v : value(a).data) acc += v;
        return push(Tensor<F>::scalar(acc), needs(a), {a},
                    [](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0];
                        if (!t.needs(a)) return;
                        auto& ga = t.grad_buf(a);
                        const F g = n.grad.data[0];
                        for (auto& v : ga.data) v += g;
                    });
    }

    Id mean_all(Id a) {
        const int64_t n_ = value(a).numel();
        F acc = 0;
        for (F v : value(a).data) acc += v;
        acc /= F(n_);
        return push(Tensor<F>::scalar(acc), needs(a), {a},
                    [n_](Tape& t, Id self) {
                        auto& n = t.node(self);
                        Id a = n.parents[0];
                        if (!t.needs(a)) return;
                        auto& ga = t.grad_buf(a);
                        const F g = n.grad.data[0] / F(n_);
                        for (auto& v : ga.data) v += g;
                    });
    }

    // Mean squared difference reduced to a scalar.
    Id mse(Id a, Id b) { return mean_all(mul(sub(a, b), sub(a, b))); }

    // ---- backward ----

    // Runs reverse-mode accumulation from a scalar loss; returns the
    // gradient for every named parameter reachable from it.
    std::map<std::string, Tensor<F>> backward(Id loss) {
        if (value(loss).numel() != 1) throw ContractError("backward: loss must be scalar");
        for (auto& n : nodes_) n.grad = Tensor<F>();
        grad_buf(loss).data[0] = F(1);
        for (Id id = loss; id >= 0; --id) {
            auto& n = nodes_[size_t(id)];
            if (!n.needs_grad || n.grad.data.empty() || !n.backward) continue;
            n.backward(*this, id);
        }
        std::map<std::string, Tensor<F>> grads;
        for (auto& n : nodes_) {
            if (n.param_name.empty()) continue;
            if (n.grad.data.empty()) grads[n.param_name] = Tensor<F>::zeros(n.value.shape);
            else grads[n.param_name] = n.grad;
        }
        return grads;
    }

    bool needs(Id id) const { return nodes_[size_t(id)].needs_grad; }

private:
    struct Node {
        Tensor<F> value;
        Tensor<F> grad;
        bool needs_grad = false;
        std::vector<Id> parents;
        std::function<void(Tape&, Id)> backward;
        std::string param_name;
    };

    Node& node(Id id) { return nodes_[size_t(id)]; }

    Tensor<F>& grad_buf(Id id) {
        auto& n = nodes_[size_t(id)];
        if (n.grad.data.empty()) n.grad = Tensor<F>::zeros(n.value.shape);
        return n.grad;
    }

    // grad[parent] += scale * g (same shape).
    void accumulate(Id parent, const F* g, F scale) {
        if (!needs(parent)) return;
        auto& gp = grad_buf(parent);
        for (size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += scale * g[i];
    }

    Id push(Tensor<F> value, bool needs_grad, std::vector<Id> parents,
            std::function<void(Tape&, Id)> backward, std::string param_name = "") {
        if (check_finite_ && !value.all_finite())
            throw NumericRangeError("tape op produced non-finite values");
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        n.param_name = std::move(param_name);
        nodes_.push_back(std::move(n));
        return Id(nodes_.size()) - 1;
    }

    void require_same_shape(Id a, Id b, const char* op) {
        if (!value(a).same_shape(value(b)))
            throw DimensionError(std::string(op) + ": shape mismatch " + value(a).shape_str() +
                                 " vs " + value(b).shape_str());
    }

    std::vector<Node> nodes_;
    std::set<std::string> param_names_;
    bool check_finite_ = true;
};

// Eager entry points for the core ops (no gradients).
template <class F>
Tensor<F> matmul(const Tensor<F>& a, const Tensor<F>& b) {
    return kernels::matmul(a, b);
}
template <class F>
Tensor<F> conv2d(const Tensor<F>& x, const Tensor<F>& w, int stride, int pad) {
    return kernels::conv2d<F>(x, w, nullptr, stride, pad);
}
template <class F>
Tensor<F> softmax_rows(const Tensor<F>& x) {
    return kernels::softmax_rows(x);
}

}  // namespace rcod
