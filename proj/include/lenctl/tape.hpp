#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lenctl/threading.hpp"

namespace lenctl {

template <class Real>
struct Tensor {
    std::vector<int> shape;
    std::vector<Real> data;
    std::vector<Real> grad; // empty unless gradients are tracked

    Tensor() = default;
    Tensor(std::vector<int> s, Real fill = Real(0)) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }
    size_t numel() const { return data.size(); }
    void track_grad() { grad.assign(data.size(), Real(0)); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }
};

// ---------------------------------------------------------------------------
// Row-major matmul kernels shared by forward and backward passes. Every
// output cell is produced by exactly one worker with a fixed inner loop
// order, so results do not depend on the thread count.
// ---------------------------------------------------------------------------

// C[m,n] (+)= A[m,k] * B[k,n]
template <class Real>
void mm_nn(const Real* a, const Real* b, Real* c, int m, int k, int n, bool accumulate) {
    parallel_for(m, [=](int i0, int i1) {
        for (int i = i0; i < i1; ++i) {
            Real* cr = c + static_cast<size_t>(i) * n;
            if (!accumulate) std::fill(cr, cr + n, Real(0));
            const Real* ar = a + static_cast<size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                const Real av = ar[kk];
                const Real* br = b + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) cr[j] += av * br[j];
            }
        }
    });
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <class Real>
void mm_nt(const Real* a, const Real* b, Real* c, int m, int k, int n, bool accumulate) {
    parallel_for(m, [=](int i0, int i1) {
        for (int i = i0; i < i1; ++i) {
            const Real* ar = a + static_cast<size_t>(i) * k;
            Real* cr = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const Real* br = b + static_cast<size_t>(j) * k;
                Real acc = 0;
                for (int kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
                cr[j] = accumulate ? cr[j] + acc : acc;
            }
        }
    });
}

// C[k,n] (+)= A[m,k]^T * B[m,n]
template <class Real>
void mm_tn(const Real* a, const Real* b, Real* c, int m, int k, int n, bool accumulate) {
    parallel_for(k, [=](int r0, int r1) {
        for (int r = r0; r < r1; ++r) {
            Real* cr = c + static_cast<size_t>(r) * n;
            if (!accumulate) std::fill(cr, cr + n, Real(0));
            for (int i = 0; i < m; ++i) {
                const Real av = a[static_cast<size_t>(i) * k + r];
                const Real* br = b + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) cr[j] += av * br[j];
            }
        }
    });
}

// In-place pairwise rotation of one head vector: pair (x[2j], x[2j+1])
// rotates by angle position / base^(2j/dim). Angles are computed in double
// regardless of Real.
template <class Real>
void rope_rotate(std::span<Real> x, int position, double base) {
    const int dim = static_cast<int>(x.size());
    if (dim % 2 != 0) throw std::invalid_argument("rope_rotate: head dimension must be even");
    for (int j = 0; 2 * j < dim; ++j) {
        const double angle = position / std::pow(base, (2.0 * j) / dim);
        const Real c = static_cast<Real>(std::cos(angle));
        const Real s = static_cast<Real>(std::sin(angle));
        const Real x0 = x[2 * j], x1 = x[2 * j + 1];
        x[2 * j] = x0 * c - x1 * s;
        x[2 * j + 1] = x0 * s + x1 * c;
    }
}

template <class Real>
Real gelu_scalar(Real x) {
    // tanh approximation
    const Real k = static_cast<Real>(0.7978845608028654); // sqrt(2/pi)
    const Real inner = k * (x + static_cast<Real>(0.044715) * x * x * x);
    return static_cast<Real>(0.5) * x * (Real(1) + std::tanh(inner));
}

template <class Real>
Real gelu_grad_scalar(Real x) {
    const Real k = static_cast<Real>(0.7978845608028654);
    const Real x3 = x * x * x;
    const Real inner = k * (x + static_cast<Real>(0.044715) * x3);
    const Real t = std::tanh(inner);
    const Real dinner = k * (Real(1) + static_cast<Real>(0.134145) * x * x);
    return static_cast<Real>(0.5) * (Real(1) + t) +
           static_cast<Real>(0.5) * x * (Real(1) - t * t) * dinner;
}

// ---------------------------------------------------------------------------
// Reverse-mode tape. Build a graph per step, call backward(loss) once.
// Backward walks the recorded ops strictly in reverse creation order,
// which keeps gradient accumulation deterministic.
// ---------------------------------------------------------------------------
template <class Real>
class Tape {
public:
    using Id = int;

    Tape() = default;
    // backward closures capture `this`; relocation would dangle them
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = delete;
    Tape& operator=(Tape&&) = delete;

    Id input(const std::vector<int>& shape, const Real* data, bool needs_grad) {
        Slot s;
        s.shape = shape;
        s.val.assign(data, data + Tensor<Real>::numel_of(shape));
        s.needs_grad = needs_grad;
        slots_.push_back(std::move(s));
        return static_cast<Id>(slots_.size() - 1);
    }

    Id input(const Tensor<Real>& t, bool needs_grad) {
        return input(t.shape, t.data.data(), needs_grad);
    }

    Id constant(const std::vector<int>& shape, const Real* data) {
        return input(shape, data, false);
    }

    const std::vector<int>& shape(Id id) const { return slots_[id].shape; }
    std::span<const Real> value(Id id) const { return slots_[id].val; }
    std::span<const Real> grad(Id id) const { return slots_[id].grad; }

    size_t num_ops() const { return ops_.size(); }

    // -- elementwise ---------------------------------------------------------

    Id add(Id a, Id b) {
        check_same_shape(a, b, "add");
        Id out = alloc_like(a);
        const size_t n = slots_[out].val.size();
        for (size_t i = 0; i < n; ++i) slots_[out].val[i] = slots_[a].val[i] + slots_[b].val[i];
        record([this, a, b, out] {
            accumulate(a, slots_[out].grad.data(), slots_[out].grad.size());
            accumulate(b, slots_[out].grad.data(), slots_[out].grad.size());
        });
        return out;
    }

    Id mul(Id a, Id b) {
        check_same_shape(a, b, "mul");
        Id out = alloc_like(a);
        const size_t n = slots_[out].val.size();
        for (size_t i = 0; i < n; ++i) slots_[out].val[i] = slots_[a].val[i] * slots_[b].val[i];
        record([this, a, b, out] {
            const auto& g = slots_[out].grad;
            if (slots_[a].needs_grad) {
                auto& ga = slots_[a].grad;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * slots_[b].val[i];
            }
            if (slots_[b].needs_grad) {
                auto& gb = slots_[b].grad;
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * slots_[a].val[i];
            }
        });
        return out;
    }

    Id scale(Id a, Real c) {
        Id out = alloc_like(a);
        const size_t n = slots_[out].val.size();
        for (size_t i = 0; i < n; ++i) slots_[out].val[i] = slots_[a].val[i] * c;
        record([this, a, c, out] {
            if (!slots_[a].needs_grad) return;
            auto& ga = slots_[a].grad;
            const auto& g = slots_[out].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
        return out;
    }

    Id gelu(Id a) {
        Id out = alloc_like(a);
        const size_t n = slots_[out].val.size();
        for (size_t i = 0; i < n; ++i) slots_[out].val[i] = gelu_scalar(slots_[a].val[i]);
        record([this, a, out] {
            if (!slots_[a].needs_grad) return;
            auto& ga = slots_[a].grad;
            const auto& g = slots_[out].grad;
            for (size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * gelu_grad_scalar(slots_[a].val[i]);
        });
        return out;
    }

    // x: [m,n], b: [n] broadcast over rows
    Id add_bias(Id x, Id b) {
        const auto [m, n] = dims2(x, "add_bias");
        if (slots_[b].shape.size() != 1 || slots_[b].shape[0] != n)
            throw std::invalid_argument("add_bias: bias width mismatch");
        Id out = alloc_like(x);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                slots_[out].val[idx(i, j, n)] = slots_[x].val[idx(i, j, n)] + slots_[b].val[j];
        record([this, x, b, out, m = m, n = n] {
            const auto& g = slots_[out].grad;
            accumulate(x, g.data(), g.size());
            if (slots_[b].needs_grad) {
                auto& gb = slots_[b].grad;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += g[idx(i, j, n)];
            }
        });
        return out;
    }

    Id sum(Id a) {
        Id out = alloc({1});
        Real s = 0;
        for (Real v : slots_[a].val) s += v;
        slots_[out].val[0] = s;
        record([this, a, out] {
            if (!slots_[a].needs_grad) return;
            auto& ga = slots_[a].grad;
            const Real g = slots_[out].grad[0];
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
        return out;
    }

    // -- linear algebra -------------------------------------------------------

    // [m,k] x [k,n] -> [m,n]
    Id matmul(Id a, Id b) {
        const auto [m, k] = dims2(a, "matmul lhs");
        const auto [k2, n] = dims2(b, "matmul rhs");
        if (k != k2) throw std::invalid_argument("matmul: inner dimension mismatch");
        Id out = alloc({m, n});
        mm_nn(slots_[a].val.data(), slots_[b].val.data(), slots_[out].val.data(), m, k, n, false);
        record([this, a, b, out, m = m, k = k, n = n] {
            const Real* g = slots_[out].grad.data();
            if (slots_[a].needs_grad)
                mm_nt(g, slots_[b].val.data(), slots_[a].grad.data(), m, n, k, true);
            if (slots_[b].needs_grad)
                mm_tn(slots_[a].val.data(), g, slots_[b].grad.data(), m, k, n, true);
        });
        return out;
    }

    // [m,k] x [n,k]^T -> [m,n]; the natural call for row-major [out,in] weights.
    Id matmul_nt(Id a, Id b) {
        const auto [m, k] = dims2(a, "matmul_nt lhs");
        const auto [n, k2] = dims2(b, "matmul_nt rhs");
        if (k != k2) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
        Id out = alloc({m, n});
        mm_nt(slots_[a].val.data(), slots_[b].val.data(), slots_[out].val.data(), m, k, n, false);
        record([this, a, b, out, m = m, k = k, n = n] {
            const Real* g = slots_[out].grad.data();
            if (slots_[a].needs_grad)
                mm_nn(g, slots_[b].val.data(), slots_[a].grad.data(), m, n, k, true);
            if (slots_[b].needs_grad)
                mm_tn(g, slots_[a].val.data(), slots_[b].grad.data(), m, n, k, true);
        });
        return out;
    }

    // table: [V,d]; gathers one row per id.
    Id embedding(Id table, const std::vector<int>& ids) {
        const auto [v, d] = dims2(table, "embedding table");
        const int L = static_cast<int>(ids.size());
        for (int id : ids)
            if (id < 0 || id >= v) throw std::invalid_argument("embedding: token id out of vocabulary");
        Id out = alloc({L, d});
        for (int i = 0; i < L; ++i)
            std::copy_n(slots_[table].val.data() + static_cast<size_t>(ids[i]) * d, d,
                        slots_[out].val.data() + static_cast<size_t>(i) * d);
        record([this, table, ids, out, d = d] {
            if (!slots_[table].needs_grad) return;
            auto& gt = slots_[table].grad;
            const auto& g = slots_[out].grad;
            for (size_t i = 0; i < ids.size(); ++i) {
                Real* dst = gt.data() + static_cast<size_t>(ids[i]) * d;
                const Real* src = g.data() + i * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
        return out;
    }

    // Row-wise layer norm with affine parameters gamma/beta of width n.
    Id layer_norm(Id x, Id gamma, Id beta, Real eps = static_cast<Real>(1e-5)) {
        const auto [m, n] = dims2(x, "layer_norm");
        Id out = alloc({m, n});
        auto stats = std::make_shared<std::vector<Real>>(static_cast<size_t>(m) * 2);
        const Real* xv = slots_[x].val.data();
        Real* ov = slots_[out].val.data();
        const Real* gv = slots_[gamma].val.data();
        const Real* bv = slots_[beta].val.data();
        for (int i = 0; i < m; ++i) {
            const Real* row = xv + static_cast<size_t>(i) * n;
            Real mean = 0;
            for (int j = 0; j < n; ++j) mean += row[j];
            mean /= n;
            Real var = 0;
            for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= n;
            const Real inv = Real(1) / std::sqrt(var + eps);
            (*stats)[2 * i] = mean;
            (*stats)[2 * i + 1] = inv;
            Real* orow = ov + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] = (row[j] - mean) * inv * gv[j] + bv[j];
        }
        record([this, x, gamma, beta, out, stats, m = m, n = n] {
            const Real* xv2 = slots_[x].val.data();
            const Real* gv2 = slots_[gamma].val.data();
            const Real* g = slots_[out].grad.data();
            for (int i = 0; i < m; ++i) {
                const Real mean = (*stats)[2 * i];
                const Real inv = (*stats)[2 * i + 1];
                const Real* row = xv2 + static_cast<size_t>(i) * n;
                const Real* grow = g + static_cast<size_t>(i) * n;
                Real sum_gg = 0, sum_ggx = 0;
                for (int j = 0; j < n; ++j) {
                    const Real xhat = (row[j] - mean) * inv;
                    const Real gg = grow[j] * gv2[j];
                    sum_gg += gg;
                    sum_ggx += gg * xhat;
                }
                if (slots_[x].needs_grad) {
                    Real* gx = slots_[x].grad.data() + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) {
                        const Real xhat = (row[j] - mean) * inv;
                        const Real gg = grow[j] * gv2[j];
                        gx[j] += inv * (gg - sum_gg / n - xhat * sum_ggx / n);
                    }
                }
                if (slots_[gamma].needs_grad) {
                    Real* gG = slots_[gamma].grad.data();
                    for (int j = 0; j < n; ++j)
                        gG[j] += grow[j] * (row[j] - mean) * inv;
                }
                if (slots_[beta].needs_grad) {
                    Real* gB = slots_[beta].grad.data();
                    for (int j = 0; j < n; ++j) gB[j] += grow[j];
                }
            }
        });
        return out;
    }

    Id softmax(Id x) {
        const auto [m, n] = dims2(x, "softmax");
        Id out = alloc({m, n});
        const Real* xv = slots_[x].val.data();
        Real* ov = slots_[out].val.data();
        for (int i = 0; i < m; ++i) softmax_row(xv + static_cast<size_t>(i) * n,
                                                ov + static_cast<size_t>(i) * n, n);
        record([this, x, out, m = m, n = n] {
            if (!slots_[x].needs_grad) return;
            const Real* p = slots_[out].val.data();
            const Real* g = slots_[out].grad.data();
            Real* gx = slots_[x].grad.data();
            for (int i = 0; i < m; ++i) {
                const Real* pr = p + static_cast<size_t>(i) * n;
                const Real* gr = g + static_cast<size_t>(i) * n;
                Real dot = 0;
                for (int j = 0; j < n; ++j) dot += pr[j] * gr[j];
                Real* gxr = gx + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) gxr[j] += pr[j] * (gr[j] - dot);
            }
        });
        return out;
    }

    // x: [L, H*dh]; rotates each head's pairs by the per-position angle.
    Id rope(Id x, const std::vector<int>& positions, int n_heads, double base) {
        const auto [L, w] = dims2(x, "rope");
        if (static_cast<int>(positions.size()) != L)
            throw std::invalid_argument("rope: positions length mismatch");
        if (w % n_heads != 0) throw std::invalid_argument("rope: width not divisible by heads");
        const int dh = w / n_heads;
        if (dh % 2 != 0) throw std::invalid_argument("rope: head dimension must be even");
        Id out = alloc({L, w});
        slots_[out].val = slots_[x].val;
        Real* ov = slots_[out].val.data();
        for (int i = 0; i < L; ++i)
            for (int h = 0; h < n_heads; ++h)
                rope_rotate(std::span<Real>(ov + static_cast<size_t>(i) * w + h * dh, dh),
                            positions[i], base);
        record([this, x, out, positions, n_heads, base, L = L, w = w, dh] {
            if (!slots_[x].needs_grad) return;
            // inverse rotation of the upstream gradient
            std::vector<Real> tmp(slots_[out].grad);
            Real* tv = tmp.data();
            for (int i = 0; i < L; ++i)
                for (int h = 0; h < n_heads; ++h)
                    rope_rotate(std::span<Real>(tv + static_cast<size_t>(i) * w + h * dh, dh),
                                -positions[i], base);
            accumulate(x, tmp.data(), tmp.size());
        });
        return out;
    }

    // Fused causal self-attention. q,k,v: [L, H*dh]. Per head:
    // P = softmax(mask(Q K^T / sqrt(dh))), out = P V. Saves P for backward.
    Id causal_attention(Id q, Id k, Id v, int n_heads) {
        const auto [L, w] = dims2(q, "attention");
        check_same_shape(q, k, "attention q/k");
        check_same_shape(q, v, "attention q/v");
        if (w % n_heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
        const int dh = w / n_heads;
        const Real scl = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
        Id out = alloc({L, w});
        auto probs = std::make_shared<std::vector<Real>>(
            static_cast<size_t>(n_heads) * L * L, Real(0));
        const Real* qv = slots_[q].val.data();
        const Real* kv = slots_[k].val.data();
        const Real* vv = slots_[v].val.data();
        Real* ov = slots_[out].val.data();
        for (int h = 0; h < n_heads; ++h) {
            Real* ph = probs->data() + static_cast<size_t>(h) * L * L;
            parallel_for(L, [=](int i0, int i1) {
                std::vector<Real> scores;
                for (int i = i0; i < i1; ++i) {
                    scores.assign(static_cast<size_t>(i) + 1, Real(0));
                    const Real* qr = qv + static_cast<size_t>(i) * w + h * dh;
                    for (int j = 0; j <= i; ++j) {
                        const Real* kr = kv + static_cast<size_t>(j) * w + h * dh;
                        Real acc = 0;
                        for (int t = 0; t < dh; ++t) acc += qr[t] * kr[t];
                        scores[j] = acc * scl;
                    }
                    Real* pr = ph + static_cast<size_t>(i) * L;
                    softmax_row(scores.data(), pr, i + 1);
                    Real* orow = ov + static_cast<size_t>(i) * w + h * dh;
                    std::fill(orow, orow + dh, Real(0));
                    for (int j = 0; j <= i; ++j) {
                        const Real p = pr[j];
                        const Real* vr = vv + static_cast<size_t>(j) * w + h * dh;
                        for (int t = 0; t < dh; ++t) orow[t] += p * vr[t];
                    }
                }
            });
        }
        record([this, q, k, v, out, probs, n_heads, L = L, w = w, dh, scl] {
            const Real* qv2 = slots_[q].val.data();
            const Real* kv2 = slots_[k].val.data();
            const Real* vv2 = slots_[v].val.data();
            const Real* g = slots_[out].grad.data();
            Real* gq = slots_[q].needs_grad ? slots_[q].grad.data() : nullptr;
            Real* gk = slots_[k].needs_grad ? slots_[k].grad.data() : nullptr;
            Real* gv = slots_[v].needs_grad ? slots_[v].grad.data() : nullptr;
            std::vector<Real> dp(static_cast<size_t>(L)); // per-row dP then dS
            for (int h = 0; h < n_heads; ++h) {
                const Real* ph = probs->data() + static_cast<size_t>(h) * L * L;
                for (int i = 0; i < L; ++i) {
                    const Real* pr = ph + static_cast<size_t>(i) * L;
                    const Real* grow = g + static_cast<size_t>(i) * w + h * dh;
                    // dP[j] = dot(g_row, V_j); dV_j += P[j] * g_row
                    Real dot_pp = 0;
                    for (int j = 0; j <= i; ++j) {
                        const Real* vr = vv2 + static_cast<size_t>(j) * w + h * dh;
                        Real acc = 0;
                        for (int t = 0; t < dh; ++t) acc += grow[t] * vr[t];
                        dp[j] = acc;
                        dot_pp += acc * pr[j];
                        if (gv) {
                            Real* gvr = gv + static_cast<size_t>(j) * w + h * dh;
                            const Real p = pr[j];
                            for (int t = 0; t < dh; ++t) gvr[t] += p * grow[t];
                        }
                    }
                    // dS = P o (dP - sum(dP o P)); dQ += dS K; dK += dS Q
                    const Real* qr = qv2 + static_cast<size_t>(i) * w + h * dh;
                    Real* gqr = gq ? gq + static_cast<size_t>(i) * w + h * dh : nullptr;
                    for (int j = 0; j <= i; ++j) {
                        const Real ds = pr[j] * (dp[j] - dot_pp) * scl;
                        const Real* kr = kv2 + static_cast<size_t>(j) * w + h * dh;
                        if (gqr)
                            for (int t = 0; t < dh; ++t) gqr[t] += ds * kr[t];
                        if (gk) {
                            Real* gkr = gk + static_cast<size_t>(j) * w + h * dh;
                            for (int t = 0; t < dh; ++t) gkr[t] += ds * qr[t];
                        }
                    }
                }
            }
        });
        return out;
    }

    // E_hat = E + R * (|E|_F / |R|_F). R is typically a constant leaf, but the
    // scale factor depends on E, so backward carries the norm-ratio term.
    Id inject_scaled(Id e, Id r) {
        check_same_shape(e, r, "inject_scaled");
        const Real rn = frob(slots_[r].val);
        if (rn == 0) throw std::invalid_argument("degenerate encoding: zero Frobenius norm");
        const Real en = frob(slots_[e].val);
        if (en == 0) throw std::invalid_argument("degenerate embedding: zero Frobenius norm");
        const Real factor = en / rn;
        Id out = alloc_like(e);
        const size_t n = slots_[out].val.size();
        for (size_t i = 0; i < n; ++i)
            slots_[out].val[i] = slots_[e].val[i] + factor * slots_[r].val[i];
        record([this, e, r, out, en, rn, factor] {
            const auto& g = slots_[out].grad;
            if (slots_[e].needs_grad) {
                // d(out)/dE = I + R * E^T / (|E| |R|)
                Real gr_dot_r = 0;
                for (size_t i = 0; i < g.size(); ++i) gr_dot_r += g[i] * slots_[r].val[i];
                const Real coef = gr_dot_r / (en * rn);
                auto& ge = slots_[e].grad;
                for (size_t i = 0; i < g.size(); ++i)
                    ge[i] += g[i] + coef * slots_[e].val[i];
            }
            if (slots_[r].needs_grad) {
                auto& gr = slots_[r].grad;
                // treat |R|_F as constant only when R never requires grad;
                // support the full derivative for completeness
                Real gr_dot_r = 0;
                for (size_t i = 0; i < g.size(); ++i) gr_dot_r += g[i] * slots_[r].val[i];
                const Real coef = -factor * gr_dot_r / (rn * rn);
                for (size_t i = 0; i < g.size(); ++i)
                    gr[i] += factor * g[i] + coef * slots_[r].val[i];
            }
        });
        return out;
    }

    // Mean over masked-in rows of -log softmax(logits)[target]. Rows with
    // mask=0 contribute nothing to the value or the gradient.
    Id softmax_cross_entropy(Id logits, const std::vector<int>& targets,
                             const std::vector<uint8_t>& mask) {
        const auto [L, V] = dims2(logits, "cross_entropy");
        if (static_cast<int>(targets.size()) != L || static_cast<int>(mask.size()) != L)
            throw std::invalid_argument("cross_entropy: targets/mask length mismatch");
        int active = 0;
        for (int i = 0; i < L; ++i) {
            if (!mask[i]) continue;
            ++active;
            if (targets[i] < 0 || targets[i] >= V)
                throw std::invalid_argument("cross_entropy: target id out of vocabulary");
        }
        if (active == 0) throw std::invalid_argument("empty loss: every position is masked out");
        Id out = alloc({1});
        const Real* lv = slots_[logits].val.data();
        double total = 0.0;
        for (int i = 0; i < L; ++i) {
            if (!mask[i]) continue;
            const Real* row = lv + static_cast<size_t>(i) * V;
            Real mx = row[0];
            for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
            double se = 0.0;
            for (int j = 0; j < V; ++j) se += std::exp(static_cast<double>(row[j] - mx));
            total += std::log(se) + static_cast<double>(mx) - static_cast<double>(row[targets[i]]);
        }
        slots_[out].val[0] = static_cast<Real>(total / active);
        record([this, logits, targets, mask, out, L = L, V = V, active] {
            if (!slots_[logits].needs_grad) return;
            const Real g = slots_[out].grad[0] / static_cast<Real>(active);
            const Real* lv2 = slots_[logits].val.data();
            Real* gl = slots_[logits].grad.data();
            parallel_for(L, [&, lv2, gl, g](int i0, int i1) {
                std::vector<Real> p(static_cast<size_t>(V));
                for (int i = i0; i < i1; ++i) {
                    if (!mask[i]) continue;
                    const Real* row = lv2 + static_cast<size_t>(i) * V;
                    softmax_row(row, p.data(), V);
                    Real* grow = gl + static_cast<size_t>(i) * V;
                    for (int j = 0; j < V; ++j) grow[j] += g * p[j];
                    grow[targets[i]] -= g;
                }
            });
        });
        return out;
    }

    // Reverse accumulation from a scalar loss into every slot that wants a
    // gradient. Running it twice on the same graph gives identical results.
    void backward(Id loss) {
        if (slots_[loss].val.size() != 1)
            throw std::invalid_argument("backward: loss must be a scalar");
        for (auto& s : slots_) s.grad.assign(s.val.size(), Real(0));
        slots_[loss].grad[0] = Real(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    struct Slot {
        std::vector<int> shape;
        std::vector<Real> val;
        std::vector<Real> grad;
        bool needs_grad = true; // interior nodes always carry grads
    };

    static size_t idx(int i, int j, int n) { return static_cast<size_t>(i) * n + j; }

    static void softmax_row(const Real* in, Real* out, int n) {
        Real mx = in[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        Real sum = 0;
        for (int j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        const Real inv = Real(1) / sum;
        for (int j = 0; j < n; ++j) out[j] *= inv;
    }

    static Real frob(const std::vector<Real>& v) {
        double s = 0.0;
        for (Real x : v) s += static_cast<double>(x) * static_cast<double>(x);
        return static_cast<Real>(std::sqrt(s));
    }

    Id alloc(const std::vector<int>& shape) {
        Slot s;
        s.shape = shape;
        s.val.assign(Tensor<Real>::numel_of(shape), Real(0));
        slots_.push_back(std::move(s));
        return static_cast<Id>(slots_.size() - 1);
    }

    Id alloc_like(Id a) { return alloc(slots_[a].shape); }

    void check_same_shape(Id a, Id b, const char* what) const {
        if (slots_[a].shape != slots_[b].shape)
            throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }

    std::pair<int, int> dims2(Id a, const char* what) const {
        if (slots_[a].shape.size() != 2)
            throw std::invalid_argument(std::string(what) + ": expected a 2-d tensor");
        return {slots_[a].shape[0], slots_[a].shape[1]};
    }

    void accumulate(Id target, const Real* g, size_t n) {
        if (!slots_[target].needs_grad && slots_[target].grad.empty()) return;
        auto& dst = slots_[target].grad;
        for (size_t i = 0; i < n; ++i) dst[i] += g[i];
    }

    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

    std::vector<Slot> slots_;
    std::vector<std::function<void()>> ops_;
};

} // namespace lenctl
