#pragma once

// Structural and linear-algebra primitives on top of the tensor engine:
// matmul, transpose, reshape, concatenation, stacking, layer normalization,
// patch (un)folding, fixed-kernel 3x3 convolution and separable box sums.
//
// Each op also runs its kernel on the float64 shadow when
// RuntimeConfig::shadow_double is enabled (see tensor.hpp).

#include <array>
#include <cstring>

#include "motrack/tensor.hpp"

namespace motrack {

namespace detail {

// C[M,N] += A[M,K] * B[K,N]. Rows accumulate in double so a result element
// is a single rounding away from the exact product.
template <class TA, class TB, class TC>
inline void gemm_acc(const TA* a, const TB* b, TC* c, int64_t m, int64_t k, int64_t n) {
    std::vector<double> row(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
        const TA* arow = a + i * k;
        TC* crow = c + i * n;
        std::fill(row.begin(), row.end(), 0.0);
        for (int64_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const TB* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) row[static_cast<size_t>(j)] += av * brow[j];
        }
        for (int64_t j = 0; j < n; ++j)
            crow[j] += static_cast<TC>(row[static_cast<size_t>(j)]);
    }
}

// C[M,K] += G[M,N] * B^T  (i.e. C[i,p] += sum_j G[i,j] B[p,j])
inline void gemm_gbt_acc(const float* g, const float* b, float* c, int64_t m, int64_t k,
                         int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const float* grow = g + i * n;
        float* crow = c + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const float* brow = b + p * n;
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += double(grow[j]) * brow[j];
            crow[p] += static_cast<float>(acc);
        }
    }
}

// C[K,N] += A^T * G  (i.e. C[p,j] += sum_i A[i,p] G[i,j])
inline void gemm_atg_acc(const float* a, const float* g, float* c, int64_t m, int64_t k,
                         int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        const float* grow = g + i * n;
        for (int64_t p = 0; p < k; ++p) {
            float av = arow[p];
            if (av == 0.0f) continue;
            float* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

}  // namespace detail

// Matrix product with broadcasting over leading batch dimensions.
// a: [..., M, K], b: [..., K, N] -> [..., M, N]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        fail("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
             shape_str(b.shape()));
    int64_t m = a.dim(a.ndim() - 2), ka = a.dim(a.ndim() - 1);
    int64_t kb = b.dim(b.ndim() - 2), n = b.dim(b.ndim() - 1);
    if (ka != kb)
        fail("matmul: inner dimensions mismatch: " + shape_str(a.shape()) + " vs " +
             shape_str(b.shape()));
    Shape la(a.shape().begin(), a.shape().end() - 2);
    Shape lb(b.shape().begin(), b.shape().end() - 2);
    Shape lead = detail::broadcast_shape("matmul", la, lb);
    Shape os = lead;
    os.push_back(m);
    os.push_back(n);

    // per-output-batch base offsets into a and b (in units of matrices)
    int64_t batches = numel_of(lead);
    std::vector<int64_t> offa(static_cast<size_t>(batches)), offb(static_cast<size_t>(batches));
    {
        auto sa = detail::broadcast_strides(la, lead);
        auto sb = detail::broadcast_strides(lb, lead);
        std::vector<int64_t> idx(lead.size(), 0);
        int64_t ia = 0, ib = 0;
        for (int64_t bi = 0; bi < batches; ++bi) {
            offa[static_cast<size_t>(bi)] = ia * m * ka;
            offb[static_cast<size_t>(bi)] = ib * kb * n;
            for (size_t d = lead.size(); d-- > 0;) {
                ++idx[d];
                ia += sa[d];
                ib += sb[d];
                if (idx[d] < lead[d]) break;
                ia -= sa[d] * lead[d];
                ib -= sb[d] * lead[d];
                idx[d] = 0;
            }
        }
    }
    std::vector<float> out(static_cast<size_t>(batches * m * n), 0.0f);
    for (int64_t bi = 0; bi < batches; ++bi)
        detail::gemm_acc(a.data().data() + offa[static_cast<size_t>(bi)],
                         b.data().data() + offb[static_cast<size_t>(bi)],
                         out.data() + bi * m * n, m, ka, n);
    Tensor r = detail::make_result("matmul", os, std::move(out), {&a, &b});
    if (detail::shadow_on()) {
        auto da = detail::dbl_of(a.node());
        auto db = detail::dbl_of(b.node());
        auto& dd = r.node()->ddata;
        dd.assign(r.data().size(), 0.0);
        for (int64_t bi = 0; bi < batches; ++bi)
            detail::gemm_acc(da.data() + offa[static_cast<size_t>(bi)],
                             db.data() + offb[static_cast<size_t>(bi)], dd.data() + bi * m * n, m,
                             ka, n);
    }
    detail::record(r, [an = a.node(), bn = b.node(), rn = r.node(), offa, offb, batches, m, n,
                       ka]() {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (int64_t bi = 0; bi < batches; ++bi) {
            const float* g = rn->grad.data() + bi * m * n;
            if (an->requires_grad)
                detail::gemm_gbt_acc(g, bn->data.data() + offb[static_cast<size_t>(bi)],
                                     an->grad.data() + offa[static_cast<size_t>(bi)], m, ka, n);
            if (bn->requires_grad)
                detail::gemm_atg_acc(an->data.data() + offa[static_cast<size_t>(bi)], g,
                                     bn->grad.data() + offb[static_cast<size_t>(bi)], m, ka, n);
        }
    });
    return r;
}

// swap the axes of a 2-D tensor
inline Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) fail("transpose: expected rank 2, got " + shape_str(a.shape()));
    int64_t m = a.dim(0), n = a.dim(1);
    auto kern = [m, n](const auto* in, auto* out) {
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
    };
    std::vector<float> out(static_cast<size_t>(m * n));
    kern(a.data().data(), out.data());
    Tensor r = detail::make_result("transpose", Shape{n, m}, std::move(out), {&a});
    if (detail::shadow_on()) {
        auto da = detail::dbl_of(a.node());
        r.node()->ddata.resize(da.size());
        kern(da.data(), r.node()->ddata.data());
    }
    detail::record(r, [an = a.node(), rn = r.node(), m, n]() {
        an->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                an->grad[static_cast<size_t>(i * n + j)] +=
                    rn->grad[static_cast<size_t>(j * m + i)];
    });
    return r;
}

inline Tensor reshape(const Tensor& a, const Shape& s) {
    if (numel_of(s) != a.numel())
        fail("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    Tensor r = detail::make_result("reshape", s, a.data(), {&a});
    if (detail::shadow_on()) r.node()->ddata = detail::dbl_of(a.node());
    detail::record(r, [an = a.node(), rn = r.node()]() {
        an->ensure_grad();
        for (size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i];
    });
    return r;
}

// concatenate along the last axis; all other dims must match
inline Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.ndim() != b.ndim())
        fail("concat_last: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    for (int64_t d = 0; d + 1 < a.ndim(); ++d)
        if (a.dim(d) != b.dim(d))
            fail("concat_last: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                 " differ outside the last axis");
    int64_t ca = a.dim(a.ndim() - 1), cb = b.dim(b.ndim() - 1);
    int64_t rows = a.numel() / ca;
    Shape os = a.shape();
    os.back() = ca + cb;
    auto kern = [rows, ca, cb](const auto* xa, const auto* xb, auto* out) {
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < ca; ++j) out[r * (ca + cb) + j] = xa[r * ca + j];
            for (int64_t j = 0; j < cb; ++j) out[r * (ca + cb) + ca + j] = xb[r * cb + j];
        }
    };
    std::vector<float> out(static_cast<size_t>(rows * (ca + cb)));
    kern(a.data().data(), b.data().data(), out.data());
    Tensor r = detail::make_result("concat_last", os, std::move(out), {&a, &b});
    if (detail::shadow_on()) {
        auto da = detail::dbl_of(a.node());
        auto db = detail::dbl_of(b.node());
        r.node()->ddata.resize(r.data().size());
        kern(da.data(), db.data(), r.node()->ddata.data());
    }
    detail::record(r, [an = a.node(), bn = b.node(), rn = r.node(), rows, ca, cb]() {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (int64_t r2 = 0; r2 < rows; ++r2) {
            const float* g = rn->grad.data() + r2 * (ca + cb);
            if (an->requires_grad)
                for (int64_t j = 0; j < ca; ++j) an->grad[static_cast<size_t>(r2 * ca + j)] += g[j];
            if (bn->requires_grad)
                for (int64_t j = 0; j < cb; ++j)
                    bn->grad[static_cast<size_t>(r2 * cb + j)] += g[ca + j];
        }
    });
    return r;
}

// stack identically shaped tensors along a new leading axis
inline Tensor stack0(const std::vector<Tensor>& ts) {
    if (ts.empty()) fail("stack0: empty input list");
    const Shape& s0 = ts[0].shape();
    for (const auto& t : ts)
        if (t.shape() != s0)
            fail("stack0: mismatched shapes " + shape_str(s0) + " vs " + shape_str(t.shape()));
    int64_t per = ts[0].numel();
    Shape os;
    os.push_back(static_cast<int64_t>(ts.size()));
    os.insert(os.end(), s0.begin(), s0.end());
    std::vector<float> out(static_cast<size_t>(per * static_cast<int64_t>(ts.size())));
    for (size_t i = 0; i < ts.size(); ++i)
        std::memcpy(out.data() + static_cast<int64_t>(i) * per, ts[i].data().data(),
                    sizeof(float) * per);

    auto n = std::make_shared<TensorNode>();
    n->shape = os;
    n->data = std::move(out);
    n->op = "stack0";
    bool rg = false;
    if (Tape::active())
        for (const auto& t : ts)
            if (t.requires_grad()) rg = true;
    n->requires_grad = rg;
    detail::check_finite("stack0", *n);
    Tensor r(n);
    if (detail::shadow_on()) {
        auto& dd = r.node()->ddata;
        dd.resize(r.data().size());
        for (size_t i = 0; i < ts.size(); ++i) {
            auto di = detail::dbl_of(ts[i].node());
            std::copy(di.begin(), di.end(), dd.begin() + static_cast<int64_t>(i) * per);
        }
    }
    if (rg) {
        std::vector<NodePtr> parents;
        parents.reserve(ts.size());
        for (const auto& t : ts) parents.push_back(t.node());
        detail::record(r, [parents, rn = r.node(), per]() {
            for (size_t i = 0; i < parents.size(); ++i) {
                if (!parents[i]->requires_grad) continue;
                parents[i]->ensure_grad();
                const float* g = rn->grad.data() + static_cast<int64_t>(i) * per;
                for (int64_t j = 0; j < per; ++j) parents[i]->grad[static_cast<size_t>(j)] += g[j];
            }
        });
    }
    return r;
}

// select index i along axis 0 (copy)
inline Tensor select0(const Tensor& a, int64_t i) {
    if (a.ndim() < 1 || i < 0 || i >= a.dim(0))
        fail("select0: index " + std::to_string(i) + " out of range for " + shape_str(a.shape()));
    Shape os(a.shape().begin() + 1, a.shape().end());
    if (os.empty()) os = {1};
    int64_t per = numel_of(os);
    std::vector<float> out(a.data().begin() + i * per, a.data().begin() + (i + 1) * per);
    Tensor r = detail::make_result("select0", os, std::move(out), {&a});
    if (detail::shadow_on()) {
        auto da = detail::dbl_of(a.node());
        r.node()->ddata.assign(da.begin() + i * per, da.begin() + (i + 1) * per);
    }
    detail::record(r, [an = a.node(), rn = r.node(), i, per]() {
        an->ensure_grad();
        for (int64_t j = 0; j < per; ++j)
            an->grad[static_cast<size_t>(i * per + j)] += rn->grad[static_cast<size_t>(j)];
    });
    return r;
}

// Layer normalization over the last axis, population statistics.
// x: [..., C], gamma/beta: [C]
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps = 1e-5f) {
    if (x.ndim() < 1) fail("layer_norm: scalar input");
    int64_t c = x.dim(x.ndim() - 1);
    if (c == 0) fail("layer_norm: zero-width last axis");
    if (gamma.numel() != c || beta.numel() != c)
        fail("layer_norm: gamma/beta must have " + std::to_string(c) + " elements");
    if (eps <= 0) fail("layer_norm: eps must be positive");
    int64_t rows = x.numel() / c;
    std::vector<float> inv_std(static_cast<size_t>(rows));
    std::vector<float> xhat(x.data().size());

    auto kern = [rows, c, eps](const auto* xd, const auto* gd, const auto* bd, auto* out,
                               float* inv_std_out, float* xhat_out) {
        for (int64_t r = 0; r < rows; ++r) {
            const auto* row = xd + r * c;
            double m = 0.0;
            for (int64_t j = 0; j < c; ++j) m += row[j];
            m /= c;
            double v = 0.0;
            for (int64_t j = 0; j < c; ++j) {
                double d = row[j] - m;
                v += d * d;
            }
            v /= c;
            double is = 1.0 / std::sqrt(v + eps);
            if (inv_std_out) inv_std_out[r] = static_cast<float>(is);
            for (int64_t j = 0; j < c; ++j) {
                double xh = (row[j] - m) * is;
                if (xhat_out) xhat_out[r * c + j] = static_cast<float>(xh);
                out[r * c + j] = static_cast<std::remove_reference_t<decltype(out[0])>>(
                    gd[j] * xh + bd[j]);
            }
        }
    };

    std::vector<float> out(x.data().size());
    kern(x.data().data(), gamma.data().data(), beta.data().data(), out.data(), inv_std.data(),
         xhat.data());
    Tensor r = detail::make_result("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta});
    if (detail::shadow_on()) {
        auto dx = detail::dbl_of(x.node());
        auto dg = detail::dbl_of(gamma.node());
        auto db = detail::dbl_of(beta.node());
        r.node()->ddata.resize(r.data().size());
        kern(dx.data(), dg.data(), db.data(), r.node()->ddata.data(), nullptr, nullptr);
    }
    detail::record(r, [xn = x.node(), gn = gamma.node(), bn = beta.node(), rn = r.node(),
                       inv_std = std::move(inv_std), xhat = std::move(xhat), rows, c]() {
        if (xn->requires_grad) xn->ensure_grad();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (int64_t r2 = 0; r2 < rows; ++r2) {
            const float* g = rn->grad.data() + r2 * c;
            const float* xh = xhat.data() + r2 * c;
            float is = inv_std[static_cast<size_t>(r2)];
            if (gn->requires_grad || bn->requires_grad) {
                for (int64_t j = 0; j < c; ++j) {
                    if (gn->requires_grad) gn->grad[static_cast<size_t>(j)] += g[j] * xh[j];
                    if (bn->requires_grad) bn->grad[static_cast<size_t>(j)] += g[j];
                }
            }
            if (xn->requires_grad) {
                double sum_gg = 0.0, sum_ggx = 0.0;
                for (int64_t j = 0; j < c; ++j) {
                    double gg = static_cast<double>(g[j]) * gn->data[static_cast<size_t>(j)];
                    sum_gg += gg;
                    sum_ggx += gg * xh[j];
                }
                float mg = static_cast<float>(sum_gg / c);
                float mgx = static_cast<float>(sum_ggx / c);
                for (int64_t j = 0; j < c; ++j) {
                    float gg = g[j] * gn->data[static_cast<size_t>(j)];
                    xn->grad[static_cast<size_t>(r2 * c + j)] += is * (gg - mg - xh[j] * mgx);
                }
            }
        }
    });
    return r;
}

// --- patch folding ---------------------------------------------------------

// [H, W] -> [P, p*p] over a row-major patch grid, row-major within the patch
inline Tensor im2patches(const Tensor& frame, int64_t p) {
    if (frame.ndim() != 2) fail("im2patches: expected [H,W], got " + shape_str(frame.shape()));
    int64_t h = frame.dim(0), w = frame.dim(1);
    if (p <= 0 || h % p != 0 || w % p != 0)
        fail("im2patches: patch size " + std::to_string(p) + " does not divide extents " +
             shape_str(frame.shape()));
    int64_t gh = h / p, gw = w / p, np = gh * gw;
    auto kern = [p, gh, gw, w](const auto* x, auto* out) {
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx) {
                int64_t q = gy * gw + gx;
                for (int64_t iy = 0; iy < p; ++iy)
                    for (int64_t ix = 0; ix < p; ++ix)
                        out[q * p * p + iy * p + ix] = x[(gy * p + iy) * w + gx * p + ix];
            }
    };
    std::vector<float> out(static_cast<size_t>(np * p * p));
    kern(frame.data().data(), out.data());
    Tensor r = detail::make_result("im2patches", Shape{np, p * p}, std::move(out), {&frame});
    if (detail::shadow_on()) {
        auto df = detail::dbl_of(frame.node());
        r.node()->ddata.resize(r.data().size());
        kern(df.data(), r.node()->ddata.data());
    }
    detail::record(r, [fn = frame.node(), rn = r.node(), p, gh, gw, w]() {
        fn->ensure_grad();
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx) {
                int64_t q = gy * gw + gx;
                for (int64_t iy = 0; iy < p; ++iy)
                    for (int64_t ix = 0; ix < p; ++ix)
                        fn->grad[static_cast<size_t>((gy * p + iy) * w + gx * p + ix)] +=
                            rn->grad[static_cast<size_t>(q * p * p + iy * p + ix)];
            }
    });
    return r;
}

// [P, k*p*p] -> [k, H, W]; per patch the values are laid out [k][p*p]
inline Tensor patches2im(const Tensor& x, int64_t p, int64_t k, int64_t h, int64_t w) {
    int64_t gh = h / p, gw = w / p, np = gh * gw;
    if (x.ndim() != 2 || x.dim(0) != np || x.dim(1) != k * p * p || h % p != 0 || w % p != 0)
        fail("patches2im: input " + shape_str(x.shape()) + " incompatible with p=" +
             std::to_string(p) + " k=" + std::to_string(k) + " grid " + std::to_string(h) + "x" +
             std::to_string(w));
    auto kern = [p, k, h, w, gw, np](const auto* xd, auto* out) {
        for (int64_t q = 0; q < np; ++q) {
            int64_t gy = q / gw, gx = q % gw;
            for (int64_t c = 0; c < k; ++c)
                for (int64_t iy = 0; iy < p; ++iy)
                    for (int64_t ix = 0; ix < p; ++ix)
                        out[c * h * w + (gy * p + iy) * w + gx * p + ix] =
                            xd[q * k * p * p + c * p * p + iy * p + ix];
        }
    };
    std::vector<float> out(static_cast<size_t>(k * h * w));
    kern(x.data().data(), out.data());
    Tensor r = detail::make_result("patches2im", Shape{k, h, w}, std::move(out), {&x});
    if (detail::shadow_on()) {
        auto dx = detail::dbl_of(x.node());
        r.node()->ddata.resize(r.data().size());
        kern(dx.data(), r.node()->ddata.data());
    }
    detail::record(r, [xn = x.node(), rn = r.node(), p, k, h, w, gw, np]() {
        xn->ensure_grad();
        for (int64_t q = 0; q < np; ++q) {
            int64_t gy = q / gw, gx = q % gw;
            for (int64_t c = 0; c < k; ++c)
                for (int64_t iy = 0; iy < p; ++iy)
                    for (int64_t ix = 0; ix < p; ++ix)
                        xn->grad[static_cast<size_t>(q * k * p * p + c * p * p + iy * p + ix)] +=
                            rn->grad[static_cast<size_t>(c * h * w + (gy * p + iy) * w + gx * p +
                                                         ix)];
        }
    });
    return r;
}

// --- small convolutions ------------------------------------------------

// 3x3 convolution with a fixed (non-learnable) kernel and clamp padding,
// applied independently per leading channel. x: [k, H, W] or [H, W].
inline Tensor conv3x3_fixed(const Tensor& x, const std::array<float, 9>& ker) {
    Shape s = x.shape();
    int64_t k = 1, h, w;
    if (x.ndim() == 3) {
        k = s[0];
        h = s[1];
        w = s[2];
    } else if (x.ndim() == 2) {
        h = s[0];
        w = s[1];
    } else {
        fail("conv3x3_fixed: expected [H,W] or [k,H,W], got " + shape_str(s));
    }
    auto cl = [](int64_t v, int64_t hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    auto kern = [&, k, h, w](const auto* xd, auto* out) {
        for (int64_t c = 0; c < k; ++c) {
            const auto* in = xd + c * h * w;
            auto* o = out + c * h * w;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx) {
                    double acc = 0.0;
                    for (int64_t dy = -1; dy <= 1; ++dy)
                        for (int64_t dx = -1; dx <= 1; ++dx)
                            acc += ker[static_cast<size_t>((dy + 1) * 3 + dx + 1)] *
                                   in[cl(y + dy, h) * w + cl(xx + dx, w)];
                    o[y * w + xx] = static_cast<std::remove_reference_t<decltype(o[0])>>(acc);
                }
        }
    };
    std::vector<float> out(x.data().size());
    kern(x.data().data(), out.data());
    Tensor r = detail::make_result("conv3x3_fixed", s, std::move(out), {&x});
    if (detail::shadow_on()) {
        auto dx = detail::dbl_of(x.node());
        r.node()->ddata.resize(r.data().size());
        kern(dx.data(), r.node()->ddata.data());
    }
    detail::record(r, [xn = x.node(), rn = r.node(), ker, k, h, w]() {
        xn->ensure_grad();
        auto cl = [](int64_t v, int64_t hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
        for (int64_t c = 0; c < k; ++c) {
            const float* g = rn->grad.data() + c * h * w;
            float* gi = xn->grad.data() + c * h * w;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx) {
                    float gv = g[y * w + xx];
                    if (gv == 0.0f) continue;
                    for (int64_t dy = -1; dy <= 1; ++dy)
                        for (int64_t dx = -1; dx <= 1; ++dx)
                            gi[cl(y + dy, h) * w + cl(xx + dx, w)] +=
                                gv * ker[static_cast<size_t>((dy + 1) * 3 + dx + 1)];
                }
        }
    });
    return r;
}

inline const std::array<float, 9>& binomial3x3() {
    static const std::array<float, 9> k = {1.f / 16, 2.f / 16, 1.f / 16, 2.f / 16, 4.f / 16,
                                           2.f / 16, 1.f / 16, 2.f / 16, 1.f / 16};
    return k;
}

// Separable box window sums with clamp padding (window = 2*radius+1).
// x: [H, W]. axis 0 = rows (vertical pass), axis 1 = cols (horizontal pass).
inline Tensor box_sum_axis(const Tensor& x, int64_t radius, int axis) {
    if (x.ndim() != 2) fail("box_sum_axis: expected [H,W], got " + shape_str(x.shape()));
    int64_t h = x.dim(0), w = x.dim(1);
    auto cl = [](int64_t v, int64_t hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    auto kern = [&, radius, axis, h, w](const auto* xd, auto* out) {
        if (axis == 1) {
            for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx) {
                    double acc = 0.0;
                    for (int64_t d = -radius; d <= radius; ++d) acc += xd[y * w + cl(xx + d, w)];
                    out[y * w + xx] = static_cast<std::remove_reference_t<decltype(out[0])>>(acc);
                }
        } else {
            for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx) {
                    double acc = 0.0;
                    for (int64_t d = -radius; d <= radius; ++d) acc += xd[cl(y + d, h) * w + xx];
                    out[y * w + xx] = static_cast<std::remove_reference_t<decltype(out[0])>>(acc);
                }
        }
    };
    std::vector<float> out(x.data().size(), 0.0f);
    kern(x.data().data(), out.data());
    Tensor r = detail::make_result("box_sum_axis", x.shape(), std::move(out), {&x});
    if (detail::shadow_on()) {
        auto dx = detail::dbl_of(x.node());
        r.node()->ddata.resize(r.data().size());
        kern(dx.data(), r.node()->ddata.data());
    }
    detail::record(r, [xn = x.node(), rn = r.node(), radius, axis, h, w]() {
        xn->ensure_grad();
        auto cl = [](int64_t v, int64_t hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx) {
                float gv = rn->grad[static_cast<size_t>(y * w + xx)];
                if (gv == 0.0f) continue;
                if (axis == 1)
                    for (int64_t d = -radius; d <= radius; ++d)
                        xn->grad[static_cast<size_t>(y * w + cl(xx + d, w))] += gv;
                else
                    for (int64_t d = -radius; d <= radius; ++d)
                        xn->grad[static_cast<size_t>(cl(y + d, h) * w + xx)] += gv;
            }
    });
    return r;
}

// full window sum over a (2r+1)^2 neighbourhood with clamp padding
inline Tensor box_sum(const Tensor& x, int64_t radius) {
    return box_sum_axis(box_sum_axis(x, radius, 1), radius, 0);
}

}  // namespace motrack
