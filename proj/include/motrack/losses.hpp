#pragma once

// The four-component unsupervised objective:
//   a) KL of the variational velocity posteriors (both directions)
//   b) smoothness of the per-step forward and backward fields
//   c) negative local cross-correlation of frame t+1 against frame 1
//      warped by the accumulated field
//   d) smoothness of the accumulated field

#include "motrack/net.hpp"
#include "motrack/ops.hpp"
#include "motrack/tensor.hpp"
#include "motrack/warp.hpp"

namespace motrack {

struct LossWeights {
    float alpha1 = 0.02f;  // per-step smoothness
    float alpha2 = 1.0f;   // image similarity
    float alpha3 = 0.02f;  // accumulated-field smoothness

    void validate() const {
        if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0)
            fail("LossWeights: weights must be nonnegative");
    }
};

// KL( N(mu, exp(logvar)) || N(0,1) ), averaged over elements
inline Tensor kl_divergence(const Tensor& mu, const Tensor& logvar) {
    if (mu.shape() != logvar.shape())
        fail("kl_divergence: mu " + shape_str(mu.shape()) + " vs logvar " +
             shape_str(logvar.shape()));
    Tensor term = sub(add(mul(mu, mu), motrack::exp(logvar)), add_scalar(logvar, 1.0f));
    return mul_scalar(mean(term), 0.5f);
}

// forward and backward variational terms summed
inline Tensor kl_loss(const Tensor& mu_fwd, const Tensor& lv_fwd, const Tensor& mu_bwd,
                      const Tensor& lv_bwd) {
    return add(kl_divergence(mu_fwd, lv_fwd), kl_divergence(mu_bwd, lv_bwd));
}

// Negative mean squared local correlation coefficient over a sliding
// window with clamp padding. Value in [-1, 0]; -1 for perfectly (anti- or)
// linearly related images.
inline Tensor ncc_loss(const Tensor& a, const Tensor& b, int64_t window = 9,
                       float eps = 1e-5f) {
    if (a.shape() != b.shape())
        fail("ncc_loss: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.ndim() != 2) fail("ncc_loss: expected [H,W] images, got " + shape_str(a.shape()));
    if (window % 2 == 0 || window < 1)
        fail("ncc_loss: window must be odd and positive, got " + std::to_string(window));
    int64_t r = window / 2;
    float inv_n = 1.0f / float(window * window);
    // centered window sums (not means), so eps stays small relative to the
    // denominator for images of order one
    Tensor sa = box_sum(a, r);
    Tensor sb = box_sum(b, r);
    Tensor saa = box_sum(mul(a, a), r);
    Tensor sbb = box_sum(mul(b, b), r);
    Tensor sab = box_sum(mul(a, b), r);
    Tensor cross = sub(sab, mul_scalar(mul(sa, sb), inv_n));
    Tensor va = sub(saa, mul_scalar(mul(sa, sa), inv_n));
    Tensor vb = sub(sbb, mul_scalar(mul(sb, sb), inv_n));
    Tensor r2 = div(mul(cross, cross), add_scalar(mul(va, vb), eps));
    return neg(mean(r2));
}

// Mean of squared forward differences of every field component along every
// spatial axis. u: [dim, H, W] or [dim, H, W, D].
inline Tensor smoothness_loss(const Tensor& u) {
    if (u.ndim() < 3 || u.dim(0) != u.ndim() - 1)
        fail("smoothness_loss: expected [dim, spatial...], got " + shape_str(u.shape()));
    for (int64_t a = 1; a < u.ndim(); ++a)
        if (u.dim(a) < 2)
            fail("smoothness_loss: need at least 2 cells per axis, got " + shape_str(u.shape()));

    const int64_t comps = u.dim(0);
    const Shape spatial(u.shape().begin() + 1, u.shape().end());
    const int64_t rank = static_cast<int64_t>(spatial.size());
    const int64_t cells = numel_of(spatial);
    // number of difference terms across all components and axes
    int64_t terms = 0;
    for (int64_t ax = 0; ax < rank; ++ax)
        terms += comps * (cells / spatial[size_t(ax)]) * (spatial[size_t(ax)] - 1);

    std::vector<int64_t> strides(static_cast<size_t>(rank));
    int64_t acc = 1;
    for (int64_t ax = rank; ax-- > 0;) {
        strides[size_t(ax)] = acc;
        acc *= spatial[size_t(ax)];
    }

    // walks every forward difference; everything captured by value so the
    // backward closure can outlive this frame
    auto walk = [comps, cells, rank, spatial, strides](const auto* xd, auto&& per_diff) {
        double total = 0.0;
        for (int64_t c = 0; c < comps; ++c) {
            const auto* base = xd + c * cells;
            for (int64_t ax = 0; ax < rank; ++ax) {
                int64_t st = strides[size_t(ax)];
                int64_t len = spatial[size_t(ax)];
                for (int64_t i = 0; i < cells; ++i) {
                    int64_t coord = (i / st) % len;
                    if (coord + 1 >= len) continue;
                    double d = double(base[i + st]) - double(base[i]);
                    total += d * d;
                    per_diff(c * cells + i, c * cells + i + st, d);
                }
            }
        }
        return total;
    };

    double total = walk(u.data().data(), [](int64_t, int64_t, double) {});
    Tensor res = detail::make_result("smoothness_loss", Shape{1},
                                     {static_cast<float>(total / double(terms))}, {&u});
    res.set_dvalue(total / double(terms));
    if (detail::shadow_on()) {
        auto du = detail::dbl_of(u.node());
        res.set_dvalue(walk(du.data(), [](int64_t, int64_t, double) {}) / double(terms));
    }
    detail::record(res, [un = u.node(), rn = res.node(), walk, terms]() {
        un->ensure_grad();
        double scale = 2.0 * rn->grad[0] / double(terms);
        walk(un->data.data(), [&](int64_t lo, int64_t hi, double d) {
            un->grad[static_cast<size_t>(hi)] += static_cast<float>(scale * d);
            un->grad[static_cast<size_t>(lo)] -= static_cast<float>(scale * d);
        });
    });
    return res;
}

struct LossTerms {
    Tensor total;  // scalar, connected to the tape
    double term_a = 0, term_b = 0, term_c = 0, term_d = 0, value = 0;
};

// Assembles the full objective over a decoded sequence:
//   sum_t [ a_t + alpha1 * b_t + alpha2 * c_t + alpha3 * d_t ]
// Per-step KL uses the latents at both transition endpoints (forward and
// backward posterior). Throws when any term goes non-finite, naming the
// term and step.
inline LossTerms total_loss(const std::vector<Tensor>& frames,
                            const TrackModel::SeqOutput& out, const LossWeights& w) {
    w.validate();
    size_t t_len = frames.size();
    if (t_len < 2) fail("total_loss: need at least 2 frames");
    if (out.step_fwd.size() != t_len - 1 || out.step_bwd.size() != t_len - 1 ||
        out.lagrangian.size() != t_len - 1 || out.per_frame.size() != t_len)
        fail("total_loss: sequence output does not cover " + std::to_string(t_len) + " frames");

    auto check = [](const Tensor& term, const char* name, size_t t) {
        if (!std::isfinite(term.value()))
            throw std::runtime_error("total_loss: non-finite term " + std::string(name) +
                                     " at t=" + std::to_string(t));
    };

    LossTerms res;
    Tensor total;
    for (size_t t = 0; t + 1 < t_len; ++t) {
        Tensor a = kl_loss(out.per_frame[t].mu, out.per_frame[t].logvar,
                           out.per_frame[t + 1].mu, out.per_frame[t + 1].logvar);
        check(a, "a (kl)", t);
        Tensor b = add(smoothness_loss(out.step_fwd[t]), smoothness_loss(out.step_bwd[t]));
        check(b, "b (step smoothness)", t);
        Tensor c = ncc_loss(frames[t + 1], sample(frames[0], out.lagrangian[t]));
        check(c, "c (ncc)", t);
        Tensor d = smoothness_loss(out.lagrangian[t]);
        check(d, "d (lagrangian smoothness)", t);
        res.term_a += a.value_double();
        res.term_b += b.value_double();
        res.term_c += c.value_double();
        res.term_d += d.value_double();
        Tensor step = add(add(a, mul_scalar(b, w.alpha1)),
                          add(mul_scalar(c, w.alpha2), mul_scalar(d, w.alpha3)));
        total = t == 0 ? step : add(total, step);
    }
    res.total = total;
    res.value = total.value_double();
    if (!std::isfinite(res.value)) throw std::runtime_error("total_loss: non-finite total");
    return res;
}

}  // namespace motrack
