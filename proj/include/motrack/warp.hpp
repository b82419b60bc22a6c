#pragma once

// Spatial resampling and diffeomorphic field machinery.
//
// Displacement conventions: a field u has shape [dim, H, W] (2-D) or
// [dim, H, W, D] (3-D); component d displaces along image axis d, in units
// of grid cells. sample(image, u)(x) = image(x + u(x)) with bilinear or
// trilinear interpolation and clamp-to-edge boundary handling, so a field
// "from frame a to frame b" lives on the b grid and pulls values from a.
// compose(f, g) chains maps: x + u(x) = phi_f(phi_g(x)).

#include <cmath>

#include "motrack/tensor.hpp"

namespace motrack {

// Fields are tensors with a fixed layout; the aliases document intent.
using VelocityField = Tensor;
using DisplacementField = Tensor;

struct JacobianStats {
    double frac_nonpos = 0.0;   // fraction of cells with det(J) <= 0
    double mean_abs_dev = 0.0;  // mean |det(J) - 1|
};

namespace detail {

struct FieldDims {
    int64_t rank;      // 2 or 3
    int64_t channels;  // image channels (1 when the image has no channel axis)
    int64_t h, w, d;   // d == 1 in 2-D
    bool image_has_channel_axis;
};

inline FieldDims check_sample_shapes(const Tensor& image, const Tensor& field) {
    FieldDims fd{};
    if (field.ndim() == 3 && field.dim(0) == 2) {
        fd.rank = 2;
        fd.h = field.dim(1);
        fd.w = field.dim(2);
        fd.d = 1;
    } else if (field.ndim() == 4 && field.dim(0) == 3) {
        fd.rank = 3;
        fd.h = field.dim(1);
        fd.w = field.dim(2);
        fd.d = field.dim(3);
    } else {
        fail("sample: field must be [2,H,W] or [3,H,W,D], got " + shape_str(field.shape()));
    }
    Shape spatial(field.shape().begin() + 1, field.shape().end());
    if (image.ndim() == fd.rank) {
        fd.image_has_channel_axis = false;
        fd.channels = 1;
        if (Shape(image.shape()) != spatial)
            fail("sample: image " + shape_str(image.shape()) + " does not match field grid " +
                 shape_str(field.shape()));
    } else if (image.ndim() == fd.rank + 1) {
        fd.image_has_channel_axis = true;
        fd.channels = image.dim(0);
        if (Shape(image.shape().begin() + 1, image.shape().end()) != spatial)
            fail("sample: image " + shape_str(image.shape()) + " does not match field grid " +
                 shape_str(field.shape()));
    } else {
        fail("sample: image rank " + shape_str(image.shape()) + " incompatible with field " +
             shape_str(field.shape()));
    }
    return fd;
}

// 2-D bilinear kernel; writes outputs and optionally accumulates gradients.
// Instantiated for the float path, the double shadow path, and the backward.
template <class T>
inline void sample2d_forward(const T* img, const T* u, T* out, int64_t ch, int64_t h, int64_t w) {
    const int64_t plane = h * w;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double sy = y + static_cast<double>(u[y * w + x]);
            double sx = x + static_cast<double>(u[plane + y * w + x]);
            double cy = sy < 0 ? 0 : (sy > h - 1 ? h - 1 : sy);
            double cx = sx < 0 ? 0 : (sx > w - 1 ? w - 1 : sx);
            int64_t y0 = static_cast<int64_t>(std::floor(cy));
            int64_t x0 = static_cast<int64_t>(std::floor(cx));
            if (y0 > h - 2) y0 = h > 1 ? h - 2 : 0;
            if (x0 > w - 2) x0 = w > 1 ? w - 2 : 0;
            int64_t y1 = h > 1 ? y0 + 1 : y0;
            int64_t x1 = w > 1 ? x0 + 1 : x0;
            double fy = cy - y0, fx = cx - x0;
            for (int64_t c = 0; c < ch; ++c) {
                const T* ip = img + c * plane;
                double v00 = ip[y0 * w + x0], v01 = ip[y0 * w + x1];
                double v10 = ip[y1 * w + x0], v11 = ip[y1 * w + x1];
                out[c * plane + y * w + x] = static_cast<T>(
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
            }
        }
}

template <class T>
inline void sample3d_forward(const T* img, const T* u, T* out, int64_t ch, int64_t h, int64_t w,
                             int64_t d) {
    const int64_t vol = h * w * d;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t z = 0; z < d; ++z) {
                int64_t at = (y * w + x) * d + z;
                double sy = y + static_cast<double>(u[at]);
                double sx = x + static_cast<double>(u[vol + at]);
                double sz = z + static_cast<double>(u[2 * vol + at]);
                double cy = sy < 0 ? 0 : (sy > h - 1 ? h - 1 : sy);
                double cx = sx < 0 ? 0 : (sx > w - 1 ? w - 1 : sx);
                double cz = sz < 0 ? 0 : (sz > d - 1 ? d - 1 : sz);
                int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(cy)),
                                               h > 1 ? h - 2 : 0);
                int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(cx)),
                                               w > 1 ? w - 2 : 0);
                int64_t z0 = std::min<int64_t>(static_cast<int64_t>(std::floor(cz)),
                                               d > 1 ? d - 2 : 0);
                int64_t y1 = h > 1 ? y0 + 1 : y0, x1 = w > 1 ? x0 + 1 : x0,
                        z1 = d > 1 ? z0 + 1 : z0;
                double fy = cy - y0, fx = cx - x0, fz = cz - z0;
                for (int64_t c = 0; c < ch; ++c) {
                    const T* ip = img + c * vol;
                    auto v = [&](int64_t yy, int64_t xx, int64_t zz) {
                        return static_cast<double>(ip[(yy * w + xx) * d + zz]);
                    };
                    double c00 = v(y0, x0, z0) * (1 - fz) + v(y0, x0, z1) * fz;
                    double c01 = v(y0, x1, z0) * (1 - fz) + v(y0, x1, z1) * fz;
                    double c10 = v(y1, x0, z0) * (1 - fz) + v(y1, x0, z1) * fz;
                    double c11 = v(y1, x1, z0) * (1 - fz) + v(y1, x1, z1) * fz;
                    out[c * vol + at] = static_cast<T>((1 - fy) * ((1 - fx) * c00 + fx * c01) +
                                                       fy * ((1 - fx) * c10 + fx * c11));
                }
            }
}

}  // namespace detail

// Warp an image by a displacement field: out(x) = image(x + u(x)).
// Differentiable with respect to both arguments; out-of-bounds sample
// coordinates clamp to the boundary (their positional gradient is zero).
inline Tensor sample(const Tensor& image, const Tensor& field) {
    detail::FieldDims fd = detail::check_sample_shapes(image, field);
    std::vector<float> out(image.data().size());
    if (fd.rank == 2)
        detail::sample2d_forward(image.data().data(), field.data().data(), out.data(),
                                 fd.channels, fd.h, fd.w);
    else
        detail::sample3d_forward(image.data().data(), field.data().data(), out.data(),
                                 fd.channels, fd.h, fd.w, fd.d);
    Tensor r = detail::make_result("sample", image.shape(), std::move(out), {&image, &field});
    if (detail::shadow_on()) {
        auto di = detail::dbl_of(image.node());
        auto du = detail::dbl_of(field.node());
        r.node()->ddata.resize(r.data().size());
        if (fd.rank == 2)
            detail::sample2d_forward(di.data(), du.data(), r.node()->ddata.data(), fd.channels,
                                     fd.h, fd.w);
        else
            detail::sample3d_forward(di.data(), du.data(), r.node()->ddata.data(), fd.channels,
                                     fd.h, fd.w, fd.d);
    }
    detail::record(r, [in = image.node(), un = field.node(), rn = r.node(), fd]() {
        const bool need_img = in->requires_grad;
        const bool need_fld = un->requires_grad;
        if (need_img) in->ensure_grad();
        if (need_fld) un->ensure_grad();
        const float* img = in->data.data();
        const float* u = un->data.data();
        const float* g = rn->grad.data();
        int64_t ch = fd.channels, h = fd.h, w = fd.w;
        if (fd.rank == 2) {
            const int64_t plane = h * w;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    double sy = y + static_cast<double>(u[y * w + x]);
                    double sx = x + static_cast<double>(u[plane + y * w + x]);
                    bool in_y = sy > 0 && sy < h - 1;
                    bool in_x = sx > 0 && sx < w - 1;
                    double cy = sy < 0 ? 0 : (sy > h - 1 ? h - 1 : sy);
                    double cx = sx < 0 ? 0 : (sx > w - 1 ? w - 1 : sx);
                    int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(cy)),
                                                   h > 1 ? h - 2 : 0);
                    int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(cx)),
                                                   w > 1 ? w - 2 : 0);
                    int64_t y1 = h > 1 ? y0 + 1 : y0, x1 = w > 1 ? x0 + 1 : x0;
                    double fy = cy - y0, fx = cx - x0;
                    double gy_acc = 0.0, gx_acc = 0.0;
                    for (int64_t c = 0; c < ch; ++c) {
                        const float* ip = img + c * plane;
                        double v00 = ip[y0 * w + x0], v01 = ip[y0 * w + x1];
                        double v10 = ip[y1 * w + x0], v11 = ip[y1 * w + x1];
                        double gv = g[c * plane + y * w + x];
                        if (gv == 0.0) continue;
                        if (need_img) {
                            float* gi = in->grad.data() + c * plane;
                            gi[y0 * w + x0] += static_cast<float>(gv * (1 - fy) * (1 - fx));
                            gi[y0 * w + x1] += static_cast<float>(gv * (1 - fy) * fx);
                            gi[y1 * w + x0] += static_cast<float>(gv * fy * (1 - fx));
                            gi[y1 * w + x1] += static_cast<float>(gv * fy * fx);
                        }
                        if (need_fld) {
                            gy_acc += gv * ((v10 - v00) * (1 - fx) + (v11 - v01) * fx);
                            gx_acc += gv * ((v01 - v00) * (1 - fy) + (v11 - v10) * fy);
                        }
                    }
                    if (need_fld) {
                        if (in_y) un->grad[static_cast<size_t>(y * w + x)] +=
                            static_cast<float>(gy_acc);
                        if (in_x) un->grad[static_cast<size_t>(plane + y * w + x)] +=
                            static_cast<float>(gx_acc);
                    }
                }
        } else {
            const int64_t d = fd.d;
            const int64_t vol = h * w * d;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    for (int64_t z = 0; z < d; ++z) {
                        int64_t at = (y * w + x) * d + z;
                        double sy = y + static_cast<double>(u[at]);
                        double sx = x + static_cast<double>(u[vol + at]);
                        double sz = z + static_cast<double>(u[2 * vol + at]);
                        bool in_y = sy > 0 && sy < h - 1;
                        bool in_x = sx > 0 && sx < w - 1;
                        bool in_z = sz > 0 && sz < d - 1;
                        double cy = sy < 0 ? 0 : (sy > h - 1 ? h - 1 : sy);
                        double cx = sx < 0 ? 0 : (sx > w - 1 ? w - 1 : sx);
                        double cz = sz < 0 ? 0 : (sz > d - 1 ? d - 1 : sz);
                        int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(cy)),
                                                       h > 1 ? h - 2 : 0);
                        int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(cx)),
                                                       w > 1 ? w - 2 : 0);
                        int64_t z0 = std::min<int64_t>(static_cast<int64_t>(std::floor(cz)),
                                                       d > 1 ? d - 2 : 0);
                        int64_t y1 = h > 1 ? y0 + 1 : y0, x1 = w > 1 ? x0 + 1 : x0,
                                z1 = d > 1 ? z0 + 1 : z0;
                        double fy = cy - y0, fx = cx - x0, fz = cz - z0;
                        double gy_acc = 0, gx_acc = 0, gz_acc = 0;
                        for (int64_t c = 0; c < ch; ++c) {
                            const float* ip = img + c * vol;
                            auto v = [&](int64_t yy, int64_t xx, int64_t zz) {
                                return static_cast<double>(ip[(yy * w + xx) * d + zz]);
                            };
                            double gv = g[c * vol + at];
                            if (gv == 0.0) continue;
                            double w000 = (1 - fy) * (1 - fx) * (1 - fz),
                                   w001 = (1 - fy) * (1 - fx) * fz,
                                   w010 = (1 - fy) * fx * (1 - fz), w011 = (1 - fy) * fx * fz,
                                   w100 = fy * (1 - fx) * (1 - fz), w101 = fy * (1 - fx) * fz,
                                   w110 = fy * fx * (1 - fz), w111 = fy * fx * fz;
                            if (need_img) {
                                float* gi = in->grad.data() + c * vol;
                                gi[(y0 * w + x0) * d + z0] += static_cast<float>(gv * w000);
                                gi[(y0 * w + x0) * d + z1] += static_cast<float>(gv * w001);
                                gi[(y0 * w + x1) * d + z0] += static_cast<float>(gv * w010);
                                gi[(y0 * w + x1) * d + z1] += static_cast<float>(gv * w011);
                                gi[(y1 * w + x0) * d + z0] += static_cast<float>(gv * w100);
                                gi[(y1 * w + x0) * d + z1] += static_cast<float>(gv * w101);
                                gi[(y1 * w + x1) * d + z0] += static_cast<float>(gv * w110);
                                gi[(y1 * w + x1) * d + z1] += static_cast<float>(gv * w111);
                            }
                            if (need_fld) {
                                double dz0 = v(y0, x0, z1) - v(y0, x0, z0);
                                double dz1 = v(y0, x1, z1) - v(y0, x1, z0);
                                double dz2 = v(y1, x0, z1) - v(y1, x0, z0);
                                double dz3 = v(y1, x1, z1) - v(y1, x1, z0);
                                gz_acc += gv * ((1 - fy) * ((1 - fx) * dz0 + fx * dz1) +
                                                fy * ((1 - fx) * dz2 + fx * dz3));
                                double c00 = v(y0, x0, z0) * (1 - fz) + v(y0, x0, z1) * fz;
                                double c01 = v(y0, x1, z0) * (1 - fz) + v(y0, x1, z1) * fz;
                                double c10 = v(y1, x0, z0) * (1 - fz) + v(y1, x0, z1) * fz;
                                double c11 = v(y1, x1, z0) * (1 - fz) + v(y1, x1, z1) * fz;
                                gy_acc += gv * ((c10 - c00) * (1 - fx) + (c11 - c01) * fx);
                                gx_acc += gv * ((c01 - c00) * (1 - fy) + (c11 - c10) * fy);
                            }
                        }
                        if (need_fld) {
                            if (in_y) un->grad[static_cast<size_t>(at)] +=
                                static_cast<float>(gy_acc);
                            if (in_x) un->grad[static_cast<size_t>(vol + at)] +=
                                static_cast<float>(gx_acc);
                            if (in_z) un->grad[static_cast<size_t>(2 * vol + at)] +=
                                static_cast<float>(gz_acc);
                        }
                    }
        }
    });
    return r;
}

// Composition of displacement maps: result(x) = phi_f(phi_g(x)) - x,
// i.e. u = u_g + sample(u_f, g).
inline DisplacementField compose(const DisplacementField& f, const DisplacementField& g) {
    if (f.shape() != g.shape())
        fail("compose: field shapes differ: " + shape_str(f.shape()) + " vs " +
             shape_str(g.shape()));
    return add(g, sample(f, g));
}

// Scaling and squaring: scale the stationary velocity by 2^-N, then square
// (self-compose) N times. Differentiable end to end.
inline DisplacementField integrate_velocity(const VelocityField& v, int n_steps = 7) {
    if (n_steps < 1) fail("integrate_velocity: N must be >= 1");
    Tensor u = mul_scalar(v, std::ldexp(1.0f, -n_steps));
    for (int i = 0; i < n_steps; ++i) u = compose(u, u);
    return u;
}

// Jacobian determinant statistics of phi(x) = x + u(x) over the grid.
// Central differences in the interior, one-sided at borders; with
// interior_only (the default) border cells are excluded from the stats.
inline JacobianStats jacobian_stats(const DisplacementField& u, bool interior_only = true) {
    int64_t rank;
    if (u.ndim() == 3 && u.dim(0) == 2)
        rank = 2;
    else if (u.ndim() == 4 && u.dim(0) == 3)
        rank = 3;
    else
        fail("jacobian_stats: field must be [2,H,W] or [3,H,W,D], got " + shape_str(u.shape()));
    for (int64_t a = 1; a < u.ndim(); ++a)
        if (u.dim(a) < 3)
            fail("jacobian_stats: grid extent " + std::to_string(u.dim(a)) +
                 " too small (need >= 3 cells per axis)");

    const auto& d = u.data();
    int64_t nonpos = 0, count = 0;
    double absdev = 0.0;
    if (rank == 2) {
        int64_t h = u.dim(1), w = u.dim(2);
        const int64_t plane = h * w;
        auto comp = [&](int64_t c, int64_t y, int64_t x) {
            return static_cast<double>(d[static_cast<size_t>(c * plane + y * w + x)]);
        };
        // derivative of component c along axis: central interior, one-sided border
        auto ddy = [&](int64_t c, int64_t y, int64_t x) {
            if (y == 0) return comp(c, 1, x) - comp(c, 0, x);
            if (y == h - 1) return comp(c, h - 1, x) - comp(c, h - 2, x);
            return (comp(c, y + 1, x) - comp(c, y - 1, x)) * 0.5;
        };
        auto ddx = [&](int64_t c, int64_t y, int64_t x) {
            if (x == 0) return comp(c, y, 1) - comp(c, y, 0);
            if (x == w - 1) return comp(c, y, w - 1) - comp(c, y, w - 2);
            return (comp(c, y, x + 1) - comp(c, y, x - 1)) * 0.5;
        };
        int64_t y0 = interior_only ? 1 : 0, y1 = interior_only ? h - 1 : h;
        int64_t x0 = interior_only ? 1 : 0, x1 = interior_only ? w - 1 : w;
        for (int64_t y = y0; y < y1; ++y)
            for (int64_t x = x0; x < x1; ++x) {
                double det = (1.0 + ddy(0, y, x)) * (1.0 + ddx(1, y, x)) -
                             ddx(0, y, x) * ddy(1, y, x);
                if (det <= 0.0) ++nonpos;
                absdev += std::abs(det - 1.0);
                ++count;
            }
    } else {
        int64_t h = u.dim(1), w = u.dim(2), dd = u.dim(3);
        const int64_t vol = h * w * dd;
        auto comp = [&](int64_t c, int64_t y, int64_t x, int64_t z) {
            return static_cast<double>(d[static_cast<size_t>(c * vol + (y * w + x) * dd + z)]);
        };
        auto deriv = [&](int64_t c, int64_t axis, int64_t y, int64_t x, int64_t z) {
            int64_t e = axis == 0 ? h : (axis == 1 ? w : dd);
            int64_t v = axis == 0 ? y : (axis == 1 ? x : z);
            auto at = [&](int64_t vv) {
                return comp(c, axis == 0 ? vv : y, axis == 1 ? vv : x, axis == 2 ? vv : z);
            };
            if (v == 0) return at(1) - at(0);
            if (v == e - 1) return at(e - 1) - at(e - 2);
            return (at(v + 1) - at(v - 1)) * 0.5;
        };
        int64_t lo = interior_only ? 1 : 0;
        for (int64_t y = lo; y < (interior_only ? h - 1 : h); ++y)
            for (int64_t x = lo; x < (interior_only ? w - 1 : w); ++x)
                for (int64_t z = lo; z < (interior_only ? dd - 1 : dd); ++z) {
                    double j[3][3];
                    for (int64_t c = 0; c < 3; ++c)
                        for (int64_t a = 0; a < 3; ++a)
                            j[c][a] = deriv(c, a, y, x, z) + (c == a ? 1.0 : 0.0);
                    double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                                 j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                                 j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
                    if (det <= 0.0) ++nonpos;
                    absdev += std::abs(det - 1.0);
                    ++count;
                }
    }
    JacobianStats st;
    st.frac_nonpos = count ? static_cast<double>(nonpos) / count : 0.0;
    st.mean_abs_dev = count ? absdev / count : 0.0;
    return st;
}

}  // namespace motrack
