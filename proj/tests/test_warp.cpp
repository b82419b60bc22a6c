#include <doctest.h>

#include <cmath>

#include "motrack/warp.hpp"
#include "test_util.hpp"

using namespace motrack;
using testutil::grad_check;
using testutil::random_tensor;
using testutil::smooth_field;

namespace {

// Independent bilinear lookup used by the Euler oracle (deliberately not
// motrack::sample).
double bilerp(const Tensor& field, int64_t comp, double y, double x) {
    int64_t h = field.dim(1), w = field.dim(2);
    y = std::min(std::max(y, 0.0), double(h - 1));
    x = std::min(std::max(x, 0.0), double(w - 1));
    int64_t y0 = std::min<int64_t>(int64_t(std::floor(y)), h - 2);
    int64_t x0 = std::min<int64_t>(int64_t(std::floor(x)), w - 2);
    double fy = y - y0, fx = x - x0;
    auto at = [&](int64_t yy, int64_t xx) {
        return double(field[comp * h * w + yy * w + xx]);
    };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
           fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

// Forward-Euler integration of dphi/dt = v(phi) from a grid point.
std::pair<double, double> euler_endpoint(const Tensor& v, int64_t y, int64_t x, int steps) {
    double py = y, px = x;
    double dt = 1.0 / steps;
    for (int s = 0; s < steps; ++s) {
        double vy = bilerp(v, 0, py, px);
        double vx = bilerp(v, 1, py, px);
        py += dt * vy;
        px += dt * vx;
    }
    return {py, px};
}

Tensor ramp_image(int64_t h, int64_t w) {  // I(y,x) = x
    Tensor t = Tensor::zeros({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) t.mutable_data()[size_t(y * w + x)] = float(x);
    return t;
}

Tensor const_field(int64_t h, int64_t w, float uy, float ux) {
    Tensor f = Tensor::zeros({2, h, w});
    for (int64_t i = 0; i < h * w; ++i) {
        f.mutable_data()[size_t(i)] = uy;
        f.mutable_data()[size_t(h * w + i)] = ux;
    }
    return f;
}

}  // namespace

TEST_SUITE_BEGIN("warp");

TEST_CASE("sample: identity warp is bit exact") {
    Rng rng(31);
    Tensor img = random_tensor({9, 7}, rng, 0.0f, 1.0f);
    Tensor out = sample(img, Tensor::zeros({2, 9, 7}));
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(out[i] == img[i]);
}

TEST_CASE("sample: unit and half shifts of a linear ramp") {
    int64_t h = 8, w = 10;
    Tensor img = ramp_image(h, w);
    Tensor out1 = sample(img, const_field(h, w, 0.f, 1.f));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x + 1 < w; ++x)
            CHECK(std::abs(out1[y * w + x] - float(x + 1)) < 1e-6);

    Tensor outh = sample(img, const_field(h, w, 0.f, 0.5f));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x + 1 < w; ++x)
            CHECK(std::abs(outh[y * w + x] - (x + 0.5f)) < 1e-6);
}

TEST_CASE("sample: shape mismatch is rejected") {
    CHECK_THROWS_WITH_AS(sample(Tensor::zeros({4, 4}), Tensor::zeros({2, 5, 5})),
                         doctest::Contains("sample"), std::invalid_argument);
    CHECK_THROWS_AS(sample(Tensor::zeros({4, 4}), Tensor::zeros({4, 4})),
                    std::invalid_argument);
}

TEST_CASE("sample: gradients versus finite differences") {
    Rng rng(37);
    Tensor img = random_tensor({6, 7}, rng, 0.0f, 1.0f);
    // fractional displacements clear of cell boundaries and image edges
    Tensor fld = Tensor::zeros({2, 6, 7});
    for (auto& v : fld.mutable_data()) v = static_cast<float>(rng.uniform(0.15, 0.4));
    auto res = grad_check([&] { return sum(mul(sample(img, fld), sample(img, fld))); },
                          {img, fld});
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("compose: identity element") {
    Rng rng(41);
    Tensor g = smooth_field(12, 12, rng, 0.8);
    Tensor zero = Tensor::zeros({2, 12, 12});
    Tensor c1 = compose(zero, g);
    Tensor c2 = compose(g, zero);
    for (int64_t i = 0; i < g.numel(); ++i) {
        CHECK(c1[i] == doctest::Approx(g[i]).epsilon(1e-6));
        CHECK(c2[i] == doctest::Approx(g[i]).epsilon(1e-6));
    }
}

TEST_CASE("compose: constant shifts add") {
    int64_t h = 10, w = 10;
    Tensor f = const_field(h, w, 1.f, 0.f);
    Tensor g = const_field(h, w, 0.f, 1.f);
    Tensor c = compose(f, g);
    for (int64_t y = 1; y + 1 < h; ++y)
        for (int64_t x = 1; x + 1 < w; ++x) {
            CHECK(c[y * w + x] == doctest::Approx(1.0));
            CHECK(c[h * w + y * w + x] == doctest::Approx(1.0));
        }
}

TEST_CASE("compose: field with its inverse flow collapses to identity") {
    Rng rng(43);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor v = smooth_field(32, 32, rng, 1.5);
        Tensor fwd = integrate_velocity(v, 7);
        Tensor bwd = integrate_velocity(neg(v), 7);
        Tensor c = compose(fwd, bwd);
        double worst = 0.0;
        int64_t hw = 32 * 32;
        for (int64_t y = 1; y < 31; ++y)
            for (int64_t x = 1; x < 31; ++x) {
                double dy = c[y * 32 + x], dx = c[hw + y * 32 + x];
                worst = std::max(worst, std::sqrt(dy * dy + dx * dx));
            }
        CHECK(worst < 0.05);
    }
}

TEST_CASE("integrate_velocity: zero and constant translation flows") {
    Tensor u0 = integrate_velocity(Tensor::zeros({2, 8, 8}), 7);
    for (int64_t i = 0; i < u0.numel(); ++i) CHECK(u0[i] == 0.0f);

    Tensor uc = integrate_velocity(const_field(8, 8, 0.8f, 0.f), 7);
    for (int64_t i = 0; i < 64; ++i) {
        CHECK(uc[i] == doctest::Approx(0.8).epsilon(1e-6));
        CHECK(uc[64 + i] == doctest::Approx(0.0));
    }
}

TEST_CASE("integrate_velocity: matches a fine Euler ODE oracle") {
    Rng rng(47);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor v = smooth_field(64, 64, rng, 2.0, 5, 22.0);
        Tensor u = integrate_velocity(v, 7);
        double worst = 0.0;
        for (int64_t y = 2; y < 62; y += 3)
            for (int64_t x = 2; x < 62; x += 3) {
                auto [ey, ex] = euler_endpoint(v, y, x, 1024);
                double dy = (y + u[y * 64 + x]) - ey;
                double dx = (x + u[64 * 64 + y * 64 + x]) - ex;
                worst = std::max(worst, std::sqrt(dy * dy + dx * dx));
            }
        CHECK(worst < 1e-2);
    }
}

TEST_CASE("integrate_velocity: diffeomorphism invariant on bounded fields") {
    Rng rng(53);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor v = smooth_field(32, 32, rng, 2.0);
        Tensor u = integrate_velocity(v, 7);
        auto st = jacobian_stats(u, true);
        CHECK(st.frac_nonpos == 0.0);
    }
}

TEST_CASE("integrate_velocity: group step-halving") {
    Rng rng(59);
    Tensor v = smooth_field(32, 32, rng, 1.5);
    Tensor whole = integrate_velocity(v, 7);
    Tensor half = integrate_velocity(mul_scalar(v, 0.5f), 7);
    Tensor glued = compose(half, half);
    double worst = 0.0;
    for (int64_t i = 0; i < whole.numel(); ++i)
        worst = std::max(worst, double(std::abs(whole[i] - glued[i])));
    CHECK(worst < 1e-3);
}

TEST_CASE("integrate_velocity: differentiable end to end") {
    Rng rng(61);
    Tensor v = smooth_field(8, 8, rng, 0.7);
    Tensor img = random_tensor({8, 8}, rng, 0.0f, 1.0f);
    auto res = grad_check([&] { return mean(mul(sample(img, integrate_velocity(v, 3)), img)); },
                          {v});
    CHECK(res.max_rel_err < 2e-4);
}

TEST_CASE("jacobian_stats: identity field") {
    auto st = jacobian_stats(Tensor::zeros({2, 6, 6}));
    CHECK(st.frac_nonpos == 0.0);
    CHECK(st.mean_abs_dev == 0.0);
}

TEST_CASE("jacobian_stats: linear fields have analytic determinants") {
    int64_t h = 8, w = 8;
    SUBCASE("compressive a=-1.5 folds everywhere") {
        Tensor u = Tensor::zeros({2, h, w});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                u.mutable_data()[size_t(y * w + x)] = -1.5f * float(y);
        auto st = jacobian_stats(u, true);
        CHECK(st.frac_nonpos == 1.0);
        CHECK(st.mean_abs_dev == doctest::Approx(1.5));
    }
    SUBCASE("isotropic 10 percent expansion") {
        Tensor u = Tensor::zeros({2, h, w});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                u.mutable_data()[size_t(y * w + x)] = 0.1f * float(y);
                u.mutable_data()[size_t(h * w + y * w + x)] = 0.1f * float(x);
            }
        auto st = jacobian_stats(u, true);
        CHECK(st.frac_nonpos == 0.0);
        CHECK(st.mean_abs_dev == doctest::Approx(0.21).epsilon(1e-4));
    }
}

TEST_CASE("jacobian_stats: degenerate grid is rejected") {
    CHECK_THROWS_AS(jacobian_stats(Tensor::zeros({2, 2, 5})), std::invalid_argument);
}

TEST_CASE("3-D sampling, composition and jacobians") {
    Rng rng(67);
    // trilinear identity is exact
    Tensor vol = random_tensor({5, 6, 4}, rng, 0.0f, 1.0f);
    Tensor out = sample(vol, Tensor::zeros({3, 5, 6, 4}));
    for (int64_t i = 0; i < vol.numel(); ++i) CHECK(out[i] == vol[i]);

    // constant translation flow in 3-D
    Tensor v3 = Tensor::zeros({3, 5, 6, 4});
    for (int64_t i = 0; i < 5 * 6 * 4; ++i) v3.mutable_data()[size_t(i)] = 0.4f;
    Tensor u3 = integrate_velocity(v3, 5);
    for (int64_t i = 0; i < 5 * 6 * 4; ++i) CHECK(u3[i] == doctest::Approx(0.4).epsilon(1e-6));

    // isotropic linear expansion: det = 1.1^3
    Tensor ul = Tensor::zeros({3, 6, 6, 6});
    for (int64_t y = 0; y < 6; ++y)
        for (int64_t x = 0; x < 6; ++x)
            for (int64_t z = 0; z < 6; ++z) {
                int64_t at = (y * 6 + x) * 6 + z;
                ul.mutable_data()[size_t(at)] = 0.1f * y;
                ul.mutable_data()[size_t(216 + at)] = 0.1f * x;
                ul.mutable_data()[size_t(432 + at)] = 0.1f * z;
            }
    auto st = jacobian_stats(ul, true);
    CHECK(st.mean_abs_dev == doctest::Approx(std::pow(1.1, 3) - 1.0).epsilon(1e-4));

    // gradients through trilinear sampling
    Tensor img = random_tensor({4, 4, 4}, rng, 0.0f, 1.0f);
    Tensor fld = Tensor::zeros({3, 4, 4, 4});
    for (auto& vv : fld.mutable_data()) vv = static_cast<float>(rng.uniform(0.15, 0.35));
    auto res = grad_check([&] { return sum(mul(sample(img, fld), img)); }, {img, fld});
    CHECK(res.max_rel_err < 2e-4);
}

TEST_SUITE_END();
