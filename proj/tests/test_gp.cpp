#include <doctest.h>

#include <cmath>

#include "motrack/gp.hpp"
#include "test_util.hpp"

using namespace motrack;
using testutil::grad_check;
using testutil::random_tensor;

TEST_SUITE_BEGIN("gp");

TEST_CASE("matern kernel closed form") {
    MaternHyper hp;
    hp.sigma = 1.0;
    hp.ell = 1.3;
    CHECK(matern_kernel(0.0, hp) == doctest::Approx(1.0));
    CHECK(matern_kernel(hp.ell / std::sqrt(3.0), hp) == doctest::Approx(2.0 * std::exp(-1.0)));

    // strictly decreasing in distance
    double prev = matern_kernel(0.0, hp);
    for (double d = 0.1; d < 8.0; d += 0.1) {
        double v = matern_kernel(d, hp);
        CHECK(v < prev);
        prev = v;
    }
    CHECK_THROWS_AS(matern_kernel(-0.1, hp), std::invalid_argument);
}

TEST_CASE("transition matrix values") {
    MaternHyper hp;
    hp.ell = 1.0;
    auto ts = transition_matrix(hp);
    CHECK(ts.a[0] == 0.0);
    CHECK(ts.a[1] == 1.0);
    CHECK(ts.a[2] == doctest::Approx(-3.0));
    CHECK(ts.a[3] == doctest::Approx(-3.4641).epsilon(1e-4));
    CHECK(ts.b[0] == 0.0);
    CHECK(ts.b[1] == 1.0);

    hp.ell = 2.0;
    ts = transition_matrix(hp);
    CHECK(ts.a[2] == doctest::Approx(-0.75));
    CHECK(ts.a[3] == doctest::Approx(-1.7321).epsilon(1e-4));

    // repeated eigenvalue -sqrt(3)/l: trace^2 = 4 det, both roots negative
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        hp.ell = rng.uniform(0.2, 5.0);
        ts = transition_matrix(hp);
        double tr = ts.a[0] + ts.a[3];
        double det = ts.a[0] * ts.a[3] - ts.a[1] * ts.a[2];
        CHECK(tr * tr == doctest::Approx(4.0 * det).epsilon(1e-9));
        CHECK(tr / 2.0 == doctest::Approx(-std::sqrt(3.0) / hp.ell).epsilon(1e-9));
    }
}

TEST_CASE("discretize limits and Taylor oracle") {
    MaternHyper hp;
    hp.sigma = 1.4;
    hp.ell = 1.8;
    SUBCASE("zero step") {
        auto tp = discretize(0.0, hp);
        CHECK(tp.phi[0] == doctest::Approx(1.0));
        CHECK(tp.phi[1] == doctest::Approx(0.0));
        CHECK(tp.phi[2] == doctest::Approx(0.0));
        CHECK(tp.phi[3] == doctest::Approx(1.0));
        for (double q : tp.q) CHECK(q == doctest::Approx(0.0));
    }
    SUBCASE("stationarity limit") {
        auto tp = discretize(1e6 * hp.ell, hp);
        for (double p : tp.phi) CHECK(std::abs(p) < 1e-12);
        double a = hp.sigma * hp.sigma / 2.0;
        double b = 3.0 * hp.sigma * hp.sigma / (hp.ell * hp.ell);
        CHECK(tp.q[0] == doctest::Approx(a));
        CHECK(tp.q[1] == doctest::Approx(0.0));
        CHECK(tp.q[3] == doctest::Approx(b));
    }
    SUBCASE("matrix exponential matches 50-term Taylor series") {
        Rng rng(5);
        for (int i = 0; i < 50; ++i) {
            hp.ell = rng.uniform(0.5, 4.0);
            double scaled = rng.uniform(0.0, 4.0);  // delta * sqrt(3)/l <= 4
            double delta = scaled * hp.ell / std::sqrt(3.0);
            auto ts = transition_matrix(hp);
            std::array<double, 4> da;
            for (int k = 0; k < 4; ++k) da[k] = delta * ts.a[k];
            auto series = expm2x2_taylor(da, 50);
            auto tp = discretize(delta, hp);
            for (int k = 0; k < 4; ++k) CHECK(std::abs(tp.phi[k] - series[k]) < 1e-8);
        }
    }
}

TEST_CASE("kalman filter scalar Bayes update at T=1") {
    MaternHyper hp;
    hp.sigma = 1.2;
    hp.ell = 2.0;
    hp.noise_var = 0.3;
    double s = hp.sigma * hp.sigma / 2.0;
    double y = 0.7;
    auto steps = kalman_filter<double>({y}, {}, hp);
    REQUIRE(steps.size() == 1);
    CHECK(steps[0].filtered.mean[0] == doctest::Approx(y * s / (s + hp.noise_var)).epsilon(1e-6));
    CHECK(steps[0].predicted.cov[0] == doctest::Approx(s));

    // observing the derivative instead: posterior derivative mean
    double b = 3.0 * hp.sigma * hp.sigma / (hp.ell * hp.ell);
    auto dsteps = kalman_filter<double>({y}, {}, hp, true);
    CHECK(dsteps[0].filtered.mean[1] == doctest::Approx(y * b / (b + hp.noise_var)).epsilon(1e-6));
}

TEST_CASE("kalman filter is linear: zero observations give zero means") {
    MaternHyper hp;
    hp.noise_var = 0.05;
    auto steps = kalman_filter<double>(std::vector<double>(9, 0.0),
                                       std::vector<double>(8, 0.7), hp);
    for (const auto& st : steps) {
        CHECK(st.filtered.mean[0] == 0.0);
        CHECK(st.filtered.mean[1] == 0.0);
    }
}

TEST_CASE("O(T) filter matches the dense GP oracle") {
    auto res = gp_equivalence_check(120, 16, 2024);
    CHECK(res.max_rel_err < 1e-6);
    CHECK(res.max_cov_eig_violation > -1e-6);
}

TEST_CASE("gain bounds and stationarity") {
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        MaternHyper hp;
        hp.sigma = rng.uniform(0.5, 2.0);
        hp.ell = rng.uniform(0.5, 4.0);
        hp.noise_var = rng.uniform(1e-3, 1.0);
        int t_len = 150;
        std::vector<double> obs(t_len), deltas(t_len - 1, rng.uniform(0.3, 2.0));
        for (auto& o : obs) o = rng.normal();
        auto steps = kalman_filter<double>(obs, deltas, hp);
        for (const auto& st : steps) {
            CHECK(st.gain[0] >= 0.0);
            CHECK(st.gain[0] <= 1.0);
        }
        // constant gaps: the covariance recursion reaches a fixed point
        double tail_move = 0.0;
        for (size_t t = steps.size() - 5; t < steps.size(); ++t)
            for (int k = 0; k < 3; ++k)
                tail_move = std::max(tail_move, std::abs(double(steps[t].filtered.cov[k]) -
                                                         double(steps[t - 1].filtered.cov[k])));
        CHECK(tail_move < 1e-9);
    }
}

TEST_CASE("dense oracle limits") {
    MaternHyper hp;
    hp.sigma = 1.0;
    hp.ell = 1.5;
    std::vector<double> obs = {0.4, -1.2, 0.9, 0.3};
    std::vector<double> pos = {0.0, 1.0, 2.0, 3.0};

    SUBCASE("uninformative likelihood collapses to the prior mean") {
        hp.noise_var = 1e12;
        auto res = dense_gp_posterior(obs, pos, hp);
        for (double m : res.mean) CHECK(std::abs(m) < 1e-9);
    }
    SUBCASE("zero noise interpolates the observations") {
        hp.noise_var = 0.0;
        auto res = dense_gp_posterior(obs, pos, hp);
        for (size_t t = 0; t < obs.size(); ++t)
            CHECK(res.mean[t] == doctest::Approx(obs[t]).epsilon(1e-5));
    }
    SUBCASE("oracle guards its size limit") {
        std::vector<double> big(65, 0.0), bigpos(65, 0.0);
        CHECK_THROWS_AS(dense_gp_posterior(big, bigpos, hp), std::invalid_argument);
    }
}

TEST_CASE("filter_latent limiting behaviour") {
    Rng rng(13);
    int64_t t_len = 5, np = 3, nc = 2;
    Tensor z = random_tensor({t_len, np, nc}, rng, -1.5f, 1.5f);
    Tensor deltas = random_tensor({t_len - 1, np}, rng, 0.3f, 1.5f);
    Tensor sig = Tensor::filled({nc}, 1.0f);
    Tensor ell = Tensor::filled({nc}, 1.0f);

    SUBCASE("vanishing noise passes relu(z) through") {
        Tensor noise = Tensor::filled({nc}, 1e-12f);
        Tensor out = filter_latent(z, deltas, sig, ell, noise);
        for (int64_t i = 0; i < z.numel(); ++i)
            CHECK(out[i] == doctest::Approx(std::max(z[i], 0.0f)).epsilon(1e-5));
    }
    SUBCASE("infinite noise kills the gain") {
        Tensor noise = Tensor::filled({nc}, 1e12f);
        Tensor out = filter_latent(z, deltas, sig, ell, noise);
        for (int64_t i = 0; i < z.numel(); ++i) CHECK(std::abs(out[i]) < 1e-9);
    }
    SUBCASE("shape mismatches are rejected") {
        CHECK_THROWS_AS(filter_latent(z, Tensor::zeros({t_len, np}), sig, ell, sig),
                        std::invalid_argument);
        CHECK_THROWS_AS(filter_latent(z, deltas, Tensor::ones({nc + 1}), ell, sig),
                        std::invalid_argument);
    }
}

TEST_CASE("filter_latent gains agree with the reference filter") {
    Rng rng(15);
    int64_t t_len = 6;
    Tensor z = random_tensor({t_len, 1, 1}, rng, 0.2f, 1.8f);  // positive: relu transparent
    Tensor deltas = random_tensor({t_len - 1, 1}, rng, 0.2f, 2.0f);
    MaternHyper hp;
    hp.sigma = 1.3;
    hp.ell = 2.1;
    hp.noise_var = 0.4;
    Tensor out = filter_latent(z, deltas, Tensor::filled({1}, float(hp.sigma)),
                               Tensor::filled({1}, float(hp.ell)),
                               Tensor::filled({1}, float(hp.noise_var)));
    std::vector<double> obs(t_len), gaps(t_len - 1);
    for (int64_t t = 0; t < t_len; ++t) obs[t] = z[t];
    for (int64_t t = 0; t + 1 < t_len; ++t) gaps[t] = deltas[t];
    auto steps = kalman_filter<double>(obs, gaps, hp);
    for (int64_t t = 0; t < t_len; ++t)
        CHECK(out[t] == doctest::Approx(steps[t].gain[0] * z[t]).epsilon(1e-5));
}

TEST_CASE("filter_latent gradients versus finite differences") {
    Rng rng(21);
    int64_t t_len = 4, np = 2, nc = 2;
    Tensor z = random_tensor({t_len, np, nc}, rng, -1.5f, 1.5f);
    for (auto& v : z.mutable_data())
        if (std::abs(v) < 0.1f) v = 0.3f;  // keep clear of the relu kink
    Tensor deltas = random_tensor({t_len - 1, np}, rng, 0.3f, 1.5f);
    Tensor sig = random_tensor({nc}, rng, 0.8f, 1.6f);
    Tensor ell = random_tensor({nc}, rng, 0.8f, 2.5f);
    Tensor noise = random_tensor({nc}, rng, 0.05f, 0.5f);
    Rng wr(22);
    Tensor w = random_tensor({t_len, np, nc}, wr, -1.0f, 1.0f);
    auto res = grad_check(
        [&] { return sum(mul(w, filter_latent(z, deltas, sig, ell, noise))); },
        {z, deltas, sig, ell, noise});
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_SUITE_END();
