#include <doctest.h>

#include <chrono>
#include <cmath>

#include "motrack/net.hpp"
#include "test_util.hpp"

using namespace motrack;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config(int64_t hw = 16, int64_t p = 8, int64_t c = 8, int64_t layers = 1) {
    ModelConfig cfg;
    cfg.height = hw;
    cfg.width = hw;
    cfg.patch = p;
    cfg.channels = c;
    cfg.layers = layers;
    cfg.integrate_steps = 4;
    return cfg;
}

void zero_cell(CellParams& cp) {
    for (Tensor* t : {&cp.ln_x_g, &cp.ln_x_b, &cp.ln_h_g, &cp.ln_h_b, &cp.wq, &cp.wk, &cp.wv,
                      &cp.ln_f_g, &cp.ln_f_b, &cp.ffn_w1, &cp.ffn_b1, &cp.ffn_w2, &cp.ffn_b2})
        for (auto& v : t->mutable_data()) v = 0.0f;
}

}  // namespace

TEST_SUITE_BEGIN("net");

TEST_CASE("patch_embed: grid arithmetic and bias") {
    Rng rng(71);
    TrackModel m(tiny_config(16, 8, 8), rng);
    CHECK(m.cfg.patches() == 4);

    // zero frame maps every patch to the bias row
    for (auto& v : m.embed_b.mutable_data()) v = 0.25f;
    Tensor e = m.patch_embed(Tensor::zeros({16, 16}));
    CHECK(e.shape() == Shape{4, 8});
    for (int64_t i = 0; i < e.numel(); ++i) CHECK(e[i] == doctest::Approx(0.25f));

    CHECK_THROWS_WITH_AS(m.patch_embed(Tensor::zeros({12, 16})),
                         doctest::Contains("patch_embed"), std::invalid_argument);
}

TEST_CASE("patch_embed: orthonormal projection round trip") {
    Rng rng(73);
    int64_t p = 4, hw = 8;
    // Gram-Schmidt an orthonormal [p*p, p*p] basis
    int64_t n = p * p;
    std::vector<std::vector<double>> basis(static_cast<size_t>(n),
                                           std::vector<double>(static_cast<size_t>(n)));
    for (auto& row : basis)
        for (auto& v : row) v = rng.normal();
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < i; ++j) {
            double dot = 0;
            for (int64_t k = 0; k < n; ++k) dot += basis[i][k] * basis[j][k];
            for (int64_t k = 0; k < n; ++k) basis[i][k] -= dot * basis[j][k];
        }
        double nrm = 0;
        for (int64_t k = 0; k < n; ++k) nrm += basis[i][k] * basis[i][k];
        nrm = std::sqrt(nrm);
        for (int64_t k = 0; k < n; ++k) basis[i][k] /= nrm;
    }
    ModelConfig cfg = tiny_config(hw, p, n);
    TrackModel m(cfg, rng);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
            m.embed_w.mutable_data()[size_t(i * n + j)] = float(basis[size_t(j)][size_t(i)]);
    for (auto& v : m.embed_b.mutable_data()) v = 0.0f;

    Tensor frame = random_tensor({hw, hw}, rng, 0.0f, 1.0f);
    Tensor emb = m.patch_embed(frame);
    Tensor back = patches2im(matmul(emb, transpose(m.embed_w)), p, 1, hw, hw);
    for (int64_t i = 0; i < frame.numel(); ++i)
        CHECK(back[i] == doctest::Approx(frame[i]).epsilon(1e-5));
}

TEST_CASE("temporal encoding values") {
    auto row0 = TrackModel::temporal_encoding(0, 8, 10000.f);
    for (int64_t i = 0; i < 8; i += 2) CHECK(row0[size_t(i)] == doctest::Approx(0.0));
    for (int64_t i = 1; i < 8; i += 2) CHECK(row0[size_t(i)] == doctest::Approx(1.0));

    auto row1 = TrackModel::temporal_encoding(1, 8, 10000.f);
    CHECK(row1[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-5));
    CHECK(row1[1] == doctest::Approx(std::cos(1.0)).epsilon(1e-5));

    // lowest frequency channel repeats after its period
    int64_t c = 4;
    float n = 100.f;
    double freq = std::pow(double(n), -2.0 * 1.0 / double(c));
    int64_t period = int64_t(std::round(2.0 * 3.14159265358979 / freq));
    auto a = TrackModel::temporal_encoding(0, c, n);
    auto b = TrackModel::temporal_encoding(period, c, n);
    CHECK(std::abs(a[2] - b[2]) < 0.05);
    CHECK(std::abs(a[3] - b[3]) < 0.05);
}

TEST_CASE("positional encoding combines spatial and temporal parts") {
    Rng rng(79);
    TrackModel m(tiny_config(), rng);
    Tensor pos = m.positional_encoding(3);
    auto row = TrackModel::temporal_encoding(3, m.cfg.channels, m.cfg.pos_scale);
    for (int64_t p = 0; p < m.cfg.patches(); ++p)
        for (int64_t c = 0; c < m.cfg.channels; ++c)
            CHECK(pos[p * m.cfg.channels + c] ==
                  doctest::Approx(m.pos_spatial[p * m.cfg.channels + c] * row[size_t(c)]));
}

TEST_CASE("linear attention: single token and associativity") {
    Rng rng(83);
    TrackModel m(tiny_config(16, 8, 4), rng);
    const auto& cp = m.fwd_cells[0];

    SUBCASE("P=1 collapses to (q.k) v") {
        Tensor x2 = random_tensor({1, 8}, rng);
        Tensor att = m.attention_weight(cp, x2);
        Tensor q = add_scalar(elu(matmul(x2, cp.wq)), 1.0f);
        Tensor k = add_scalar(elu(matmul(x2, cp.wk)), 1.0f);
        Tensor v = matmul(x2, cp.wv);
        double qk = 0;
        for (int64_t j = 0; j < 4; ++j) qk += double(q[j]) * k[j];
        for (int64_t j = 0; j < 4; ++j)
            CHECK(att[j] == doctest::Approx(qk * v[j]).epsilon(1e-5));
    }

    SUBCASE("kernelized features stay strictly positive") {
        Tensor x2 = random_tensor({5, 8}, rng, -6.0f, 6.0f);
        Tensor q = add_scalar(elu(matmul(x2, cp.wq)), 1.0f);
        Tensor k = add_scalar(elu(matmul(x2, cp.wk)), 1.0f);
        for (int64_t i = 0; i < q.numel(); ++i) {
            CHECK(q[i] > 0.0f);
            CHECK(k[i] > 0.0f);
        }
    }

    SUBCASE("(QK^T)V equals Q(K^TV)") {
        Tensor x2 = random_tensor({3, 8}, rng);
        Tensor q = add_scalar(elu(matmul(x2, cp.wq)), 1.0f);
        Tensor k = add_scalar(elu(matmul(x2, cp.wk)), 1.0f);
        Tensor v = matmul(x2, cp.wv);
        Tensor right = matmul(q, matmul(transpose(k), v));
        Tensor left = matmul(matmul(q, transpose(k)), v);
        for (int64_t i = 0; i < right.numel(); ++i)
            CHECK(left[i] == doctest::Approx(right[i]).epsilon(1e-5));
    }
}

TEST_CASE("linear attention wall time grows linearly in P") {
    Rng rng(89);
    ModelConfig cfg = tiny_config(16, 8, 32);
    TrackModel m(cfg, rng);
    const auto& cp = m.fwd_cells[0];
    auto time_p = [&](int64_t np) {
        Tensor x2 = random_tensor({np, 64}, rng);
        m.attention_weight(cp, x2);  // warm up
        double best = 1e18;
        for (int rep = 0; rep < 5; ++rep) {
            auto t0 = std::chrono::steady_clock::now();
            for (int i = 0; i < 200; ++i) m.attention_weight(cp, x2);
            auto t1 = std::chrono::steady_clock::now();
            best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
        }
        return best;
    };
    double t64 = time_p(64), t128 = time_p(128);
    double ratio = t128 / t64;
    CAPTURE(ratio);
    CHECK(ratio > 1.4);
    CHECK(ratio < 2.8);
}

TEST_CASE("cell_step identities") {
    Rng rng(97);
    TrackModel m(tiny_config(16, 8, 8), rng);
    auto& cp = m.fwd_cells[0];
    Tensor x = random_tensor({4, 8}, rng);
    Tensor h = random_tensor({4, 8}, rng);
    Tensor pos = m.positional_encoding(1);

    SUBCASE("h_next - A_t equals the normalized previous hidden state") {
        auto [f, hn] = m.cell_step(cp, x, h, pos);
        Tensor att = m.linear_attention(cp, x, h, pos);
        Tensor b = layer_norm(add(h, pos), cp.ln_h_g, cp.ln_h_b);
        Tensor expect = add(att, b);
        for (int64_t i = 0; i < hn.numel(); ++i) CHECK(hn[i] == expect[i]);
    }

    SUBCASE("zeroed FFN output layer broadcasts its bias") {
        for (auto& v : cp.ffn_w2.mutable_data()) v = 0.0f;
        for (int64_t i = 0; i < 8; ++i) cp.ffn_b2.mutable_data()[size_t(i)] = float(i) * 0.5f;
        auto [f, hn] = m.cell_step(cp, x, h, pos);
        for (int64_t p = 0; p < 4; ++p)
            for (int64_t c = 0; c < 8; ++c) CHECK(f[p * 8 + c] == doctest::Approx(0.5f * c));
    }

    SUBCASE("gradient of the frame input matches finite differences") {
        Rng r2(98);
        TrackModel m2(tiny_config(16, 8, 4), r2);
        Tensor x2 = random_tensor({2, 4}, r2);
        Tensor h2 = random_tensor({2, 4}, r2);
        Tensor pos2 = random_tensor({2, 4}, r2);  // cell_step is agnostic to the patch grid
        auto res = grad_check(
            [&] {
                auto [f, hn] = m2.cell_step(m2.fwd_cells[0], x2, h2, pos2);
                return add(sum(f), mul_scalar(sum(hn), 0.3f));
            },
            {x2, h2});
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("bidirectional encoding") {
    Rng rng(101);
    ModelConfig cfg = tiny_config(16, 8, 8, 2);
    TrackModel m(cfg, rng);

    auto embed_all = [&](const std::vector<Tensor>& frames) {
        std::vector<Tensor> xs, pos;
        for (size_t t = 0; t < frames.size(); ++t) {
            xs.push_back(m.patch_embed(frames[t]));
            pos.push_back(m.positional_encoding(int64_t(t)));
        }
        return std::pair{xs, pos};
    };

    std::vector<Tensor> frames;
    for (int t = 0; t < 3; ++t) frames.push_back(random_tensor({16, 16}, rng, 0.0f, 1.0f));

    SUBCASE("zeroed backward cells reduce fusion to the forward stream") {
        TrackModel fwd_only = m;
        for (auto& cp : fwd_only.bwd_cells) zero_cell(cp);
        auto [xs, pos] = embed_all(frames);
        auto fused = fwd_only.encode(xs, pos);

        TrackModel uni = m;
        uni.cfg.bidirectional = false;
        auto only = uni.encode(xs, pos);
        REQUIRE(fused.size() == only.size());
        for (size_t t = 0; t < fused.size(); ++t)
            for (int64_t i = 0; i < fused[t].numel(); ++i)
                CHECK(fused[t][i] == doctest::Approx(only[t][i]));
    }

    SUBCASE("reversing inputs and swapping cells reverses outputs") {
        TrackModel swapped = m;
        std::swap(swapped.fwd_cells, swapped.bwd_cells);
        auto [xs, pos] = embed_all(frames);
        auto out = m.encode(xs, pos);
        std::vector<Tensor> rev_xs(xs.rbegin(), xs.rend());
        std::vector<Tensor> rev_pos(pos.rbegin(), pos.rend());
        auto rev_out = swapped.encode(rev_xs, rev_pos);
        for (size_t t = 0; t < out.size(); ++t) {
            const Tensor& a = out[t];
            const Tensor& b = rev_out[out.size() - 1 - t];
            for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
        }
    }

    SUBCASE("last frame influences the first output") {
        auto [xs, pos] = embed_all(frames);
        Tensor probe = xs.back();
        probe.set_requires_grad(true);
        Tape tape;
        auto fused = m.encode(xs, pos);
        backward(sum(fused[0]));
        double gnorm = 0;
        for (float g : probe.grad()) gnorm += std::abs(g);
        CHECK(gnorm > 1e-6);
    }

    SUBCASE("forward stream is causal") {
        TrackModel uni = m;
        uni.cfg.bidirectional = false;
        auto [xs, pos] = embed_all(frames);
        Tensor probe = xs.back();
        probe.set_requires_grad(true);
        Tape tape;
        auto fused = uni.encode(xs, pos);
        backward(add(sum(fused[0]), sum(fused[1])));
        for (float g : probe.grad()) CHECK(g == 0.0f);
    }

    SUBCASE("sequences shorter than 2 are rejected") {
        auto [xs, pos] = embed_all({frames[0]});
        CHECK_THROWS_AS(m.encode(xs, pos), std::invalid_argument);
    }

    SUBCASE("the same parameters accept any sequence length") {
        for (size_t t_len : {2, 5}) {
            std::vector<Tensor> fs;
            for (size_t t = 0; t < t_len; ++t)
                fs.push_back(random_tensor({16, 16}, rng, 0.0f, 1.0f));
            auto out = m.forward(fs, nullptr);
            CHECK(out.step_fwd.size() == t_len - 1);
            CHECK(out.latent_gp.shape() ==
                  Shape{int64_t(t_len), m.cfg.patches(), m.cfg.channels});
        }
    }
}

TEST_CASE("decode_velocity") {
    Rng rng(107);
    TrackModel m(tiny_config(16, 8, 8), rng);

    SUBCASE("zero latent and zero heads give the identity motion") {
        auto d = m.decode_velocity(Tensor::zeros({4, 8}), nullptr);
        for (int64_t i = 0; i < d.mu.numel(); ++i) CHECK(d.mu[i] == 0.0f);
        Tensor u = integrate_velocity(d.vel, 7);
        for (int64_t i = 0; i < u.numel(); ++i) CHECK(u[i] == 0.0f);
    }

    SUBCASE("clamped log-variance pins samples to the mean") {
        for (auto& v : m.dec_lv_b.mutable_data()) v = -100.0f;  // clamps at -logvar_bound
        Rng sampler(1);
        Tensor z = random_tensor({4, 8}, rng);
        auto d = m.decode_velocity(z, &sampler);
        CHECK(d.logvar[0] == doctest::Approx(-10.0f));
        double rms = 0;
        for (int64_t i = 0; i < d.vel.numel(); ++i) {
            double dd = double(d.vel[i]) - d.mu[i];
            rms += dd * dd;
        }
        rms = std::sqrt(rms / double(d.vel.numel()));
        CHECK(rms < 1e-2);
    }

    SUBCASE("reparameterized samples are centered on the mean") {
        Rng sampler(2);
        Tensor z = random_tensor({4, 8}, rng);
        auto ref = m.decode_velocity(z, nullptr);
        int64_t idx = 37;  // arbitrary probe element
        double acc = 0;
        int draws = 10000;
        double sigma = 0;
        for (int i = 0; i < draws; ++i) {
            auto d = m.decode_velocity(z, &sampler);
            acc += d.vel[idx] - ref.mu[idx];
            sigma = std::exp(0.5 * d.logvar[idx]);
        }
        double se = sigma / std::sqrt(double(draws));
        CHECK(std::abs(acc / draws) < 3.0 * se + 1e-9);
    }

    SUBCASE("pathwise gradient of a sample w.r.t. the mean is one") {
        Rng sampler(3);
        Tensor mu = random_tensor({5}, rng);
        Tensor lv = random_tensor({5}, rng, -1.0f, 1.0f);
        mu.set_requires_grad(true);
        Tape tape;
        Tensor eps = Tensor::randn({5}, sampler);
        Tensor smp = add(mu, mul(motrack::exp(mul_scalar(lv, 0.5f)), eps));
        backward(sum(smp));
        for (float g : mu.grad()) CHECK(g == 1.0f);
    }
}

TEST_SUITE_END();
