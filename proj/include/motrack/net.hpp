#pragma once

// The sequence encoder/decoder network.
//
// Per frame: non-overlapping patch embedding -> [P, C]. A recursive cell
// mixes the frame with a hidden state via linear attention:
//   x  = LN(x_t + pos_t) (+) LN(h_{t-1} + pos_t)            in R^{P x 2C}
//   A  = (elu(x Wq) + 1) ((elu(x Wk) + 1)^T (x Wv))         cost O(P C^2)
//   h_t = A + LN(h_{t-1} + pos_t)
//   f_t = FFN(LN(A + LN(x_t + pos_t)))
// Two independent cells per layer run forward and backward in time; their
// features fuse by addition. A GP layer (gp.hpp) filters the fused latents,
// and per-patch affine heads decode mean / log-variance velocity fields,
// with a fixed 3x3 smoothing kernel on the mean.
//
// The decoded velocity at index t parameterizes the forward transition
// t -> t+1; the backward transition t+1 -> t integrates the negated
// velocity decoded at index t+1.

#include <string>
#include <utility>
#include <vector>

#include "motrack/gp.hpp"
#include "motrack/ops.hpp"
#include "motrack/warp.hpp"

namespace motrack {

struct ModelConfig {
    int64_t height = 64, width = 64;
    int64_t patch = 8;
    int64_t channels = 32;
    int64_t layers = 2;
    float pos_scale = 10000.0f;  // temporal encoding base
    bool bidirectional = true;
    bool use_gp = true;
    bool gp_constant_delta = false;  // unit gaps instead of encoding distances
    int integrate_steps = 7;
    float logvar_bound = 10.0f;

    int64_t patches() const { return (height / patch) * (width / patch); }

    void validate() const {
        if (patch <= 0 || height % patch != 0 || width % patch != 0)
            fail("ModelConfig: patch " + std::to_string(patch) + " must divide " +
                 std::to_string(height) + "x" + std::to_string(width));
        if (channels % 2 != 0) fail("ModelConfig: channels must be even");
        if (layers < 1) fail("ModelConfig: need at least one layer");
    }
};

struct CellParams {
    Tensor ln_x_g, ln_x_b;  // normalizes x_t + pos
    Tensor ln_h_g, ln_h_b;  // normalizes h_{t-1} + pos
    Tensor wq, wk, wv;      // [2C, C]
    Tensor ln_f_g, ln_f_b;  // normalizes A + LN(x_t + pos)
    Tensor ffn_w1, ffn_b1;  // [C, 2C], [2C]
    Tensor ffn_w2, ffn_b2;  // [2C, C], [C]
};

class TrackModel {
public:
    ModelConfig cfg;
    Tensor embed_w, embed_b;  // [p*p, C], [C]
    Tensor pos_spatial;       // [P, C], learnable, shared across layers
    std::vector<CellParams> fwd_cells, bwd_cells;
    Tensor dec_mu_w, dec_mu_b;  // [C, 2*p*p], [2*p*p]
    Tensor dec_lv_w, dec_lv_b;
    Tensor gp_sigma_raw, gp_ell_raw, gp_noise_raw;  // [C], softplus-mapped

    TrackModel() = default;

    TrackModel(const ModelConfig& config, Rng& rng) : cfg(config) {
        cfg.validate();
        int64_t c = cfg.channels, pp = cfg.patch * cfg.patch, np = cfg.patches();
        embed_w = Tensor::randn({pp, c}, rng, 1.0f / std::sqrt(float(pp)));
        embed_b = Tensor::zeros({c});
        pos_spatial = Tensor::randn({np, c}, rng, 0.02f, 1.0f);
        for (int64_t l = 0; l < cfg.layers; ++l) {
            fwd_cells.push_back(make_cell(rng));
            bwd_cells.push_back(make_cell(rng));
        }
        // zero-initialized heads: the untrained model emits identity motion
        dec_mu_w = Tensor::zeros({c, 2 * pp});
        dec_mu_b = Tensor::zeros({2 * pp});
        dec_lv_w = Tensor::zeros({c, 2 * pp});
        dec_lv_b = Tensor::zeros({2 * pp});
        float s1 = float(inv_softplus_d(1.0));
        gp_sigma_raw = Tensor::filled({c}, s1);
        gp_ell_raw = Tensor::filled({c}, s1);
        gp_noise_raw = Tensor::filled({c}, float(inv_softplus_d(0.1)));
        for (auto& [name, p] : named_params()) {
            (void)name;
            p.set_requires_grad(true);
        }
    }

    std::vector<std::pair<std::string, Tensor>> named_params() {
        std::vector<std::pair<std::string, Tensor>> out = {
            {"embed.w", embed_w},       {"embed.b", embed_b},
            {"pos.spatial", pos_spatial}, {"dec.mu.w", dec_mu_w},
            {"dec.mu.b", dec_mu_b},     {"dec.lv.w", dec_lv_w},
            {"dec.lv.b", dec_lv_b},     {"gp.sigma_raw", gp_sigma_raw},
            {"gp.ell_raw", gp_ell_raw}, {"gp.noise_raw", gp_noise_raw}};
        auto add_cell = [&](const std::string& prefix, CellParams& cp) {
            out.emplace_back(prefix + ".ln_x.g", cp.ln_x_g);
            out.emplace_back(prefix + ".ln_x.b", cp.ln_x_b);
            out.emplace_back(prefix + ".ln_h.g", cp.ln_h_g);
            out.emplace_back(prefix + ".ln_h.b", cp.ln_h_b);
            out.emplace_back(prefix + ".wq", cp.wq);
            out.emplace_back(prefix + ".wk", cp.wk);
            out.emplace_back(prefix + ".wv", cp.wv);
            out.emplace_back(prefix + ".ln_f.g", cp.ln_f_g);
            out.emplace_back(prefix + ".ln_f.b", cp.ln_f_b);
            out.emplace_back(prefix + ".ffn.w1", cp.ffn_w1);
            out.emplace_back(prefix + ".ffn.b1", cp.ffn_b1);
            out.emplace_back(prefix + ".ffn.w2", cp.ffn_w2);
            out.emplace_back(prefix + ".ffn.b2", cp.ffn_b2);
        };
        for (size_t l = 0; l < fwd_cells.size(); ++l) {
            add_cell("layer" + std::to_string(l) + ".fwd", fwd_cells[l]);
            add_cell("layer" + std::to_string(l) + ".bwd", bwd_cells[l]);
        }
        return out;
    }

    std::vector<Tensor> params() {
        std::vector<Tensor> out;
        for (auto& [name, p] : named_params()) {
            (void)name;
            out.push_back(p);
        }
        return out;
    }

    // --- building blocks --------------------------------------------------

    // [H, W] frame -> [P, C] patch features
    Tensor patch_embed(const Tensor& frame) const {
        if (frame.ndim() != 2 || frame.dim(0) != cfg.height || frame.dim(1) != cfg.width)
            fail("patch_embed: frame " + shape_str(frame.shape()) + " does not match configured " +
                 std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
        return add(matmul(im2patches(frame, cfg.patch), embed_w), embed_b);
    }

    // deterministic temporal encoding row; depends only on (t, channel)
    static std::vector<float> temporal_encoding(int64_t t, int64_t channels, float n_scale) {
        std::vector<float> row(static_cast<size_t>(channels));
        for (int64_t i = 0; i < channels; ++i) {
            int64_t k = i / 2;
            double freq = std::pow(double(n_scale), -2.0 * double(k) / double(channels));
            row[static_cast<size_t>(i)] = static_cast<float>(
                i % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq));
        }
        return row;
    }

    // pos_t = spatial table (elementwise) temporal table, shape [P, C]
    Tensor positional_encoding(int64_t t) const {
        if (cfg.channels % 2 != 0) fail("positional_encoding: channel count must be even");
        Tensor temporal =
            Tensor::from_data({cfg.channels}, temporal_encoding(t, cfg.channels, cfg.pos_scale));
        return mul(pos_spatial, temporal);
    }

    // attention weight A_t given the two normalized streams, [P, 2C] -> [P, C]
    Tensor attention_weight(const CellParams& cp, const Tensor& x2c) const {
        Tensor q = add_scalar(elu(matmul(x2c, cp.wq)), 1.0f);
        Tensor k = add_scalar(elu(matmul(x2c, cp.wk)), 1.0f);
        Tensor v = matmul(x2c, cp.wv);
        return matmul(q, matmul(transpose(k), v));  // the O(P C^2) association
    }

    Tensor linear_attention(const CellParams& cp, const Tensor& x_t, const Tensor& h_prev,
                            const Tensor& pos_t) const {
        Tensor a = layer_norm(add(x_t, pos_t), cp.ln_x_g, cp.ln_x_b);
        Tensor b = layer_norm(add(h_prev, pos_t), cp.ln_h_g, cp.ln_h_b);
        return attention_weight(cp, concat_last(a, b));
    }

    // one recursive step: returns (f_t, h_t)
    std::pair<Tensor, Tensor> cell_step(const CellParams& cp, const Tensor& x_t,
                                        const Tensor& h_prev, const Tensor& pos_t) const {
        Tensor a = layer_norm(add(x_t, pos_t), cp.ln_x_g, cp.ln_x_b);
        Tensor b = layer_norm(add(h_prev, pos_t), cp.ln_h_g, cp.ln_h_b);
        Tensor att = attention_weight(cp, concat_last(a, b));
        Tensor h_next = add(att, b);
        Tensor y = layer_norm(add(att, a), cp.ln_f_g, cp.ln_f_b);
        Tensor f = add(matmul(elu(add(matmul(y, cp.ffn_w1), cp.ffn_b1)), cp.ffn_w2), cp.ffn_b2);
        return {f, h_next};
    }

    // L stacked bidirectional layers over embedded frames; fusion by sum.
    // Hidden states start at zero in both directions.
    std::vector<Tensor> encode(const std::vector<Tensor>& xs,
                               const std::vector<Tensor>& pos) const {
        size_t t_len = xs.size();
        if (t_len < 2) fail("encode: need a sequence of at least 2 frames");
        if (pos.size() != t_len) fail("encode: positional encodings must match sequence length");
        std::vector<Tensor> seq = xs;
        for (int64_t l = 0; l < cfg.layers; ++l) {
            std::vector<Tensor> fwd(t_len);
            Tensor h = Tensor::zeros({cfg.patches(), cfg.channels});
            for (size_t t = 0; t < t_len; ++t) {
                auto [f, hn] = cell_step(fwd_cells[size_t(l)], seq[t], h, pos[t]);
                fwd[t] = f;
                h = hn;
            }
            if (!cfg.bidirectional) {
                seq = std::move(fwd);
                continue;
            }
            std::vector<Tensor> fused(t_len);
            h = Tensor::zeros({cfg.patches(), cfg.channels});
            for (size_t t = t_len; t-- > 0;) {
                auto [f, hn] = cell_step(bwd_cells[size_t(l)], seq[t], h, pos[t]);
                fused[t] = add(fwd[t], f);
                h = hn;
            }
            seq = std::move(fused);
        }
        return seq;
    }

    // per-patch encoding distances between consecutive frames, [T-1, P]
    Tensor encoding_gaps(const std::vector<Tensor>& pos) const {
        std::vector<Tensor> rows;
        for (size_t t = 0; t + 1 < pos.size(); ++t) {
            Tensor d = sub(pos[t + 1], pos[t]);
            Tensor s = sum_last(mul(d, d));  // [P]
            rows.push_back(motrack::sqrt(add_scalar(mul_scalar(s, 1.0f / cfg.channels), 1e-12f)));
        }
        return stack0(rows);
    }

    struct Decoded {
        Tensor mu, logvar, vel;  // vel == mu when no sampler is given
    };

    // z_t: [P, C] -> velocity field distribution [2, H, W]
    Decoded decode_velocity(const Tensor& z_t, Rng* sampler) const {
        Decoded d;
        Tensor mu_patches = add(matmul(z_t, dec_mu_w), dec_mu_b);
        d.mu = conv3x3_fixed(patches2im(mu_patches, cfg.patch, 2, cfg.height, cfg.width),
                             binomial3x3());
        Tensor lv_patches = add(matmul(z_t, dec_lv_w), dec_lv_b);
        d.logvar = clamp(patches2im(lv_patches, cfg.patch, 2, cfg.height, cfg.width),
                         -cfg.logvar_bound, cfg.logvar_bound);
        if (sampler) {
            Tensor eps = Tensor::randn({2, cfg.height, cfg.width}, *sampler);
            d.vel = add(d.mu, mul(motrack::exp(mul_scalar(d.logvar, 0.5f)), eps));
        } else {
            d.vel = d.mu;
        }
        return d;
    }

    struct SeqOutput {
        std::vector<Decoded> per_frame;   // T entries
        std::vector<Tensor> step_fwd;     // T-1 fields, transition t -> t+1
        std::vector<Tensor> step_bwd;     // T-1 fields, transition t+1 -> t
        std::vector<Tensor> lagrangian;   // T-1 fields, frame 0 -> t+1
        Tensor latent;                    // [T, P, C] fused features
        Tensor latent_gp;                 // [T, P, C] after the GP layer
    };

    // Full pass over a frame sequence. With a sampler the decoder draws
    // reparameterized velocities (training); without it, the mean is used.
    SeqOutput forward(const std::vector<Tensor>& frames, Rng* sampler) const {
        size_t t_len = frames.size();
        if (t_len < 2) fail("forward: need at least 2 frames");
        std::vector<Tensor> xs(t_len), pos(t_len);
        for (size_t t = 0; t < t_len; ++t) {
            xs[t] = patch_embed(frames[t]);
            pos[t] = positional_encoding(static_cast<int64_t>(t));
        }
        SeqOutput out;
        out.latent = stack0(encode(xs, pos));
        if (cfg.use_gp) {
            Tensor gaps = cfg.gp_constant_delta
                              ? Tensor::ones({static_cast<int64_t>(t_len) - 1, cfg.patches()})
                              : encoding_gaps(pos);
            out.latent_gp = filter_latent(out.latent, gaps, softplus(gp_sigma_raw),
                                          softplus(gp_ell_raw), softplus(gp_noise_raw));
        } else {
            out.latent_gp = relu(out.latent);
        }
        out.per_frame.reserve(t_len);
        for (size_t t = 0; t < t_len; ++t)
            out.per_frame.push_back(decode_velocity(select0(out.latent_gp, int64_t(t)), sampler));
        for (size_t t = 0; t + 1 < t_len; ++t) {
            out.step_fwd.push_back(
                integrate_velocity(out.per_frame[t].vel, cfg.integrate_steps));
            out.step_bwd.push_back(
                integrate_velocity(neg(out.per_frame[t + 1].vel), cfg.integrate_steps));
            out.lagrangian.push_back(t == 0 ? out.step_fwd[0]
                                            : compose(out.lagrangian[t - 1], out.step_fwd[t]));
        }
        return out;
    }

private:
    CellParams make_cell(Rng& rng) {
        int64_t c = cfg.channels;
        CellParams cp;
        cp.ln_x_g = Tensor::ones({c});
        cp.ln_x_b = Tensor::zeros({c});
        cp.ln_h_g = Tensor::ones({c});
        cp.ln_h_b = Tensor::zeros({c});
        float ws = 1.0f / std::sqrt(float(2 * c));
        cp.wq = Tensor::randn({2 * c, c}, rng, ws);
        cp.wk = Tensor::randn({2 * c, c}, rng, ws);
        cp.wv = Tensor::randn({2 * c, c}, rng, ws);
        cp.ln_f_g = Tensor::ones({c});
        cp.ln_f_b = Tensor::zeros({c});
        cp.ffn_w1 = Tensor::randn({c, 2 * c}, rng, 1.0f / std::sqrt(float(c)));
        cp.ffn_b1 = Tensor::zeros({2 * c});
        cp.ffn_w2 = Tensor::randn({2 * c, c}, rng, ws);
        cp.ffn_b2 = Tensor::zeros({c});
        return cp;
    }
};

}  // namespace motrack
