#pragma once

// Matern-3/2 Gaussian-process prior on latent sequences, in two equivalent
// realizations:
//   * dense_gp_posterior: O(T^3) GP regression via Cholesky (the oracle)
//   * kalman_filter / filter_latent: the O(T) state-space filter
//
// The state is z(t) = (value, derivative) with
//   A = [[0, 1], [-3/l^2, -2*sqrt(3)/l]],   b = (0, 1)^T
// and stationary initialization Sigma0 = diag(sigma^2/2, 3*sigma^2/l^2).
// The one-step process noise uses the steady-state form
// Q = Sigma0 - Phi Sigma0 Phi^T, which keeps the filter consistent with the
// marginal covariance it assumes. With this initialization the value
// component is a Matern-3/2 process of magnitude sigma^2/2, so the dense
// oracle builds its Gram matrix with that effective magnitude.
//
// Observations enter through the value component, f_t = z(t) + eps; a flag
// switches to observing the derivative instead.

#include <array>
#include <cmath>
#include <vector>

#include "motrack/tensor.hpp"

namespace motrack {

struct MaternHyper {
    double sigma = 1.0;      // kernel magnitude (> 0)
    double ell = 1.0;        // length scale (> 0)
    double noise_var = 0.1;  // observation noise variance (>= 0)

    void validate() const {
        if (!(sigma > 0) || !(ell > 0) || !(noise_var >= 0))
            fail("MaternHyper: require sigma > 0, ell > 0, noise_var >= 0");
    }
};

inline constexpr double kInnovationJitter = 1e-8;

// Matern kernel at nu = 3/2: sigma * (1 + sqrt(3) d / l) * exp(-sqrt(3) d / l)
inline double matern_kernel(double d, const MaternHyper& hp) {
    hp.validate();
    if (d < 0) fail("matern_kernel: distance must be nonnegative, got " + std::to_string(d));
    double s = std::sqrt(3.0) * d / hp.ell;
    return hp.sigma * (1.0 + s) * std::exp(-s);
}

struct TransitionSystem {
    std::array<double, 4> a;  // row-major 2x2
    std::array<double, 2> b;
};

inline TransitionSystem transition_matrix(const MaternHyper& hp) {
    hp.validate();
    double l = hp.ell;
    return {{0.0, 1.0, -3.0 / (l * l), -2.0 * std::sqrt(3.0) / l}, {0.0, 1.0}};
}

// exp(M) for a 2x2 matrix by plain Taylor summation; test oracle and
// fallback reference for the closed form below.
inline std::array<double, 4> expm2x2_taylor(const std::array<double, 4>& m, int terms = 50) {
    std::array<double, 4> acc = {1, 0, 0, 1};
    std::array<double, 4> pw = {1, 0, 0, 1};
    for (int k = 1; k <= terms; ++k) {
        std::array<double, 4> nx = {
            pw[0] * m[0] + pw[1] * m[2], pw[0] * m[1] + pw[1] * m[3],
            pw[2] * m[0] + pw[3] * m[2], pw[2] * m[1] + pw[3] * m[3]};
        for (int i = 0; i < 4; ++i) pw[i] = nx[i] / k;
        for (int i = 0; i < 4; ++i) acc[i] += pw[i];
    }
    return acc;
}

struct TransitionPair {
    std::array<double, 4> phi;  // exp(delta * A)
    std::array<double, 4> q;    // Sigma0 - Phi Sigma0 Phi^T
};

namespace detail {

// exp(delta*A) in closed form: A = -lam*I + N with N nilpotent, so
// exp(delta*A) = e^{-lam*delta} (I + delta*N).
inline std::array<double, 4> phi_closed(double lam, double delta) {
    double e = std::exp(-lam * delta);
    return {e * (1.0 + lam * delta), e * delta, -e * lam * lam * delta, e * (1.0 - lam * delta)};
}

}  // namespace detail

inline TransitionPair discretize(double delta, const MaternHyper& hp) {
    hp.validate();
    if (delta < 0) fail("discretize: delta must be nonnegative");
    double lam = std::sqrt(3.0) / hp.ell;
    auto phi = detail::phi_closed(lam, delta);
    double a = hp.sigma * hp.sigma / 2.0;
    double b = 3.0 * hp.sigma * hp.sigma / (hp.ell * hp.ell);
    // Q = Sigma0 - Phi diag(a,b) Phi^T
    std::array<double, 4> q = {
        a - (phi[0] * phi[0] * a + phi[1] * phi[1] * b),
        -(phi[0] * phi[2] * a + phi[1] * phi[3] * b),
        -(phi[0] * phi[2] * a + phi[1] * phi[3] * b),
        b - (phi[2] * phi[2] * a + phi[3] * phi[3] * b)};
    return {phi, q};
}

template <class Real>
struct GPState {
    std::array<Real, 2> mean{};  // (value, derivative)
    std::array<Real, 3> cov{};   // symmetric, stored (00, 01, 11)
};

template <class Real>
struct KalmanStep {
    GPState<Real> predicted, filtered;
    std::array<Real, 2> gain{};
};

// O(T) Kalman filtering of a scalar observation series. deltas[i] is the
// gap between observation i and i+1 (so T-1 entries); the first
// observation updates the stationary prior N(0, Sigma0) directly.
template <class Real>
std::vector<KalmanStep<Real>> kalman_filter(const std::vector<Real>& obs,
                                            const std::vector<Real>& deltas,
                                            const MaternHyper& hp,
                                            bool observe_derivative = false) {
    hp.validate();
    size_t t_len = obs.size();
    if (t_len == 0) fail("kalman_filter: need at least one observation");
    if (deltas.size() + 1 != t_len)
        fail("kalman_filter: expected " + std::to_string(t_len - 1) + " gaps, got " +
             std::to_string(deltas.size()));
    double lam = std::sqrt(3.0) / hp.ell;
    double a = hp.sigma * hp.sigma / 2.0;
    double b = 3.0 * hp.sigma * hp.sigma / (hp.ell * hp.ell);
    double ne = hp.noise_var + kInnovationJitter;

    std::vector<KalmanStep<Real>> steps(t_len);
    double m0 = 0, m1 = 0;          // running filtered mean
    double s00 = a, s01 = 0, s11 = b;  // running filtered covariance
    for (size_t t = 0; t < t_len; ++t) {
        double p0 = m0, p1 = m1, b00, b01, b11;
        if (t == 0) {
            b00 = a;
            b01 = 0;
            b11 = b;
        } else {
            auto phi = detail::phi_closed(lam, static_cast<double>(deltas[t - 1]));
            p0 = phi[0] * m0 + phi[1] * m1;
            p1 = phi[2] * m0 + phi[3] * m1;
            double d00 = s00 - a, d01 = s01, d11 = s11 - b;
            b00 = a + phi[0] * phi[0] * d00 + 2 * phi[0] * phi[1] * d01 + phi[1] * phi[1] * d11;
            b01 = phi[0] * phi[2] * d00 + (phi[0] * phi[3] + phi[1] * phi[2]) * d01 +
                  phi[1] * phi[3] * d11;
            b11 = b + phi[2] * phi[2] * d00 + 2 * phi[2] * phi[3] * d01 + phi[3] * phi[3] * d11;
        }
        auto& st = steps[t];
        st.predicted.mean = {Real(p0), Real(p1)};
        st.predicted.cov = {Real(b00), Real(b01), Real(b11)};

        // observation row: h^T Sbar and the observed mean component
        double r0 = observe_derivative ? b01 : b00;
        double r1 = observe_derivative ? b11 : b01;
        double mo = observe_derivative ? p1 : p0;
        double den = (observe_derivative ? b11 : b00) + ne;
        double k0 = r0 / den, k1 = r1 / den;
        double innov = static_cast<double>(obs[t]) - mo;
        m0 = p0 + k0 * innov;
        m1 = p1 + k1 * innov;
        s00 = b00 - k0 * r0;
        s01 = b01 - k0 * r1;
        s11 = b11 - k1 * r1;
        st.filtered.mean = {Real(m0), Real(m1)};
        st.filtered.cov = {Real(s00), Real(s01), Real(s11)};
        st.gain = {Real(k0), Real(k1)};
    }
    return steps;
}

// Dense GP regression oracle (float64). Returns, for each t, the posterior
// mean and variance of the value component given observations 1..t -- the
// filtering posterior the Kalman recursion computes in O(T). The Gram
// matrix uses the effective magnitude sigma^2/2 of the state-space value
// component (see the header comment).
struct DenseGPResult {
    std::vector<double> mean, var;
};

inline DenseGPResult dense_gp_posterior(const std::vector<double>& obs,
                                        const std::vector<double>& positions,
                                        const MaternHyper& hp) {
    hp.validate();
    size_t t_len = obs.size();
    if (t_len == 0 || positions.size() != t_len)
        fail("dense_gp_posterior: observations and positions must have equal nonzero length");
    if (t_len > 64) fail("dense_gp_posterior: oracle limited to T <= 64");
    MaternHyper eff = hp;
    eff.sigma = hp.sigma * hp.sigma / 2.0;  // state-space value-component magnitude
    double ne = hp.noise_var + kInnovationJitter;

    std::vector<double> gram(t_len * t_len);
    for (size_t i = 0; i < t_len; ++i)
        for (size_t j = 0; j < t_len; ++j)
            gram[i * t_len + j] = matern_kernel(std::abs(positions[i] - positions[j]), eff);

    DenseGPResult out;
    out.mean.resize(t_len);
    out.var.resize(t_len);
    std::vector<double> chol, rhs, kstar, tmp;
    for (size_t t = 0; t < t_len; ++t) {
        size_t n = t + 1;
        chol.assign(n * n, 0.0);
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j <= i; ++j) {
                double sum = gram[i * t_len + j] + (i == j ? ne : 0.0);
                for (size_t k = 0; k < j; ++k) sum -= chol[i * n + k] * chol[j * n + k];
                if (i == j) {
                    if (sum <= 0)
                        fail("dense_gp_posterior: Gram matrix not positive definite at t=" +
                             std::to_string(t));
                    chol[i * n + i] = std::sqrt(sum);
                } else {
                    chol[i * n + j] = sum / chol[j * n + j];
                }
            }
        }
        auto solve_lower = [&](std::vector<double>& x) {
            for (size_t i = 0; i < n; ++i) {
                double s = x[i];
                for (size_t k = 0; k < i; ++k) s -= chol[i * n + k] * x[k];
                x[i] = s / chol[i * n + i];
            }
        };
        auto solve_upper = [&](std::vector<double>& x) {
            for (size_t i = n; i-- > 0;) {
                double s = x[i];
                for (size_t k = i + 1; k < n; ++k) s -= chol[k * n + i] * x[k];
                x[i] = s / chol[i * n + i];
            }
        };
        rhs.assign(obs.begin(), obs.begin() + n);
        solve_lower(rhs);
        solve_upper(rhs);
        kstar.resize(n);
        for (size_t i = 0; i < n; ++i) kstar[i] = gram[t * t_len + i];
        double mean = 0;
        for (size_t i = 0; i < n; ++i) mean += kstar[i] * rhs[i];
        tmp = kstar;
        solve_lower(tmp);
        solve_upper(tmp);
        double red = 0;
        for (size_t i = 0; i < n; ++i) red += kstar[i] * tmp[i];
        out.mean[t] = mean;
        out.var[t] = gram[t * t_len + t] - red;
    }
    return out;
}

// Compares the two inference paths on random draws; returns the maximum
// relative error between filtered means. Used by the `gp-check` command
// and the acceptance suite.
struct GPCheckResult {
    double max_rel_err = 0.0;
    double max_cov_eig_violation = 0.0;  // most negative posterior-cov eigenvalue seen
    int draws = 0;
};

inline GPCheckResult gp_equivalence_check(int draws, int max_t, uint64_t seed) {
    Rng rng(seed);
    GPCheckResult res;
    res.draws = draws;
    for (int d = 0; d < draws; ++d) {
        int t_len = static_cast<int>(rng.integer(1, max_t + 1));
        MaternHyper hp;
        hp.sigma = rng.uniform(0.5, 2.0);
        hp.ell = rng.uniform(0.5, 4.0);
        hp.noise_var = rng.uniform(1e-3, 1.0);
        std::vector<double> obs(t_len), deltas(std::max(t_len - 1, 0)), pos(t_len);
        for (auto& o : obs) o = rng.normal();
        for (auto& g : deltas) g = rng.uniform(0.01, 3.0);
        pos[0] = 0;
        for (int i = 1; i < t_len; ++i) pos[i] = pos[i - 1] + deltas[i - 1];

        auto steps = kalman_filter<double>(obs, deltas, hp);
        auto dense = dense_gp_posterior(obs, pos, hp);
        for (int t = 0; t < t_len; ++t) {
            double kf = steps[t].filtered.mean[0];
            double gp = dense.mean[t];
            double rel = std::abs(kf - gp) / std::max(std::abs(gp), 1e-9);
            res.max_rel_err = std::max(res.max_rel_err, rel);
            // posterior covariance must stay (numerically) PSD
            double c00 = steps[t].filtered.cov[0], c01 = steps[t].filtered.cov[1],
                   c11 = steps[t].filtered.cov[2];
            double tr = c00 + c11, det = c00 * c11 - c01 * c01;
            double eig_min = tr / 2 - std::sqrt(std::max(tr * tr / 4 - det, 0.0));
            res.max_cov_eig_violation = std::min(res.max_cov_eig_violation, eig_min);
        }
    }
    return res;
}

// --- differentiable GP layer --------------------------------------------

// filter_latent: treats each (patch, channel) scalar series of z as a
// noisy observation sequence, runs the Kalman recursion and emits
// ReLU(k_t * z_t) with k_t the value-component gain. Differentiable with
// respect to z, the per-channel hyperparameters and the gaps.
//   z: [T, P, C], deltas: [T-1, P], sigma/ell/noise: [C]
inline Tensor filter_latent(const Tensor& z, const Tensor& deltas, const Tensor& sigma,
                            const Tensor& ell, const Tensor& noise) {
    if (z.ndim() != 3)
        fail("filter_latent: z must be [T,P,C], got " + shape_str(z.shape()));
    int64_t t_len = z.dim(0), np = z.dim(1), nc = z.dim(2);
    if (deltas.ndim() != 2 || deltas.dim(0) != t_len - 1 || deltas.dim(1) != np)
        fail("filter_latent: deltas " + shape_str(deltas.shape()) + " incompatible with z " +
             shape_str(z.shape()));
    for (const Tensor* hp : {&sigma, &ell, &noise})
        if (hp->numel() != nc)
            fail("filter_latent: hyperparameter vectors must have " + std::to_string(nc) +
                 " channels, got " + shape_str(hp->shape()));
    for (int64_t c = 0; c < nc; ++c)
        if (!(sigma[c] > 0) || !(ell[c] > 0) || !(noise[c] >= 0))
            fail("filter_latent: hyperparameters must be positive (channel " + std::to_string(c) +
                 ")");

    const int64_t series = np * nc;
    const int64_t n = t_len * series;

    // forward state saved for the adjoint pass, laid out like z
    struct Saved {
        std::vector<double> sb00, sb01, sb11, den, s00, s01, s11;
        std::vector<double> phi;  // 4 entries per (t,p,c), t >= 1
    };
    auto saved = std::make_shared<Saved>();
    saved->sb00.resize(n);
    saved->sb01.resize(n);
    saved->sb11.resize(n);
    saved->den.resize(n);
    saved->s00.resize(n);
    saved->s01.resize(n);
    saved->s11.resize(n);
    saved->phi.assign(static_cast<size_t>(4 * n), 0.0);

    auto dz = detail::dbl_of(z.node());
    auto dg = detail::dbl_of(deltas.node());
    auto dsig = detail::dbl_of(sigma.node());
    auto dell = detail::dbl_of(ell.node());
    auto dnoi = detail::dbl_of(noise.node());

    std::vector<float> out(static_cast<size_t>(n));
    std::vector<double> dout;
    if (detail::shadow_on()) dout.resize(static_cast<size_t>(n));

    for (int64_t c = 0; c < nc; ++c) {
        double sg = dsig[static_cast<size_t>(c)];
        double el = dell[static_cast<size_t>(c)];
        double lam = std::sqrt(3.0) / el;
        double a = sg * sg / 2.0;
        double b = 3.0 * sg * sg / (el * el);
        double ne = dnoi[static_cast<size_t>(c)] + kInnovationJitter;
        for (int64_t p = 0; p < np; ++p) {
            double s00 = a, s01 = 0.0, s11 = b;
            for (int64_t t = 0; t < t_len; ++t) {
                int64_t at = (t * np + p) * nc + c;
                double b00, b01, b11;
                if (t == 0) {
                    b00 = a;
                    b01 = 0.0;
                    b11 = b;
                } else {
                    double delta = dg[static_cast<size_t>((t - 1) * np + p)];
                    auto phi = detail::phi_closed(lam, delta);
                    for (int k = 0; k < 4; ++k)
                        saved->phi[static_cast<size_t>(4 * at + k)] = phi[k];
                    double d00 = s00 - a, d01 = s01, d11 = s11 - b;
                    b00 = a + phi[0] * phi[0] * d00 + 2 * phi[0] * phi[1] * d01 +
                          phi[1] * phi[1] * d11;
                    b01 = phi[0] * phi[2] * d00 + (phi[0] * phi[3] + phi[1] * phi[2]) * d01 +
                          phi[1] * phi[3] * d11;
                    b11 = b + phi[2] * phi[2] * d00 + 2 * phi[2] * phi[3] * d01 +
                          phi[3] * phi[3] * d11;
                }
                double den = b00 + ne;
                double kv = b00 / den, kd = b01 / den;
                s00 = b00 - kv * b00;
                s01 = b01 - kv * b01;
                s11 = b11 - kd * b01;
                saved->sb00[static_cast<size_t>(at)] = b00;
                saved->sb01[static_cast<size_t>(at)] = b01;
                saved->sb11[static_cast<size_t>(at)] = b11;
                saved->den[static_cast<size_t>(at)] = den;
                saved->s00[static_cast<size_t>(at)] = s00;
                saved->s01[static_cast<size_t>(at)] = s01;
                saved->s11[static_cast<size_t>(at)] = s11;
                double u = kv * dz[static_cast<size_t>(at)];
                out[static_cast<size_t>(at)] = static_cast<float>(u > 0 ? u : 0.0);
                if (!dout.empty()) dout[static_cast<size_t>(at)] = u > 0 ? u : 0.0;
            }
        }
    }

    Tensor r =
        detail::make_result("filter_latent", z.shape(), std::move(out), {&z, &deltas, &sigma,
                                                                         &ell, &noise});
    if (!dout.empty()) r.node()->ddata = std::move(dout);
    detail::record(r, [zn = z.node(), gn = deltas.node(), sn = sigma.node(), en = ell.node(),
                       nn = noise.node(), rn = r.node(), saved, t_len, np, nc]() {
        const bool need_z = zn->requires_grad;
        const bool need_g = gn->requires_grad;
        const bool need_s = sn->requires_grad;
        const bool need_e = en->requires_grad;
        const bool need_n = nn->requires_grad;
        if (need_z) zn->ensure_grad();
        if (need_g) gn->ensure_grad();
        if (need_s) sn->ensure_grad();
        if (need_e) en->ensure_grad();
        if (need_n) nn->ensure_grad();
        const float* zd = zn->data.data();
        const float* gd = gn->data.data();
        const float* g = rn->grad.data();
        for (int64_t c = 0; c < nc; ++c) {
            double sg = sn->data[static_cast<size_t>(c)];
            double el = en->data[static_cast<size_t>(c)];
            double lam = std::sqrt(3.0) / el;
            double a_hat = 0, b_hat = 0, lam_hat = 0, ne_hat = 0;
            for (int64_t p = 0; p < np; ++p) {
                double h00 = 0, h01 = 0, h11 = 0;  // adjoint of filtered cov S_t
                for (int64_t t = t_len; t-- > 0;) {
                    int64_t at = (t * np + p) * nc + c;
                    double b00 = saved->sb00[static_cast<size_t>(at)];
                    double b01 = saved->sb01[static_cast<size_t>(at)];
                    double b11 = saved->sb11[static_cast<size_t>(at)];
                    double den = saved->den[static_cast<size_t>(at)];
                    double kv = b00 / den, kd = b01 / den;
                    // output u = relu(kv * z)
                    double zt = zd[static_cast<size_t>(at)];
                    double gout = g[static_cast<size_t>(at)];
                    double gu = (kv * zt > 0) ? gout : 0.0;
                    double kv_hat = gu * zt;
                    if (need_z)
                        zn->grad[static_cast<size_t>(at)] += static_cast<float>(gu * kv);
                    // update-step adjoint
                    double kd_hat = -h11 * b01;
                    double sb11_hat = h11;
                    double sb01_hat = -h11 * kd + h01 * (1.0 - kv);
                    kv_hat += -h01 * b01 - h00 * b00;
                    double sb00_hat = h00 * (1.0 - kv);
                    sb00_hat += kv_hat / den;
                    sb01_hat += kd_hat / den;
                    double den_hat = -(kv_hat * b00 + kd_hat * b01) / (den * den);
                    sb00_hat += den_hat;
                    ne_hat += den_hat;
                    if (t == 0) {
                        a_hat += sb00_hat;
                        b_hat += sb11_hat;
                        h00 = h01 = h11 = 0;
                    } else {
                        a_hat += sb00_hat;
                        b_hat += sb11_hat;
                        const double* phi = saved->phi.data() + 4 * at;
                        int64_t prev = ((t - 1) * np + p) * nc + c;
                        double sp00 = saved->s00[static_cast<size_t>(prev)];
                        double sp01 = saved->s01[static_cast<size_t>(prev)];
                        double sp11 = saved->s11[static_cast<size_t>(prev)];
                        double sga = sn->data[static_cast<size_t>(c)];
                        double ela = en->data[static_cast<size_t>(c)];
                        double a0 = sga * sga / 2.0;
                        double b0 = 3.0 * sga * sga / (ela * ela);
                        double d00 = sp00 - a0, d01 = sp01, d11 = sp11 - b0;
                        double m00h = sb00_hat, m01h = sb01_hat, m11h = sb11_hat;
                        double d00h = m00h * phi[0] * phi[0] + m01h * phi[0] * phi[2] +
                                      m11h * phi[2] * phi[2];
                        double d01h = 2 * m00h * phi[0] * phi[1] +
                                      m01h * (phi[0] * phi[3] + phi[1] * phi[2]) +
                                      2 * m11h * phi[2] * phi[3];
                        double d11h = m00h * phi[1] * phi[1] + m01h * phi[1] * phi[3] +
                                      m11h * phi[3] * phi[3];
                        double p00h = m00h * (2 * phi[0] * d00 + 2 * phi[1] * d01) +
                                      m01h * (phi[2] * d00 + phi[3] * d01);
                        double p01h = m00h * (2 * phi[0] * d01 + 2 * phi[1] * d11) +
                                      m01h * (phi[2] * d01 + phi[3] * d11);
                        double p10h = m01h * (phi[0] * d00 + phi[1] * d01) +
                                      m11h * (2 * phi[2] * d00 + 2 * phi[3] * d01);
                        double p11h = m01h * (phi[0] * d01 + phi[1] * d11) +
                                      m11h * (2 * phi[2] * d01 + 2 * phi[3] * d11);
                        double delta = gd[static_cast<size_t>((t - 1) * np + p)];
                        // dPhi/ddelta = A Phi
                        double lam2 = lam * lam;
                        double ddelta = p00h * phi[2] + p01h * phi[3] +
                                        p10h * (-lam2 * phi[0] - 2 * lam * phi[2]) +
                                        p11h * (-lam2 * phi[1] - 2 * lam * phi[3]);
                        if (need_g)
                            gn->grad[static_cast<size_t>((t - 1) * np + p)] +=
                                static_cast<float>(ddelta);
                        // dPhi/dlam at fixed delta
                        double e = std::exp(-lam * delta);
                        lam_hat += p00h * (-e * lam * delta * delta) +
                                   p01h * (-e * delta * delta) +
                                   p10h * (e * lam * delta * (lam * delta - 2.0)) +
                                   p11h * (-e * delta * (2.0 - lam * delta));
                        a_hat -= d00h;
                        b_hat -= d11h;
                        h00 = d00h;
                        h01 = d01h;
                        h11 = d11h;
                    }
                }
            }
            // map (a, b, lam, ne) adjoints onto the channel hyperparameters
            if (need_s)
                sn->grad[static_cast<size_t>(c)] +=
                    static_cast<float>(a_hat * sg + b_hat * 6.0 * sg / (el * el));
            if (need_e)
                en->grad[static_cast<size_t>(c)] += static_cast<float>(
                    b_hat * (-6.0 * sg * sg / (el * el * el)) +
                    lam_hat * (-std::sqrt(3.0) / (el * el)));
            if (need_n) nn->grad[static_cast<size_t>(c)] += static_cast<float>(ne_hat);
        }
    });
    return r;
}

}  // namespace motrack
