#pragma once

// Adam optimizer with bias correction, plus global-norm gradient clipping.

#include <cmath>
#include <vector>

#include "motrack/tensor.hpp"

namespace motrack {

struct AdamState {
    float lr = 5e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.99f;
    float eps = 1e-8f;
    int64_t step_count = 0;
    std::vector<std::vector<float>> m, v;  // per-parameter moment buffers

    static AdamState init(const std::vector<Tensor>& params, float lr = 5e-4f) {
        AdamState s;
        s.lr = lr;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& p : params) {
            s.m.emplace_back(p.numel(), 0.0f);
            s.v.emplace_back(p.numel(), 0.0f);
        }
        return s;
    }
};

// One Adam update over all parameters; parameters with no accumulated
// gradient are treated as having zero gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (params.size() != state.m.size())
        fail("adam_step: state tracks " + std::to_string(state.m.size()) + " params, got " +
             std::to_string(params.size()));
    state.step_count += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        if (static_cast<int64_t>(state.m[pi].size()) != p.numel())
            fail("adam_step: moment buffer size mismatch for parameter " + std::to_string(pi));
        auto& data = p.mutable_data();
        const auto& g = p.grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (size_t i = 0; i < data.size(); ++i) {
            float gi = g.empty() ? 0.0f : g[i];
            m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * gi * gi;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            data[i] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

// Scales gradients so the global L2 norm does not exceed max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (float g : p.grad()) sq += static_cast<double>(g) * g;
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        float scale = static_cast<float>(max_norm / norm);
        for (auto& p : params)
            for (auto& gv : p.mutable_grad()) gv *= scale;
    }
    return norm;
}

}  // namespace motrack
