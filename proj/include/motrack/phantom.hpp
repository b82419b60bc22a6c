#pragma once

// Synthetic periodic-deformation sequences with analytic ground truth.
//
// Two disjoint annular structures breathe radially around their centers:
// a material point at reference radius r0 sits at
//     R(r0, t) = r0 * (1 + s_t * bump(r0)),   s_t = A sin(2 pi t / period + phase)
// with a C1 compactly supported bump over the band [r_in, r_out]. The
// counter-phase structure uses phase = pi, so the two regions move in
// opposite radial directions at every moment where sin != 0 (both are at
// rest in the reference frame t = 0).
//
// Frames carry a band-limited sinusoid texture advected by the motion and
// evaluated in closed form at arbitrary real coordinates; masks and
// displacement fields come from the same analytic map. The radial map is
// inverted per pixel by bisection to near machine precision.

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "motrack/metrics.hpp"
#include "motrack/ndt.hpp"
#include "motrack/tensor.hpp"

namespace motrack {

struct AnnulusSpec {
    double cy = 0, cx = 0;     // center, grid cells
    double r_in = 0, r_out = 0;  // support band of the bump
    double phase = 0;
};

struct PhantomSpec {
    int64_t height = 64, width = 64;
    int64_t frames = 32;
    int64_t period = 16;
    double amplitude = 0.12;
    double noise_sigma = 0.02;
    bool counter_phase = true;
    uint64_t texture_seed = 7;
    AnnulusSpec s1, s2;  // zero r_out selects the default geometry

    void finalize() {
        double sc = std::min(height, width) / 64.0;
        if (s1.r_out == 0) s1 = {0.33 * height, 0.33 * width, 3.0 * sc, 16.0 * sc, 0.0};
        if (s2.r_out == 0)
            s2 = {0.68 * height, 0.68 * width, 3.0 * sc, 14.0 * sc, counter_phase ? 3.14159265358979323846 : 0.0};
        validate();
    }

    void validate() const {
        if (height < 16 || width < 16) fail("PhantomSpec: grid must be at least 16x16");
        if (frames < 2) fail("PhantomSpec: need at least 2 frames");
        if (period < 2) fail("PhantomSpec: period must be at least 2 frames");
        if (!(amplitude >= 0) || !(amplitude < 0.25))
            fail("PhantomSpec: amplitude must lie in [0, 0.25), got " +
                 std::to_string(amplitude));
        if (noise_sigma < 0) fail("PhantomSpec: noise sigma must be nonnegative");
        for (const AnnulusSpec* s : {&s1, &s2}) {
            if (s->r_in <= 0 || s->r_out <= s->r_in)
                fail("PhantomSpec: invalid annulus radii");
            if (s->cy - s->r_out < 0 || s->cy + s->r_out > height - 1 ||
                s->cx - s->r_out < 0 || s->cx + s->r_out > width - 1)
                fail("PhantomSpec: annulus leaves the grid");
            // diffeomorphism bound: dR/dr0 = 1 + s (g + r0 g') must stay positive
            double worst = 0;
            double w = s->r_out - s->r_in;
            for (int i = 0; i <= 1000; ++i) {
                double rho = i / 1000.0;
                double r0 = s->r_in + rho * w;
                double g = std::cos(3.14159265358979 * (rho - 0.5));
                g = g * g;
                double gp = -3.14159265358979 *
                            std::sin(2.0 * 3.14159265358979 * (rho - 0.5)) / w;
                worst = std::max(worst, std::abs(g + r0 * gp));
            }
            if (amplitude * worst >= 0.97)
                fail("PhantomSpec: amplitude " + std::to_string(amplitude) +
                     " violates the diffeomorphism bound (max |s dR'| = " +
                     std::to_string(amplitude * worst) + ")");
        }
        double dy = s1.cy - s2.cy, dx = s1.cx - s2.cx;
        if (std::sqrt(dy * dy + dx * dx) < s1.r_out + s2.r_out)
            fail("PhantomSpec: annulus supports overlap");
    }
};

struct SequenceSample {
    PhantomSpec spec;
    std::vector<Tensor> frames;          // T x [H, W], values in [0, 1]
    std::vector<LabelMask> masks;        // T, labels {0, 1, 2}
    std::vector<Tensor> gt_step;         // T-1 x [2, H, W], frame t -> t+1
    std::vector<Tensor> gt_lagrangian;   // T-1 x [2, H, W], frame 0 -> t+1
};

namespace detail {

inline double bump01(double rho) {
    if (rho <= 0.0 || rho >= 1.0) return 0.0;
    double c = std::cos(3.14159265358979 * (rho - 0.5));
    return c * c;
}

inline double phase_scale(const PhantomSpec& spec, const AnnulusSpec& s, int64_t t) {
    return spec.amplitude *
           std::sin(2.0 * 3.14159265358979323846 * double(t) / double(spec.period) + s.phase);
}

// R(r0, t): deformed radius of the material circle with reference radius r0
inline double radial_map(const AnnulusSpec& s, double scale, double r0) {
    double rho = (r0 - s.r_in) / (s.r_out - s.r_in);
    return r0 * (1.0 + scale * bump01(rho));
}

// invert R(., t) on [r_in, r_out] by bisection; identity outside the band
inline double radial_unmap(const AnnulusSpec& s, double scale, double r) {
    if (scale == 0.0 || r <= s.r_in || r >= s.r_out) return r;
    double lo = s.r_in, hi = s.r_out;
    for (int it = 0; it < 80; ++it) {
        double mid = 0.5 * (lo + hi);
        if (radial_map(s, scale, mid) < r)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// band-limited texture evaluable at arbitrary real coordinates
struct Texture {
    struct Wave {
        double ky, kx, phase, amp;
    };
    std::vector<Wave> waves;
    double norm = 1.0;

    static Texture make(const PhantomSpec& spec) {
        Texture tex;
        Rng rng(spec.texture_seed);
        for (int i = 0; i < 40; ++i) {
            double wavelength = rng.uniform(8.0, 32.0);
            double k = 2.0 * 3.14159265358979 / wavelength;
            double ang = rng.uniform(0.0, 2.0 * 3.14159265358979);
            tex.waves.push_back({k * std::sin(ang), k * std::cos(ang),
                                 rng.uniform(0.0, 2.0 * 3.14159265358979),
                                 rng.uniform(0.3, 1.0)});
        }
        double peak = 1e-9;
        for (int64_t y = 0; y < spec.height; ++y)
            for (int64_t x = 0; x < spec.width; ++x)
                peak = std::max(peak, std::abs(tex.raw(double(y), double(x))));
        tex.norm = peak;
        return tex;
    }

    double raw(double y, double x) const {
        double v = 0;
        for (const auto& w : waves) v += w.amp * std::sin(w.ky * y + w.kx * x + w.phase);
        return v;
    }

    double value(double y, double x) const { return 0.5 + 0.45 * raw(y, x) / norm; }
};

// reference position of the material point observed at (y, x) at time t
inline void reference_position(const PhantomSpec& spec, int64_t t, double y, double x,
                               double& ry, double& rx) {
    ry = y;
    rx = x;
    for (const AnnulusSpec* s : {&spec.s1, &spec.s2}) {
        double dy = y - s->cy, dx = x - s->cx;
        double r = std::sqrt(dy * dy + dx * dx);
        if (r <= s->r_in || r >= s->r_out) continue;
        double r0 = radial_unmap(*s, phase_scale(spec, *s, t), r);
        ry = s->cy + dy * r0 / r;
        rx = s->cx + dx * r0 / r;
        return;  // supports are disjoint
    }
}

}  // namespace detail

// Closed-form displacement field mapping the t1 configuration onto the t2
// configuration: sampling frame t1 at x + u(x) reproduces frame t2.
inline Tensor analytic_field(const PhantomSpec& spec, int64_t t1, int64_t t2) {
    if (t1 < 0 || t2 < 0 || t1 >= spec.frames || t2 >= spec.frames)
        fail("analytic_field: frame index out of range [0, " + std::to_string(spec.frames) +
             "): " + std::to_string(t1) + ", " + std::to_string(t2));
    Tensor u = Tensor::zeros({2, spec.height, spec.width});
    if (t1 == t2) return u;
    auto& d = u.mutable_data();
    int64_t plane = spec.height * spec.width;
    for (int64_t y = 0; y < spec.height; ++y)
        for (int64_t x = 0; x < spec.width; ++x)
            for (const AnnulusSpec* s : {&spec.s1, &spec.s2}) {
                double dy = y - s->cy, dx = x - s->cx;
                double r = std::sqrt(dy * dy + dx * dx);
                if (r <= s->r_in || r >= s->r_out) continue;
                double r0 = detail::radial_unmap(*s, detail::phase_scale(spec, *s, t2), r);
                double r1 = detail::radial_map(*s, detail::phase_scale(spec, *s, t1), r0);
                d[static_cast<size_t>(y * spec.width + x)] =
                    static_cast<float>((r1 - r) * dy / r);
                d[static_cast<size_t>(plane + y * spec.width + x)] =
                    static_cast<float>((r1 - r) * dx / r);
            }
    return u;
}

// Deterministic sequence generation: frames, masks and ground-truth fields
// all derive from the same analytic map. Identical (spec, seed) pairs give
// bit-identical samples.
inline SequenceSample generate(const PhantomSpec& spec_in, uint64_t seed) {
    PhantomSpec spec = spec_in;
    spec.finalize();
    SequenceSample out;
    out.spec = spec;
    detail::Texture tex = detail::Texture::make(spec);
    Rng noise_rng(seed);

    for (int64_t t = 0; t < spec.frames; ++t) {
        Tensor frame = Tensor::zeros({spec.height, spec.width});
        LabelMask mask(spec.height, spec.width);
        auto& fd = frame.mutable_data();
        for (int64_t y = 0; y < spec.height; ++y)
            for (int64_t x = 0; x < spec.width; ++x) {
                double ry, rx;
                detail::reference_position(spec, t, double(y), double(x), ry, rx);
                double v = tex.value(ry, rx);
                if (spec.noise_sigma > 0) v += spec.noise_sigma * noise_rng.normal();
                fd[static_cast<size_t>(y * spec.width + x)] =
                    static_cast<float>(std::min(std::max(v, 0.0), 1.0));
                // labelled annulus = central 70% of the band, tracked
                // with the material
                int32_t label = 1;
                for (const AnnulusSpec* s : {&spec.s1, &spec.s2}) {
                    double w = s->r_out - s->r_in;
                    double scale = detail::phase_scale(spec, *s, t);
                    double lo = detail::radial_map(*s, scale, s->r_in + 0.15 * w);
                    double hi = detail::radial_map(*s, scale, s->r_out - 0.15 * w);
                    double dy = y - s->cy, dx = x - s->cx;
                    double r = std::sqrt(dy * dy + dx * dx);
                    if (r >= lo && r <= hi) mask.at(y, x) = label;
                    ++label;
                }
            }
        out.frames.push_back(frame);
        out.masks.push_back(std::move(mask));
    }
    for (int64_t t = 0; t + 1 < spec.frames; ++t) {
        out.gt_step.push_back(analytic_field(spec, t, t + 1));
        out.gt_lagrangian.push_back(analytic_field(spec, 0, t + 1));
    }
    return out;
}

// --- dataset directory layout --------------------------------------------

inline nlohmann::json spec_to_json(const PhantomSpec& s) {
    return {{"height", s.height},     {"width", s.width},
            {"frames", s.frames},     {"period", s.period},
            {"amplitude", s.amplitude}, {"noise_sigma", s.noise_sigma},
            {"counter_phase", s.counter_phase}, {"texture_seed", s.texture_seed},
            {"s1", {{"cy", s.s1.cy}, {"cx", s.s1.cx}, {"r_in", s.s1.r_in},
                    {"r_out", s.s1.r_out}, {"phase", s.s1.phase}}},
            {"s2", {{"cy", s.s2.cy}, {"cx", s.s2.cx}, {"r_in", s.s2.r_in},
                    {"r_out", s.s2.r_out}, {"phase", s.s2.phase}}}};
}

inline PhantomSpec spec_from_json(const nlohmann::json& j) {
    PhantomSpec s;
    s.height = j.at("height");
    s.width = j.at("width");
    s.frames = j.at("frames");
    s.period = j.at("period");
    s.amplitude = j.at("amplitude");
    s.noise_sigma = j.at("noise_sigma");
    s.counter_phase = j.at("counter_phase");
    s.texture_seed = j.at("texture_seed");
    auto annulus = [](const nlohmann::json& a) {
        return AnnulusSpec{a.at("cy"), a.at("cx"), a.at("r_in"), a.at("r_out"), a.at("phase")};
    };
    s.s1 = annulus(j.at("s1"));
    s.s2 = annulus(j.at("s2"));
    return s;
}

inline void save_sequence(const std::filesystem::path& dir, const SequenceSample& s) {
    std::filesystem::create_directories(dir);
    int64_t t_len = static_cast<int64_t>(s.frames.size());
    int64_t h = s.spec.height, w = s.spec.width;

    auto stack_all = [](const std::vector<Tensor>& ts, Shape shape) {
        Tensor out = Tensor::zeros(shape);
        int64_t per = ts[0].numel();
        for (size_t i = 0; i < ts.size(); ++i)
            std::copy(ts[i].data().begin(), ts[i].data().end(),
                      out.mutable_data().begin() + static_cast<int64_t>(i) * per);
        return out;
    };
    save_ndt(dir / "frames.ndt", stack_all(s.frames, {t_len, h, w}));

    Tensor masks = Tensor::zeros({t_len, h, w});
    for (int64_t t = 0; t < t_len; ++t)
        for (int64_t i = 0; i < h * w; ++i)
            masks.mutable_data()[static_cast<size_t>(t * h * w + i)] =
                static_cast<float>(s.masks[static_cast<size_t>(t)].v[static_cast<size_t>(i)]);
    save_ndt(dir / "masks.ndt", masks);

    if (!s.gt_step.empty()) {
        save_ndt(dir / "gt_step_fields.ndt", stack_all(s.gt_step, {t_len - 1, 2, h, w}));
        save_ndt(dir / "gt_lagrangian_fields.ndt",
                 stack_all(s.gt_lagrangian, {t_len - 1, 2, h, w}));
    }

    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["spec"] = spec_to_json(s.spec);
    manifest["files"] = {{"frames", "frames.ndt"},
                         {"masks", "masks.ndt"},
                         {"gt_step_fields", "gt_step_fields.ndt"},
                         {"gt_lagrangian_fields", "gt_lagrangian_fields.ndt"}};
    manifest["fields"] = {{"kind", "displacement"}, {"N", 7}};
    std::ofstream f(dir / "manifest.json");
    f << manifest.dump(2) << "\n";
}

inline SequenceSample load_sequence(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) fail("load_sequence: missing manifest.json in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(mf, nullptr, false);
    if (manifest.is_discarded())
        fail("load_sequence: malformed manifest.json in " + dir.string());
    SequenceSample s;
    s.spec = spec_from_json(manifest.at("spec"));

    Tensor frames = load_ndt(dir / "frames.ndt");
    int64_t t_len = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
    for (int64_t t = 0; t < t_len; ++t) {
        Tensor f = Tensor::zeros({h, w});
        std::copy(frames.data().begin() + t * h * w, frames.data().begin() + (t + 1) * h * w,
                  f.mutable_data().begin());
        s.frames.push_back(f);
    }
    Tensor masks = load_ndt(dir / "masks.ndt");
    for (int64_t t = 0; t < t_len; ++t) {
        LabelMask m(h, w);
        for (int64_t i = 0; i < h * w; ++i)
            m.v[static_cast<size_t>(i)] =
                static_cast<int32_t>(masks[t * h * w + i]);
        s.masks.push_back(std::move(m));
    }
    for (const char* name : {"gt_step_fields.ndt", "gt_lagrangian_fields.ndt"}) {
        if (!std::filesystem::exists(dir / name)) continue;
        Tensor all = load_ndt(dir / name);
        for (int64_t t = 0; t + 1 < t_len; ++t) {
            Tensor f = Tensor::zeros({2, h, w});
            std::copy(all.data().begin() + t * 2 * h * w,
                      all.data().begin() + (t + 1) * 2 * h * w, f.mutable_data().begin());
            (std::string(name) == "gt_step_fields.ndt" ? s.gt_step : s.gt_lagrangian)
                .push_back(f);
        }
    }
    return s;
}

}  // namespace motrack
