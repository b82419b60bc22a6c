#pragma once

// Evaluation metrics: Dice, PSNR, SSIM, Hausdorff distance, plus sequence
// tracking evaluation that warps the first frame (and its labels) by
// accumulated displacement fields and scores them against ground truth.

#include <limits>
#include <map>
#include <vector>

#include <json.hpp>

#include "motrack/tensor.hpp"
#include "motrack/warp.hpp"

namespace motrack {

struct LabelMask {
    int64_t h = 0, w = 0;
    std::vector<int32_t> v;

    LabelMask() = default;
    LabelMask(int64_t hh, int64_t ww) : h(hh), w(ww), v(static_cast<size_t>(hh * ww), 0) {}

    int32_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
    int32_t& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
    bool same_shape(const LabelMask& o) const { return h == o.h && w == o.w; }
};

// 2 |A and B| / (|A| + |B|); both empty counts as perfect agreement
inline double dice(const LabelMask& a, const LabelMask& b, int32_t label) {
    if (!a.same_shape(b))
        fail("dice: mask shapes differ: " + std::to_string(a.h) + "x" + std::to_string(a.w) +
             " vs " + std::to_string(b.h) + "x" + std::to_string(b.w));
    int64_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        bool ia = a.v[i] == label, ib = b.v[i] == label;
        na += ia;
        nb += ib;
        inter += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(inter) / double(na + nb);
}

// 10 log10(peak^2 / MSE); +inf when the images are identical
inline double psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
    if (a.shape() != b.shape())
        fail("psnr: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (!(peak > 0)) fail("psnr: peak must be positive");
    double mse = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = double(a[i]) - b[i];
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

// Mean structural similarity over sliding Gaussian-weighted windows
// (sigma = 1.5), evaluated on fully interior window positions.
inline double ssim(const Tensor& a, const Tensor& b, int64_t window = 11, double k1 = 0.01,
                   double k2 = 0.03, double peak = 1.0) {
    if (a.shape() != b.shape())
        fail("ssim: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.ndim() != 2) fail("ssim: expected [H,W], got " + shape_str(a.shape()));
    int64_t h = a.dim(0), w = a.dim(1);
    if (h < window || w < window)
        fail("ssim: image " + shape_str(a.shape()) + " smaller than the " +
             std::to_string(window) + "-pixel window");
    int64_t r = window / 2;
    std::vector<double> g(static_cast<size_t>(window * window));
    double gsum = 0;
    for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx) {
            double v = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
            g[static_cast<size_t>((dy + r) * window + dx + r)] = v;
            gsum += v;
        }
    for (auto& v : g) v /= gsum;
    double c1 = (k1 * peak) * (k1 * peak), c2 = (k2 * peak) * (k2 * peak);
    double acc = 0;
    int64_t count = 0;
    for (int64_t y = r; y < h - r; ++y)
        for (int64_t x = r; x < w - r; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int64_t dy = -r; dy <= r; ++dy)
                for (int64_t dx = -r; dx <= r; ++dx) {
                    double wgt = g[static_cast<size_t>((dy + r) * window + dx + r)];
                    double va = a[(y + dy) * w + x + dx];
                    double vb = b[(y + dy) * w + x + dx];
                    ma += wgt * va;
                    mb += wgt * vb;
                    saa += wgt * va * va;
                    sbb += wgt * vb * vb;
                    sab += wgt * va * vb;
                }
            double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            ++count;
        }
    return acc / double(count);
}

namespace detail {

// boundary cells of a label: member cells with a 4-neighbour outside the
// label (grid borders count as outside)
inline std::vector<std::pair<int64_t, int64_t>> boundary_points(const LabelMask& m,
                                                                int32_t label) {
    std::vector<std::pair<int64_t, int64_t>> pts;
    for (int64_t y = 0; y < m.h; ++y)
        for (int64_t x = 0; x < m.w; ++x) {
            if (m.at(y, x) != label) continue;
            bool edge = y == 0 || x == 0 || y == m.h - 1 || x == m.w - 1 ||
                        m.at(y - 1, x) != label || m.at(y + 1, x) != label ||
                        m.at(y, x - 1) != label || m.at(y, x + 1) != label;
            if (edge) pts.emplace_back(y, x);
        }
    return pts;
}

}  // namespace detail

// Symmetric Hausdorff distance between boundary point sets, in grid cells.
inline double hausdorff(const LabelMask& a, const LabelMask& b, int32_t label) {
    if (!a.same_shape(b)) fail("hausdorff: mask shapes differ");
    auto pa = detail::boundary_points(a, label);
    auto pb = detail::boundary_points(b, label);
    if (pa.empty() || pb.empty())
        fail("hausdorff: label " + std::to_string(label) + " is empty in one of the masks");
    auto directed = [](const auto& from, const auto& to) {
        double worst = 0;
        for (auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (auto& q : to) {
                double dy = double(p.first - q.first), dx = double(p.second - q.second);
                best = std::min(best, dy * dy + dx * dx);
            }
            worst = std::max(worst, best);
        }
        return std::sqrt(worst);
    };
    return std::max(directed(pa, pb), directed(pb, pa));
}

// Nearest-neighbour mask warping: labels stay discrete.
inline LabelMask warp_mask(const LabelMask& m, const Tensor& field) {
    if (field.ndim() != 3 || field.dim(0) != 2 || field.dim(1) != m.h || field.dim(2) != m.w)
        fail("warp_mask: field " + shape_str(field.shape()) + " does not match mask grid");
    LabelMask out(m.h, m.w);
    int64_t plane = m.h * m.w;
    for (int64_t y = 0; y < m.h; ++y)
        for (int64_t x = 0; x < m.w; ++x) {
            double sy = y + field[y * m.w + x];
            double sx = x + field[plane + y * m.w + x];
            int64_t ny = int64_t(std::lround(sy));
            int64_t nx = int64_t(std::lround(sx));
            ny = std::min(std::max<int64_t>(ny, 0), m.h - 1);
            nx = std::min(std::max<int64_t>(nx, 0), m.w - 1);
            out.at(y, x) = m.at(ny, nx);
        }
    return out;
}

struct MetricReport {
    struct FrameMetrics {
        int64_t frame = 0;
        bool has_mask_gt = false;
        std::map<int32_t, double> dice, hausdorff;
        double dice_mean = 0, hausdorff_mean = 0;
        double psnr = 0, ssim = 0;
        JacobianStats jacobian;
    };
    std::vector<FrameMetrics> frames;
    std::vector<int64_t> skipped;  // frames lacking mask ground truth
    double mean_dice = 0, mean_hausdorff = 0, mean_psnr = 0, mean_ssim = 0;
    JacobianStats mean_jacobian;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["mean"] = {{"dice", mean_dice},
                     {"hausdorff", mean_hausdorff},
                     {"psnr", mean_psnr},
                     {"ssim", mean_ssim},
                     {"jacobian_frac_nonpos", mean_jacobian.frac_nonpos},
                     {"jacobian_mean_abs_dev", mean_jacobian.mean_abs_dev}};
        j["skipped_frames"] = skipped;
        j["frames"] = nlohmann::json::array();
        for (const auto& f : frames) {
            nlohmann::json fj;
            fj["frame"] = f.frame;
            fj["has_mask_gt"] = f.has_mask_gt;
            fj["psnr"] = std::isfinite(f.psnr) ? nlohmann::json(f.psnr) : nlohmann::json("inf");
            fj["ssim"] = f.ssim;
            fj["jacobian_frac_nonpos"] = f.jacobian.frac_nonpos;
            fj["jacobian_mean_abs_dev"] = f.jacobian.mean_abs_dev;
            if (f.has_mask_gt) {
                for (auto& [lbl, d] : f.dice) fj["dice"][std::to_string(lbl)] = d;
                for (auto& [lbl, d] : f.hausdorff) fj["hausdorff"][std::to_string(lbl)] = d;
                fj["dice_mean"] = f.dice_mean;
                fj["hausdorff_mean"] = f.hausdorff_mean;
            }
            j["frames"].push_back(fj);
        }
        return j;
    }

    std::string csv_row(const std::string& id) const {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.8f,%.6f", id.c_str(),
                      mean_dice, mean_hausdorff, std::isfinite(mean_psnr) ? mean_psnr : 999.0,
                      mean_ssim, mean_jacobian.frac_nonpos, mean_jacobian.mean_abs_dev);
        return buf;
    }
};

// Warps frame 0 (linear interpolation) and its mask (nearest neighbour) by
// each accumulated field phi_{0:t} and scores against the ground truth at
// frame t. lagrangian[i] corresponds to frame i+1. Frames missing mask
// ground truth are skipped and flagged.
inline MetricReport evaluate_tracking(const std::vector<Tensor>& frames,
                                      const std::vector<LabelMask>& masks,
                                      const std::vector<int32_t>& labels,
                                      const std::vector<Tensor>& lagrangian) {
    if (frames.empty()) fail("evaluate_tracking: no frames");
    if (lagrangian.size() + 1 > frames.size())
        fail("evaluate_tracking: more fields than transitions between frames");
    bool have_mask0 = !masks.empty();
    if (!have_mask0) fail("evaluate_tracking: first-frame mask is required");

    MetricReport rep;
    double acc_dice = 0, acc_hd = 0, acc_psnr = 0, acc_ssim = 0;
    int64_t n_mask = 0, n_img = 0, n_psnr_finite = 0;
    double acc_fnp = 0, acc_mad = 0;
    for (size_t i = 0; i < lagrangian.size(); ++i) {
        int64_t t = static_cast<int64_t>(i) + 1;
        MetricReport::FrameMetrics fm;
        fm.frame = t;
        Tensor warped = sample(frames[0], lagrangian[i]);
        fm.psnr = psnr(warped, frames[static_cast<size_t>(t)]);
        fm.ssim = ssim(warped, frames[static_cast<size_t>(t)]);
        fm.jacobian = jacobian_stats(lagrangian[i], true);
        acc_ssim += fm.ssim;
        ++n_img;
        if (std::isfinite(fm.psnr)) {
            acc_psnr += fm.psnr;
            ++n_psnr_finite;
        }
        acc_fnp += fm.jacobian.frac_nonpos;
        acc_mad += fm.jacobian.mean_abs_dev;
        if (static_cast<size_t>(t) < masks.size()) {
            fm.has_mask_gt = true;
            LabelMask tracked = warp_mask(masks[0], lagrangian[i]);
            double dsum = 0, hsum = 0;
            for (int32_t lbl : labels) {
                fm.dice[lbl] = dice(tracked, masks[static_cast<size_t>(t)], lbl);
                fm.hausdorff[lbl] = hausdorff(tracked, masks[static_cast<size_t>(t)], lbl);
                dsum += fm.dice[lbl];
                hsum += fm.hausdorff[lbl];
            }
            fm.dice_mean = dsum / double(labels.size());
            fm.hausdorff_mean = hsum / double(labels.size());
            acc_dice += fm.dice_mean;
            acc_hd += fm.hausdorff_mean;
            ++n_mask;
        } else {
            rep.skipped.push_back(t);
        }
        rep.frames.push_back(std::move(fm));
    }
    rep.mean_dice = n_mask ? acc_dice / n_mask : 0.0;
    rep.mean_hausdorff = n_mask ? acc_hd / n_mask : 0.0;
    if (n_img == 0)
        rep.mean_psnr = 0.0;
    else if (n_psnr_finite == 0)  // every frame reproduced exactly
        rep.mean_psnr = std::numeric_limits<double>::infinity();
    else
        rep.mean_psnr = acc_psnr / n_psnr_finite;
    rep.mean_ssim = n_img ? acc_ssim / n_img : 0.0;
    rep.mean_jacobian.frac_nonpos = n_img ? acc_fnp / n_img : 0.0;
    rep.mean_jacobian.mean_abs_dev = n_img ? acc_mad / n_img : 0.0;
    return rep;
}

}  // namespace motrack
