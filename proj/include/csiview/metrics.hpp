#pragma once

// Image quality scoring: PSNR and single-scale SSIM with a uniform square
// window, plus per-slot means. These feed both evaluation reports and the
// continual-learning gate, so the implementation is kept close to the
// textbook definitions and cross-checked against a naive oracle in tests.
//
// Conventions: images live in [0,1] (dynamic range 1), SSIM uses the
// standard stabilizers C1 = (0.01)^2 and C2 = (0.03)^2 with population
// variance, and a 7x7 uniform window. Identical images score
// (SSIM 1, PSNR +inf).

#include <cmath>
#include <limits>
#include <vector>

#include "csiview/common.hpp"
#include "csiview/image.hpp"

namespace csiview::metrics {

struct SsimConfig {
    int window = 7;  // odd, >= 3
    double c1 = 1e-4;
    double c2 = 9e-4;
    double dynamic_range = 1.0;
};

struct QualityScore {
    double mean_ssim = 0.0;
    double mean_psnr_db = 0.0;  // +inf when every pair is identical
    int n_pairs = 0;
};

inline double mse(const ImageFrame& a, const ImageFrame& b) {
    if (!a.same_shape(b)) throw DimensionError("mse: image dimensions differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

inline double psnr(const ImageFrame& a, const ImageFrame& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

// Mean over all window positions (stride 1, valid placements only) and all
// three channels of
//   (2 mu_a mu_b + C1)(2 cov + C2) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))
inline double ssim(const ImageFrame& a, const ImageFrame& b, const SsimConfig& cfg = {}) {
    if (!a.same_shape(b)) throw DimensionError("ssim: image dimensions differ");
    const int w = cfg.window;
    if (w < 3 || w % 2 == 0) throw ConfigError("ssim: window must be odd and >= 3");
    if (a.height < w || a.width < w)
        throw DimensionError("ssim: image smaller than the ssim window");

    const int out_h = a.height - w + 1;
    const int out_w = a.width - w + 1;
    const double n = static_cast<double>(w) * w;
    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        for (int r = 0; r < out_h; ++r) {
            for (int c = 0; c < out_w; ++c) {
                double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (int i = 0; i < w; ++i) {
                    for (int j = 0; j < w; ++j) {
                        const double va = a.at(r + i, c + j, ch);
                        const double vb = b.at(r + i, c + j, ch);
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                const double mu_a = sa / n;
                const double mu_b = sb / n;
                const double var_a = saa / n - mu_a * mu_a;
                const double var_b = sbb / n - mu_b * mu_b;
                const double cov = sab / n - mu_a * mu_b;
                const double num = (2.0 * mu_a * mu_b + cfg.c1) * (2.0 * cov + cfg.c2);
                const double den =
                    (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2);
                total += num / den;
            }
        }
    }
    return total / (3.0 * out_h * out_w);
}

// Slot mean: arithmetic mean of per-pair SSIM; PSNR averaged over pairs
// with finite PSNR, +inf if every pair is infinite.
inline QualityScore score_slot(const std::vector<ImageFrame>& predicted,
                               const std::vector<ImageFrame>& truth,
                               const SsimConfig& cfg = {}) {
    if (predicted.empty() || truth.empty())
        throw DataError("score_slot: empty image list");
    if (predicted.size() != truth.size())
        throw DimensionError("score_slot: list lengths differ");
    QualityScore score;
    score.n_pairs = static_cast<int>(predicted.size());
    double ssim_acc = 0.0, psnr_acc = 0.0;
    int n_finite = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        ssim_acc += ssim(predicted[i], truth[i], cfg);
        const double p = psnr(predicted[i], truth[i]);
        if (std::isfinite(p)) {
            psnr_acc += p;
            ++n_finite;
        }
    }
    score.mean_ssim = ssim_acc / static_cast<double>(predicted.size());
    score.mean_psnr_db = n_finite > 0 ? psnr_acc / n_finite
                                      : std::numeric_limits<double>::infinity();
    return score;
}

}  // namespace csiview::metrics
