#pragma once

#include <array>

#include "tlpatch/core.hpp"

namespace tlpatch {

inline constexpr double kTvEpsilon = 1e-8;

struct LossBreakdown {
    double cls = 0.0;
    double bbox = 0.0;
    double tv = 0.0;
    double color_sup = 0.0;
    double total = 0.0;
};

// Mean over pixels and channels of sqrt(dh^2 + dv^2 + eps) with forward differences
// (zero past the last column / row). Works on any channel count. When `grad` is non-null
// the gradient is accumulated into it (same shape as `p`).
double total_variation(const Image& p, double eps = kTvEpsilon, Image* grad = nullptr);

// Normalised 5x5 Gaussian, sigma 1.
const std::array<double, 25>& gaussian_kernel_5x5();

// 5x5 Gaussian blur of a single-channel map with reflect-101 padding.
Image gaussian_blur_5x5(const Image& map);

// Mean of the blurred dominance map max(0, C - max(other two)) of the selected channel C.
// SuppressionMode::raw_channel blurs C itself instead.
double color_suppression(const Image& p, SuppressChannel channel,
                         SuppressionMode mode = SuppressionMode::dominance, Image* grad = nullptr);

LossBreakdown compose(double cls, double bbox, double tv, double sup, const AttackConfig& cfg);

}  // namespace tlpatch
