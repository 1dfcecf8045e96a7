#include "tlpatch/compositor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tlpatch {
namespace {

// Camera distance used for out-of-plane tilt, in multiples of the rendered patch side.
constexpr double kCameraDistance = 4.0;

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 multiply(const Mat3& a, const Mat3& b)
{
    Mat3 r{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 3; ++k) {
                r[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    return r;
}

Mat3 inverse(const Mat3& m)
{
    const double c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    const double c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    const double c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    const double det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if (std::abs(det) < 1e-300) {
        throw std::runtime_error("singular homography");
    }
    const double inv = 1.0 / det;
    Mat3 r;
    r[0][0] = c00 * inv;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv;
    r[1][0] = c01 * inv;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv;
    r[2][0] = c02 * inv;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv;
    return r;
}

// Maps patch-plane points (centred, image-pixel units) to rect-centred image offsets.
Mat3 plane_to_image(const TransformParams& t, double side)
{
    const double deg = std::numbers::pi / 180.0;
    const double ax = t.rot_x_deg * deg;
    const double ay = t.rot_y_deg * deg;
    const double az = t.rot_z_deg * deg;
    const Mat3 rx{{{1, 0, 0}, {0, std::cos(ax), -std::sin(ax)}, {0, std::sin(ax), std::cos(ax)}}};
    const Mat3 ry{{{std::cos(ay), 0, std::sin(ay)}, {0, 1, 0}, {-std::sin(ay), 0, std::cos(ay)}}};
    const Mat3 rz{{{std::cos(az), -std::sin(az), 0}, {std::sin(az), std::cos(az), 0}, {0, 0, 1}}};
    const Mat3 r = multiply(rz, multiply(ry, rx));
    const double d = kCameraDistance * side;
    return Mat3{{{d * r[0][0], d * r[0][1], 0.0}, {d * r[1][0], d * r[1][1], 0.0}, {r[2][0], r[2][1], d}}};
}

std::array<double, 2> project(const Mat3& h, double x, double y)
{
    const double u = h[0][0] * x + h[0][1] * y + h[0][2];
    const double v = h[1][0] * x + h[1][1] * y + h[1][2];
    const double w = h[2][0] * x + h[2][1] * y + h[2][2];
    return {u / w, v / w};
}

struct Taps {
    std::array<int, 4> index;
    std::array<double, 4> weight;
};

Taps bilinear_taps(double px, double py, int width, int height)
{
    const double fx0 = std::floor(px);
    const double fy0 = std::floor(py);
    const double fx = px - fx0;
    const double fy = py - fy0;
    const int x0 = std::clamp(static_cast<int>(fx0), 0, width - 1);
    const int x1 = std::clamp(static_cast<int>(fx0) + 1, 0, width - 1);
    const int y0 = std::clamp(static_cast<int>(fy0), 0, height - 1);
    const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, height - 1);
    return Taps{{y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1},
                {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy}};
}

bool fits(const BBox& r, int w, int h)
{
    return r.x_min >= 0.0 && r.y_min >= 0.0 && r.x_max <= w && r.y_max <= h;
}

}  // namespace

std::optional<Placement> placement_for(const BBox& gt, int image_width, int image_height,
                                       double scale_factor)
{
    if (!(scale_factor > 0.0)) {
        throw std::invalid_argument("placement_for: scale_factor must be positive");
    }
    const double side = std::max(1.0, std::round(scale_factor * gt.width()));
    const double x0 = std::floor(gt.center_x() - 0.5 * side + 0.5);
    const BBox rect{x0, gt.y_max, x0 + side, gt.y_max + side};
    if (!fits(rect, image_width, image_height)) {
        return std::nullopt;
    }
    return Placement{rect, scale_factor};
}

TransformParams sample_transform(const EotRanges& ranges, std::mt19937_64& rng)
{
    if (!ranges.enabled) {
        return TransformParams::identity();
    }
    auto uniform = [&rng](const Range& r) {
        return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
    };
    TransformParams t;
    t.rot_x_deg = uniform(ranges.rot_xy_deg);
    t.rot_y_deg = uniform(ranges.rot_xy_deg);
    t.rot_z_deg = uniform(ranges.rot_z_deg);
    t.brightness = uniform(ranges.brightness);
    const Range pad{-ranges.translate_pad_px, ranges.translate_pad_px};
    t.translate_dx = uniform(pad);
    t.translate_dy = uniform(pad);
    return t;
}

Placement translated(const Placement& placement, double dx, double dy, int image_width,
                     int image_height)
{
    const BBox& r = placement.rect;
    const double cdx = std::clamp(std::round(dx), -r.x_min, image_width - r.x_max);
    const double cdy = std::clamp(std::round(dy), -r.y_min, image_height - r.y_max);
    Placement out = placement;
    out.rect = BBox{r.x_min + cdx, r.y_min + cdy, r.x_max + cdx, r.y_max + cdy};
    return out;
}

Image resize_bilinear(const Image& src, int out_width, int out_height)
{
    if (out_width < 1 || out_height < 1 || src.empty()) {
        throw std::invalid_argument("resize_bilinear: empty input or output");
    }
    Image out(out_width, out_height, src.channels());
    const double sx = static_cast<double>(src.width()) / out_width;
    const double sy = static_cast<double>(src.height()) / out_height;
    for (int y = 0; y < out_height; ++y) {
        for (int x = 0; x < out_width; ++x) {
            const Taps taps = bilinear_taps((x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5, src.width(),
                                            src.height());
            for (int c = 0; c < src.channels(); ++c) {
                double v = 0.0;
                for (int k = 0; k < 4; ++k) {
                    v += taps.weight[k] * src.values()[static_cast<std::size_t>(taps.index[k]) * src.channels() + c];
                }
                out.at(x, y, c) = v;
            }
        }
    }
    return out;
}

PatchWarp PatchWarp::build(int patch_side, int image_width, int image_height,
                           const Placement& placement, const TransformParams& t)
{
    if (!fits(placement.rect, image_width, image_height)) {
        throw std::invalid_argument("PatchWarp: placement does not fit the image");
    }
    PatchWarp warp;
    warp.patch_side_ = patch_side;
    warp.image_width_ = image_width;
    warp.image_height_ = image_height;
    warp.brightness_ = t.brightness;
    const Placement moved = translated(placement, t.translate_dx, t.translate_dy, image_width, image_height);
    warp.rect_ = moved.rect;

    const BBox& r = moved.rect;
    const double side = r.width();
    const double half = 0.5 * side;
    const double ratio = patch_side / side;
    const double cx = r.center_x();
    const double cy = r.center_y();

    // Scan window: bounds of the transformed quad.
    double lo_x = r.x_min, hi_x = r.x_max, lo_y = r.y_min, hi_y = r.y_max;
    Mat3 inv{};
    const bool warped = t.has_rotation();
    if (warped) {
        const Mat3 h = plane_to_image(t, side);
        inv = inverse(h);
        lo_x = hi_x = cx;
        lo_y = hi_y = cy;
        for (const auto& [qx, qy] : {std::array{-half, -half}, std::array{half, -half},
                                     std::array{-half, half}, std::array{half, half}}) {
            const auto p = project(h, qx, qy);
            lo_x = std::min(lo_x, cx + p[0]);
            hi_x = std::max(hi_x, cx + p[0]);
            lo_y = std::min(lo_y, cy + p[1]);
            hi_y = std::max(hi_y, cy + p[1]);
        }
    }
    const int x_begin = std::max(0, static_cast<int>(std::floor(lo_x)) - 1);
    const int x_end = std::min(image_width, static_cast<int>(std::ceil(hi_x)) + 1);
    const int y_begin = std::max(0, static_cast<int>(std::floor(lo_y)) - 1);
    const int y_end = std::min(image_height, static_cast<int>(std::ceil(hi_y)) + 1);

    for (int y = y_begin; y < y_end; ++y) {
        for (int x = x_begin; x < x_end; ++x) {
            // Position on the patch plane measured from the patch's top-left corner.
            double u = 0.0;
            double v = 0.0;
            if (warped) {
                const auto p = project(inv, x + 0.5 - cx, y + 0.5 - cy);
                u = p[0] + half;
                v = p[1] + half;
            } else {
                u = x + 0.5 - r.x_min;
                v = y + 0.5 - r.y_min;
            }
            if (u < 0.0 || u >= side || v < 0.0 || v >= side) {
                continue;
            }
            const Taps taps = bilinear_taps(u * ratio - 0.5, v * ratio - 0.5, patch_side, patch_side);
            warp.samples_.push_back(WarpSample{x, y, taps.index, taps.weight});
        }
    }
    return warp;
}

void PatchWarp::composite(const Patch& patch, Image& image) const
{
    if (patch.side() != patch_side_ || image.width() != image_width_ || image.height() != image_height_) {
        throw std::invalid_argument("PatchWarp::composite: shape mismatch");
    }
    const auto src = patch.pixels().values();
    for (const WarpSample& s : samples_) {
        for (int c = 0; c < 3; ++c) {
            double v = 0.0;
            for (int k = 0; k < 4; ++k) {
                v += s.weights[k] * src[static_cast<std::size_t>(s.taps[k]) * 3 + c];
            }
            image.at(s.x, s.y, c) = std::clamp(brightness_ * v, 0.0, 1.0);
        }
    }
}

void PatchWarp::backward(const Patch& patch, const Image& grad_image, Image& grad_patch) const
{
    if (grad_patch.width() != patch_side_ || grad_patch.height() != patch_side_ ||
        grad_image.width() != image_width_ || grad_image.height() != image_height_) {
        throw std::invalid_argument("PatchWarp::backward: shape mismatch");
    }
    const auto src = patch.pixels().values();
    auto dst = grad_patch.values();
    for (const WarpSample& s : samples_) {
        for (int c = 0; c < 3; ++c) {
            const double g = grad_image.at(s.x, s.y, c);
            if (g == 0.0) {
                continue;
            }
            double v = 0.0;
            for (int k = 0; k < 4; ++k) {
                v += s.weights[k] * src[static_cast<std::size_t>(s.taps[k]) * 3 + c];
            }
            const double pre = brightness_ * v;
            if (pre < 0.0 || pre > 1.0) {
                continue;  // clamped: no gradient
            }
            for (int k = 0; k < 4; ++k) {
                dst[static_cast<std::size_t>(s.taps[k]) * 3 + c] += g * brightness_ * s.weights[k];
            }
        }
    }
}

void PatchWarp::restore(const Image& source, Image& image) const
{
    for (const WarpSample& s : samples_) {
        for (int c = 0; c < 3; ++c) {
            image.at(s.x, s.y, c) = source.at(s.x, s.y, c);
        }
    }
}

Image apply(const Patch& p, const Image& x, const Placement& placement, const TransformParams& t)
{
    const PatchWarp warp = PatchWarp::build(p.side(), x.width(), x.height(), placement, t);
    Image out = x;
    warp.composite(p, out);
    return out;
}

}  // namespace tlpatch
