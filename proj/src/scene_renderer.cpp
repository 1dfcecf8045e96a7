#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "tlpatch/evaluator.hpp"

namespace tlpatch {
namespace {

double quantize(double v)
{
    return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

struct Rgb {
    double r, g, b;
};

constexpr Rgb kLitRed{0.95, 0.12, 0.10};
constexpr Rgb kLitGreen{0.08, 0.95, 0.50};
constexpr Rgb kUnlit{0.16, 0.16, 0.16};

void fill_disk(Image& img, double cx, double cy, double radius, Rgb color)
{
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(img.width(), static_cast<int>(std::ceil(cx + radius)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(img.height(), static_cast<int>(std::ceil(cy + radius)) + 1);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const double dx = x + 0.5 - cx;
            const double dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= radius * radius) {
                img.at(x, y, 0) = quantize(color.r);
                img.at(x, y, 1) = quantize(color.g);
                img.at(x, y, 2) = quantize(color.b);
            }
        }
    }
}

bool overlaps(const BBox& a, const BBox& b)
{
    return a.x_min < b.x_max && b.x_min < a.x_max && a.y_min < b.y_max && b.y_min < a.y_max;
}

}  // namespace

ClassMap synthetic_class_map()
{
    return ClassMap({"red", "green"}, "red_green");
}

std::vector<AnnotatedImage> render_synthetic(int n, const SceneOptions& options, std::mt19937_64& rng)
{
    if (n < 1) {
        throw ConfigError("render_synthetic: n must be >= 1");
    }
    if (options.min_box_width < 2 || options.max_box_width < options.min_box_width ||
        options.min_lights < 1 || options.max_lights < options.min_lights) {
        throw ConfigError("render_synthetic: inconsistent scene options");
    }
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto uniform_int = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    std::vector<AnnotatedImage> scenes;
    scenes.reserve(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        AnnotatedImage scene;
        std::ostringstream id;
        id << "scene_" << std::setw(5) << std::setfill('0') << s;
        scene.image_id = id.str();
        Image& img = scene.image;
        img = Image(options.width, options.height, 3);

        // Textured gray: base level, a low-frequency ripple and luminance noise, slight tint.
        const double base = uniform(0.40, 0.65);
        const double fx = uniform(0.01, 0.05);
        const double fy = uniform(0.01, 0.05);
        const double px = uniform(0.0, 2.0 * std::numbers::pi);
        const double py = uniform(0.0, 2.0 * std::numbers::pi);
        const double tint[3] = {uniform(-0.015, 0.015), uniform(-0.015, 0.015), uniform(-0.015, 0.015)};
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                const double lum = base + 0.05 * std::sin(fx * x + px) * std::sin(fy * y + py) + uniform(-0.04, 0.04);
                for (int c = 0; c < 3; ++c) {
                    img.at(x, y, c) = quantize(lum + tint[c]);
                }
            }
        }

        const int lights = uniform_int(options.min_lights, options.max_lights);
        std::vector<BBox> reserved;
        for (int l = 0; l < lights; ++l) {
            for (int attempt = 0; attempt < 200; ++attempt) {
                const int w = uniform_int(options.min_box_width, options.max_box_width);
                const int h = static_cast<int>(std::lround(w * uniform(1.6, 2.1)));
                const double half_span = 0.5 * std::round(options.max_patch_scale * w) + options.pad_px + 1.0;
                const double below = std::round(options.max_patch_scale * w) + options.pad_px + 1.0;
                const int x_lo = static_cast<int>(std::ceil(half_span - 0.5 * w));
                const int x_hi = static_cast<int>(std::floor(options.width - half_span - 0.5 * w));
                const int y_lo = static_cast<int>(options.pad_px) + 1;
                const int y_hi = static_cast<int>(std::floor(options.height - below - h));
                if (x_hi < x_lo || y_hi < y_lo) {
                    continue;
                }
                const int x0 = uniform_int(x_lo, x_hi);
                const int y0 = uniform_int(y_lo, y_hi);
                const BBox box{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + w),
                               static_cast<double>(y0 + h)};
                const BBox zone{box.center_x() - half_span, box.y_min - options.pad_px, box.center_x() + half_span,
                                box.y_max + below};
                if (std::any_of(reserved.begin(), reserved.end(), [&](const BBox& r) { return overlaps(r, zone); })) {
                    continue;
                }
                reserved.push_back(zone);

                const bool red = uniform(0.0, 1.0) < options.red_fraction;
                const double housing = uniform(0.04, 0.12);
                for (int y = y0; y < y0 + h; ++y) {
                    for (int x = x0; x < x0 + w; ++x) {
                        for (int c = 0; c < 3; ++c) {
                            img.at(x, y, c) = quantize(housing);
                        }
                    }
                }
                const double margin = std::max(1.0, 0.1 * w);
                const double radius = 0.5 * w - margin;
                const double cx = box.center_x();
                const double top = y0 + 0.5 * w;
                const double bottom = y0 + h - 0.5 * w;
                fill_disk(img, cx, red ? bottom : top, radius, kUnlit);
                fill_disk(img, cx, red ? top : bottom, radius, red ? kLitRed : kLitGreen);
                scene.gt.push_back(GroundTruth{box, red ? 0 : 1});
                break;
            }
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

}  // namespace tlpatch
