#include "tlpatch/detector.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

namespace tlpatch {
namespace {

double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x)
{
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

struct PixelRange {
    int x0, y0, x1, y1;
    long count() const { return x1 > x0 && y1 > y0 ? static_cast<long>(x1 - x0) * (y1 - y0) : 0; }
};

PixelRange pixels_of(const BBox& b, int w, int h)
{
    auto cx = [w](double v) { return std::clamp(static_cast<int>(std::lround(v)), 0, w); };
    auto cy = [h](double v) { return std::clamp(static_cast<int>(std::lround(v)), 0, h); };
    return {cx(b.x_min), cy(b.y_min), cx(b.x_max), cy(b.y_max)};
}

// Region of the same size directly below the box.
BBox context_of(const BBox& roi)
{
    return BBox{roi.x_min, roi.y_max, roi.x_max, roi.y_max + roi.height()};
}

std::array<double, 2> mean_red_green(const Image& image, const PixelRange& r)
{
    const long n = r.count();
    if (n == 0) {
        return {0.0, 0.0};
    }
    double sr = 0.0;
    double sg = 0.0;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            sr += image.at(x, y, 0);
            sg += image.at(x, y, 1);
        }
    }
    return {sr / n, sg / n};
}

// Adds `scale` to d/dR and `-scale` to d/dG over the region.
void spread_red_minus_green(Image& grad, const PixelRange& r, double scale)
{
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            grad.at(x, y, 0) += scale;
            grad.at(x, y, 1) -= scale;
        }
    }
}

void require_unit_range(const Image& image)
{
    if (image.channels() != 3) {
        throw DataError("detector input must be an RGB image");
    }
    if (!image.in_unit_range()) {
        throw DataError("detector input has pixel values outside [0,1]");
    }
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold)
{
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
            return iou(k.box, d.box) > iou_threshold;
        });
        if (!suppressed) {
            kept.push_back(d);
        }
    }
    return kept;
}

}  // namespace

ContextBlobDetector::ContextBlobDetector(ContextBlobOptions options)
    : options_(options), classes_({"red", "green"}, "red_green")
{
    if (options_.min_lamp_pixels < 1 || options_.max_growth < 1) {
        throw ConfigError("context_blob: min_lamp_pixels and max_growth must be >= 1");
    }
}

HeadOutput ContextBlobDetector::head(const Image& image, const BBox& roi) const
{
    const auto own = mean_red_green(image, pixels_of(roi, image.width(), image.height()));
    const auto ctx = mean_red_green(image, pixels_of(context_of(roi), image.width(), image.height()));
    HeadOutput out;
    out.own_r = own[0];
    out.own_g = own[1];
    out.context_r = ctx[0];
    out.context_g = ctx[1];
    out.objectness =
        sigmoid(options_.objectness_gain * (std::max(own[0], own[1]) - options_.objectness_threshold));
    out.logit = options_.logit_gain * ((own[0] - own[1]) + options_.context_weight * (ctx[0] - ctx[1]));
    out.probs = {sigmoid(2.0 * out.logit), sigmoid(-2.0 * out.logit)};
    out.best = out.probs[kGreen] > out.probs[kRed] ? kGreen : kRed;
    out.confidence = out.objectness * out.probs[static_cast<std::size_t>(out.best)];
    return out;
}

std::vector<BBox> ContextBlobDetector::proposals(const Image& image, int x0, int y0, int x1, int y1) const
{
    x0 = std::clamp(x0, 0, image.width());
    x1 = std::clamp(x1, 0, image.width());
    y0 = std::clamp(y0, 0, image.height());
    y1 = std::clamp(y1, 0, image.height());
    const int ww = x1 - x0;
    const int wh = y1 - y0;
    if (ww <= 0 || wh <= 0) {
        return {};
    }

    auto lit = [&](int x, int y) {
        const double r = image.at(x, y, 0);
        const double g = image.at(x, y, 1);
        const double m = std::max(r, g);
        return m >= options_.lit_level && m - image.at(x, y, 2) >= options_.lit_margin;
    };
    auto dark = [&](int x, int y) {
        return std::max({image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2)}) < options_.dark_level;
    };
    // Share of dark pixels on a horizontal (fixed y) or vertical (fixed x) strip.
    auto dark_row = [&](int y, int xa, int xb) {
        int n = 0;
        for (int x = xa; x < xb; ++x) n += dark(x, y) ? 1 : 0;
        return static_cast<double>(n) / (xb - xa);
    };
    auto dark_col = [&](int x, int ya, int yb) {
        int n = 0;
        for (int y = ya; y < yb; ++y) n += dark(x, y) ? 1 : 0;
        return static_cast<double>(n) / (yb - ya);
    };

    std::vector<int> label(static_cast<std::size_t>(ww) * wh, -1);
    std::vector<BBox> out;
    std::vector<std::pair<int, int>> stack;
    int next_label = 0;
    for (int sy = y0; sy < y1; ++sy) {
        for (int sx = x0; sx < x1; ++sx) {
            const std::size_t si = static_cast<std::size_t>(sy - y0) * ww + (sx - x0);
            if (label[si] >= 0 || !lit(sx, sy)) {
                continue;
            }
            // Flood fill one lamp blob (4-connectivity).
            int bx0 = sx, bx1 = sx + 1, by0 = sy, by1 = sy + 1;
            int count = 0;
            label[si] = next_label;
            stack.assign(1, {sx, sy});
            while (!stack.empty()) {
                const auto [x, y] = stack.back();
                stack.pop_back();
                ++count;
                bx0 = std::min(bx0, x);
                bx1 = std::max(bx1, x + 1);
                by0 = std::min(by0, y);
                by1 = std::max(by1, y + 1);
                constexpr int dxs[4] = {1, -1, 0, 0};
                constexpr int dys[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int nx = x + dxs[k];
                    const int ny = y + dys[k];
                    if (nx < x0 || nx >= x1 || ny < y0 || ny >= y1) {
                        continue;
                    }
                    const std::size_t ni = static_cast<std::size_t>(ny - y0) * ww + (nx - x0);
                    if (label[ni] < 0 && lit(nx, ny)) {
                        label[ni] = next_label;
                        stack.emplace_back(nx, ny);
                    }
                }
            }
            ++next_label;
            if (count < options_.min_lamp_pixels) {
                continue;
            }

            // Grow the housing outward while the next strip is mostly dark.
            const int lamp_w = bx1 - bx0;
            const int lamp_h = by1 - by0;
            const int lim_x0 = std::max(x0, bx0 - options_.max_growth * lamp_w);
            const int lim_x1 = std::min(x1, bx1 + options_.max_growth * lamp_w);
            const int lim_y0 = std::max(y0, by0 - options_.max_growth * lamp_h);
            const int lim_y1 = std::min(y1, by1 + options_.max_growth * lamp_h);
            int hx0 = bx0, hx1 = bx1, hy0 = by0, hy1 = by1;
            for (bool grew = true; grew;) {
                grew = false;
                if (hy0 > lim_y0 && dark_row(hy0 - 1, hx0, hx1) >= options_.dark_fraction) {
                    --hy0;
                    grew = true;
                }
                if (hy1 < lim_y1 && dark_row(hy1, hx0, hx1) >= options_.dark_fraction) {
                    ++hy1;
                    grew = true;
                }
                if (hx0 > lim_x0 && dark_col(hx0 - 1, hy0, hy1) >= options_.dark_fraction) {
                    --hx0;
                    grew = true;
                }
                if (hx1 < lim_x1 && dark_col(hx1, hy0, hy1) >= options_.dark_fraction) {
                    ++hx1;
                    grew = true;
                }
            }
            if (hx0 < bx0 && hx1 > bx1 && hy0 < by0 && hy1 > by1) {
                out.push_back(BBox{static_cast<double>(hx0), static_cast<double>(hy0), static_cast<double>(hx1),
                                   static_cast<double>(hy1)});
            }
        }
    }
    return out;
}

std::vector<Detection> ContextBlobDetector::detect(const Image& image) const
{
    require_unit_range(image);
    std::vector<Detection> dets;
    for (const BBox& box : proposals(image)) {
        const HeadOutput h = head(image, box);
        if (h.confidence >= options_.confidence_threshold) {
            dets.push_back(Detection{box, h.confidence, h.best});
        }
    }
    return nms(std::move(dets), options_.nms_iou);
}

AttackLosses ContextBlobDetector::attack_losses(const Image& image, std::span<const GroundTruth> targets,
                                                Image* grad_image, LossWeights weights) const
{
    if (targets.empty()) {
        throw std::invalid_argument("attack_losses: no targets");
    }
    if (grad_image != nullptr &&
        (grad_image->width() != image.width() || grad_image->height() != image.height())) {
        throw std::invalid_argument("attack_losses: gradient buffer shape mismatch");
    }
    const double per_target = 1.0 / static_cast<double>(targets.size());
    AttackLosses total;
    for (const GroundTruth& t : targets) {
        const double cx = t.box.center_x();
        const double cy = t.box.center_y();
        if (cx < 0.0 || cy < 0.0 || cx >= image.width() || cy >= image.height()) {
            throw DataError("attack_losses: target centre outside the image");
        }
        if (!classes_.contains(t.class_id)) {
            throw DataError("attack_losses: target class " + std::to_string(t.class_id) +
                            " unknown to context_blob");
        }
        // Match among proposals near the target; fall back to the target box itself.
        const double mx = std::max(t.box.width(), t.box.height());
        const auto found = proposals(image, static_cast<int>(std::floor(t.box.x_min - mx)),
                                     static_cast<int>(std::floor(t.box.y_min - mx)),
                                     static_cast<int>(std::ceil(t.box.x_max + mx)),
                                     static_cast<int>(std::ceil(t.box.y_max + mx)));
        const BBox* matched = nullptr;
        double best_iou = 0.5;
        for (const BBox& b : found) {
            const double v = iou(b, t.box);
            if (v >= best_iou) {
                best_iou = v;
                matched = &b;
            }
        }
        const BBox roi = matched != nullptr ? *matched : t.box;

        const HeadOutput h = head(image, roi);
        const double sign = t.class_id == kRed ? -1.0 : 1.0;
        // -log softmax(target) = softplus(2 * sign * logit)
        total.cls += per_target * softplus(2.0 * sign * h.logit);

        double bbox = 1.0;
        if (matched != nullptr) {
            const double s = t.box.width();
            const double d[4] = {roi.x_min - t.box.x_min, roi.y_min - t.box.y_min, roi.x_max - t.box.x_max,
                                 roi.y_max - t.box.y_max};
            bbox = 0.0;
            for (double v : d) {
                bbox += 0.25 * (v / s) * (v / s);
            }
        }
        total.bbox += per_target * bbox;

        if (grad_image != nullptr && weights.cls != 0.0) {
            const double dlogit = weights.cls * per_target * 2.0 * sign * sigmoid(2.0 * sign * h.logit);
            const double dscore = dlogit * options_.logit_gain;
            const PixelRange own = pixels_of(roi, image.width(), image.height());
            const PixelRange ctx = pixels_of(context_of(roi), image.width(), image.height());
            if (own.count() > 0) {
                spread_red_minus_green(*grad_image, own, dscore / own.count());
            }
            if (ctx.count() > 0) {
                spread_red_minus_green(*grad_image, ctx, dscore * options_.context_weight / ctx.count());
            }
        }
    }
    return total;
}

std::unique_ptr<DetectorAdapter> make_detector(const std::string& name, const nlohmann::json& options)
{
    if (name == "context_blob") {
        ContextBlobOptions o;
        const std::map<std::string, double*> reals{
            {"objectness_gain", &o.objectness_gain},
            {"objectness_threshold", &o.objectness_threshold},
            {"context_weight", &o.context_weight},
            {"logit_gain", &o.logit_gain},
            {"confidence_threshold", &o.confidence_threshold},
            {"nms_iou", &o.nms_iou},
            {"lit_level", &o.lit_level},
            {"lit_margin", &o.lit_margin},
            {"dark_level", &o.dark_level},
            {"dark_fraction", &o.dark_fraction},
        };
        const std::map<std::string, int*> ints{{"min_lamp_pixels", &o.min_lamp_pixels},
                                               {"max_growth", &o.max_growth}};
        if (!options.is_null() && !options.is_object()) {
            throw ConfigError("detector options must be an object");
        }
        for (const auto& [key, value] : options.items()) {
            if (auto it = reals.find(key); it != reals.end() && value.is_number()) {
                *it->second = value.get<double>();
            } else if (auto jt = ints.find(key); jt != ints.end() && value.is_number_integer()) {
                *jt->second = value.get<int>();
            } else {
                throw ConfigError("context_blob: unknown or mistyped option '" + key + "'");
            }
        }
        return std::make_unique<ContextBlobDetector>(o);
    }
    std::string known;
    for (const auto& n : available_detectors()) {
        known += (known.empty() ? "" : ", ") + n;
    }
    throw ConfigError("unknown detector '" + name + "' (available: " + known + ")");
}

std::vector<std::string> available_detectors()
{
    return {"context_blob"};
}

}  // namespace tlpatch
