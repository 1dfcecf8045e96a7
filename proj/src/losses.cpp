#include "tlpatch/losses.hpp"

#include <algorithm>
#include <cmath>

namespace tlpatch {
namespace {

// Reflect-101 index: ... 2 1 | 0 1 2 ... n-1 | n-2 ...
int reflect(int i, int n)
{
    if (n == 1) {
        return 0;
    }
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) {
        i += period;
    }
    return i < n ? i : period - i;
}

}  // namespace

double total_variation(const Image& p, double eps, Image* grad)
{
    const int w = p.width();
    const int h = p.height();
    const int ch = p.channels();
    if (w < 1 || h < 1) {
        throw std::invalid_argument("total_variation: empty patch");
    }
    const double norm = 1.0 / (static_cast<double>(w) * h * ch);
    double sum = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                const double v = p.at(x, y, c);
                const double dh = x + 1 < w ? p.at(x + 1, y, c) - v : 0.0;
                const double dv = y + 1 < h ? p.at(x, y + 1, c) - v : 0.0;
                const double mag = std::sqrt(dh * dh + dv * dv + eps);
                sum += mag;
                if (grad != nullptr && mag > 0.0) {
                    const double gh = norm * dh / mag;
                    const double gv = norm * dv / mag;
                    if (x + 1 < w) {
                        grad->at(x + 1, y, c) += gh;
                        grad->at(x, y, c) -= gh;
                    }
                    if (y + 1 < h) {
                        grad->at(x, y + 1, c) += gv;
                        grad->at(x, y, c) -= gv;
                    }
                }
            }
        }
    }
    return sum * norm;
}

const std::array<double, 25>& gaussian_kernel_5x5()
{
    static const std::array<double, 25> kernel = [] {
        std::array<double, 25> k{};
        double total = 0.0;
        for (int dy = -2; dy <= 2; ++dy) {
            for (int dx = -2; dx <= 2; ++dx) {
                const double v = std::exp(-0.5 * (dx * dx + dy * dy));
                k[(dy + 2) * 5 + (dx + 2)] = v;
                total += v;
            }
        }
        for (double& v : k) {
            v /= total;
        }
        return k;
    }();
    return kernel;
}

Image gaussian_blur_5x5(const Image& map)
{
    const auto& k = gaussian_kernel_5x5();
    const int w = map.width();
    const int h = map.height();
    Image out(w, h, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -2; dy <= 2; ++dy) {
                const int sy = reflect(y + dy, h);
                for (int dx = -2; dx <= 2; ++dx) {
                    acc += k[(dy + 2) * 5 + (dx + 2)] * map.at(reflect(x + dx, w), sy, 0);
                }
            }
            out.at(x, y, 0) = acc;
        }
    }
    return out;
}

double color_suppression(const Image& p, SuppressChannel channel, SuppressionMode mode, Image* grad)
{
    if (p.channels() != 3) {
        throw std::invalid_argument("color_suppression: expected an RGB patch");
    }
    const int w = p.width();
    const int h = p.height();
    const int sel = channel == SuppressChannel::red ? 0 : 1;
    const int o1 = sel == 0 ? 1 : 0;
    const int o2 = 2;

    Image dominance(w, h, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double c = p.at(x, y, sel);
            dominance.at(x, y, 0) =
                mode == SuppressionMode::raw_channel ? c : std::max(0.0, c - std::max(p.at(x, y, o1), p.at(x, y, o2)));
        }
    }
    const Image blurred = gaussian_blur_5x5(dominance);
    double sum = 0.0;
    for (double v : blurred.values()) {
        sum += v;
    }
    const double n = static_cast<double>(w) * h;

    if (grad != nullptr) {
        // d(mean)/d(dominance): each blurred output spreads 1/n back through the kernel taps.
        const auto& k = gaussian_kernel_5x5();
        Image g_dom(w, h, 1);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                for (int dy = -2; dy <= 2; ++dy) {
                    const int sy = reflect(y + dy, h);
                    for (int dx = -2; dx <= 2; ++dx) {
                        g_dom.at(reflect(x + dx, w), sy, 0) += k[(dy + 2) * 5 + (dx + 2)] / n;
                    }
                }
            }
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double g = g_dom.at(x, y, 0);
                if (mode == SuppressionMode::raw_channel) {
                    grad->at(x, y, sel) += g;
                    continue;
                }
                const double c = p.at(x, y, sel);
                const double a = p.at(x, y, o1);
                const double b = p.at(x, y, o2);
                if (c - std::max(a, b) <= 0.0) {
                    continue;
                }
                grad->at(x, y, sel) += g;
                grad->at(x, y, a >= b ? o1 : o2) -= g;
            }
        }
    }
    return sum / n;
}

LossBreakdown compose(double cls, double bbox, double tv, double sup, const AttackConfig& cfg)
{
    LossBreakdown out{cls, bbox, tv, sup, 0.0};
    out.total = cfg.alpha * cls + cfg.beta * bbox + cfg.gamma * tv + cfg.delta * sup;
    return out;
}

}  // namespace tlpatch
