#include "tlpatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tlpatch/compositor.hpp"

namespace tlpatch {

AdamOptimizer::AdamOptimizer(std::size_t size, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0)
{
}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad)
{
    if (params.size() != m_.size() || grad.size() != m_.size()) {
        throw std::invalid_argument("AdamOptimizer::step: size mismatch");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        const double m_hat = m_[i] / c1;
        const double v_hat = v_[i] / c2;
        params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
}

void AdamOptimizer::reset()
{
    t_ = 0;
    std::fill(m_.begin(), m_.end(), 0.0);
    std::fill(v_.begin(), v_.end(), 0.0);
}

Patch init_patch(int side_px, PatchInit mode, std::mt19937_64& rng)
{
    if (side_px < 1) {
        throw ConfigError("init_patch: side must be >= 1");
    }
    Patch p(side_px, 0.5);
    if (mode == PatchInit::uniform_random) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (double& v : p.pixels().values()) {
            v = u(rng);
        }
    }
    return p;
}

TrainResult train(std::span<const AnnotatedImage> dataset, const DetectorAdapter& adapter,
                  const TargetClassMapping& m, const AttackConfig& cfg, const StepObserver& observer)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    Patch initial = init_patch(cfg.patch_side, cfg.init, rng);
    return train_from(std::move(initial), dataset, adapter, m, cfg, observer);
}

TrainResult train_from(Patch initial, std::span<const AnnotatedImage> dataset, const DetectorAdapter& adapter,
                       const TargetClassMapping& m, const AttackConfig& cfg, const StepObserver& observer)
{
    cfg.validate();
    if (dataset.empty()) {
        throw DataError("train: empty dataset");
    }
    const bool any_relevant = std::any_of(dataset.begin(), dataset.end(), [&](const AnnotatedImage& img) {
        return std::any_of(img.gt.begin(), img.gt.end(), [&](const GroundTruth& g) { return m.in_domain(g.class_id); });
    });
    if (!any_relevant) {
        throw DataError("nothing to attack: no ground-truth box has a class in the target mapping's domain");
    }

    // Separate streams so that toggling EOT does not shift the scale draws.
    std::mt19937_64 scale_rng(cfg.seed ^ 0x5ca1eULL);
    std::mt19937_64 eot_rng(cfg.seed ^ 0xe07ULL);
    std::uniform_real_distribution<double> scale_dist(cfg.scale_range.lo, cfg.scale_range.hi);

    TrainResult result;
    result.patch = std::move(initial);
    Patch& patch = result.patch;
    const std::size_t n = patch.pixels().values().size();
    AdamOptimizer adam(n, cfg.learning_rate);
    Image grad_patch(patch.side(), patch.side(), 3);
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const AnnotatedImage& sample : dataset) {
            const Image& clean = sample.image;
            Image work = clean;
            Image grad_image(clean.width(), clean.height(), 3);
            for (std::size_t bi = 0; bi < sample.gt.size(); ++bi) {
                const GroundTruth& gt = sample.gt[bi];
                if (!m.in_domain(gt.class_id)) {
                    if (epoch == 0) {
                        ++result.boxes_irrelevant;
                    }
                    continue;
                }
                const double scale = cfg.scale_range.lo == cfg.scale_range.hi ? cfg.scale_range.lo : scale_dist(scale_rng);
                const auto placement = placement_for(gt.box, clean.width(), clean.height(), scale);
                if (!placement) {
                    if (epoch == 0) {
                        ++result.boxes_unplaceable;
                    }
                    continue;
                }
                if (epoch == 0) {
                    ++result.boxes_attacked;
                }
                if (cfg.reset_moments_per_box) {
                    adam.reset();
                }
                const GroundTruth target{gt.box, m(gt.class_id)};
                for (int k = 0; k < cfg.pgd_steps; ++k) {
                    if (cfg.max_updates > 0 && step >= cfg.max_updates) {
                        result.truncated = true;
                        return result;
                    }
                    const TransformParams t = sample_transform(cfg.eot, eot_rng);
                    const PatchWarp warp = PatchWarp::build(patch.side(), clean.width(), clean.height(), *placement, t);
                    warp.composite(patch, work);

                    grad_image.fill(0.0);
                    grad_patch.fill(0.0);
                    const AttackLosses det = adapter.attack_losses(work, std::span(&target, 1), &grad_image,
                                                                   LossWeights{cfg.alpha, cfg.beta});
                    warp.backward(patch, grad_image, grad_patch);
                    warp.restore(clean, work);

                    Image tv_grad(patch.side(), patch.side(), 3);
                    Image sup_grad(patch.side(), patch.side(), 3);
                    const double tv = total_variation(patch.pixels(), kTvEpsilon, &tv_grad);
                    const double sup =
                        color_suppression(patch.pixels(), cfg.suppress_channel, cfg.suppression_mode, &sup_grad);
                    const LossBreakdown loss = compose(det.cls, det.bbox, tv, sup, cfg);
                    if (!std::isfinite(loss.total)) {
                        std::ostringstream msg;
                        msg << "non-finite loss at step " << step << " (image " << sample.image_id << ", box " << bi
                            << "): cls=" << det.cls << " bbox=" << det.bbox << " tv=" << tv << " sup=" << sup;
                        throw NumericError(msg.str());
                    }

                    auto g = grad_patch.values();
                    const auto gtv = tv_grad.values();
                    const auto gsup = sup_grad.values();
                    for (std::size_t i = 0; i < n; ++i) {
                        g[i] += cfg.gamma * gtv[i] + cfg.delta * gsup[i];
                    }
                    if (cfg.update_rule == UpdateRule::adam) {
                        adam.step(patch.pixels().values(), g);
                    } else {
                        auto p = patch.pixels().values();
                        for (std::size_t i = 0; i < n; ++i) {
                            p[i] -= cfg.learning_rate * static_cast<double>((g[i] > 0.0) - (g[i] < 0.0));
                        }
                    }
                    patch.clamp_to_unit();

                    StepRecord rec{step, sample.image_id, static_cast<int>(bi), scale, loss};
                    if (observer) {
                        observer(rec);
                    }
                    result.history.push_back(std::move(rec));
                    ++step;
                }
            }
        }
    }
    return result;
}

}  // namespace tlpatch
