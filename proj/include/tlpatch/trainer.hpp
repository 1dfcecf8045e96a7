#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tlpatch/core.hpp"
#include "tlpatch/detector.hpp"
#include "tlpatch/losses.hpp"

namespace tlpatch {

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class AdamOptimizer {
public:
    AdamOptimizer(std::size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    void step(std::span<double> params, std::span<const double> grad);
    void reset();
    long steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

Patch init_patch(int side_px, PatchInit mode, std::mt19937_64& rng);

struct StepRecord {
    long step = 0;
    std::string image_id;
    int box_index = 0;
    double scale_factor = 0.0;
    LossBreakdown loss;
};

struct TrainResult {
    Patch patch;
    std::vector<StepRecord> history;  // one record per optimizer step
    long boxes_attacked = 0;          // relevant boxes that received updates
    long boxes_irrelevant = 0;        // boxes outside the mapping's domain (never updated)
    long boxes_unplaceable = 0;       // relevant boxes where the patch did not fit
    bool truncated = false;           // stopped early by max_updates
};

using StepObserver = std::function<void(const StepRecord&)>;

// Universal patch optimisation. For every epoch, image and relevant GT box: place the patch
// below the box at a scale drawn from cfg.scale_range, then run cfg.pgd_steps updates of
// {sample EOT transform -> composite -> detector + patch losses -> Adam (or sign) step ->
// clamp to [0,1]}. Deterministic given cfg.seed.
TrainResult train(std::span<const AnnotatedImage> dataset, const DetectorAdapter& adapter,
                  const TargetClassMapping& m, const AttackConfig& cfg, const StepObserver& observer = {});

// Same, starting from an explicit initial patch (the side of `initial` overrides cfg.patch_side).
TrainResult train_from(Patch initial, std::span<const AnnotatedImage> dataset, const DetectorAdapter& adapter,
                       const TargetClassMapping& m, const AttackConfig& cfg, const StepObserver& observer = {});

}  // namespace tlpatch
