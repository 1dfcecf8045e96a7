#pragma once

#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlpatch/core.hpp"
#include "tlpatch/detector.hpp"

namespace tlpatch {

enum class Outcome { flip, correct, vanish, other_misclass };
std::string to_string(Outcome o);

struct EvalOptions {
    double match_iou = 0.5;
    double fabrication_iou = 0.3;
};

// Bucket of one targeted GT box against a detection set.
//   flip:    a detection with IoU >= match_iou and class == target_class
//   correct: a detection with IoU >= match_iou and class == gt class (and not flip)
//   vanish:  no detection with IoU >= match_iou
//   other_misclass: the remainder
Outcome classify_target(const GroundTruth& gt, ClassId target_class, std::span<const Detection> dets,
                        double match_iou = 0.5);

// True when some detection has IoU < fabrication_iou against every GT box.
bool has_fabrication(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                     double fabrication_iou = 0.3);

// Detections and ground truth of one class across a set of images, for AP.
struct ApInput {
    std::vector<std::vector<Detection>> detections;  // per image, already filtered by class
    std::vector<std::vector<BBox>> ground_truth;     // per image, same class
};

// 11-point interpolated average precision at the given IoU. Detections are processed in
// descending confidence (stable in image / detection order); each is a true positive when
// its best-IoU GT box in the same image reaches the threshold and is still unmatched.
// Returns nullopt when there is no ground truth.
std::optional<double> average_precision_11pt(const ApInput& input, double iou_threshold = 0.5);

struct BucketCounts {
    long targets = 0;
    long flip = 0;
    long correct = 0;
    long vanish = 0;
    long other_misclass = 0;

    void add(Outcome o);
    double rate(long count) const { return targets == 0 ? 0.0 : static_cast<double>(count) / targets; }
};

struct RunSummary {
    BucketCounts buckets;
    long images = 0;
    long fabrication_images = 0;
    std::map<ClassId, double> ap;
    std::map<std::string, BucketCounts> by_size;  // GT width bins

    double flip_rate() const { return buckets.rate(buckets.flip); }
    double correct_rate() const { return buckets.rate(buckets.correct); }
    double vanish_rate() const { return buckets.rate(buckets.vanish); }
    double other_misclass_rate() const { return buckets.rate(buckets.other_misclass); }
    double fabrication_rate() const
    {
        return images == 0 ? 0.0 : static_cast<double>(fabrication_images) / images;
    }
};

struct ImageRecord {
    std::string image_id;
    std::vector<int> target_indices;  // indices into gt of the targeted boxes
    std::vector<Outcome> clean;
    std::vector<Outcome> patched;     // empty for clean-only runs
    bool fabrication_clean = false;
    bool fabrication_patched = false;
    std::vector<Detection> detections_clean;
    std::vector<Detection> detections_patched;
};

struct AttackReport {
    RunSummary clean;
    std::optional<RunSummary> patched;
    std::vector<ImageRecord> images;

    // Summary the headline rates refer to: the patched run when a patch was given.
    const RunSummary& attacked() const { return patched ? *patched : clean; }
    long n_targets() const { return attacked().buckets.targets; }
    double flip_rate() const { return attacked().flip_rate(); }
    double vanish_rate() const { return attacked().vanish_rate(); }
    double correct_rate() const { return attacked().correct_rate(); }
    double other_misclass_rate() const { return attacked().other_misclass_rate(); }
    double fabrication_rate() const { return attacked().fabrication_rate(); }
};

// Composites `patch` under every GT box whose class is in m's domain, at `scale` with the
// identity transform. Boxes where the patch does not fit are left untouched.
Image composite_under_targets(const AnnotatedImage& sample, const Patch& patch, const TargetClassMapping& m,
                              double scale);

// Clean run, plus a patched run when `patch` is non-null. Targets are the GT boxes whose
// class lies in m's domain.
AttackReport evaluate(std::span<const AnnotatedImage> dataset, const DetectorAdapter& adapter, const Patch* patch,
                      const TargetClassMapping& m, const AttackConfig& cfg, const EvalOptions& options = {});

nlohmann::json to_json(const AttackReport& report, const ClassMap& classes);

// --- synthetic scenes ------------------------------------------------------------------

struct SceneOptions {
    int width = 640;
    int height = 480;
    int min_lights = 1;
    int max_lights = 3;
    int min_box_width = 12;
    int max_box_width = 40;
    double red_fraction = 0.5;
    double max_patch_scale = 3.0;  // room kept free below each light
    double pad_px = 10.0;
};

// Class map of rendered scenes: 0 red, 1 green.
ClassMap synthetic_class_map();

// Traffic-light stand-ins (dark housing, one saturated lit lamp, unlit lamps) on a textured
// gray background. Pixel values are multiples of 1/255, so scenes survive 8-bit PNG exactly.
std::vector<AnnotatedImage> render_synthetic(int n, const SceneOptions& options, std::mt19937_64& rng);

}  // namespace tlpatch
