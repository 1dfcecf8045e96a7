#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlpatch/core.hpp"

namespace tlpatch {

struct LossWeights {
    double cls = 1.0;
    double bbox = 1.0;
};

struct AttackLosses {
    double cls = 0.0;
    double bbox = 0.0;
};

// Contract every attackable detector satisfies. detect() is deterministic for fixed model
// state; attack_losses() is differentiable with respect to the input pixels. Implementations
// must tolerate concurrent const calls.
class DetectorAdapter {
public:
    virtual ~DetectorAdapter() = default;

    virtual std::string name() const = 0;
    virtual const ClassMap& class_map() const = 0;

    // Detections after the adapter's confidence threshold and NMS. Throws DataError for
    // pixel values outside [0,1].
    virtual std::vector<Detection> detect(const Image& image) const = 0;

    // Classification loss toward each target's class and localisation loss toward its box,
    // averaged over targets. When grad_image is non-null, the gradient of
    // weights.cls * cls + weights.bbox * bbox is accumulated into it.
    virtual AttackLosses attack_losses(const Image& image, std::span<const GroundTruth> targets,
                                       Image* grad_image = nullptr, LossWeights weights = {}) const = 0;
};

struct ContextBlobOptions {
    double objectness_gain = 12.0;
    double objectness_threshold = 0.15;
    double context_weight = 0.6;
    double logit_gain = 6.0;
    double confidence_threshold = 0.5;
    double nms_iou = 0.5;

    // Proposal stage.
    double lit_level = 0.5;     // max(R, G) of a lamp pixel
    double lit_margin = 0.3;    // max(R, G) - B of a lamp pixel
    double dark_level = 0.25;   // max(R, G, B) of a housing pixel
    double dark_fraction = 0.7; // share of dark pixels for a strip to join the housing
    int min_lamp_pixels = 3;
    int max_growth = 4;         // housing may extend at most this many lamp sizes per side
};

// Closed-form scores of the classification head on one region of interest.
struct HeadOutput {
    double own_r = 0.0;
    double own_g = 0.0;
    double context_r = 0.0;
    double context_g = 0.0;
    double objectness = 0.0;
    double logit = 0.0;  // red logit; the green logit is its negation
    std::array<double, 2> probs{};
    ClassId best = 0;
    double confidence = 0.0;
};

// Differentiable reference detector for red/green lights. Proposals are lit lamp blobs
// enclosed by a dark housing; each proposal box is scored from the mean red/green of the box
// and of the equally sized region directly below it:
//   objectness = sigmoid(k * (max(f_R, f_G) - theta))
//   logits     = gain * ((f_R - f_G) + w1 * (c_R - c_G)) * (+1, -1)
//   confidence = objectness * softmax(logits)[best]
// The below-box context term is the receptive-field effect a patch under the light exploits.
class ContextBlobDetector final : public DetectorAdapter {
public:
    static constexpr ClassId kRed = 0;
    static constexpr ClassId kGreen = 1;

    explicit ContextBlobDetector(ContextBlobOptions options = {});

    std::string name() const override { return "context_blob"; }
    const ClassMap& class_map() const override { return classes_; }
    std::vector<Detection> detect(const Image& image) const override;
    AttackLosses attack_losses(const Image& image, std::span<const GroundTruth> targets,
                               Image* grad_image = nullptr, LossWeights weights = {}) const override;

    HeadOutput head(const Image& image, const BBox& roi) const;

    // Housing boxes found inside [x0, x1) x [y0, y1).
    std::vector<BBox> proposals(const Image& image, int x0, int y0, int x1, int y1) const;
    std::vector<BBox> proposals(const Image& image) const
    {
        return proposals(image, 0, 0, image.width(), image.height());
    }

    const ContextBlobOptions& options() const { return options_; }

private:
    ContextBlobOptions options_;
    ClassMap classes_;
};

// Adapter discovery by name. Options are adapter specific; unknown names or keys throw
// ConfigError.
std::unique_ptr<DetectorAdapter> make_detector(const std::string& name,
                                               const nlohmann::json& options = nlohmann::json::object());
std::vector<std::string> available_detectors();

}  // namespace tlpatch
