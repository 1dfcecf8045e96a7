#pragma once

#include <array>
#include <optional>
#include <random>
#include <vector>

#include "tlpatch/core.hpp"

namespace tlpatch {

// Where a scaled patch lands in the image.
struct Placement {
    BBox rect;
    double scale_factor = 1.0;
};

struct TransformParams {
    double rot_x_deg = 0.0;
    double rot_y_deg = 0.0;
    double rot_z_deg = 0.0;
    double brightness = 1.0;
    double translate_dx = 0.0;
    double translate_dy = 0.0;

    static TransformParams identity() { return {}; }
    bool has_rotation() const { return rot_x_deg != 0.0 || rot_y_deg != 0.0 || rot_z_deg != 0.0; }
};

// Square of side round(scale * gt.width), horizontally centred on the box, top edge on
// gt.y_max. Empty when the square leaves the image.
std::optional<Placement> placement_for(const BBox& gt, int image_width, int image_height,
                                       double scale_factor);

// Independent uniform draws for every parameter; identity when the ranges are disabled.
TransformParams sample_transform(const EotRanges& ranges, std::mt19937_64& rng);

// Shifts the placement by (dx, dy), clipping the offset so the rect stays inside the image.
Placement translated(const Placement& placement, double dx, double dy, int image_width,
                     int image_height);

// Bilinear resize with pixel-centre alignment and edge clamping.
Image resize_bilinear(const Image& src, int out_width, int out_height);

// One output pixel covered by the transformed patch, with its four bilinear taps.
struct WarpSample {
    int x = 0;
    int y = 0;
    std::array<int, 4> taps{};  // pixel indices into the patch (y * side + x)
    std::array<double, 4> weights{};
};

// Footprint of a transformed, placed patch in the image frame. Building it is the geometric
// half of the patch application operator; composite() and backward() are the photometric
// forward pass and its vector-Jacobian product with respect to the patch pixels.
class PatchWarp {
public:
    static PatchWarp build(int patch_side, int image_width, int image_height,
                           const Placement& placement, const TransformParams& t);

    void composite(const Patch& patch, Image& image) const;

    // Accumulates d(loss)/d(patch) into grad_patch given d(loss)/d(image) of the composite.
    void backward(const Patch& patch, const Image& grad_image, Image& grad_patch) const;

    // Copies the footprint pixels of `source` into `image` (undoes composite()).
    void restore(const Image& source, Image& image) const;

    const std::vector<WarpSample>& samples() const { return samples_; }
    const BBox& rect() const { return rect_; }
    double brightness() const { return brightness_; }
    int patch_side() const { return patch_side_; }

private:
    std::vector<WarpSample> samples_;
    BBox rect_;
    double brightness_ = 1.0;
    int patch_side_ = 0;
    int image_width_ = 0;
    int image_height_ = 0;
};

// A(p, x, l, t): returns x with the transformed patch composited at the placement.
// Throws std::invalid_argument when the placement does not fit the image.
Image apply(const Patch& p, const Image& x, const Placement& placement, const TransformParams& t);

}  // namespace tlpatch
