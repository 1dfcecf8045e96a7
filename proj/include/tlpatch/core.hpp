#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlpatch {

// Error taxonomy. The CLI maps each family onto an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ConfigError : public Error {
public:
    using Error::Error;
};
class DataError : public Error {
public:
    using Error::Error;
};
class IntegrityError : public DataError {
public:
    using DataError::DataError;
};
class NumericError : public Error {
public:
    using Error::Error;
};

using ClassId = int;

// Axis-aligned box in pixel coordinates, origin top-left, x to the right, y down.
struct BBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }
    double area() const { return width() * height(); }
    bool valid() const { return x_min < x_max && y_min < y_max; }
    bool inside(int image_width, int image_height) const
    {
        return x_min >= 0.0 && y_min >= 0.0 && x_max <= image_width && y_max <= image_height;
    }

    friend bool operator==(const BBox&, const BBox&) = default;
};

double iou(const BBox& a, const BBox& b);

// Dense row-major image with interleaved channels; values are reals, nominally in [0,1].
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels = 3, double fill = 0.0);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    bool empty() const { return data_.empty(); }

    std::size_t index(int x, int y, int c) const
    {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }
    double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
    double at(int x, int y, int c) const { return data_[index(x, y, c)]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool in_unit_range() const;
    void fill(double v);
    Image crop(int x0, int y0, int w, int h) const;

    friend bool operator==(const Image&, const Image&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

// Square trainable RGB tile. Pixels stay in [0,1] after every trainer step.
class Patch {
public:
    Patch() = default;
    explicit Patch(int side, double fill = 0.5);
    explicit Patch(Image pixels);

    int side() const { return pixels_.width(); }
    const Image& pixels() const { return pixels_; }
    Image& pixels() { return pixels_; }

    void clamp_to_unit();

    friend bool operator==(const Patch&, const Patch&) = default;

private:
    Image pixels_;
};

struct Detection {
    BBox box;
    double confidence = 0.0;
    ClassId class_id = 0;
};

struct GroundTruth {
    BBox box;
    ClassId class_id = 0;

    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct AnnotatedImage {
    std::string image_id;
    Image image;
    std::vector<GroundTruth> gt;
};

// Contiguous id -> unique name table ("red", "green", "red_left_arrow", ...).
class ClassMap {
public:
    ClassMap() = default;
    explicit ClassMap(std::vector<std::string> names, std::string name = {});

    int size() const { return static_cast<int>(names_.size()); }
    bool contains(ClassId id) const { return id >= 0 && id < size(); }
    const std::string& name_of(ClassId id) const;
    std::optional<ClassId> id_of(const std::string& name) const;
    const std::vector<std::string>& names() const { return names_; }
    const std::string& map_name() const { return map_name_; }

private:
    std::vector<std::string> names_;
    std::string map_name_;
};

// Partial map of attacked class -> adversarial label; identity outside its domain.
class TargetClassMapping {
public:
    TargetClassMapping() = default;
    explicit TargetClassMapping(std::map<ClassId, ClassId> entries);

    ClassId operator()(ClassId c) const;
    bool in_domain(ClassId c) const { return entries_.contains(c); }
    bool empty() const { return entries_.empty(); }
    const std::map<ClassId, ClassId>& entries() const { return entries_; }

    // Parses "red:green,red_left_arrow:green_left_arrow" against a class map.
    static TargetClassMapping parse(const std::string& spec, const ClassMap& classes);
    std::string to_string(const ClassMap& classes) const;

    friend bool operator==(const TargetClassMapping&, const TargetClassMapping&) = default;

private:
    std::map<ClassId, ClassId> entries_;
};

Detection apply_mapping(const TargetClassMapping& m, const Detection& y);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    double width() const { return hi - lo; }
    bool contains(double v) const { return v >= lo && v <= hi; }
    friend bool operator==(const Range&, const Range&) = default;
};

// Sampling intervals for expectation over transformations.
struct EotRanges {
    Range rot_xy_deg{-5.0, 5.0};
    Range rot_z_deg{-10.0, 10.0};
    Range brightness{0.4, 1.6};
    double translate_pad_px = 10.0;
    bool enabled = false;

    void validate() const;
    friend bool operator==(const EotRanges&, const EotRanges&) = default;
};

enum class SuppressChannel { green, red };
enum class SuppressionMode { dominance, raw_channel };
enum class UpdateRule { adam, sign };
enum class PatchInit { gray, uniform_random };

struct AttackConfig {
    // Composite loss weights: alpha*cls + beta*bbox + gamma*tv + delta*colour suppression.
    double alpha = 1.0;
    double beta = 0.0;
    double gamma = 0.8;
    double delta = 0.0;

    int pgd_steps = 10;
    double learning_rate = 0.05;
    Range scale_range{2.0, 3.0};
    double eval_scale = 2.5;
    EotRanges eot;
    std::uint64_t seed = 0;
    SuppressChannel suppress_channel = SuppressChannel::green;
    SuppressionMode suppression_mode = SuppressionMode::dominance;

    UpdateRule update_rule = UpdateRule::adam;
    bool reset_moments_per_box = false;
    int epochs = 1;
    int patch_side = 64;
    PatchInit init = PatchInit::gray;
    long max_updates = 0;  // 0 = unlimited

    void validate() const;
    friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

// Named hyperparameter presets. "digital": alpha=1, gamma=0.8, beta=delta=0, no EOT.
// "physical": alpha=1, beta=2, gamma=5, delta=0.0002, EOT on.
AttackConfig digital_profile();
AttackConfig physical_profile();
AttackConfig profile_by_name(const std::string& name);

std::string to_string(SuppressChannel c);
std::string to_string(SuppressionMode m);
std::string to_string(UpdateRule r);
std::string to_string(PatchInit i);
SuppressChannel parse_suppress_channel(const std::string& s);
SuppressionMode parse_suppression_mode(const std::string& s);
UpdateRule parse_update_rule(const std::string& s);
PatchInit parse_patch_init(const std::string& s);

}  // namespace tlpatch
