#include "tlpatch/core.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace tlpatch {

double iou(const BBox& a, const BBox& b)
{
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0.0 || ih <= 0.0) {
        return 0.0;
    }
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) {
        return 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

Image::Image(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels)
{
    if (width < 0 || height < 0 || channels < 1) {
        throw std::invalid_argument("Image: bad dimensions");
    }
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

bool Image::in_unit_range() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

void Image::fill(double v)
{
    std::fill(data_.begin(), data_.end(), v);
}

Image Image::crop(int x0, int y0, int w, int h) const
{
    if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > width_ || y0 + h > height_) {
        throw std::out_of_range("Image::crop: window outside image");
    }
    Image out(w, h, channels_);
    for (int y = 0; y < h; ++y) {
        const auto src = data_.begin() + static_cast<std::ptrdiff_t>(index(x0, y0 + y, 0));
        std::copy(src, src + static_cast<std::ptrdiff_t>(w) * channels_,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(out.index(0, y, 0)));
    }
    return out;
}

Patch::Patch(int side, double fill)
    : pixels_(side, side, 3, fill)
{
    if (side < 1) {
        throw std::invalid_argument("Patch: side must be >= 1");
    }
}

Patch::Patch(Image pixels)
    : pixels_(std::move(pixels))
{
    if (pixels_.width() != pixels_.height() || pixels_.width() < 1) {
        throw std::invalid_argument("Patch: pixels must be a non-empty square");
    }
    if (pixels_.channels() != 3) {
        throw std::invalid_argument("Patch: pixels must have 3 channels");
    }
}

void Patch::clamp_to_unit()
{
    for (double& v : pixels_.values()) {
        v = std::clamp(v, 0.0, 1.0);
    }
}

ClassMap::ClassMap(std::vector<std::string> names, std::string name)
    : names_(std::move(names)), map_name_(std::move(name))
{
    std::set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty()) {
            throw DataError("class map: empty class name");
        }
        if (!seen.insert(n).second) {
            throw DataError("class map: duplicate class name '" + n + "'");
        }
    }
}

const std::string& ClassMap::name_of(ClassId id) const
{
    if (!contains(id)) {
        throw DataError("class id " + std::to_string(id) + " not in class map");
    }
    return names_[static_cast<std::size_t>(id)];
}

std::optional<ClassId> ClassMap::id_of(const std::string& name) const
{
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) {
        return std::nullopt;
    }
    return static_cast<ClassId>(it - names_.begin());
}

TargetClassMapping::TargetClassMapping(std::map<ClassId, ClassId> entries)
    : entries_(std::move(entries))
{
}

ClassId TargetClassMapping::operator()(ClassId c) const
{
    const auto it = entries_.find(c);
    return it == entries_.end() ? c : it->second;
}

TargetClassMapping TargetClassMapping::parse(const std::string& spec, const ClassMap& classes)
{
    std::map<ClassId, ClassId> entries;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) {
            continue;
        }
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw ConfigError("target mapping entry '" + item + "' is not of the form from:to");
        }
        const auto from = classes.id_of(item.substr(0, colon));
        const auto to = classes.id_of(item.substr(colon + 1));
        if (!from || !to) {
            throw ConfigError("target mapping entry '" + item + "' names a class outside the class map");
        }
        if (!entries.emplace(*from, *to).second) {
            throw ConfigError("target mapping maps class '" + item.substr(0, colon) + "' twice");
        }
    }
    return TargetClassMapping(std::move(entries));
}

std::string TargetClassMapping::to_string(const ClassMap& classes) const
{
    std::string out;
    for (const auto& [from, to] : entries_) {
        if (!out.empty()) {
            out += ',';
        }
        out += classes.name_of(from) + ':' + classes.name_of(to);
    }
    return out;
}

Detection apply_mapping(const TargetClassMapping& m, const Detection& y)
{
    Detection out = y;
    out.class_id = m(y.class_id);
    return out;
}

void EotRanges::validate() const
{
    if (rot_xy_deg.lo > rot_xy_deg.hi || rot_z_deg.lo > rot_z_deg.hi || brightness.lo > brightness.hi) {
        throw ConfigError("EOT range with lo > hi");
    }
    if (translate_pad_px < 0.0) {
        throw ConfigError("EOT translate_pad_px must be >= 0");
    }
    if (brightness.lo < 0.0) {
        throw ConfigError("EOT brightness must be nonnegative");
    }
}

void AttackConfig::validate() const
{
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0 || delta < 0.0) {
        throw ConfigError("loss weights must be nonnegative");
    }
    if (pgd_steps < 1) {
        throw ConfigError("pgd_steps must be >= 1");
    }
    if (!(learning_rate > 0.0)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (scale_range.lo > scale_range.hi || !(scale_range.lo > 0.0)) {
        throw ConfigError("scale_range must satisfy 0 < lo <= hi");
    }
    if (!(eval_scale > 0.0)) {
        throw ConfigError("eval_scale must be positive");
    }
    if (epochs < 1) {
        throw ConfigError("epochs must be >= 1");
    }
    if (patch_side < 1) {
        throw ConfigError("patch_side must be >= 1");
    }
    if (max_updates < 0) {
        throw ConfigError("max_updates must be >= 0");
    }
    eot.validate();
}

AttackConfig digital_profile()
{
    AttackConfig cfg;
    cfg.alpha = 1.0;
    cfg.beta = 0.0;
    cfg.gamma = 0.8;
    cfg.delta = 0.0;
    cfg.eot.enabled = false;
    return cfg;
}

AttackConfig physical_profile()
{
    AttackConfig cfg;
    cfg.alpha = 1.0;
    cfg.beta = 2.0;
    cfg.gamma = 5.0;
    cfg.delta = 0.0002;
    cfg.eot.enabled = true;
    return cfg;
}

AttackConfig profile_by_name(const std::string& name)
{
    if (name == "digital") {
        return digital_profile();
    }
    if (name == "physical") {
        return physical_profile();
    }
    throw ConfigError("unknown profile '" + name + "' (expected digital or physical)");
}

std::string to_string(SuppressChannel c)
{
    return c == SuppressChannel::green ? "green" : "red";
}

std::string to_string(SuppressionMode m)
{
    return m == SuppressionMode::dominance ? "dominance" : "raw_channel";
}

std::string to_string(UpdateRule r)
{
    return r == UpdateRule::adam ? "adam" : "sign";
}

std::string to_string(PatchInit i)
{
    return i == PatchInit::gray ? "gray" : "uniform_random";
}

SuppressChannel parse_suppress_channel(const std::string& s)
{
    if (s == "green") return SuppressChannel::green;
    if (s == "red") return SuppressChannel::red;
    throw ConfigError("suppress_channel must be green or red, got '" + s + "'");
}

SuppressionMode parse_suppression_mode(const std::string& s)
{
    if (s == "dominance") return SuppressionMode::dominance;
    if (s == "raw_channel") return SuppressionMode::raw_channel;
    throw ConfigError("suppression_mode must be dominance or raw_channel, got '" + s + "'");
}

UpdateRule parse_update_rule(const std::string& s)
{
    if (s == "adam") return UpdateRule::adam;
    if (s == "sign") return UpdateRule::sign;
    throw ConfigError("update_rule must be adam or sign, got '" + s + "'");
}

PatchInit parse_patch_init(const std::string& s)
{
    if (s == "gray") return PatchInit::gray;
    if (s == "uniform_random") return PatchInit::uniform_random;
    throw ConfigError("init must be gray or uniform_random, got '" + s + "'");
}

}  // namespace tlpatch
