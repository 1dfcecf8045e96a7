#include "tlpatch/config_json.hpp"

#include <set>

namespace tlpatch {
namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what)
{
    if (!j.is_object()) {
        throw ConfigError(std::string(what) + " must be an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out)
{
    if (const auto it = j.find(key); it != j.end()) {
        try {
            out = it->get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

}  // namespace

void to_json(nlohmann::json& j, const Range& r)
{
    j = nlohmann::json::array({r.lo, r.hi});
}

void from_json(const nlohmann::json& j, Range& r)
{
    if (!j.is_array() || j.size() != 2) {
        throw ConfigError("range must be a two-element array [lo, hi]");
    }
    r.lo = j[0].get<double>();
    r.hi = j[1].get<double>();
}

void to_json(nlohmann::json& j, const EotRanges& e)
{
    j = {{"rot_xy_deg", e.rot_xy_deg},
         {"rot_z_deg", e.rot_z_deg},
         {"brightness", e.brightness},
         {"translate_pad_px", e.translate_pad_px},
         {"enabled", e.enabled}};
}

void from_json(const nlohmann::json& j, EotRanges& e)
{
    reject_unknown(j, {"rot_xy_deg", "rot_z_deg", "brightness", "translate_pad_px", "enabled"}, "eot");
    read(j, "rot_xy_deg", e.rot_xy_deg);
    read(j, "rot_z_deg", e.rot_z_deg);
    read(j, "brightness", e.brightness);
    read(j, "translate_pad_px", e.translate_pad_px);
    read(j, "enabled", e.enabled);
}

void to_json(nlohmann::json& j, const AttackConfig& c)
{
    j = {{"alpha", c.alpha},
         {"beta", c.beta},
         {"gamma", c.gamma},
         {"delta", c.delta},
         {"pgd_steps", c.pgd_steps},
         {"learning_rate", c.learning_rate},
         {"scale_range", c.scale_range},
         {"eval_scale", c.eval_scale},
         {"eot", c.eot},
         {"seed", c.seed},
         {"suppress_channel", to_string(c.suppress_channel)},
         {"suppression_mode", to_string(c.suppression_mode)},
         {"update_rule", to_string(c.update_rule)},
         {"reset_moments_per_box", c.reset_moments_per_box},
         {"epochs", c.epochs},
         {"patch_side", c.patch_side},
         {"init", to_string(c.init)},
         {"max_updates", c.max_updates}};
}

void from_json(const nlohmann::json& j, AttackConfig& c)
{
    reject_unknown(j,
                   {"alpha", "beta", "gamma", "delta", "pgd_steps", "learning_rate", "scale_range", "eval_scale", "eot",
                    "seed", "suppress_channel", "suppression_mode", "update_rule", "reset_moments_per_box", "epochs",
                    "patch_side", "init", "max_updates"},
                   "attack_config");
    read(j, "alpha", c.alpha);
    read(j, "beta", c.beta);
    read(j, "gamma", c.gamma);
    read(j, "delta", c.delta);
    read(j, "pgd_steps", c.pgd_steps);
    read(j, "learning_rate", c.learning_rate);
    read(j, "scale_range", c.scale_range);
    read(j, "eval_scale", c.eval_scale);
    read(j, "eot", c.eot);
    read(j, "seed", c.seed);
    std::string s;
    if (j.contains("suppress_channel")) {
        read(j, "suppress_channel", s);
        c.suppress_channel = parse_suppress_channel(s);
    }
    if (j.contains("suppression_mode")) {
        read(j, "suppression_mode", s);
        c.suppression_mode = parse_suppression_mode(s);
    }
    if (j.contains("update_rule")) {
        read(j, "update_rule", s);
        c.update_rule = parse_update_rule(s);
    }
    read(j, "reset_moments_per_box", c.reset_moments_per_box);
    read(j, "epochs", c.epochs);
    read(j, "patch_side", c.patch_side);
    if (j.contains("init")) {
        read(j, "init", s);
        c.init = parse_patch_init(s);
    }
    read(j, "max_updates", c.max_updates);
}

}  // namespace tlpatch
