#pragma once

#include <json.hpp>

#include "tlpatch/core.hpp"

namespace tlpatch {

void to_json(nlohmann::json& j, const Range& r);
void from_json(const nlohmann::json& j, Range& r);
void to_json(nlohmann::json& j, const EotRanges& e);
void from_json(const nlohmann::json& j, EotRanges& e);
// Unknown keys are rejected with ConfigError; missing keys keep their defaults.
void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

}  // namespace tlpatch
