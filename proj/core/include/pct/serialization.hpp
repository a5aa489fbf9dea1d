#pragma once

// JSON mappings for the domain types that appear in manifests and configs.

#include <json.hpp>

#include "pct/geometry.hpp"
#include "pct/synthdata.hpp"

namespace pct {

using Json = nlohmann::json;

/// Throws ConfigError naming `where` if `j` holds a key outside `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed,
                         const std::string& where);

}  // namespace pct

namespace pct::geom {
void to_json(Json& j, const CameraIntrinsics& v);
void from_json(const Json& j, CameraIntrinsics& v);
void to_json(Json& j, const CameraExtrinsics& v);
void from_json(const Json& j, CameraExtrinsics& v);
void to_json(Json& j, const Camera& v);
void from_json(const Json& j, Camera& v);
void to_json(Json& j, const BevGridSpec& v);
void from_json(const Json& j, BevGridSpec& v);
}  // namespace pct::geom

namespace pct::synth {
void to_json(Json& j, const LayoutParams& v);
void from_json(const Json& j, LayoutParams& v);
void to_json(Json& j, const DomainSpec& v);
void from_json(const Json& j, DomainSpec& v);
void to_json(Json& j, const EgoPose& v);
void from_json(const Json& j, EgoPose& v);
}  // namespace pct::synth
