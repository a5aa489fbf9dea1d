#include "pct/serialization.hpp"

namespace pct {

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace pct

namespace pct::geom {

void to_json(Json& j, const CameraIntrinsics& v) {
  j = Json{{"fx", v.fx}, {"fy", v.fy}, {"cx", v.cx}, {"cy", v.cy},
           {"width", v.width}, {"height", v.height}};
}
void from_json(const Json& j, CameraIntrinsics& v) {
  j.at("fx").get_to(v.fx);
  j.at("fy").get_to(v.fy);
  j.at("cx").get_to(v.cx);
  j.at("cy").get_to(v.cy);
  j.at("width").get_to(v.width);
  j.at("height").get_to(v.height);
}

void to_json(Json& j, const CameraExtrinsics& v) {
  j = Json{{"rotation", v.rotation.m},
           {"translation", {v.translation.x, v.translation.y, v.translation.z}}};
}
void from_json(const Json& j, CameraExtrinsics& v) {
  j.at("rotation").get_to(v.rotation.m);
  const auto t = j.at("translation").get<std::array<double, 3>>();
  v.translation = {t[0], t[1], t[2]};
}

void to_json(Json& j, const Camera& v) {
  j = Json{{"intrinsics", v.intrinsics}, {"extrinsics", v.extrinsics}};
}
void from_json(const Json& j, Camera& v) {
  j.at("intrinsics").get_to(v.intrinsics);
  j.at("extrinsics").get_to(v.extrinsics);
}

void to_json(Json& j, const BevGridSpec& v) {
  j = Json{{"h", v.h}, {"w", v.w}, {"num_classes", v.num_classes},
           {"x_range", {v.x_min, v.x_max}}, {"y_range", {v.y_min, v.y_max}},
           {"resolution", v.resolution}};
}
void from_json(const Json& j, BevGridSpec& v) {
  j.at("h").get_to(v.h);
  j.at("w").get_to(v.w);
  j.at("num_classes").get_to(v.num_classes);
  const auto xr = j.at("x_range").get<std::array<double, 2>>();
  const auto yr = j.at("y_range").get<std::array<double, 2>>();
  v.x_min = xr[0];
  v.x_max = xr[1];
  v.y_min = yr[0];
  v.y_max = yr[1];
  j.at("resolution").get_to(v.resolution);
}

}  // namespace pct::geom

namespace pct::synth {

void to_json(Json& j, const LayoutParams& v) {
  j = Json{{"grid", v.grid},
           {"min_roads", v.min_roads},
           {"max_roads", v.max_roads},
           {"road_width_min", v.road_width_min},
           {"road_width_max", v.road_width_max},
           {"divider_width", v.divider_width},
           {"walkway_width_min", v.walkway_width_min},
           {"walkway_width_max", v.walkway_width_max},
           {"crossing_period", v.crossing_period},
           {"crossing_width", v.crossing_width},
           {"min_road_angle_deg", v.min_road_angle_deg}};
}
void from_json(const Json& j, LayoutParams& v) {
  j.at("grid").get_to(v.grid);
  j.at("min_roads").get_to(v.min_roads);
  j.at("max_roads").get_to(v.max_roads);
  j.at("road_width_min").get_to(v.road_width_min);
  j.at("road_width_max").get_to(v.road_width_max);
  j.at("divider_width").get_to(v.divider_width);
  j.at("walkway_width_min").get_to(v.walkway_width_min);
  j.at("walkway_width_max").get_to(v.walkway_width_max);
  j.at("crossing_period").get_to(v.crossing_period);
  j.at("crossing_width").get_to(v.crossing_width);
  j.at("min_road_angle_deg").get_to(v.min_road_angle_deg);
}

void to_json(Json& j, const DomainSpec& v) {
  j = Json{{"name", v.name},
           {"photometric",
            {{"gain", v.gain}, {"gamma", v.gamma}, {"desaturation", v.desaturation},
             {"blur_sigma", v.blur_sigma}}}};
  Json shift = Json::object();
  if (v.road_width_min) shift["road_width_min"] = *v.road_width_min;
  if (v.road_width_max) shift["road_width_max"] = *v.road_width_max;
  if (v.max_roads) shift["max_roads"] = *v.max_roads;
  if (v.walkway_width_max) shift["walkway_width_max"] = *v.walkway_width_max;
  j["layout_shift"] = shift;
}
void from_json(const Json& j, DomainSpec& v) {
  j.at("name").get_to(v.name);
  const auto& p = j.at("photometric");
  p.at("gain").get_to(v.gain);
  p.at("gamma").get_to(v.gamma);
  p.at("desaturation").get_to(v.desaturation);
  p.at("blur_sigma").get_to(v.blur_sigma);
  const auto& s = j.at("layout_shift");
  v.road_width_min.reset();
  v.road_width_max.reset();
  v.max_roads.reset();
  v.walkway_width_max.reset();
  if (s.contains("road_width_min")) v.road_width_min = s["road_width_min"].get<double>();
  if (s.contains("road_width_max")) v.road_width_max = s["road_width_max"].get<double>();
  if (s.contains("max_roads")) v.max_roads = s["max_roads"].get<int>();
  if (s.contains("walkway_width_max")) v.walkway_width_max = s["walkway_width_max"].get<double>();
}

void to_json(Json& j, const EgoPose& v) { j = Json{{"x", v.x}, {"y", v.y}, {"yaw", v.yaw}}; }
void from_json(const Json& j, EgoPose& v) {
  j.at("x").get_to(v.x);
  j.at("y").get_to(v.y);
  j.at("yaw").get_to(v.yaw);
}

}  // namespace pct::synth
