#pragma once

#include <json.hpp>
#include <string>

#include "hnseg/errors.hpp"
#include "hnseg/geometry.hpp"

namespace hnseg {

inline void to_json(nlohmann::json& j, const Vec3i& v) { j = {v.x, v.y, v.z}; }
inline void from_json(const nlohmann::json& j, Vec3i& v) {
  v = {j.at(0).get<std::int64_t>(), j.at(1).get<std::int64_t>(),
       j.at(2).get<std::int64_t>()};
}

inline void to_json(nlohmann::json& j, const Vec3d& v) { j = {v.x, v.y, v.z}; }
inline void from_json(const nlohmann::json& j, Vec3d& v) {
  v = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline void to_json(nlohmann::json& j, const ImageGeometry& g) {
  j = nlohmann::json{{"size", g.size}, {"spacing", g.spacing}, {"origin", g.origin}};
}
inline void from_json(const nlohmann::json& j, ImageGeometry& g) {
  j.at("size").get_to(g.size);
  j.at("spacing").get_to(g.spacing);
  j.at("origin").get_to(g.origin);
}

inline void to_json(nlohmann::json& j, const VoxelBox& b) {
  j = nlohmann::json{{"lo", b.lo}, {"hi", b.hi}};
}
inline void from_json(const nlohmann::json& j, VoxelBox& b) {
  j.at("lo").get_to(b.lo);
  j.at("hi").get_to(b.hi);
}

// Strict parsing support: unknown keys are config errors, not typos to skip.
inline void expect_keys(const nlohmann::json& j,
                        std::initializer_list<const char*> keys,
                        const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(ctx + ": unknown key \"" + item.key() + "\"");
  }
}

}  // namespace hnseg
