#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "edtrack/types.hpp"

namespace edtrack {

inline CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  CameraIntrinsics c;
  try {
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.depth_scale = j.value("depth_scale", c.depth_scale);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("intrinsics: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json intrinsics_to_json(const CameraIntrinsics& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
          {"width", c.width}, {"height", c.height}, {"depth_scale", c.depth_scale}};
}

inline CameraIntrinsics load_intrinsics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open intrinsics '" + path + "'");
  try {
    return intrinsics_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("intrinsics '" + path + "' is not valid JSON: " + e.what());
  }
}

inline void save_intrinsics(const std::string& path, const CameraIntrinsics& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << intrinsics_to_json(c).dump(1) << '\n';
}

}  // namespace edtrack
