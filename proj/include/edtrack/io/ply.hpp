#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "edtrack/types.hpp"

namespace edtrack {

static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");

/// Binary little-endian PLY with x y z (double), nx ny nz (float), red green
/// blue (uchar), radius confidence (float). Positions stay double so that
/// metrics recomputed from the files match the tracker's.
inline void write_ply(std::ostream& out, const SurfelCloud& cloud) {
  out << "ply\nformat binary_little_endian 1.0\n"
      << "comment frame " << cloud.frame_id << "\n"
      << "element vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property float nx\nproperty float ny\nproperty float nz\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "property float radius\nproperty float confidence\n"
      << "end_header\n";
  for (const auto& s : cloud.surfels) {
    const double x[3] = {s.position.x(), s.position.y(), s.position.z()};
    out.write(reinterpret_cast<const char*>(x), sizeof x);
    const float f[3] = {float(s.normal.x()), float(s.normal.y()), float(s.normal.z())};
    out.write(reinterpret_cast<const char*>(f), sizeof f);
    for (int c = 0; c < 3; ++c) {
      const auto u = static_cast<std::uint8_t>(std::lround(std::clamp(s.color(c), 0.0, 1.0) * 255.0));
      out.put(char(u));
    }
    const float g[2] = {float(s.radius), float(s.confidence)};
    out.write(reinterpret_cast<const char*>(g), sizeof g);
  }
}

inline void write_ply(const std::string& path, const SurfelCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_ply(out, cloud);
  if (!out) throw IoError("failed writing '" + path + "'");
}

namespace detail {

struct PlyProperty {
  std::string name;
  std::string type;
};

inline int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

inline double ply_decode(const char* p, const std::string& t) {
  auto get = [p]<typename T>(T) {
    T v;
    std::memcpy(&v, p, sizeof v);
    return double(v);
  };
  if (t == "char" || t == "int8") return get(std::int8_t{});
  if (t == "uchar" || t == "uint8") return get(std::uint8_t{});
  if (t == "short" || t == "int16") return get(std::int16_t{});
  if (t == "ushort" || t == "uint16") return get(std::uint16_t{});
  if (t == "int" || t == "int32") return get(std::int32_t{});
  if (t == "uint" || t == "uint32") return get(std::uint32_t{});
  if (t == "float" || t == "float32") return get(float{});
  return get(double{});
}

}  // namespace detail

/// Reads the vertex element of an ASCII or binary little-endian PLY. Missing
/// attributes keep Surfel defaults; colors in [0,255] integers are rescaled.
inline SurfelCloud read_ply(std::istream& in, const std::string& name = "<stream>") {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw IoError("'" + name + "' is not a PLY file");
  std::string format;
  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<detail::PlyProperty> props;
  SurfelCloud cloud;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      ls >> format;
    } else if (key == "comment") {
      std::string word;
      if (ls >> word && word == "frame") ls >> cloud.frame_id;
    } else if (key == "element") {
      std::string el;
      std::size_t n = 0;
      ls >> el >> n;
      if (seen_vertex && el != "vertex") {
        in_vertex = false;  // later elements are ignored; they follow the vertex data
        continue;
      }
      in_vertex = el == "vertex";
      if (in_vertex) {
        seen_vertex = true;
        vertex_count = n;
      } else if (!seen_vertex && n > 0) {
        throw IoError("'" + name + "': elements before 'vertex' are not supported");
      }
    } else if (key == "property" && in_vertex) {
      detail::PlyProperty p;
      ls >> p.type;
      if (p.type == "list") throw IoError("'" + name + "': list properties on vertices are not supported");
      ls >> p.name;
      if (detail::ply_type_size(p.type) == 0) throw IoError("'" + name + "': unknown property type " + p.type);
      props.push_back(p);
    } else if (key == "end_header") {
      break;
    }
  }
  if (format != "ascii" && format != "binary_little_endian")
    throw IoError("'" + name + "': unsupported PLY format '" + format + "'");

  std::vector<double> vals(props.size());
  std::vector<char> rec;
  std::size_t rec_size = 0;
  for (const auto& p : props) rec_size += std::size_t(detail::ply_type_size(p.type));
  rec.resize(rec_size);
  cloud.surfels.resize(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (format == "ascii") {
      for (auto& v : vals)
        if (!(in >> v)) throw IoError("'" + name + "': truncated vertex data at vertex " + std::to_string(i));
    } else {
      if (!in.read(rec.data(), std::streamsize(rec_size)))
        throw IoError("'" + name + "': truncated vertex data at vertex " + std::to_string(i));
      std::size_t off = 0;
      for (std::size_t k = 0; k < props.size(); ++k) {
        vals[k] = detail::ply_decode(rec.data() + off, props[k].type);
        off += std::size_t(detail::ply_type_size(props[k].type));
      }
    }
    Surfel& s = cloud.surfels[i];
    for (std::size_t k = 0; k < props.size(); ++k) {
      const std::string& n = props[k].name;
      const double v = vals[k];
      const bool byte_color = detail::ply_type_size(props[k].type) == 1;
      if (n == "x") s.position.x() = v;
      else if (n == "y") s.position.y() = v;
      else if (n == "z") s.position.z() = v;
      else if (n == "nx") s.normal.x() = v;
      else if (n == "ny") s.normal.y() = v;
      else if (n == "nz") s.normal.z() = v;
      else if (n == "red") s.color(0) = byte_color ? v / 255.0 : v;
      else if (n == "green") s.color(1) = byte_color ? v / 255.0 : v;
      else if (n == "blue") s.color(2) = byte_color ? v / 255.0 : v;
      else if (n == "radius") s.radius = v;
      else if (n == "confidence") s.confidence = v;
    }
    if (!s.position.allFinite()) throw IoError("'" + name + "': non-finite position at vertex " + std::to_string(i));
  }
  return cloud;
}

inline SurfelCloud read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open point cloud '" + path + "'");
  return read_ply(in, path);
}

}  // namespace edtrack
