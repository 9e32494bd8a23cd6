#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <vector>

#include "edtrack/error.hpp"

namespace edtrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

template <typename Scalar>
using Vec3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vec4T = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using Mat3T = Eigen::Matrix<Scalar, 3, 3>;

/// Row-major raster with (u, v) = (column, row) addressing.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, const T& fill = T{}) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width && v < height; }
  T& operator()(int u, int v) { return data[std::size_t(v) * width + u]; }
  const T& operator()(int u, int v) const { return data[std::size_t(v) * width + u]; }
  bool empty() const { return data.empty(); }
};

using DepthMap = Image<double>;
using MaskMap = Image<std::uint8_t>;
/// Zero vector marks an invalid pixel.
using NormalMap = Image<Vec3>;

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  double depth_scale = 0.001;

  double focal_mean() const { return 0.5 * (fx + fy); }

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw ConfigError("intrinsics: fx and fy must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("intrinsics: width and height must be positive");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
      throw ConfigError("intrinsics: principal point outside the image");
    if (!(depth_scale > 0)) throw ConfigError("intrinsics: depth_scale must be positive");
  }
};

/// Pinhole back-projection of pixel (u, v) at metric depth.
inline Vec3 back_project(double u, double v, double depth, const CameraIntrinsics& intr) {
  return {(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth};
}

struct DepthFrame {
  DepthMap depth;  // meters, 0 = invalid
  MaskMap tissue_mask;  // nonzero = tissue
  int frame_id = 0;

  void validate(const CameraIntrinsics& intr) const {
    if (depth.width != intr.width || depth.height != intr.height)
      throw ConfigError("depth frame " + std::to_string(frame_id) + " does not match intrinsics size");
    if (tissue_mask.width != depth.width || tissue_mask.height != depth.height)
      throw ConfigError("mask of frame " + std::to_string(frame_id) + " does not match depth size");
    for (double d : depth.data)
      if (!std::isfinite(d) || d < 0)
        throw ConfigError("depth frame " + std::to_string(frame_id) + " has negative or non-finite values");
  }

  bool valid(int u, int v) const { return depth.contains(u, v) && depth(u, v) > 0; }
  bool masked(int u, int v) const { return tissue_mask.contains(u, v) && tissue_mask(u, v) != 0; }
};

struct Surfel {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 color = Vec3::Constant(0.5);
  double radius = 1e-3;
  double confidence = 1.0;
  int timestamp = 0;
};

struct SurfelCloud {
  std::vector<Surfel> surfels;
  int frame_id = 0;

  std::size_t size() const { return surfels.size(); }
  bool empty() const { return surfels.empty(); }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    out.reserve(surfels.size());
    for (const auto& s : surfels) out.push_back(s.position);
    return out;
  }
  std::vector<Vec3> normals() const {
    std::vector<Vec3> out;
    out.reserve(surfels.size());
    for (const auto& s : surfels) out.push_back(s.normal);
    return out;
  }
};

}  // namespace edtrack
