#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "geo4d/error.hpp"

namespace geo4d {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

// Row-major H x W image of values. Pixel (u, v) is (column, row).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, const T& fill = T())
      : height_(height), width_(width), values_(static_cast<size_t>(height) * width, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T& operator()(int row, int col) { return values_[static_cast<size_t>(row) * width_ + col]; }
  const T& operator()(int row, int col) const {
    return values_[static_cast<size_t>(row) * width_ + col];
  }
  T& operator[](size_t i) { return values_[i]; }
  const T& operator[](size_t i) const { return values_[i]; }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }

  bool same_shape(int height, int width) const { return height_ == height && width_ == width; }
  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return height_ == other.height() && width_ == other.width();
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

using PointMap = Grid<Vector3d>;
using DisparityMap = Grid<double>;
using UncertaintyMap = Grid<double>;

struct RayMap {
  Grid<Vector3d> directions;
  Grid<Vector3d> moments;

  int height() const { return directions.height(); }
  int width() const { return directions.width(); }
};

// Pinhole intrinsics in pixels; pixel centers sit at integer coordinates.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  // Principal point at the center of a W x H image.
  static Intrinsics centered(double focal, int width, int height) {
    return {focal, focal, 0.5 * (width - 1), 0.5 * (height - 1)};
  }

  void validate() const {
    if (!(std::isfinite(fx) && std::isfinite(fy) && fx > 0.0 && fy > 0.0) ||
        !(std::isfinite(cx) && std::isfinite(cy))) {
      throw Error(ErrorCode::kInvalidIntrinsics,
                  "focal lengths must be finite and positive (fx=" + std::to_string(fx) +
                      ", fy=" + std::to_string(fy) + ")");
    }
  }

  Matrix3d matrix() const {
    Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  // K^-1 (u, v, 1)
  Vector3d unproject(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }

  Vector2d project(const Vector3d& x_cam) const {
    return {fx * x_cam.x() / x_cam.z() + cx, fy * x_cam.y() / x_cam.z() + cy};
  }
};

// World-to-camera rotation and camera center: x_cam = R (x_world - center).
struct Pose {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d center = Vector3d::Zero();

  static Pose identity() { return {}; }

  static Pose from_rotation_translation(const Matrix3d& rotation, const Vector3d& translation) {
    return {rotation, -rotation.transpose() * translation};
  }

  Vector3d translation() const { return -rotation * center; }
  Vector3d to_camera(const Vector3d& x_world) const { return rotation * (x_world - center); }
  Vector3d to_world(const Vector3d& x_cam) const { return rotation.transpose() * x_cam + center; }
};

// x -> scale * R x + shift
struct Similarity {
  double scale = 1.0;
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d shift = Vector3d::Zero();

  Vector3d apply(const Vector3d& x) const { return scale * (rotation * x) + shift; }

  // (this ∘ inner)(x) = this(inner(x))
  Similarity compose(const Similarity& inner) const {
    return {scale * inner.scale, rotation * inner.rotation,
            scale * (rotation * inner.shift) + shift};
  }

  Similarity inverse() const {
    const Matrix3d rt = rotation.transpose();
    return {1.0 / scale, rt, -(rt * shift) / scale};
  }

  // Camera pose after mapping the world through this similarity.
  Pose transform(const Pose& pose) const {
    return {pose.rotation * rotation.transpose(), apply(pose.center)};
  }
};

inline bool is_rotation(const Matrix3d& r, double tol = 1e-9) {
  return (r.transpose() * r - Matrix3d::Identity()).norm() < tol && r.determinant() > 0.0;
}

// Closest rotation in Frobenius norm (orthogonal polar factor with det +1).
inline Matrix3d project_to_rotation(const Matrix3d& m) {
  Eigen::JacobiSVD<Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d d = Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

// Geodesic distance on SO(3), radians.
inline double rotation_angle(const Matrix3d& a, const Matrix3d& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) * 0.5, -1.0, 1.0);
  // acos loses precision near 0; use the skew part for small angles.
  const Matrix3d rel = a.transpose() * b;
  const Vector3d axis(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * axis.norm(), c);
}

inline Matrix3d axis_angle(const Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

inline Matrix3d rot_x(double a) { return axis_angle(Vector3d::UnitX(), a); }
inline Matrix3d rot_y(double a) { return axis_angle(Vector3d::UnitY(), a); }
inline Matrix3d rot_z(double a) { return axis_angle(Vector3d::UnitZ(), a); }

inline Matrix3d skew(const Vector3d& v) {
  Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

inline Grid<Vector3d> pixel_rays(const Intrinsics& k, int height, int width) {
  k.validate();
  if (height < 1 || width < 1) {
    throw Error(ErrorCode::kInvalidArgument, "image size must be at least 1x1");
  }
  Grid<Vector3d> rays(height, width);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) rays(v, u) = k.unproject(u, v);
  }
  return rays;
}

// X_uv = R^T K^-1 (u, v, 1) / D_uv + center
inline PointMap point_map_from_depth(const DisparityMap& disparity, const Intrinsics& k,
                                     const Pose& pose) {
  k.validate();
  PointMap points(disparity.height(), disparity.width());
  const Matrix3d rt = pose.rotation.transpose();
  for (int v = 0; v < disparity.height(); ++v) {
    for (int u = 0; u < disparity.width(); ++u) {
      const double d = disparity(v, u);
      if (!(d > 0.0) || !std::isfinite(d)) {
        throw Error(ErrorCode::kInfinitePoint, "non-positive disparity at pixel (" +
                                                   std::to_string(u) + ", " + std::to_string(v) +
                                                   "); mask or clamp before unprojecting");
      }
      points(v, u) = rt * k.unproject(u, v) / d + pose.center;
    }
  }
  return points;
}

// Inverse of point_map_from_depth: disparity = 1 / z in the camera frame.
// Points at or behind the camera map to 0 (invalid).
inline DisparityMap depth_from_point_map(const PointMap& points, const Pose& pose) {
  DisparityMap disparity(points.height(), points.width(), 0.0);
  for (size_t i = 0; i < points.size(); ++i) {
    const double z = pose.to_camera(points[i]).z();
    disparity[i] = z > 0.0 ? 1.0 / z : 0.0;
  }
  return disparity;
}

// d = R^T K^-1 (u, v, 1) (unnormalized), m = center x d.
inline RayMap raymap_from_camera(const Intrinsics& k, const Pose& pose, int height, int width) {
  Grid<Vector3d> rays = pixel_rays(k, height, width);
  RayMap out{Grid<Vector3d>(height, width), Grid<Vector3d>(height, width)};
  const Matrix3d rt = pose.rotation.transpose();
  for (size_t i = 0; i < rays.size(); ++i) {
    const Vector3d d = rt * rays[i];
    out.directions[i] = d;
    out.moments[i] = pose.center.cross(d);
  }
  return out;
}

inline PointMap apply_similarity(const PointMap& points, const Similarity& s) {
  if (!(s.scale > 0.0) || !std::isfinite(s.scale)) {
    throw Error(ErrorCode::kInvalidScale, "similarity scale must be positive, got " +
                                              std::to_string(s.scale));
  }
  PointMap out(points.height(), points.width());
  for (size_t i = 0; i < points.size(); ++i) out[i] = s.apply(points[i]);
  return out;
}

inline PointMap apply_similarity(const PointMap& points, double scale, const Matrix3d& rotation,
                                 const Vector3d& shift) {
  return apply_similarity(points, Similarity{scale, rotation, shift});
}

}  // namespace geo4d
