#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "geo4d/error.hpp"
#include "geo4d/geometry.hpp"
#include "geo4d/scene.hpp"
#include "geo4d/windowing.hpp"

namespace geo4d {

enum class TrajectoryKind { kOrbit, kDolly, kSinusoid, kStatic };

inline const char* to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kOrbit: return "orbit";
    case TrajectoryKind::kDolly: return "dolly";
    case TrajectoryKind::kSinusoid: return "sinusoid";
    case TrajectoryKind::kStatic: return "static";
  }
  return "orbit";
}

inline TrajectoryKind trajectory_from_string(const std::string& s) {
  if (s == "orbit") return TrajectoryKind::kOrbit;
  if (s == "dolly") return TrajectoryKind::kDolly;
  if (s == "sinusoid") return TrajectoryKind::kSinusoid;
  if (s == "static") return TrajectoryKind::kStatic;
  throw Error(ErrorCode::kInvalidArgument, "unknown trajectory kind '" + s + "'");
}

// World: ground plane y = 0, up is -y (camera convention: x right, y down,
// z forward). Spheres rest on or move above the ground near the origin.
struct SceneSpec {
  int frames = 30;
  int height = 48;
  int width = 64;
  TrajectoryKind trajectory = TrajectoryKind::kOrbit;
  int static_spheres = 3;
  int moving_spheres = 1;
  double focal_min = 60.0;
  double focal_max = 75.0;
  double max_dynamic_fraction = 0.3;
  uint64_t seed = 0;
};

struct Sphere {
  Vector3d center = Vector3d::Zero();
  double radius = 0.5;
  Vector3d velocity = Vector3d::Zero();  // per unit of normalized time
  double bob = 0.0;                      // vertical sinusoid amplitude

  Vector3d center_at(double t) const {
    return center + t * velocity + Vector3d(0.0, -bob * std::sin(2.0 * std::numbers::pi * t), 0.0);
  }
};

struct GroundTruth : Scene {
  SceneSpec spec;
  std::vector<Sphere> spheres;
  int first_moving = 0;  // spheres[first_moving..] are dynamic
};

namespace detail {

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream, uint64_t sub = 0) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream), static_cast<uint32_t>(sub)};
  return std::mt19937_64(seq);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(std::mt19937_64& rng, double stddev) {
  if (stddev == 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, stddev)(rng);
}

inline Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector3d v;
  do {
    v = Vector3d(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

inline Matrix3d look_at(const Vector3d& eye, const Vector3d& target) {
  const Vector3d z = (target - eye).normalized();
  const Vector3d x = z.cross(Vector3d(0.0, -1.0, 0.0)).normalized();
  const Vector3d y = z.cross(x);
  Matrix3d r;
  r.row(0) = x;
  r.row(1) = y;
  r.row(2) = z;
  return r;
}

inline Pose trajectory_pose(TrajectoryKind kind, double t, double phase, double radius) {
  constexpr double kHeight = 3.5;
  Vector3d eye, target(0.0, 0.0, 0.0);
  switch (kind) {
    case TrajectoryKind::kOrbit: {
      const double a = phase + t * std::numbers::pi / 3.0;
      eye = Vector3d(radius * std::sin(a), -kHeight, -radius * std::cos(a));
      break;
    }
    case TrajectoryKind::kDolly: {
      const double r = radius * (1.2 - 0.35 * t);
      eye = Vector3d(r * std::sin(phase), -kHeight * (1.1 - 0.2 * t), -r * std::cos(phase));
      break;
    }
    case TrajectoryKind::kSinusoid: {
      const Vector3d base(radius * std::sin(phase), -kHeight, -radius * std::cos(phase));
      const Vector3d side(std::cos(phase), 0.0, std::sin(phase));
      eye = base + side * (3.0 * (t - 0.5)) + Vector3d(0.0, -0.4 * std::sin(2.0 * std::numbers::pi * t), 0.0);
      target = side * (1.0 * (t - 0.5));
      break;
    }
    case TrajectoryKind::kStatic:
      eye = Vector3d(radius * std::sin(phase), -kHeight, -radius * std::cos(phase));
      break;
  }
  return {look_at(eye, target), eye};
}

// Nearest positive hit along o + t d; t is the camera-frame depth because
// (R d).z = 1. Returns infinity on a miss; `sphere_hit` reports the sphere index.
inline double trace_ray(const Vector3d& o, const Vector3d& d, const std::vector<Sphere>& spheres,
                        double time, int& sphere_hit) {
  double best = std::numeric_limits<double>::infinity();
  sphere_hit = -1;
  if (d.y() > 1e-12) best = -o.y() / d.y();
  if (!(best > 0.0)) best = std::numeric_limits<double>::infinity();
  for (size_t s = 0; s < spheres.size(); ++s) {
    const Vector3d oc = o - spheres[s].center_at(time);
    const double a = d.squaredNorm();
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - spheres[s].radius * spheres[s].radius;
    const double disc = b * b - a * c;
    if (disc < 0.0) continue;
    const double root = std::sqrt(disc);
    double t = (-b - root) / a;
    if (t <= 1e-9) t = (-b + root) / a;
    if (t > 1e-9 && t < best) {
      best = t;
      sphere_hit = static_cast<int>(s);
    }
  }
  return best;
}

}  // namespace detail

// Renders depth analytically (ray-plane and ray-sphere intersection) for a
// seeded trajectory and scene.
inline GroundTruth generate_scene(const SceneSpec& spec) {
  if (spec.frames < 1 || spec.height < 2 || spec.width < 2) {
    throw Error(ErrorCode::kInvalidArgument, "scene needs at least one frame of 2x2 pixels");
  }
  if (!(spec.focal_min > 0.0) || spec.focal_max < spec.focal_min) {
    throw Error(ErrorCode::kInvalidArgument, "invalid focal range");
  }
  auto rng = detail::make_rng(spec.seed, 1);
  GroundTruth gt;
  gt.spec = spec;
  gt.height = spec.height;
  gt.width = spec.width;
  const double focal = detail::uniform(rng, spec.focal_min, spec.focal_max);
  const double phase = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double radius = detail::uniform(rng, 6.0, 7.0);

  for (int s = 0; s < spec.static_spheres; ++s) {
    Sphere sp;
    sp.radius = detail::uniform(rng, 0.4, 0.9);
    const double a = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double r = detail::uniform(rng, 0.0, 2.5);
    sp.center = Vector3d(r * std::cos(a), -sp.radius, r * std::sin(a));
    gt.spheres.push_back(sp);
  }
  gt.first_moving = static_cast<int>(gt.spheres.size());
  for (int s = 0; s < spec.moving_spheres; ++s) {
    Sphere sp;
    sp.radius = 0.45;
    const double a = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double r = detail::uniform(rng, 0.0, 2.0);
    sp.center = Vector3d(r * std::cos(a), -sp.radius - 0.3, r * std::sin(a));
    const double heading = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
    sp.velocity = 1.5 * Vector3d(std::cos(heading), 0.0, std::sin(heading));
    sp.bob = 0.2;
    gt.spheres.push_back(sp);
  }

  for (int i = 0; i < spec.frames; ++i) {
    const double t = spec.frames > 1 ? static_cast<double>(i) / (spec.frames - 1) : 0.0;
    gt.poses.push_back(detail::trajectory_pose(spec.trajectory, t, phase, radius));
    gt.intrinsics.push_back(Intrinsics::centered(focal, spec.width, spec.height));
  }

  // Shrink movers until they cover at most max_dynamic_fraction of any frame.
  for (int attempt = 0; attempt < 30; ++attempt) {
    gt.disparity.assign(spec.frames, DisparityMap(spec.height, spec.width, 0.0));
    gt.points.assign(spec.frames, PointMap(spec.height, spec.width, Vector3d::Zero()));
    double worst_fraction = 0.0;
    for (int i = 0; i < spec.frames; ++i) {
      const double t = spec.frames > 1 ? static_cast<double>(i) / (spec.frames - 1) : 0.0;
      const Grid<Vector3d> rays = pixel_rays(gt.intrinsics[i], spec.height, spec.width);
      const Matrix3d rt = gt.poses[i].rotation.transpose();
      int dynamic = 0, valid = 0;
      for (size_t p = 0; p < rays.size(); ++p) {
        const Vector3d d = rt * rays[p];
        int hit = -1;
        const double depth = detail::trace_ray(gt.poses[i].center, d, gt.spheres, t, hit);
        if (!std::isfinite(depth)) continue;
        gt.disparity[i][p] = 1.0 / depth;
        gt.points[i][p] = gt.poses[i].center + depth * d;
        ++valid;
        dynamic += hit >= gt.first_moving;
      }
      if (valid == 0) {
        throw Error(ErrorCode::kEmptyFrame, "frame " + std::to_string(i) + " sees no geometry");
      }
      worst_fraction = std::max(worst_fraction, static_cast<double>(dynamic) / rays.size());
    }
    if (worst_fraction <= spec.max_dynamic_fraction) break;
    for (size_t s = gt.first_moving; s < gt.spheres.size(); ++s) gt.spheres[s].radius *= 0.8;
  }

  for (int i = 0; i < spec.frames; ++i) {
    gt.rays.push_back(raymap_from_camera(gt.intrinsics[i], gt.poses[i], spec.height, spec.width));
  }
  return gt;
}

// Median camera-frame depth over all valid pixels.
inline double typical_depth(const Scene& scene) {
  std::vector<double> depths;
  for (const auto& d : scene.disparity) {
    for (double v : d.values()) {
      if (v > 0.0) depths.push_back(1.0 / v);
    }
  }
  if (depths.empty()) return 1.0;
  std::nth_element(depths.begin(), depths.begin() + depths.size() / 2, depths.end());
  return depths[depths.size() / 2];
}

// Bounding-box diagonal of all valid ground-truth points and camera centers.
inline double scene_diameter(const Scene& scene) {
  Vector3d lo = Vector3d::Constant(std::numeric_limits<double>::infinity());
  Vector3d hi = -lo;
  for (int i = 0; i < scene.num_frames(); ++i) {
    lo = lo.cwiseMin(scene.poses[i].center);
    hi = hi.cwiseMax(scene.poses[i].center);
    for (size_t p = 0; p < scene.points[i].size(); ++p) {
      if (scene.disparity[i][p] > 0.0) {
        lo = lo.cwiseMin(scene.points[i][p]);
        hi = hi.cwiseMax(scene.points[i][p]);
      }
    }
  }
  return (hi - lo).norm();
}

struct PerturbSpec {
  // Per-group similarity applied to clip-relative point maps (and, drawn
  // independently, to ray-map cameras when perturb_rays is set).
  double max_rotation_deg = 0.0;
  double scale_min = 1.0;
  double scale_max = 1.0;
  double max_translation = 0.0;
  bool perturb_rays = true;
  // Per-group disparity affine: predicted = (clip_disparity - shift) / scale.
  double disp_scale_min = 1.0;
  double disp_scale_max = 1.0;
  double disp_shift_max = 0.0;
  // Per-(frame, group) errors.
  double point_frame_jitter = 0.0;      // rotation std (rad); translation std relative to depth
  double disparity_frame_jitter = 0.0;  // relative disparity scale std
  double ray_rotation_jitter_deg = 0.0;
  double ray_center_jitter = 0.0;  // relative to typical depth
  // i.i.d. per-pixel relative noise.
  double point_noise = 0.0;
  double disparity_noise = 0.0;
  double ray_noise = 0.0;
  // sigma = sigma_floor + sigma_gain * (per-pixel point noise std).
  double sigma_floor = 1e-3;
  double sigma_gain = 1.0;
  bool include_rays = true;
  uint64_t seed = 0;

  // Uniform relative noise / jitter level on every modality.
  PerturbSpec& with_noise(double level) {
    point_noise = disparity_noise = ray_noise = level;
    point_frame_jitter = disparity_frame_jitter = ray_center_jitter = level;
    ray_rotation_jitter_deg = level * 180.0 / std::numbers::pi;
    return *this;
  }
};

// What make_predictions injected into group g.
struct GroupTruth {
  Similarity points_from_world;  // world -> group point-map frame
  Similarity rays_from_world;    // world -> group ray-map frame
  double disparity_scale = 1.0;  // scale * predicted + shift = disparity in point-map units
  double disparity_shift = 0.0;
};

struct Predictions {
  WindowIndex index;
  std::vector<WindowGroup> groups;
  std::vector<GroupTruth> truth;
};

namespace detail {

inline Similarity random_similarity(std::mt19937_64& rng, double max_rotation_deg, double scale_min,
                                    double scale_max, double max_translation) {
  Similarity s;
  const Vector3d axis = random_unit(rng);
  const double angle = uniform(rng, 0.0, max_rotation_deg) * std::numbers::pi / 180.0;
  s.rotation = axis_angle(axis, angle);
  s.scale = uniform(rng, scale_min, scale_max);
  for (int k = 0; k < 3; ++k) s.shift(k) = uniform(rng, -max_translation, max_translation);
  return s;
}

inline Matrix3d small_rotation(std::mt19937_64& rng, double stddev_rad) {
  if (stddev_rad == 0.0) return Matrix3d::Identity();
  const Vector3d w(normal(rng, stddev_rad), normal(rng, stddev_rad), normal(rng, stddev_rad));
  return w.norm() > 0.0 ? axis_angle(w, w.norm()) : Matrix3d::Identity();
}

inline Similarity clip_frame(const Pose& first) {
  return {1.0, first.rotation, -(first.rotation * first.center)};
}

}  // namespace detail

// Simulated network outputs for every window: each clip's maps re-expressed
// in its first frame's camera and then corrupted per `perturb`.
inline Predictions make_predictions(const Scene& gt, const WindowIndex& index, const PerturbSpec& perturb) {
  if (index.num_frames != gt.num_frames()) {
    throw Error(ErrorCode::kLengthMismatch, "window index and scene differ in frame count");
  }
  Predictions out;
  out.index = index;
  const double depth_scale = typical_depth(gt);
  const size_t pixels = static_cast<size_t>(gt.height) * gt.width;

  for (size_t g = 0; g < index.starts.size(); ++g) {
    const int start = index.starts[g];
    auto rng = detail::make_rng(perturb.seed, 2, start);
    const Similarity to_clip = detail::clip_frame(gt.poses[start]);
    GroupTruth truth;
    truth.points_from_world = detail::random_similarity(rng, perturb.max_rotation_deg, perturb.scale_min,
                                                        perturb.scale_max, perturb.max_translation)
                                  .compose(to_clip);
    const Similarity ray_extra = detail::random_similarity(rng, perturb.max_rotation_deg, perturb.scale_min,
                                                           perturb.scale_max, perturb.max_translation);
    truth.rays_from_world = perturb.perturb_rays ? ray_extra.compose(to_clip) : truth.points_from_world;
    truth.disparity_scale = detail::uniform(rng, perturb.disp_scale_min, perturb.disp_scale_max);
    truth.disparity_shift = detail::uniform(rng, -perturb.disp_shift_max, perturb.disp_shift_max);

    const double point_scale = truth.points_from_world.scale;
    const double ray_scale = truth.rays_from_world.scale;
    WindowGroup group;
    group.start = start;
    auto noise_rng = detail::make_rng(perturb.seed, 3, start);
    for (int j = 0; j < index.window; ++j) {
      const int i = start + j;
      const Similarity jitter{1.0, detail::small_rotation(noise_rng, perturb.point_frame_jitter),
                              Vector3d(detail::normal(noise_rng, perturb.point_frame_jitter),
                                       detail::normal(noise_rng, perturb.point_frame_jitter),
                                       detail::normal(noise_rng, perturb.point_frame_jitter)) *
                                  depth_scale * point_scale};
      const bool jittered = perturb.point_frame_jitter > 0.0;
      const double disp_gain = 1.0 + detail::normal(noise_rng, perturb.disparity_frame_jitter);

      PointMap points(gt.height, gt.width, Vector3d::Zero());
      DisparityMap disparity(gt.height, gt.width, 0.0);
      UncertaintyMap sigma(gt.height, gt.width, std::numeric_limits<double>::infinity());
      for (size_t p = 0; p < pixels; ++p) {
        const double d_true = gt.disparity[i][p];
        if (!(d_true > 0.0)) continue;
        Vector3d x = truth.points_from_world.apply(gt.points[i][p]);
        if (jittered) x = jitter.apply(x);
        const double std_point = perturb.point_noise * point_scale / d_true;
        for (int k = 0; k < 3; ++k) x(k) += detail::normal(noise_rng, std_point);
        points[p] = x;
        sigma[p] = perturb.sigma_floor + perturb.sigma_gain * std_point;

        double clip_disp = d_true / point_scale * disp_gain;
        clip_disp += detail::normal(noise_rng, perturb.disparity_noise * clip_disp);
        disparity[p] = (clip_disp - truth.disparity_shift) / truth.disparity_scale;
      }
      group.points.push_back(std::move(points));
      group.disparity.push_back(std::move(disparity));
      group.uncertainty.push_back(std::move(sigma));

      if (perturb.include_rays) {
        Pose cam = truth.rays_from_world.transform(gt.poses[i]);
        cam.rotation = detail::small_rotation(noise_rng, perturb.ray_rotation_jitter_deg * std::numbers::pi / 180.0) *
                       cam.rotation;
        for (int k = 0; k < 3; ++k) {
          cam.center(k) += detail::normal(noise_rng, perturb.ray_center_jitter * depth_scale * ray_scale);
        }
        RayMap rays = raymap_from_camera(gt.intrinsics[i], cam, gt.height, gt.width);
        if (perturb.ray_noise > 0.0) {
          const double lever = std::max(cam.center.norm(), depth_scale * ray_scale);
          for (size_t p = 0; p < pixels; ++p) {
            const double dn = rays.directions[p].norm();
            for (int k = 0; k < 3; ++k) {
              rays.directions[p](k) += detail::normal(noise_rng, perturb.ray_noise * dn);
              rays.moments[p](k) += detail::normal(noise_rng, perturb.ray_noise * dn * lever);
            }
          }
        }
        group.rays.push_back(std::move(rays));
      }
    }
    out.groups.push_back(std::move(group));
    out.truth.push_back(truth);
  }
  return out;
}

}  // namespace geo4d
