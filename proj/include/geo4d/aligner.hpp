#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "geo4d/error.hpp"
#include "geo4d/geometry.hpp"
#include "geo4d/initialization.hpp"
#include "geo4d/ray_solver.hpp"
#include "geo4d/scene.hpp"

namespace geo4d {

using Quat = Eigen::Vector4d;  // (w, x, y, z), not necessarily unit

// R = P(q) / |q|^2, a rotation for every nonzero q.
inline Matrix3d quat_rotation(const Quat& q) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  Matrix3d p;
  p << w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z;
  return p / q.squaredNorm();
}

inline Quat rotation_quat(const Matrix3d& r) {
  const Eigen::Quaterniond q(r);
  Quat out(q.w(), q.x(), q.y(), q.z());
  return out(0) < 0.0 ? Quat(-out) : out;
}

// Chain rule from dL/dR to dL/dq through quat_rotation.
inline Quat quat_gradient(const Quat& q, const Matrix3d& grad_r) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  const double n = q.squaredNorm();
  std::array<Matrix3d, 4> dp;
  dp[0] << w, -z, y, z, w, -x, -y, x, w;
  dp[1] << x, y, z, y, -x, -w, z, w, -x;
  dp[2] << -y, x, w, x, y, z, -w, z, -y;
  dp[3] << -z, -w, x, w, -z, y, x, y, z;
  const double along_r = (grad_r.array() * quat_rotation(q).array()).sum();
  Quat out;
  for (int k = 0; k < 4; ++k) {
    out(k) = 2.0 * (grad_r.array() * dp[k].array()).sum() / n - 2.0 * q(k) * along_r / n;
  }
  return out;
}

// Optimization variables, stored in one flat vector owned by the optimizer.
// Per frame: disparity field, log focal, world-to-camera rotation quaternion,
// camera center. Per group: point-map similarity (log scale, quaternion,
// shift), disparity affine (log scale, shift), ray-camera similarity
// (quaternion, log scale, shift). The principal point is the image center.
class GlobalState {
 public:
  static constexpr int kGroupSize = 18;

  GlobalState() = default;
  GlobalState(int num_frames, int num_groups, int height, int width)
      : num_frames_(num_frames), num_groups_(num_groups), height_(height), width_(width),
        params_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_frames) * frame_size() +
                                      static_cast<Eigen::Index>(num_groups) * kGroupSize)),
        mask(num_frames, Grid<uint8_t>(height, width, 1)) {
    for (int i = 0; i < num_frames; ++i) params_.segment<4>(quat_offset(i)) = Quat(1, 0, 0, 0);
    for (int g = 0; g < num_groups; ++g) {
      params_.segment<4>(point_quat_offset(g)) = Quat(1, 0, 0, 0);
      params_.segment<4>(cam_quat_offset(g)) = Quat(1, 0, 0, 0);
    }
  }

  int num_frames() const { return num_frames_; }
  int num_groups() const { return num_groups_; }
  int height() const { return height_; }
  int width() const { return width_; }
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(height_) * width_; }
  Eigen::Index frame_size() const { return pixels() + 8; }

  Eigen::Index disparity_offset(int i) const { return i * frame_size(); }
  Eigen::Index log_focal_offset(int i) const { return i * frame_size() + pixels(); }
  Eigen::Index quat_offset(int i) const { return log_focal_offset(i) + 1; }
  Eigen::Index center_offset(int i) const { return log_focal_offset(i) + 5; }
  Eigen::Index group_offset(int g) const { return num_frames_ * frame_size() + g * kGroupSize; }
  Eigen::Index point_log_scale_offset(int g) const { return group_offset(g); }
  Eigen::Index point_quat_offset(int g) const { return group_offset(g) + 1; }
  Eigen::Index point_shift_offset(int g) const { return group_offset(g) + 5; }
  Eigen::Index depth_log_scale_offset(int g) const { return group_offset(g) + 8; }
  Eigen::Index depth_shift_offset(int g) const { return group_offset(g) + 9; }
  Eigen::Index cam_quat_offset(int g) const { return group_offset(g) + 10; }
  Eigen::Index cam_log_scale_offset(int g) const { return group_offset(g) + 14; }
  Eigen::Index cam_shift_offset(int g) const { return group_offset(g) + 15; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  auto disparity(int i) { return params_.segment(disparity_offset(i), pixels()); }
  auto disparity(int i) const { return params_.segment(disparity_offset(i), pixels()); }
  double& log_focal(int i) { return params_(log_focal_offset(i)); }
  double log_focal(int i) const { return params_(log_focal_offset(i)); }
  auto quat(int i) { return params_.segment<4>(quat_offset(i)); }
  auto quat(int i) const { return params_.segment<4>(quat_offset(i)); }
  auto center(int i) { return params_.segment<3>(center_offset(i)); }
  auto center(int i) const { return params_.segment<3>(center_offset(i)); }

  double& point_log_scale(int g) { return params_(point_log_scale_offset(g)); }
  double point_log_scale(int g) const { return params_(point_log_scale_offset(g)); }
  auto point_quat(int g) { return params_.segment<4>(point_quat_offset(g)); }
  auto point_quat(int g) const { return params_.segment<4>(point_quat_offset(g)); }
  auto point_shift(int g) { return params_.segment<3>(point_shift_offset(g)); }
  auto point_shift(int g) const { return params_.segment<3>(point_shift_offset(g)); }
  double& depth_log_scale(int g) { return params_(depth_log_scale_offset(g)); }
  double depth_log_scale(int g) const { return params_(depth_log_scale_offset(g)); }
  double& depth_shift(int g) { return params_(depth_shift_offset(g)); }
  double depth_shift(int g) const { return params_(depth_shift_offset(g)); }
  auto cam_quat(int g) { return params_.segment<4>(cam_quat_offset(g)); }
  auto cam_quat(int g) const { return params_.segment<4>(cam_quat_offset(g)); }
  double& cam_log_scale(int g) { return params_(cam_log_scale_offset(g)); }
  double cam_log_scale(int g) const { return params_(cam_log_scale_offset(g)); }
  auto cam_shift(int g) { return params_.segment<3>(cam_shift_offset(g)); }
  auto cam_shift(int g) const { return params_.segment<3>(cam_shift_offset(g)); }

  double focal(int i) const { return std::exp(log_focal(i)); }
  Intrinsics intrinsics(int i) const { return Intrinsics::centered(focal(i), width_, height_); }
  Matrix3d rotation(int i) const { return quat_rotation(quat(i)); }
  Pose pose(int i) const { return {rotation(i), center(i)}; }

  Similarity point_alignment(int g) const {
    return {std::exp(point_log_scale(g)), quat_rotation(point_quat(g)), point_shift(g)};
  }
  Similarity cam_alignment(int g) const {
    return {std::exp(cam_log_scale(g)), quat_rotation(cam_quat(g)), cam_shift(g)};
  }
  double depth_scale(int g) const { return std::exp(depth_log_scale(g)); }

  void set_pose(int i, const Pose& pose) {
    quat(i) = rotation_quat(pose.rotation);
    center(i) = pose.center;
  }
  void set_focal(int i, double focal) { log_focal(i) = std::log(focal); }
  void set_point_alignment(int g, const Similarity& s) {
    point_log_scale(g) = std::log(s.scale);
    point_quat(g) = rotation_quat(s.rotation);
    point_shift(g) = s.shift;
  }
  void set_cam_alignment(int g, const Similarity& s) {
    cam_log_scale(g) = std::log(s.scale);
    cam_quat(g) = rotation_quat(s.rotation);
    cam_shift(g) = s.shift;
  }
  void set_depth_alignment(int g, double scale, double shift) {
    depth_log_scale(g) = std::log(scale);
    depth_shift(g) = shift;
  }

  DisparityMap disparity_map(int i) const {
    DisparityMap out(height_, width_, 0.0);
    for (Eigen::Index p = 0; p < pixels(); ++p) out[p] = mask[i][p] ? disparity(i)(p) : 0.0;
    return out;
  }

  // World points of frame i; masked pixels are zero.
  PointMap point_map(int i) const {
    const Intrinsics k = intrinsics(i);
    const Pose p = pose(i);
    PointMap out(height_, width_, Vector3d::Zero());
    for (int v = 0; v < height_; ++v) {
      for (int u = 0; u < width_; ++u) {
        const size_t idx = static_cast<size_t>(v) * width_ + u;
        if (mask[i][idx]) out[idx] = p.to_world(k.unproject(u, v) / disparity(i)(idx));
      }
    }
    return out;
  }

  void normalize_quaternions() {
    for (int i = 0; i < num_frames_; ++i) quat(i).normalize();
    for (int g = 0; g < num_groups_; ++g) {
      point_quat(g).normalize();
      cam_quat(g).normalize();
    }
  }

 private:
  int num_frames_ = 0;
  int num_groups_ = 0;
  int height_ = 0;
  int width_ = 0;
  Eigen::VectorXd params_;

 public:
  std::vector<Grid<uint8_t>> mask;  // pixels taking part in the losses
};

inline GlobalState make_state(const InitState& init) {
  GlobalState state(init.num_frames(), static_cast<int>(init.group_alignment.size()), init.height,
                    init.width);
  for (int i = 0; i < init.num_frames(); ++i) {
    for (Eigen::Index p = 0; p < state.pixels(); ++p) state.disparity(i)(p) = init.disparity[i][p];
    state.set_focal(i, init.focals[i]);
    state.set_pose(i, init.poses[i]);
    state.mask[i] = init.mask[i];
  }
  for (int g = 0; g < state.num_groups(); ++g) state.set_point_alignment(g, init.group_alignment[g]);
  return state;
}

struct LossOptions {
  bool pure_l1 = false;     // exact |x| instead of the Huber surrogate
  double huber_delta = 1e-3;
  double sigma_floor = 1e-3;
};

namespace detail {

struct Penalty {
  bool pure = false;
  double delta = 1e-3;

  double value(double x) const {
    const double a = std::abs(x);
    if (pure) return a;
    return a <= delta ? 0.5 * x * x / delta : a - 0.5 * delta;
  }
  double derivative(double x) const {
    if (pure || std::abs(x) > delta) return (x > 0.0) - (x < 0.0);
    return x / delta;
  }
  // Gradient of value(|e|) with respect to e.
  template <typename Derived>
  auto norm_gradient(const Eigen::MatrixBase<Derived>& e) const {
    const double n = e.norm();
    using Plain = typename Derived::PlainObject;
    if (n == 0.0) return Plain(Plain::Zero(e.rows(), e.cols()));
    return Plain(e * (derivative(n) / n));
  }
};

// Matrix-valued rotation gradients collected during a loss pass, folded into
// the quaternion slots at the end.
struct GradientSink {
  GradientSink(const GlobalState& state, Eigen::VectorXd* grad, double weight)
      : state(state), grad(grad), weight(weight) {
    if (grad) {
      frame_rot.assign(state.num_frames(), Matrix3d::Zero());
      point_rot.assign(state.num_groups(), Matrix3d::Zero());
      cam_rot.assign(state.num_groups(), Matrix3d::Zero());
    }
  }

  bool active() const { return grad != nullptr; }

  void finish() {
    if (!grad) return;
    for (int i = 0; i < state.num_frames(); ++i) {
      grad->segment<4>(state.quat_offset(i)) += weight * quat_gradient(state.quat(i), frame_rot[i]);
    }
    for (int g = 0; g < state.num_groups(); ++g) {
      grad->segment<4>(state.point_quat_offset(g)) +=
          weight * quat_gradient(state.point_quat(g), point_rot[g]);
      grad->segment<4>(state.cam_quat_offset(g)) +=
          weight * quat_gradient(state.cam_quat(g), cam_rot[g]);
    }
  }

  const GlobalState& state;
  Eigen::VectorXd* grad;
  double weight;
  std::vector<Matrix3d> frame_rot, point_rot, cam_rot;
};

inline void check_groups(const GlobalState& state, std::span<const WindowGroup> groups) {
  if (static_cast<int>(groups.size()) != state.num_groups()) {
    throw Error(ErrorCode::kLengthMismatch, "state has " + std::to_string(state.num_groups()) +
                                                " groups but " + std::to_string(groups.size()) +
                                                " were given");
  }
  for (const auto& g : groups) {
    if (g.start < 0 || g.start + g.length() > state.num_frames()) {
      throw Error(ErrorCode::kInvalidArgument, "group extends past the last frame");
    }
  }
}

}  // namespace detail

// Sum over groups, frames and pixels of |X_uv - lambda R X^{g}_uv - beta| / sigma
// (component-wise), with X_uv = R_i^T K_i^-1 (u, v, 1) / D_uv + o_i.
// Adds weight * gradient into *grad when grad is non-null.
inline double loss_point(const GlobalState& state, std::span<const WindowGroup> groups,
                         const LossOptions& options = {}, Eigen::VectorXd* grad = nullptr,
                         double weight = 1.0) {
  detail::check_groups(state, groups);
  const detail::Penalty pen{options.pure_l1, options.huber_delta};
  detail::GradientSink sink(state, grad, weight);
  const int width = state.width();
  double total = 0.0;
  for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
    const WindowGroup& group = groups[g];
    const Similarity align = state.point_alignment(g);
    double g_log_scale = 0.0;
    Vector3d g_shift = Vector3d::Zero();
    Matrix3d g_rot = Matrix3d::Zero();
    for (int j = 0; j < group.length(); ++j) {
      const int i = group.start + j;
      const Matrix3d rot = state.rotation(i);
      const Vector3d center = state.center(i);
      const double focal = state.focal(i);
      const double cx = 0.5 * (width - 1), cy = 0.5 * (state.height() - 1);
      const auto disp = state.disparity(i);
      const Eigen::Index disp_off = state.disparity_offset(i);
      double f_log_focal = 0.0;
      Vector3d f_center = Vector3d::Zero();
      Matrix3d f_rot = Matrix3d::Zero();
      for (Eigen::Index p = 0; p < state.pixels(); ++p) {
        if (!state.mask[i][p] || !group.valid(j, p)) continue;
        const double sigma = std::max(group.uncertainty[j][p], options.sigma_floor);
        const double u = static_cast<double>(p % width) - cx;
        const double v = static_cast<double>(p / width) - cy;
        const Vector3d ray(u / focal, v / focal, 1.0);
        const double d = disp(p);
        const Vector3d w = ray / d;
        const Vector3d x = rot.transpose() * w + center;
        const Vector3d aligned_rot = align.scale * (align.rotation * group.points[j][p]);
        const Vector3d r = x - aligned_rot - align.shift;
        const double inv_sigma = 1.0 / sigma;
        total += (pen.value(r.x()) + pen.value(r.y()) + pen.value(r.z())) * inv_sigma;
        if (!sink.active()) continue;
        const Vector3d gr = Vector3d(pen.derivative(r.x()), pen.derivative(r.y()),
                                     pen.derivative(r.z())) * inv_sigma;
        const Vector3d rg = rot * gr;
        (*grad)(disp_off + p) -= weight * rg.dot(ray) / (d * d);
        f_log_focal -= rg.x() * ray.x() / d + rg.y() * ray.y() / d;
        f_rot += w * gr.transpose();
        f_center += gr;
        g_log_scale -= gr.dot(aligned_rot);
        g_rot -= align.scale * gr * group.points[j][p].transpose();
        g_shift -= gr;
      }
      if (sink.active()) {
        (*grad)(state.log_focal_offset(i)) += weight * f_log_focal;
        grad->segment<3>(state.center_offset(i)) += weight * f_center;
        sink.frame_rot[i] += f_rot;
      }
    }
    if (sink.active()) {
      (*grad)(state.point_log_scale_offset(g)) += weight * g_log_scale;
      grad->segment<3>(state.point_shift_offset(g)) += weight * g_shift;
      sink.point_rot[g] += g_rot;
    }
  }
  sink.finish();
  return total;
}

// Sum of |D_i - lambda_d D^{g}_i - beta_d| over valid pixels.
inline double loss_depth(const GlobalState& state, std::span<const WindowGroup> groups,
                         const LossOptions& options = {}, Eigen::VectorXd* grad = nullptr,
                         double weight = 1.0) {
  detail::check_groups(state, groups);
  const detail::Penalty pen{options.pure_l1, options.huber_delta};
  double total = 0.0;
  for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
    const WindowGroup& group = groups[g];
    const double scale = state.depth_scale(g);
    const double shift = state.depth_shift(g);
    double g_log_scale = 0.0, g_shift = 0.0;
    for (int j = 0; j < group.length(); ++j) {
      const int i = group.start + j;
      const auto disp = state.disparity(i);
      for (Eigen::Index p = 0; p < state.pixels(); ++p) {
        if (!state.mask[i][p] || !group.valid(j, p)) continue;
        const double predicted = scale * group.disparity[j][p];
        const double r = disp(p) - predicted - shift;
        total += pen.value(r);
        if (!grad) continue;
        const double gr = pen.derivative(r);
        (*grad)(state.disparity_offset(i) + p) += weight * gr;
        g_log_scale -= gr * predicted;
        g_shift -= gr;
      }
    }
    if (grad) {
      (*grad)(state.depth_log_scale_offset(g)) += weight * g_log_scale;
      (*grad)(state.depth_shift_offset(g)) += weight * g_shift;
    }
  }
  return total;
}

// Cameras recovered from each group's ray maps, indexed [group][local frame];
// empty optionals mark failed solves (or groups without ray maps).
using RaySolutions = std::vector<std::vector<std::optional<RayCameraSolution>>>;

inline RaySolutions solve_ray_cameras(std::span<const WindowGroup> groups, int* failures = nullptr) {
  RaySolutions out(groups.size());
  int failed = 0;
  for (size_t g = 0; g < groups.size(); ++g) {
    out[g].resize(groups[g].length());
    if (!groups[g].has_rays()) continue;
    for (int j = 0; j < groups[g].length(); ++j) {
      try {
        out[g][j] = camera_from_raymap(groups[g].rays[j]);
      } catch (const Error&) {
        ++failed;
      }
    }
  }
  if (failures) *failures = failed;
  return out;
}

// Camera trajectory alignment. Rotations enter as camera-to-world matrices,
// so the group rotation acts as a change of world frame:
//   || R_i R_g R_ig^T - I ||_F + || lambda_g R_g o_ig + beta_g - o_i ||_2
// where (R_ig, o_ig) is the ray-map camera of frame i in group g.
inline double loss_cam(const GlobalState& state, std::span<const WindowGroup> groups,
                       const RaySolutions& solutions, const LossOptions& options = {},
                       Eigen::VectorXd* grad = nullptr, double weight = 1.0) {
  detail::check_groups(state, groups);
  const detail::Penalty pen{options.pure_l1, options.huber_delta};
  detail::GradientSink sink(state, grad, weight);
  double total = 0.0;
  for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
    if (g >= static_cast<int>(solutions.size())) break;
    const Similarity align = state.cam_alignment(g);
    for (int j = 0; j < static_cast<int>(solutions[g].size()); ++j) {
      const auto& sol = solutions[g][j];
      if (!sol) continue;
      const int i = groups[g].start + j;
      const Matrix3d rot = state.rotation(i);
      const Matrix3d rel = align.rotation * sol->rotation.transpose();
      const Matrix3d e = rot * rel - Matrix3d::Identity();
      total += pen.value(e.norm());

      const Vector3d mapped = align.scale * (align.rotation * sol->center);
      const Vector3d et = mapped + align.shift - state.center(i);
      total += pen.value(et.norm());
      if (!sink.active()) continue;
      const Matrix3d ge = pen.norm_gradient(e);
      sink.frame_rot[i] += ge * rel.transpose();
      sink.cam_rot[g] += rot.transpose() * ge * sol->rotation;
      const Vector3d gt = pen.norm_gradient(et);
      grad->segment<3>(state.cam_shift_offset(g)) += weight * gt;
      grad->segment<3>(state.center_offset(i)) -= weight * gt;
      (*grad)(state.cam_log_scale_offset(g)) += weight * gt.dot(mapped);
      sink.cam_rot[g] += align.scale * gt * sol->center.transpose();
    }
  }
  sink.finish();
  return total;
}

// Sum over consecutive frames of ||R_i^T R_{i+1} - I||_F + ||o_{i+1} - o_i||.
inline double loss_smooth(const GlobalState& state, const LossOptions& options = {},
                          Eigen::VectorXd* grad = nullptr, double weight = 1.0) {
  const detail::Penalty pen{options.pure_l1, options.huber_delta};
  detail::GradientSink sink(state, grad, weight);
  double total = 0.0;
  for (int i = 0; i + 1 < state.num_frames(); ++i) {
    const Matrix3d ri = state.rotation(i);
    const Matrix3d rn = state.rotation(i + 1);
    const Matrix3d e = ri.transpose() * rn - Matrix3d::Identity();
    const Vector3d et = state.center(i + 1) - state.center(i);
    total += pen.value(e.norm()) + pen.value(et.norm());
    if (!sink.active()) continue;
    const Matrix3d ge = pen.norm_gradient(e);
    sink.frame_rot[i] += rn * ge.transpose();
    sink.frame_rot[i + 1] += ri * ge;
    const Vector3d gt = pen.norm_gradient(et);
    grad->segment<3>(state.center_offset(i + 1)) += weight * gt;
    grad->segment<3>(state.center_offset(i)) -= weight * gt;
  }
  sink.finish();
  return total;
}

struct DepthAlignment {
  double scale = 1.0;
  double shift = 0.0;
};

// Least-squares scale and shift mapping each group's predicted disparities
// onto the current global disparities; a warm start for the l1 objective.
// Constant (or inversely related) predictions fall back to shift only.
inline std::vector<DepthAlignment> align_depth_closed_form(const GlobalState& state,
                                                           std::span<const WindowGroup> groups) {
  detail::check_groups(state, groups);
  std::vector<DepthAlignment> out(groups.size());
  for (size_t g = 0; g < groups.size(); ++g) {
    double n = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const WindowGroup& group = groups[g];
    for (int j = 0; j < group.length(); ++j) {
      const int i = group.start + j;
      for (Eigen::Index p = 0; p < state.pixels(); ++p) {
        if (!state.mask[i][p] || !group.valid(j, p)) continue;
        const double x = group.disparity[j][p];
        const double y = state.disparity(i)(p);
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
      }
    }
    if (n == 0.0) continue;
    const double mx = sx / n, my = sy / n;
    const double var = sxx / n - mx * mx;
    const double cov = sxy / n - mx * my;
    if (var > 1e-12 * std::max(1.0, mx * mx) && cov / var > 0.0) {
      out[g].scale = cov / var;
      out[g].shift = my - out[g].scale * mx;
    } else {
      out[g].scale = 1.0;
      out[g].shift = my - mx;
    }
  }
  return out;
}

// Per-group ray-frame -> world similarity. The rotation is the projection of
// sum_i R_i^T R_ig onto SO(3); scale and shift then follow by least squares
// on the rotated ray-map centers. Coincident centers give scale 1.
inline std::vector<Similarity> align_cam_closed_form(const GlobalState& state,
                                                     std::span<const WindowGroup> groups,
                                                     const RaySolutions& solutions) {
  detail::check_groups(state, groups);
  std::vector<Similarity> out(groups.size());
  for (size_t g = 0; g < groups.size() && g < solutions.size(); ++g) {
    Matrix3d acc = Matrix3d::Zero();
    std::vector<Vector3d> src, dst;
    for (size_t j = 0; j < solutions[g].size(); ++j) {
      const auto& sol = solutions[g][j];
      if (!sol) continue;
      const int i = groups[g].start + static_cast<int>(j);
      acc += state.rotation(i).transpose() * sol->rotation;
      src.push_back(sol->center);
      dst.push_back(state.center(i));
    }
    if (src.empty()) continue;
    Similarity s;
    s.rotation = project_to_rotation(acc);
    Vector3d ms = Vector3d::Zero(), md = Vector3d::Zero();
    for (size_t k = 0; k < src.size(); ++k) {
      src[k] = s.rotation * src[k];
      ms += src[k];
      md += dst[k];
    }
    ms /= static_cast<double>(src.size());
    md /= static_cast<double>(src.size());
    double num = 0.0, den = 0.0;
    for (size_t k = 0; k < src.size(); ++k) {
      num += (src[k] - ms).dot(dst[k] - md);
      den += (src[k] - ms).squaredNorm();
    }
    s.scale = (den > 1e-18 * std::max(1.0, ms.squaredNorm()) && num > 0.0) ? num / den : 1.0;
    s.shift = md - s.scale * ms;
    out[g] = s;
  }
  return out;
}

struct AlignConfig {
  std::array<double, 4> alpha{1.0, 0.5, 0.1, 0.01};  // point, depth, camera, smooth
  int iters_total = 500;
  int align_start_iter = 150;
  double lr_pose = 1e-2;       // poses, focals, group parameters
  double lr_disparity = 1e-3;  // per-pixel disparity fields
  double lr_final_ratio = 1e-3;  // cosine decay floor within each stage
  double sigma_floor = 1e-3;
  double d_min = 1e-4;
  double huber_delta = 1e-3;
  bool pure_l1 = false;

  LossOptions loss_options() const { return {pure_l1, huber_delta, sigma_floor}; }

  void validate() const {
    for (double a : alpha) {
      if (!(a >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "loss weights must be non-negative");
    }
    if (iters_total < 0) throw Error(ErrorCode::kInvalidArgument, "iters_total must be >= 0");
    if (iters_total > 0 && (align_start_iter < 0 || align_start_iter >= iters_total)) {
      throw Error(ErrorCode::kInvalidArgument, "align_start_iter must lie in [0, iters_total)");
    }
  }
};

struct TraceRow {
  int iter = 0;
  double point = 0.0, depth = 0.0, cam = 0.0, smooth = 0.0, total = 0.0;
  double grad_norm = 0.0;
};

struct AlignResult {
  GlobalState state;
  std::vector<TraceRow> trace;
  int ray_failures = 0;
  bool camera_loss_used = false;
};

struct LossValues {
  double point = 0.0, depth = 0.0, cam = 0.0, smooth = 0.0;
};

// Weighted total and its gradient (weights of zero skip the term's gradient).
inline LossValues evaluate_losses(const GlobalState& state, std::span<const WindowGroup> groups,
                                  const RaySolutions& solutions, const LossOptions& options,
                                  const std::array<double, 4>& weights, Eigen::VectorXd* grad) {
  LossValues v;
  v.point = loss_point(state, groups, options, weights[0] > 0.0 ? grad : nullptr, weights[0]);
  v.depth = loss_depth(state, groups, options, weights[1] > 0.0 ? grad : nullptr, weights[1]);
  v.cam = loss_cam(state, groups, solutions, options, weights[2] > 0.0 ? grad : nullptr, weights[2]);
  v.smooth = loss_smooth(state, options, weights[3] > 0.0 ? grad : nullptr, weights[3]);
  return v;
}

namespace detail {

class Adam {
 public:
  explicit Adam(Eigen::Index n) : m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

  void reset() {
    m_.setZero();
    v_.setZero();
    t_ = 0;
  }

  void step(Eigen::VectorXd& x, const Eigen::VectorXd& grad, const Eigen::VectorXd& lr) {
    ++t_;
    m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
    v_ = kBeta2 * v_ + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    x.array() -= lr.array() * (m_.array() / c1) / ((v_.array() / c2).sqrt() + kEps);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-12;
  Eigen::VectorXd m_, v_;
  int t_ = 0;
};

inline const char* term_name(int k) {
  static constexpr const char* names[] = {"L_p", "L_d", "L_c", "L_s"};
  return names[k];
}

}  // namespace detail

// Staged optimization. Before align_start_iter: L_p + L_s over frame
// variables and point-map group parameters. At align_start_iter: closed-form
// depth and camera alignments. Afterwards: the weighted sum of all four
// terms over every variable. Group 0's point-map similarity is the gauge and
// stays fixed.
inline AlignResult optimize(std::span<const WindowGroup> groups, const AlignConfig& config,
                            const InitState& init, std::ostream* trace_log = nullptr) {
  config.validate();
  AlignResult result;
  result.state = make_state(init);
  GlobalState& state = result.state;
  detail::check_groups(state, groups);
  if (config.iters_total == 0) return result;

  const LossOptions options = config.loss_options();
  const RaySolutions solutions = solve_ray_cameras(groups, &result.ray_failures);
  bool have_rays = false;
  for (const auto& per_group : solutions) {
    for (const auto& s : per_group) have_rays = have_rays || s.has_value();
  }
  std::array<double, 4> alpha = config.alpha;
  if (!have_rays) alpha[2] = 0.0;
  result.camera_loss_used = alpha[2] > 0.0;

  const Eigen::Index n = state.params().size();
  Eigen::VectorXd base_lr = Eigen::VectorXd::Constant(n, config.lr_pose);
  for (int i = 0; i < state.num_frames(); ++i) {
    for (Eigen::Index p = 0; p < state.pixels(); ++p) {
      base_lr(state.disparity_offset(i) + p) = state.mask[i][p] ? config.lr_disparity : 0.0;
    }
  }
  if (state.num_groups() > 0) base_lr.segment(state.group_offset(0), 8).setZero();

  Eigen::VectorXd stage_lr = base_lr;
  for (int g = 0; g < state.num_groups(); ++g) stage_lr.segment(state.group_offset(g) + 8, 10).setZero();

  detail::Adam adam(n);
  Eigen::VectorXd grad(n);
  Eigen::VectorXd lr(n);
  int stage_begin = 0;
  int stage_end = config.align_start_iter;
  std::array<double, 4> weights{1.0, 0.0, 0.0, 1.0};

  for (int it = 0; it < config.iters_total; ++it) {
    if (it == config.align_start_iter) {
      const auto depth = align_depth_closed_form(state, groups);
      for (int g = 0; g < state.num_groups(); ++g) state.set_depth_alignment(g, depth[g].scale, depth[g].shift);
      if (alpha[2] > 0.0) {
        const auto cams = align_cam_closed_form(state, groups, solutions);
        for (int g = 0; g < state.num_groups(); ++g) state.set_cam_alignment(g, cams[g]);
      }
      stage_lr = base_lr;
      if (alpha[1] == 0.0) {
        for (int g = 0; g < state.num_groups(); ++g) stage_lr.segment(state.depth_log_scale_offset(g), 2).setZero();
      }
      if (alpha[2] == 0.0) {
        for (int g = 0; g < state.num_groups(); ++g) stage_lr.segment(state.cam_quat_offset(g), 8).setZero();
      }
      adam.reset();
      weights = alpha;
      stage_begin = it;
      stage_end = config.iters_total;
    }

    grad.setZero();
    const LossValues v = evaluate_losses(state, groups, solutions, options, weights, &grad);
    const std::array<double, 4> values{v.point, v.depth, v.cam, v.smooth};
    for (int k = 0; k < 4; ++k) {
      if (weights[k] > 0.0 && !std::isfinite(values[k])) {
        throw Error(ErrorCode::kNumerical, std::string(detail::term_name(k)) +
                                               " is not finite at iteration " + std::to_string(it));
      }
    }
    if (!grad.allFinite()) {
      throw Error(ErrorCode::kNumerical, "gradient is not finite at iteration " + std::to_string(it));
    }
    TraceRow row{it, v.point, v.depth, v.cam, v.smooth,
                 weights[0] * v.point + weights[1] * v.depth + weights[2] * v.cam + weights[3] * v.smooth,
                 grad.norm()};
    result.trace.push_back(row);
    if (trace_log) {
      *trace_log << row.iter << ' ' << row.point << ' ' << row.depth << ' ' << row.cam << ' '
                 << row.smooth << ' ' << row.total << ' ' << row.grad_norm << '\n';
    }

    const double progress = static_cast<double>(it - stage_begin) / std::max(1, stage_end - stage_begin);
    const double decay = config.lr_final_ratio +
                         (1.0 - config.lr_final_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    lr = stage_lr * decay;
    adam.step(state.params(), grad, lr);
    state.normalize_quaternions();
    for (int i = 0; i < state.num_frames(); ++i) {
      auto disp = state.disparity(i);
      for (Eigen::Index p = 0; p < state.pixels(); ++p) {
        if (state.mask[i][p] && disp(p) < config.d_min) disp(p) = config.d_min;
      }
    }
  }
  return result;
}

}  // namespace geo4d
