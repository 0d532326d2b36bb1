#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "geo4d/error.hpp"
#include "geo4d/geometry.hpp"
#include "geo4d/ray_solver.hpp"
#include "geo4d/scene.hpp"
#include "geo4d/windowing.hpp"

namespace geo4d {

// Closed-form least-squares similarity with dst ≈ scale R src + shift.
// Collinear sources leave the rotation about their line free; with
// allow_collinear one of the equally good minimizers is returned.
inline Similarity umeyama(std::span<const Vector3d> src, std::span<const Vector3d> dst,
                          bool with_scale = true, bool allow_collinear = false) {
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::kLengthMismatch, "umeyama needs equally many source and target points");
  }
  if (src.size() < 3) {
    throw Error(ErrorCode::kDegenerateCorrespondence, "umeyama needs at least 3 points");
  }
  const double n = static_cast<double>(src.size());
  Vector3d mean_src = Vector3d::Zero(), mean_dst = Vector3d::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    mean_src += src[i];
    mean_dst += dst[i];
  }
  mean_src /= n;
  mean_dst /= n;

  Matrix3d cov = Matrix3d::Zero();
  Matrix3d src_scatter = Matrix3d::Zero();
  double var_src = 0.0;
  for (size_t i = 0; i < src.size(); ++i) {
    const Vector3d s = src[i] - mean_src;
    cov += (dst[i] - mean_dst) * s.transpose();
    src_scatter += s * s.transpose();
    var_src += s.squaredNorm();
  }
  cov /= n;
  var_src /= n;

  Eigen::SelfAdjointEigenSolver<Matrix3d> scatter(src_scatter);
  const double spread = scatter.eigenvalues()(2);
  if (!(spread > 1e-300)) {
    throw Error(ErrorCode::kDegenerateCorrespondence, "source points coincide");
  }
  if (!allow_collinear && scatter.eigenvalues()(1) <= 1e-12 * spread) {
    throw Error(ErrorCode::kDegenerateCorrespondence, "correspondences are collinear");
  }

  Eigen::JacobiSVD<Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sign(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2) = -1.0;

  Similarity out;
  out.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  out.scale = with_scale ? svd.singularValues().dot(sign) / var_src : 1.0;
  out.shift = mean_dst - out.scale * out.rotation * mean_src;
  return out;
}

inline Similarity umeyama(const std::vector<Vector3d>& src, const std::vector<Vector3d>& dst,
                          bool with_scale = true, bool allow_collinear = false) {
  return umeyama(std::span<const Vector3d>(src), std::span<const Vector3d>(dst), with_scale, allow_collinear);
}

// Running 1/sigma-weighted average of aligned group point maps per frame.
struct FusedPointMaps {
  std::vector<PointMap> points;
  std::vector<Grid<double>> weight;  // 0 where no group observed the pixel

  bool valid(int frame, size_t pixel) const { return weight[frame][pixel] > 0.0; }
};

namespace detail {

inline FusedPointMaps empty_fusion(int num_frames, int height, int width) {
  FusedPointMaps fused;
  fused.points.assign(num_frames, PointMap(height, width, Vector3d::Zero()));
  fused.weight.assign(num_frames, Grid<double>(height, width, 0.0));
  return fused;
}

// Adds 1/sigma-weighted aligned points of one group into running sums.
inline void accumulate_group(const WindowGroup& group, const Similarity& to_world,
                             FusedPointMaps& sums) {
  for (int j = 0; j < group.length(); ++j) {
    const int frame = group.start + j;
    for (size_t p = 0; p < group.points[j].size(); ++p) {
      if (!group.valid(j, p)) continue;
      const double w = 1.0 / std::max(group.uncertainty[j][p], 1e-12);
      sums.points[frame][p] += w * to_world.apply(group.points[j][p]);
      sums.weight[frame][p] += w;
    }
  }
}

inline Vector3d fused_mean(const FusedPointMaps& sums, int frame, size_t pixel) {
  return sums.points[frame][pixel] / sums.weight[frame][pixel];
}

}  // namespace detail

inline int group_frame_count(std::span<const WindowGroup> groups) {
  int n = 0;
  for (const auto& g : groups) n = std::max(n, g.start + g.length());
  return n;
}

// Group-to-global similarities. Group 0 fixes the gauge (identity); every
// later group is fitted to the running fusion of its predecessors on the
// frames they share.
inline std::vector<Similarity> chain_groups(std::span<const WindowGroup> groups,
                                            size_t max_correspondences = 4096) {
  std::vector<Similarity> out;
  if (groups.empty()) return out;
  const int height = groups[0].points[0].height();
  const int width = groups[0].points[0].width();
  FusedPointMaps sums = detail::empty_fusion(group_frame_count(groups), height, width);

  out.push_back(Similarity{});
  detail::accumulate_group(groups[0], out[0], sums);

  for (size_t g = 1; g < groups.size(); ++g) {
    const WindowGroup& group = groups[g];
    std::vector<Vector3d> src, dst;
    for (int j = 0; j < group.length(); ++j) {
      const int frame = group.start + j;
      for (size_t p = 0; p < group.points[j].size(); ++p) {
        if (!group.valid(j, p) || !sums.valid(frame, p)) continue;
        src.push_back(group.points[j][p]);
        dst.push_back(detail::fused_mean(sums, frame, p));
      }
    }
    if (src.empty()) {
      throw Error(ErrorCode::kDisconnectedGroups,
                  "group starting at frame " + std::to_string(group.start) +
                      " shares no frames with earlier groups");
    }
    if (src.size() > max_correspondences) {
      const size_t step = (src.size() + max_correspondences - 1) / max_correspondences;
      size_t k = 0;
      for (size_t i = 0; i < src.size(); i += step, ++k) {
        src[k] = src[i];
        dst[k] = dst[i];
      }
      src.resize(k);
      dst.resize(k);
    }
    out.push_back(umeyama(src, dst, true));
    detail::accumulate_group(group, out.back(), sums);
  }
  return out;
}

inline FusedPointMaps fuse_point_maps(std::span<const WindowGroup> groups,
                                      std::span<const Similarity> to_world) {
  const int height = groups[0].points[0].height();
  const int width = groups[0].points[0].width();
  FusedPointMaps fused = detail::empty_fusion(group_frame_count(groups), height, width);
  for (size_t g = 0; g < groups.size(); ++g) detail::accumulate_group(groups[g], to_world[g], fused);
  for (size_t f = 0; f < fused.points.size(); ++f) {
    for (size_t p = 0; p < fused.points[f].size(); ++p) {
      if (fused.weight[f][p] > 0.0) fused.points[f][p] /= fused.weight[f][p];
    }
  }
  return fused;
}

// Projective camera P (3x4) from 2D-3D correspondences by the direct linear
// transform, with Hartley normalization of both point sets.
inline Eigen::Matrix<double, 3, 4> dlt_projection(std::span<const Vector2d> image,
                                                  std::span<const Vector3d> world) {
  const size_t n = image.size();
  if (n < 6 || world.size() != n) {
    throw Error(ErrorCode::kInsufficientPoints, "DLT needs at least 6 correspondences");
  }
  Vector2d mean2 = Vector2d::Zero();
  Vector3d mean3 = Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    mean2 += image[i];
    mean3 += world[i];
  }
  mean2 /= static_cast<double>(n);
  mean3 /= static_cast<double>(n);
  double dist2 = 0.0, dist3 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    dist2 += (image[i] - mean2).norm();
    dist3 += (world[i] - mean3).norm();
  }
  const double s2 = dist2 > 0.0 ? std::sqrt(2.0) * n / dist2 : 1.0;
  const double s3 = dist3 > 0.0 ? std::sqrt(3.0) * n / dist3 : 1.0;

  Eigen::MatrixXd a(2 * n, 12);
  for (size_t i = 0; i < n; ++i) {
    const Vector2d x = s2 * (image[i] - mean2);
    Eigen::Vector4d xw;
    xw << s3 * (world[i] - mean3), 1.0;
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << Eigen::RowVector4d::Zero(), -xw.transpose(), x.y() * xw.transpose();
    a.row(r + 1) << xw.transpose(), Eigen::RowVector4d::Zero(), -x.x() * xw.transpose();
  }
  Eigen::Matrix<double, 12, 1> h;
  if (n == 6) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    h = svd.matrixV().col(11);
  } else {
    const Eigen::Matrix<double, 12, 12> ata = a.transpose() * a;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> eig(ata);
    h = eig.eigenvectors().col(0);
  }
  Eigen::Matrix<double, 3, 4> p_norm;
  p_norm << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8), h(9), h(10), h(11);

  Matrix3d t2_inv = Matrix3d::Identity();
  t2_inv(0, 0) = t2_inv(1, 1) = 1.0 / s2;
  t2_inv.block<2, 1>(0, 2) = mean2;
  Eigen::Matrix4d t3 = Eigen::Matrix4d::Identity();
  t3.block<3, 3>(0, 0) *= s3;
  t3.block<3, 1>(0, 3) = -s3 * mean3;
  return t2_inv * p_norm * t3;
}

// Focal (shared fx = fy) with the principal point at the image center,
// minimizing sum ||(u - cx, v - cy) - f (X/Z, Y/Z)|| by Weiszfeld iterations
// started from the least-squares focal.
inline double init_intrinsics(const PointMap& camera_points, const Grid<uint8_t>* mask = nullptr,
                              int iterations = 10) {
  const double cx = 0.5 * (camera_points.width() - 1);
  const double cy = 0.5 * (camera_points.height() - 1);
  std::vector<Vector2d> pix, proj;
  for (int v = 0; v < camera_points.height(); ++v) {
    for (int u = 0; u < camera_points.width(); ++u) {
      if (mask && !(*mask)(v, u)) continue;
      const Vector3d& x = camera_points(v, u);
      if (!(x.z() > 0.0) || !x.allFinite()) continue;
      pix.emplace_back(u - cx, v - cy);
      proj.emplace_back(x.x() / x.z(), x.y() / x.z());
    }
  }
  if (pix.empty()) throw Error(ErrorCode::kBehindCamera, "no point lies in front of the camera");
  if (pix.size() < 10) {
    throw Error(ErrorCode::kInsufficientPoints, "focal estimation needs at least 10 valid pixels");
  }
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < pix.size(); ++i) {
    num += pix[i].dot(proj[i]);
    den += proj[i].squaredNorm();
  }
  if (!(den > 0.0)) throw Error(ErrorCode::kDegenerateCorrespondence, "all points on the optical axis");
  double focal = num / den;
  for (int it = 0; it < iterations; ++it) {
    num = den = 0.0;
    for (size_t i = 0; i < pix.size(); ++i) {
      const double w = 1.0 / std::max((pix[i] - focal * proj[i]).norm(), 1e-9);
      num += w * pix[i].dot(proj[i]);
      den += w * proj[i].squaredNorm();
    }
    focal = num / den;
  }
  return focal;
}

struct PnpResult {
  Pose pose;
  std::vector<uint8_t> inliers;  // one entry per pixel; 0 for masked pixels
  int num_inliers = 0;
};

struct PnpOptions {
  int iterations = 200;
  double threshold_px = 3.0;
  uint64_t seed = 0;
  int refine_iterations = 10;
};

namespace detail {

// [R | t] from a normalized-coordinate DLT P ≈ c [R | t].
inline bool pose_from_normalized_projection(const Eigen::Matrix<double, 3, 4>& p, Pose& pose) {
  Eigen::Matrix<double, 3, 4> q = p;
  if (q.leftCols<3>().determinant() < 0.0) q = -q;
  Eigen::JacobiSVD<Matrix3d> svd(q.leftCols<3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double c = svd.singularValues().mean();
  if (!(c > 0.0) || !std::isfinite(c)) return false;
  const Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) return false;
  pose = Pose::from_rotation_translation(r, q.col(3) / c);
  return true;
}

inline double reprojection_error(const Intrinsics& k, const Pose& pose, const Vector2d& px,
                                 const Vector3d& x) {
  const Vector3d xc = pose.to_camera(x);
  if (!(xc.z() > 0.0)) return std::numeric_limits<double>::infinity();
  return (k.project(xc) - px).norm();
}

// Gauss-Newton on pixel reprojection error, left-multiplicative rotation update.
inline Pose refine_pose(const Intrinsics& k, Pose pose, std::span<const Vector2d> px,
                        std::span<const Vector3d> x, int iterations) {
  Matrix3d r = pose.rotation;
  Vector3d t = pose.translation();
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (size_t i = 0; i < px.size(); ++i) {
      const Vector3d rx = r * x[i];
      const Vector3d xc = rx + t;
      if (!(xc.z() > 0.0)) continue;
      const double iz = 1.0 / xc.z();
      const Vector2d res(k.fx * xc.x() * iz + k.cx - px[i].x(), k.fy * xc.y() * iz + k.cy - px[i].y());
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << k.fx * iz, 0.0, -k.fx * xc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * xc.y() * iz * iz;
      Eigen::Matrix<double, 2, 6> jac;
      jac.leftCols<3>() = -dproj * skew(rx);
      jac.rightCols<3>() = dproj;
      jtj += jac.transpose() * jac;
      jtr += jac.transpose() * res;
    }
    const Eigen::Matrix<double, 6, 1> step = -(jtj + 1e-9 * Eigen::Matrix<double, 6, 6>::Identity()).ldlt().solve(jtr);
    if (!step.allFinite()) break;
    const Vector3d w = step.head<3>();
    const Matrix3d dr = w.norm() > 0.0 ? axis_angle(w, w.norm()) : Matrix3d::Identity();
    r = dr * r;
    t = dr * t + step.tail<3>();
    if (step.norm() < 1e-14) break;
  }
  return Pose::from_rotation_translation(project_to_rotation(r), t);
}

}  // namespace detail

// Pose from pixel-grid <-> point-map correspondences: RANSAC over minimal
// 6-point DLT samples (normalized coordinates, K known, Gauss-Newton polished
// on the sample), then least-squares refinement on the inliers.
inline PnpResult ransac_pnp(const PointMap& points, const Grid<uint8_t>& mask, const Intrinsics& k,
                            const PnpOptions& options = {}) {
  k.validate();
  std::vector<Vector2d> px, norm;
  std::vector<Vector3d> x;
  std::vector<size_t> pixel_of;
  for (int v = 0; v < points.height(); ++v) {
    for (int u = 0; u < points.width(); ++u) {
      if (!mask(v, u) || !points(v, u).allFinite()) continue;
      px.emplace_back(u, v);
      norm.push_back(k.unproject(u, v).head<2>());
      x.push_back(points(v, u));
      pixel_of.push_back(static_cast<size_t>(v) * points.width() + u);
    }
  }
  const size_t n = px.size();
  if (n < 6) throw Error(ErrorCode::kInsufficientPoints, "PnP needs at least 6 correspondences");

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  Pose best_pose;
  size_t best_count = 0;
  std::array<Vector2d, 6> sample_norm, sample_px;
  std::array<Vector3d, 6> sample_x;
  auto count_inliers = [&](const Pose& pose, double factor) {
    const double threshold = factor * options.threshold_px;
    size_t c = 0;
    for (size_t i = 0; i < n; ++i) c += detail::reprojection_error(k, pose, px[i], x[i]) < threshold;
    return c;
  };
  for (int it = 0; it < options.iterations; ++it) {
    std::array<size_t, 6> idx{};
    for (int s = 0; s < 6; ++s) {
      size_t c;
      do {
        c = pick(rng);
      } while (std::find(idx.begin(), idx.begin() + s, c) != idx.begin() + s);
      idx[s] = c;
      sample_norm[s] = norm[c];
      sample_px[s] = px[c];
      sample_x[s] = x[c];
    }
    Pose candidate;
    try {
      if (!detail::pose_from_normalized_projection(dlt_projection(sample_norm, sample_x), candidate)) continue;
    } catch (const Error&) {
      continue;
    }
    // The linear solve degrades badly under noise at narrow fields of view;
    // polishing on the sample itself fixes most of that.
    candidate = detail::refine_pose(k, candidate, sample_px, sample_x, options.refine_iterations);
    // Local optimization: minimal samples are noisy, so promising hypotheses
    // are re-fit on their inliers under a shrinking threshold and compete
    // after that.
    if (count_inliers(candidate, 4.0) <= best_count) continue;
    Pose current = candidate;
    for (double factor : {4.0, 2.0, 1.0, 1.0}) {
      std::vector<Vector2d> lo_px;
      std::vector<Vector3d> lo_x;
      for (size_t i = 0; i < n; ++i) {
        if (detail::reprojection_error(k, current, px[i], x[i]) < factor * options.threshold_px) {
          lo_px.push_back(px[i]);
          lo_x.push_back(x[i]);
        }
      }
      if (lo_px.size() < 6) break;
      current = detail::refine_pose(k, current, lo_px, lo_x, options.refine_iterations);
      const size_t count = count_inliers(current, 1.0);
      if (count > best_count) {
        best_count = count;
        best_pose = current;
      }
    }
    if (best_count == n) break;
  }
  if (best_count * 10 < n) {
    throw Error(ErrorCode::kPnpFailure, "RANSAC found " + std::to_string(best_count) + " inliers of " +
                                            std::to_string(n));
  }

  std::vector<Vector2d> in_px;
  std::vector<Vector3d> in_x;
  for (size_t i = 0; i < n; ++i) {
    if (detail::reprojection_error(k, best_pose, px[i], x[i]) < options.threshold_px) {
      in_px.push_back(px[i]);
      in_x.push_back(x[i]);
    }
  }
  Pose refined = detail::refine_pose(k, best_pose, in_px, in_x, options.refine_iterations);
  size_t refined_count = 0;
  for (size_t i = 0; i < n; ++i) {
    refined_count += detail::reprojection_error(k, refined, px[i], x[i]) < options.threshold_px;
  }
  if (refined_count < best_count) refined = best_pose;

  PnpResult out;
  out.pose = refined;
  out.inliers.assign(points.size(), 0);
  for (size_t i = 0; i < n; ++i) {
    if (detail::reprojection_error(k, refined, px[i], x[i]) < options.threshold_px) {
      out.inliers[pixel_of[i]] = 1;
      ++out.num_inliers;
    }
  }
  if (out.num_inliers * 10 < static_cast<int>(n)) {
    throw Error(ErrorCode::kPnpFailure, "refined pose keeps too few inliers");
  }
  return out;
}

namespace detail {

// Joint Gauss-Newton on pose and shared focal (principal point at the image
// center); px are pixel offsets from the center.
inline double refine_pose_focal(Pose& pose, double& focal, std::span<const Vector2d> px,
                                std::span<const Vector3d> x, int iterations) {
  Matrix3d r = pose.rotation;
  Vector3d t = pose.translation();
  double log_f = std::log(focal);
  double cost = 0.0;
  for (int it = 0; it <= iterations; ++it) {
    const double f = std::exp(log_f);
    Eigen::Matrix<double, 7, 7> jtj = Eigen::Matrix<double, 7, 7>::Zero();
    Eigen::Matrix<double, 7, 1> jtr = Eigen::Matrix<double, 7, 1>::Zero();
    cost = 0.0;
    int used = 0;
    for (size_t i = 0; i < px.size(); ++i) {
      const Vector3d rx = r * x[i];
      const Vector3d xc = rx + t;
      if (!(xc.z() > 0.0)) continue;
      const double iz = 1.0 / xc.z();
      const Vector2d proj(xc.x() * iz, xc.y() * iz);
      const Vector2d res = f * proj - px[i];
      cost += res.squaredNorm();
      ++used;
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << f * iz, 0.0, -f * xc.x() * iz * iz, 0.0, f * iz, -f * xc.y() * iz * iz;
      Eigen::Matrix<double, 2, 7> jac;
      jac.leftCols<3>() = -dproj * skew(rx);
      jac.middleCols<3>(3) = dproj;
      jac.col(6) = f * proj;
      jtj += jac.transpose() * jac;
      jtr += jac.transpose() * res;
    }
    if (used == 0) return std::numeric_limits<double>::infinity();
    cost = std::sqrt(cost / used);
    if (it == iterations) break;
    const Eigen::Matrix<double, 7, 1> step =
        -(jtj + 1e-9 * Eigen::Matrix<double, 7, 7>::Identity()).ldlt().solve(jtr);
    if (!step.allFinite()) break;
    const Vector3d w = step.head<3>();
    const Matrix3d dr = w.norm() > 0.0 ? axis_angle(w, w.norm()) : Matrix3d::Identity();
    r = dr * r;
    t = dr * t + step.segment<3>(3);
    log_f += std::clamp(step(6), -0.5, 0.5);
    if (step.norm() < 1e-14) break;
  }
  pose = Pose::from_rotation_translation(project_to_rotation(r), t);
  focal = std::exp(log_f);
  return cost;
}

}  // namespace detail

// Re-expresses a point map in the camera frame of the image it was predicted
// for. The map may sit in any similarity-transformed frame: a calibrated
// linear pose is tried for a sweep of focal lengths, and the best one is
// refined jointly with the focal on pixel reprojection error.
inline PointMap to_camera_frame(const PointMap& points, const Grid<uint8_t>& mask) {
  const double cx = 0.5 * (points.width() - 1), cy = 0.5 * (points.height() - 1);
  std::vector<Vector2d> px;
  std::vector<Vector3d> x;
  for (int v = 0; v < points.height(); ++v) {
    for (int u = 0; u < points.width(); ++u) {
      if (!mask(v, u) || !points(v, u).allFinite()) continue;
      px.emplace_back(u - cx, v - cy);
      x.push_back(points(v, u));
    }
  }
  if (px.size() < 10) throw Error(ErrorCode::kInsufficientPoints, "camera fit needs at least 10 valid pixels");

  const double size = std::max(points.width(), points.height());
  double best_cost = std::numeric_limits<double>::infinity();
  Pose best_pose;
  std::vector<Vector2d> norm(px.size());
  for (int k = 0; k < 16; ++k) {
    double focal = size * 0.2 * std::pow(25.0, k / 15.0);
    for (size_t i = 0; i < px.size(); ++i) norm[i] = px[i] / focal;
    Pose pose;
    if (!detail::pose_from_normalized_projection(dlt_projection(norm, x), pose)) continue;
    int in_front = 0;
    for (const auto& p : x) in_front += pose.to_camera(p).z() > 0.0;
    if (2 * in_front < static_cast<int>(x.size())) continue;
    const double cost = detail::refine_pose_focal(pose, focal, px, x, 10);
    if (cost < best_cost) {
      best_cost = cost;
      best_pose = pose;
    }
  }
  if (!std::isfinite(best_cost)) throw Error(ErrorCode::kBehindCamera, "no camera places the points in front");
  PointMap out(points.height(), points.width(), Vector3d::Zero());
  for (size_t i = 0; i < points.size(); ++i) out[i] = best_pose.to_camera(points[i]);
  return out;
}

struct InitOptions {
  PnpOptions pnp;
  double d_min = 1e-4;
  size_t max_correspondences = 4096;
};

struct InitState {
  int height = 0;
  int width = 0;
  std::vector<Similarity> group_alignment;  // group -> global, group 0 = identity
  std::vector<Pose> poses;
  std::vector<double> focals;
  std::vector<DisparityMap> disparity;
  std::vector<Grid<uint8_t>> mask;  // pixels with usable disparity

  int num_frames() const { return static_cast<int>(poses.size()); }
};

// Warm start: chain groups, estimate focals on each clip's reference frame,
// PnP per frame against the fused point maps, then read disparities off the
// aligned group predictions.
inline InitState initialize(std::span<const WindowGroup> groups, const InitOptions& options = {}) {
  if (groups.empty()) throw Error(ErrorCode::kInvalidArgument, "no window groups");
  InitState init;
  init.height = groups[0].points[0].height();
  init.width = groups[0].points[0].width();
  const int num_frames = group_frame_count(groups);

  init.group_alignment = chain_groups(groups, options.max_correspondences);
  const FusedPointMaps fused = fuse_point_maps(groups, init.group_alignment);

  init.focals.assign(num_frames, 0.0);
  for (const auto& group : groups) {
    Grid<uint8_t> mask(init.height, init.width, 0);
    for (size_t p = 0; p < mask.size(); ++p) mask[p] = group.valid(0, p);
    const double focal = init_intrinsics(to_camera_frame(group.points[0], mask), &mask);
    for (int j = 0; j < group.length(); ++j) {
      if (init.focals[group.start + j] == 0.0) init.focals[group.start + j] = focal;
    }
  }

  init.poses.resize(num_frames);
  for (int f = 0; f < num_frames; ++f) {
    if (init.focals[f] == 0.0) {
      throw Error(ErrorCode::kInvalidArgument, "frame " + std::to_string(f) + " is in no window");
    }
    Grid<uint8_t> mask(init.height, init.width, 0);
    for (size_t p = 0; p < mask.size(); ++p) mask[p] = fused.valid(f, p);
    PnpOptions pnp = options.pnp;
    pnp.seed = options.pnp.seed + static_cast<uint64_t>(f);
    try {
      init.poses[f] = ransac_pnp(fused.points[f], mask,
                                 Intrinsics::centered(init.focals[f], init.width, init.height), pnp)
                          .pose;
    } catch (const Error& e) {
      throw Error(e.code(), "frame " + std::to_string(f) + ": " + e.detail());
    }
  }

  // 1/sigma-weighted depth average over the groups observing each pixel.
  std::vector<Grid<double>> depth_sum(num_frames, Grid<double>(init.height, init.width, 0.0));
  std::vector<Grid<double>> weight(num_frames, Grid<double>(init.height, init.width, 0.0));
  for (size_t g = 0; g < groups.size(); ++g) {
    const WindowGroup& group = groups[g];
    for (int j = 0; j < group.length(); ++j) {
      const int f = group.start + j;
      for (size_t p = 0; p < depth_sum[f].size(); ++p) {
        if (!group.valid(j, p)) continue;
        const double z = init.poses[f].to_camera(init.group_alignment[g].apply(group.points[j][p])).z();
        if (!(z > 0.0)) continue;
        const double w = 1.0 / std::max(group.uncertainty[j][p], 1e-12);
        depth_sum[f][p] += w * z;
        weight[f][p] += w;
      }
    }
  }
  init.disparity.assign(num_frames, DisparityMap(init.height, init.width, 0.0));
  init.mask.assign(num_frames, Grid<uint8_t>(init.height, init.width, 0));
  for (int f = 0; f < num_frames; ++f) {
    for (size_t p = 0; p < depth_sum[f].size(); ++p) {
      if (!(weight[f][p] > 0.0)) continue;
      const double d = weight[f][p] / depth_sum[f][p];
      if (d >= options.d_min && std::isfinite(d)) {
        init.disparity[f][p] = d;
        init.mask[f][p] = 1;
      }
    }
  }
  return init;
}

}  // namespace geo4d
