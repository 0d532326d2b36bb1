#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "geo4d/error.hpp"
#include "geo4d/geometry.hpp"
#include "geo4d/initialization.hpp"

namespace geo4d {

// Ground-truth disparities below this are treated as missing.
inline constexpr double kMinGtDisparity = 1e-6;

struct DepthAlignmentFit {
  double scale = 1.0;
  double shift = 0.0;
};

namespace detail {

inline bool depth_pixel_valid(double pred, double gt, const Grid<uint8_t>* mask, size_t p) {
  return (!mask || (*mask)[p]) && std::isfinite(pred) && std::isfinite(gt) && gt >= kMinGtDisparity;
}

inline void check_depth_inputs(std::span<const DisparityMap> pred, std::span<const DisparityMap> gt,
                               std::span<const Grid<uint8_t>> masks) {
  if (pred.size() != gt.size() || (!masks.empty() && masks.size() != pred.size())) {
    throw Error(ErrorCode::kLengthMismatch, "prediction, ground truth and masks differ in frame count");
  }
  for (size_t f = 0; f < pred.size(); ++f) {
    if (!pred[f].same_shape(gt[f])) throw Error(ErrorCode::kLengthMismatch, "map size mismatch");
  }
}

}  // namespace detail

// One scale and shift for the whole sequence, least squares in disparity space.
inline DepthAlignmentFit align_depth_global(std::span<const DisparityMap> pred,
                                            std::span<const DisparityMap> gt,
                                            std::span<const Grid<uint8_t>> masks = {}) {
  detail::check_depth_inputs(pred, gt, masks);
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (size_t f = 0; f < pred.size(); ++f) {
    const Grid<uint8_t>* mask = masks.empty() ? nullptr : &masks[f];
    for (size_t p = 0; p < pred[f].size(); ++p) {
      const double x = pred[f][p], y = gt[f][p];
      if (!detail::depth_pixel_valid(x, y, mask, p)) continue;
      n += 1;
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      syy += y * y;
    }
  }
  if (n < 2) throw Error(ErrorCode::kInsufficientPoints, "fewer than 2 valid pixels for depth alignment");
  const double mx = sx / n, my = sy / n;
  const double var_x = sxx / n - mx * mx;
  const double var_y = syy / n - my * my;
  DepthAlignmentFit fit;
  if (var_x <= 1e-15 * std::max(1.0, mx * mx) || var_y <= 1e-15 * std::max(1.0, my * my)) {
    fit.shift = my - mx;
    return fit;
  }
  fit.scale = (sxy / n - mx * my) / var_x;
  fit.shift = my - fit.scale * mx;
  return fit;
}

struct DepthEvalReport {
  double abs_rel = 0.0;
  double delta_125 = 0.0;  // percent
  std::vector<double> frame_abs_rel;
  std::vector<double> frame_delta_125;
  DepthAlignmentFit fit;
  size_t pixels = 0;
};

// Abs Rel and δ<1.25 in depth space (depth = 1 / disparity), pooled over all
// valid pixels of all frames. Predictions must already be aligned.
inline DepthEvalReport depth_metrics(std::span<const DisparityMap> pred, std::span<const DisparityMap> gt,
                                     std::span<const Grid<uint8_t>> masks = {}) {
  detail::check_depth_inputs(pred, gt, masks);
  DepthEvalReport report;
  double rel_sum = 0.0, inliers = 0.0;
  for (size_t f = 0; f < pred.size(); ++f) {
    const Grid<uint8_t>* mask = masks.empty() ? nullptr : &masks[f];
    double frame_rel = 0.0, frame_in = 0.0, frame_n = 0.0;
    for (size_t p = 0; p < pred[f].size(); ++p) {
      if (!detail::depth_pixel_valid(pred[f][p], gt[f][p], mask, p)) continue;
      const double d_gt = 1.0 / gt[f][p];
      const double d_pred = 1.0 / std::max(pred[f][p], kMinGtDisparity);
      const double rel = std::abs(d_pred - d_gt) / d_gt;
      const bool in = std::max(d_pred / d_gt, d_gt / d_pred) < 1.25;
      frame_rel += rel;
      frame_in += in;
      frame_n += 1.0;
    }
    rel_sum += frame_rel;
    inliers += frame_in;
    report.pixels += static_cast<size_t>(frame_n);
    report.frame_abs_rel.push_back(frame_n > 0 ? frame_rel / frame_n : 0.0);
    report.frame_delta_125.push_back(frame_n > 0 ? 100.0 * frame_in / frame_n : 0.0);
  }
  if (report.pixels == 0) throw Error(ErrorCode::kInsufficientPoints, "no valid pixels to evaluate");
  report.abs_rel = rel_sum / static_cast<double>(report.pixels);
  report.delta_125 = 100.0 * inliers / static_cast<double>(report.pixels);
  return report;
}

// align_depth_global followed by depth_metrics on the aligned predictions.
inline DepthEvalReport evaluate_depth(std::span<const DisparityMap> pred, std::span<const DisparityMap> gt,
                                      std::span<const Grid<uint8_t>> masks = {}) {
  const DepthAlignmentFit fit = align_depth_global(pred, gt, masks);
  std::vector<DisparityMap> aligned(pred.begin(), pred.end());
  for (auto& map : aligned) {
    for (auto& d : map.values()) d = fit.scale * d + fit.shift;
  }
  DepthEvalReport report = depth_metrics(aligned, gt, masks);
  report.fit = fit;
  return report;
}

struct TrajEvalReport {
  double ate = 0.0;
  double rpe_t = 0.0;
  double rpe_r = 0.0;  // degrees
  Similarity fit;      // prediction -> ground truth
};

// Sim(3) Umeyama on camera centers (straight-line paths allowed), then ATE (RMSE of aligned centers) and
// RMSE of relative translation / rotation errors over frame pairs (i, i+delta).
inline TrajEvalReport traj_metrics(std::span<const Pose> pred, std::span<const Pose> gt, int rpe_delta = 1) {
  if (pred.size() != gt.size()) {
    throw Error(ErrorCode::kLengthMismatch, "trajectories differ in length (" + std::to_string(pred.size()) +
                                                " vs " + std::to_string(gt.size()) + ")");
  }
  if (pred.size() < 3) throw Error(ErrorCode::kInsufficientPoints, "need at least 3 poses");
  if (rpe_delta < 1) throw Error(ErrorCode::kInvalidArgument, "rpe delta must be >= 1");
  std::vector<Vector3d> src, dst;
  for (size_t i = 0; i < pred.size(); ++i) {
    src.push_back(pred[i].center);
    dst.push_back(gt[i].center);
  }
  TrajEvalReport report;
  report.fit = umeyama(src, dst, true, true);

  std::vector<Pose> aligned;
  double sq = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    aligned.push_back(report.fit.transform(pred[i]));
    sq += (aligned.back().center - gt[i].center).squaredNorm();
  }
  report.ate = std::sqrt(sq / static_cast<double>(pred.size()));

  double sq_t = 0.0, sq_r = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i + rpe_delta < pred.size(); ++i) {
    const size_t j = i + rpe_delta;
    const Matrix3d rel_rot_pred = aligned[i].rotation * aligned[j].rotation.transpose();
    const Matrix3d rel_rot_gt = gt[i].rotation * gt[j].rotation.transpose();
    const Vector3d rel_t_pred = aligned[i].rotation * (aligned[j].center - aligned[i].center);
    const Vector3d rel_t_gt = gt[i].rotation * (gt[j].center - gt[i].center);
    sq_t += (rel_t_pred - rel_t_gt).squaredNorm();
    const double angle = rotation_angle(rel_rot_pred, rel_rot_gt) * 180.0 / std::numbers::pi;
    sq_r += angle * angle;
    ++pairs;
  }
  if (pairs > 0) {
    report.rpe_t = std::sqrt(sq_t / static_cast<double>(pairs));
    report.rpe_r = std::sqrt(sq_r / static_cast<double>(pairs));
  }
  return report;
}

inline std::string format_report(const DepthEvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "abs_rel=" << r.abs_rel << "\n"
      << "delta_125=" << r.delta_125 << "\n"
      << "scale=" << r.fit.scale << "\n"
      << "shift=" << r.fit.shift << "\n"
      << "pixels=" << r.pixels << "\n";
  for (size_t f = 0; f < r.frame_abs_rel.size(); ++f) {
    out << "frame." << f << ".abs_rel=" << r.frame_abs_rel[f] << "\n"
        << "frame." << f << ".delta_125=" << r.frame_delta_125[f] << "\n";
  }
  return out.str();
}

inline std::string format_report(const TrajEvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "ate=" << r.ate << "\n"
      << "rpe_t=" << r.rpe_t << "\n"
      << "rpe_r=" << r.rpe_r << "\n"
      << "fit.scale=" << r.fit.scale << "\n";
  for (int k = 0; k < 3; ++k) out << "fit.shift." << "xyz"[k] << "=" << r.fit.shift(k) << "\n";
  return out.str();
}

}  // namespace geo4d
