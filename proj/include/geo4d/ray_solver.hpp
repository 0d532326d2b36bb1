#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <utility>

#include "geo4d/error.hpp"
#include "geo4d/geometry.hpp"

namespace geo4d {

struct RayCameraSolution {
  Vector3d center = Vector3d::Zero();
  Matrix3d rotation = Matrix3d::Identity();  // world-to-camera
  Intrinsics intrinsics;
  double center_rms = 0.0;
  double direction_rms = 0.0;

  Pose pose() const { return {rotation, center}; }
};

struct CenterSolution {
  Vector3d center = Vector3d::Zero();
  double rms = 0.0;
};

// Point closest to all rays: argmin_p sum ||p x d - m||^2.
// Normal equations: sum (|d|^2 I - d d^T) p = sum d x m.
inline CenterSolution solve_center(const RayMap& rays) {
  Matrix3d normal = Matrix3d::Zero();
  Vector3d rhs = Vector3d::Zero();
  for (size_t i = 0; i < rays.directions.size(); ++i) {
    const Vector3d& d = rays.directions[i];
    const Vector3d& m = rays.moments[i];
    normal += d.squaredNorm() * Matrix3d::Identity() - d * d.transpose();
    rhs += d.cross(m);
  }
  Eigen::SelfAdjointEigenSolver<Matrix3d> eig(normal);
  const double largest = eig.eigenvalues()(2);
  if (!(largest > 0.0) || eig.eigenvalues()(0) <= 1e-14 * largest) {
    throw Error(ErrorCode::kRankDeficient, "ray directions are (nearly) parallel");
  }
  CenterSolution out;
  out.center = normal.ldlt().solve(rhs);
  double sq = 0.0;
  for (size_t i = 0; i < rays.directions.size(); ++i) {
    sq += (out.center.cross(rays.directions[i]) - rays.moments[i]).squaredNorm();
  }
  out.rms = std::sqrt(sq / static_cast<double>(rays.directions.size()));
  return out;
}

// H with ||H||_F = 1 minimizing sum ||H d_uv x (u, v, 1)||, solved as the
// smallest right singular vector of the stacked cross-product rows.
// Directions are normalized first so each pixel weighs the same.
inline Matrix3d solve_H(const RayMap& rays) {
  const int height = rays.height();
  const int width = rays.width();
  const Eigen::Index n = static_cast<Eigen::Index>(rays.directions.size());
  if (n < 4) throw Error(ErrorCode::kDegenerateRays, "need at least 4 rays");

  // Pixel coordinates are centered and scaled to an RMS radius of sqrt(2) for
  // conditioning; the solve finds T H and T is undone afterwards.
  const double cu = 0.5 * (width - 1), cv = 0.5 * (height - 1);
  double radius = 0.0;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) radius += (u - cu) * (u - cu) + (v - cv) * (v - cv);
  }
  radius = std::sqrt(radius / static_cast<double>(n));
  const double scale = radius > 0.0 ? std::sqrt(2.0) / radius : 1.0;
  Matrix3d t;
  t << scale, 0.0, -scale * cu, 0.0, scale, -scale * cv, 0.0, 0.0, 1.0;

  Eigen::MatrixXd a(3 * n, 9);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const Eigen::Index i = static_cast<Eigen::Index>(v) * width + u;
      const Vector3d d = rays.directions(v, u).normalized();
      const Vector3d c = t * Vector3d(u, v, 1.0);
      // Rows of [c]x H d, with h = (row0, row1, row2) of H.
      Eigen::Matrix<double, 3, 9> block = Eigen::Matrix<double, 3, 9>::Zero();
      block.block<1, 3>(0, 3) = -c.z() * d.transpose();
      block.block<1, 3>(0, 6) = c.y() * d.transpose();
      block.block<1, 3>(1, 0) = c.z() * d.transpose();
      block.block<1, 3>(1, 6) = -c.x() * d.transpose();
      block.block<1, 3>(2, 0) = -c.y() * d.transpose();
      block.block<1, 3>(2, 3) = c.x() * d.transpose();
      a.block<3, 9>(3 * i, 0) = block;
    }
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(7) <= 1e-12 * sv(0)) {
    throw Error(ErrorCode::kDegenerateRays, "ray constraint matrix has rank < 8");
  }
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Matrix3d hm;
  hm << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  hm = t.inverse() * hm;

  const Vector3d mid = rays.directions(height / 2, width / 2).normalized();
  if ((hm * mid).z() < 0.0) hm = -hm;
  return hm / hm.norm();
}

struct RQResult {
  Matrix3d upper = Matrix3d::Identity();     // K, positive diagonal, K(2,2) = 1
  Matrix3d rotation = Matrix3d::Identity();  // proper rotation
};

// hm = K R up to scale. If det(hm) < 0 the scale is negative: homogeneous
// inputs are only defined up to sign, and R is kept proper.
inline RQResult rq_decompose(const Matrix3d& hm) {
  const double det = hm.determinant();
  if (!std::isfinite(det) || std::abs(det) <= 1e-12 * std::pow(hm.norm(), 3)) {
    throw Error(ErrorCode::kDecomposition, "matrix is singular");
  }
  // RQ via QR of the row-flipped transpose.
  Matrix3d flip = Matrix3d::Zero();
  flip(0, 2) = flip(1, 1) = flip(2, 0) = 1.0;
  Eigen::HouseholderQR<Matrix3d> qr((flip * hm).transpose());
  const Matrix3d q = qr.householderQ();
  const Matrix3d r = qr.matrixQR().triangularView<Eigen::Upper>();
  Matrix3d upper = flip * r.transpose() * flip;
  Matrix3d rotation = flip * q.transpose();

  const Eigen::Vector3d signs(upper(0, 0) < 0 ? -1.0 : 1.0, upper(1, 1) < 0 ? -1.0 : 1.0,
                              upper(2, 2) < 0 ? -1.0 : 1.0);
  upper = upper * signs.asDiagonal();
  rotation = signs.asDiagonal() * rotation;
  if (rotation.determinant() < 0.0) rotation = -rotation;

  RQResult out;
  out.upper = upper / upper(2, 2);
  out.rotation = rotation;
  return out;
}

inline RayCameraSolution camera_from_raymap(const RayMap& rays) {
  const CenterSolution center = solve_center(rays);
  const Matrix3d hm = solve_H(rays);
  const RQResult rq = rq_decompose(hm);

  RayCameraSolution out;
  out.center = center.center;
  out.center_rms = center.rms;
  out.rotation = rq.rotation;
  out.intrinsics = {rq.upper(0, 0), rq.upper(1, 1), rq.upper(0, 2), rq.upper(1, 2)};

  const Matrix3d kr = rq.upper * rq.rotation;
  double sq = 0.0;
  for (int v = 0; v < rays.height(); ++v) {
    for (int u = 0; u < rays.width(); ++u) {
      const Vector3d mapped = (kr * rays.directions(v, u)).normalized();
      sq += (mapped - Vector3d(u, v, 1.0).normalized()).squaredNorm();
    }
  }
  out.direction_rms = std::sqrt(sq / static_cast<double>(rays.directions.size()));
  return out;
}

}  // namespace geo4d
