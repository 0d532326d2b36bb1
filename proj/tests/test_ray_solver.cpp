#include <gtest/gtest.h>

#include <random>

#include "geo4d/ray_solver.hpp"
#include "support.hpp"

namespace geo4d {
namespace {

using testing::random_rotation;
using testing::random_vector;

RayMap grid_rays(int h, int w, const Vector3d& center) {
  RayMap r{Grid<Vector3d>(h, w), Grid<Vector3d>(h, w)};
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      r.directions(v, u) = Vector3d(u - 1.5, v - 1.5, 1.0);
      r.moments(v, u) = center.cross(r.directions(v, u));
    }
  }
  return r;
}

TEST(SolveCenter, KnownCenter) {
  const auto s = solve_center(grid_rays(4, 4, Vector3d(1, 2, 3)));
  EXPECT_LT((s.center - Vector3d(1, 2, 3)).norm(), 1e-9);
  EXPECT_LT(s.rms, 1e-9);
}

TEST(SolveCenter, ZeroMomentsGiveOrigin) {
  EXPECT_LT(solve_center(grid_rays(4, 4, Vector3d::Zero())).center.norm(), 1e-15);
}

TEST(SolveCenter, ParallelRaysAreRankDeficient) {
  RayMap r{Grid<Vector3d>(3, 3, Vector3d(0, 0, 1)), Grid<Vector3d>(3, 3, Vector3d::Zero())};
  try {
    solve_center(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRankDeficient);
  }
}

TEST(SolveH, CanonicalDirectionsGiveScaledIdentity) {
  RayMap r{Grid<Vector3d>(4, 5), Grid<Vector3d>(4, 5, Vector3d::Zero())};
  for (int v = 0; v < 4; ++v) {
    for (int u = 0; u < 5; ++u) r.directions(v, u) = Vector3d(u, v, 1);
  }
  EXPECT_LT((solve_H(r) - Matrix3d::Identity() / std::sqrt(3.0)).norm(), 1e-12);
}

TEST(SolveH, MatchesKTimesR) {
  const Intrinsics k{100, 100, 32, 24};
  const Matrix3d r = rot_z(std::numbers::pi / 6);
  const Matrix3d h = solve_H(raymap_from_camera(k, {r, Vector3d(1, 0, 0)}, 48, 64));
  Matrix3d expected = k.matrix() * r;
  expected /= expected.norm();
  EXPECT_LT((h - expected).norm(), 1e-6);
}

TEST(SolveH, SignFlipDoesNotChangeCamera) {
  const Intrinsics k{80, 90, 20, 15};
  const RayMap rays = raymap_from_camera(k, {rot_x(0.2), Vector3d::Zero()}, 30, 40);
  const RQResult a = rq_decompose(solve_H(rays));
  const RQResult b = rq_decompose(-solve_H(rays));
  EXPECT_LT((a.upper - b.upper).norm(), 1e-12);
  EXPECT_LT((a.rotation - b.rotation).norm(), 1e-12);
}

TEST(RqDecompose, Identity) {
  const RQResult rq = rq_decompose(Matrix3d::Identity());
  EXPECT_LT((rq.upper - Matrix3d::Identity()).norm(), 1e-15);
  EXPECT_LT((rq.rotation - Matrix3d::Identity()).norm(), 1e-15);
}

TEST(RqDecompose, ScaledRotation) {
  const Matrix3d k = Eigen::Vector3d(2, 2, 1).asDiagonal();
  const Matrix3d r = rot_z(std::numbers::pi / 6);
  const RQResult rq = rq_decompose(k * r);
  EXPECT_LT((rq.upper - k).norm(), 1e-10);
  EXPECT_LT((rq.rotation - r).norm(), 1e-10);
}

TEST(RqDecompose, SignsAbsorbedIntoRotation) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix3d k;
    k << 50 + trial, 0.3, 20, 0, 60 + trial, 10, 0, 0, 1;
    const Matrix3d flip = Eigen::Vector3d(trial % 2 ? -1 : 1, trial % 3 ? 1 : -1, -1).asDiagonal();
    const Matrix3d hm = -0.7 * k * flip * random_rotation(rng);
    const RQResult rq = rq_decompose(hm);
    EXPECT_GT(rq.upper(0, 0), 0);
    EXPECT_GT(rq.upper(1, 1), 0);
    EXPECT_EQ(rq.upper(2, 2), 1.0);
    EXPECT_TRUE(is_rotation(rq.rotation));
    EXPECT_NEAR(rq.upper(1, 0), 0.0, 1e-12);
  }
}

TEST(RqDecompose, SingularInput) {
  Matrix3d m = Matrix3d::Identity();
  m(2, 2) = 0;
  try {
    rq_decompose(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDecomposition);
  }
}

TEST(CameraFromRaymap, IdentityCamera) {
  const Intrinsics k{1, 1, 0, 0};
  const auto s = camera_from_raymap(raymap_from_camera(k, Pose::identity(), 5, 6));
  EXPECT_LT(s.center.norm(), 1e-12);
  EXPECT_LT(rotation_angle(s.rotation, Matrix3d::Identity()), 1e-9);
  EXPECT_NEAR(s.intrinsics.fx, 1.0, 1e-9);
}

TEST(CameraFromRaymap, RoundTripRandomCameras) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> focal(50, 500);
  for (int trial = 0; trial < 100; ++trial) {
    const double f = focal(rng);
    const Intrinsics k = Intrinsics::centered(f, 32, 24);
    const Pose p{random_rotation(rng), random_vector(rng, -10, 10)};
    const auto s = camera_from_raymap(raymap_from_camera(k, p, 24, 32));
    EXPECT_LT((s.center - p.center).norm(), 1e-6);
    EXPECT_LT(rotation_angle(s.rotation, p.rotation), 1e-6);
    EXPECT_NEAR(s.intrinsics.fx / f, 1.0, 1e-4);
    EXPECT_NEAR(s.intrinsics.fy / f, 1.0, 1e-4);
  }
}

TEST(CameraFromRaymap, NoisyRays) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Pose p{random_rotation(rng), random_vector(rng, -5, 5)};
    RayMap rays = raymap_from_camera(Intrinsics::centered(60, 64, 48), p, 48, 64);
    for (size_t i = 0; i < rays.directions.size(); ++i) {
      const double dn = rays.directions[i].norm(), mn = rays.moments[i].norm();
      for (int c = 0; c < 3; ++c) {
        rays.directions[i](c) += 0.01 * dn * noise(rng);
        rays.moments[i](c) += 0.01 * mn * noise(rng);
      }
    }
    const auto s = camera_from_raymap(rays);
    EXPECT_GT(s.center_rms, 0.0);
    EXPECT_GT(s.direction_rms, 0.0);
    EXPECT_LT(rotation_angle(s.rotation, p.rotation) * 180 / std::numbers::pi, 1.0);
  }
}

TEST(CameraFromRaymap, MomentScaleAndShiftGauge) {
  std::mt19937_64 rng(8);
  const Pose p{random_rotation(rng), random_vector(rng, -3, 3)};
  const RayMap rays = raymap_from_camera(Intrinsics::centered(70, 32, 24), p, 24, 32);
  const auto base = camera_from_raymap(rays);

  RayMap scaled = rays;
  for (auto& m : scaled.moments.values()) m *= 2.5;
  const auto s = camera_from_raymap(scaled);
  EXPECT_LT((s.center - 2.5 * base.center).norm(), 1e-9);
  EXPECT_LT((s.rotation - base.rotation).norm(), 1e-12);
  EXPECT_NEAR(s.intrinsics.fx, base.intrinsics.fx, 1e-9);

  RayMap shifted = rays;
  for (auto& m : shifted.moments.values()) m += Vector3d(0.1, -0.2, 0.05);
  const auto t = camera_from_raymap(shifted);
  EXPECT_LT((t.rotation - base.rotation).norm(), 1e-12);
  EXPECT_NEAR(t.intrinsics.fx, base.intrinsics.fx, 1e-9);
  EXPECT_LT((t.center - base.center).norm(), 1.0);
  EXPECT_GT(t.center_rms, base.center_rms);
}

}  // namespace
}  // namespace geo4d
