#include <gtest/gtest.h>

#include <random>

#include "geo4d/geometry.hpp"
#include "support.hpp"

namespace geo4d {
namespace {

using testing::random_rotation;
using testing::random_vector;

TEST(PixelRays, IdentityIntrinsicsAtOrigin) {
  const auto rays = pixel_rays({1, 1, 0, 0}, 2, 2);
  EXPECT_EQ(rays(0, 0), Vector3d(0, 0, 1));
}

TEST(PixelRays, HandEvaluatedInverse) {
  const auto rays = pixel_rays({2, 2, 1, 1}, 3, 4);
  EXPECT_TRUE(rays(1, 3).isApprox(Vector3d(1, 0, 1), 1e-15));
}

TEST(PixelRays, PrincipalPointIsOpticalAxis) {
  const auto rays = pixel_rays({100, 100, 32, 24}, 48, 64);
  EXPECT_EQ(rays(24, 32), Vector3d(0, 0, 1));
}

TEST(PixelRays, RejectsBadFocal) {
  EXPECT_THROW(pixel_rays({0, 1, 0, 0}, 2, 2), Error);
  EXPECT_THROW(pixel_rays({1, std::nan(""), 0, 0}, 2, 2), Error);
  try {
    pixel_rays({-1, 1, 0, 0}, 2, 2);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidIntrinsics);
  }
}

TEST(PointMapFromDepth, UnitDepthCanonicalCamera) {
  const auto x = point_map_from_depth(DisparityMap(3, 4, 1.0), {1, 1, 0, 0}, Pose::identity());
  for (int v = 0; v < 3; ++v) {
    for (int u = 0; u < 4; ++u) EXPECT_EQ(x(v, u), Vector3d(u, v, 1));
  }
}

TEST(PointMapFromDepth, ShiftedCenterHalfDisparity) {
  const Pose p{Matrix3d::Identity(), Vector3d(0, 0, -5)};
  const auto x = point_map_from_depth(DisparityMap(3, 4, 0.5), {1, 1, 0, 0}, p);
  for (int v = 0; v < 3; ++v) {
    for (int u = 0; u < 4; ++u) EXPECT_TRUE(x(v, u).isApprox(Vector3d(2 * u, 2 * v, 2 - 5), 1e-15));
  }
}

TEST(PointMapFromDepth, ZeroDisparityIsInfinitePoint) {
  DisparityMap d(2, 2, 1.0);
  d(1, 1) = 0.0;
  try {
    point_map_from_depth(d, {1, 1, 0, 0}, Pose::identity());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInfinitePoint);
  }
}

TEST(PointMapFromDepth, RoundTripThroughProjection) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    DisparityMap d(6, 8);
    for (auto& v : d.values()) v = u(rng);
    const Intrinsics k{30.0 + 10 * u(rng), 30.0 + 10 * u(rng), 3.5, 2.5};
    const Pose p{random_rotation(rng), random_vector(rng, -5, 5)};
    const DisparityMap back = depth_from_point_map(point_map_from_depth(d, k, p), p);
    for (size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(back[i] / d[i], 1.0, 1e-9);
  }
}

TEST(RayMap, ZeroCenterGivesZeroMoments) {
  std::mt19937_64 rng(1);
  const auto r = raymap_from_camera({50, 50, 3, 2}, {random_rotation(rng), Vector3d::Zero()}, 5, 7);
  for (const auto& m : r.moments.values()) EXPECT_EQ(m, Vector3d::Zero());
}

TEST(RayMap, HandCrossProduct) {
  const auto r = raymap_from_camera({1, 1, 0, 0}, {Matrix3d::Identity(), Vector3d(1, 0, 0)}, 2, 2);
  EXPECT_EQ(r.directions(0, 0), Vector3d(0, 0, 1));
  EXPECT_EQ(r.moments(0, 0), Vector3d(0, -1, 0));
}

TEST(RayMap, PluckerConstraint) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = raymap_from_camera({60, 70, 31.5, 23.5}, {random_rotation(rng), random_vector(rng, -10, 10)}, 48, 64);
    for (size_t i = 0; i < r.directions.size(); ++i) {
      const double scale = r.directions[i].norm() * r.moments[i].norm();
      EXPECT_LT(std::abs(r.directions[i].dot(r.moments[i])), 1e-12 * std::max(1.0, scale));
    }
  }
}

TEST(Similarity, IdentityLeavesPointsUnchanged) {
  PointMap x(2, 2, Vector3d(1, 2, 3));
  EXPECT_EQ(apply_similarity(x, Similarity{})(1, 1), Vector3d(1, 2, 3));
}

TEST(Similarity, HandEvaluated) {
  PointMap x(1, 1, Vector3d(1, 0, 0));
  EXPECT_EQ(apply_similarity(x, 2.0, Matrix3d::Identity(), Vector3d(1, 1, 1))(0, 0), Vector3d(3, 1, 1));
}

TEST(Similarity, RejectsNonPositiveScale) {
  PointMap x(1, 1, Vector3d(1, 0, 0));
  try {
    apply_similarity(x, 0.0, Matrix3d::Identity(), Vector3d::Zero());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidScale);
  }
}

TEST(Similarity, CompositionAndInverse) {
  std::mt19937_64 rng(3);
  const Similarity a{1.3, random_rotation(rng), random_vector(rng, -1, 1)};
  const Similarity b{0.6, random_rotation(rng), random_vector(rng, -1, 1)};
  const Similarity ab = b.compose(a);
  EXPECT_NEAR(ab.scale, 0.78, 1e-15);
  EXPECT_TRUE(ab.rotation.isApprox(b.rotation * a.rotation, 1e-14));
  EXPECT_TRUE(ab.shift.isApprox(b.scale * b.rotation * a.shift + b.shift, 1e-14));
  for (int k = 0; k < 10; ++k) {
    const Vector3d x = random_vector(rng, -3, 3);
    EXPECT_LT((ab.apply(x) - b.apply(a.apply(x))).norm(), 1e-12);
    EXPECT_LT((a.inverse().apply(a.apply(x)) - x).norm(), 1e-12);
  }
}

TEST(Similarity, TransformedPoseSeesTransformedPoints) {
  std::mt19937_64 rng(4);
  const Similarity s{1.7, random_rotation(rng), random_vector(rng, -1, 1)};
  const Pose p{random_rotation(rng), random_vector(rng, -3, 3)};
  const Vector3d x = random_vector(rng, -3, 3);
  const Pose q = s.transform(p);
  EXPECT_LT((q.to_camera(s.apply(x)) - s.scale * p.to_camera(x)).norm(), 1e-12);
}

TEST(Pose, TranslationCenterRelation) {
  std::mt19937_64 rng(5);
  const Pose p{random_rotation(rng), random_vector(rng, -3, 3)};
  EXPECT_LT((p.translation() + p.rotation * p.center).norm(), 1e-15);
  const Pose q = Pose::from_rotation_translation(p.rotation, p.translation());
  EXPECT_LT((q.center - p.center).norm(), 1e-12);
}

TEST(Rotation, AngleAndProjection) {
  EXPECT_NEAR(rotation_angle(rot_z(0.3), Matrix3d::Identity()), 0.3, 1e-15);
  EXPECT_NEAR(rotation_angle(rot_x(3.0), rot_x(-3.0)), 2 * std::numbers::pi - 6.0, 1e-12);
  Matrix3d m = rot_y(0.4);
  m(0, 1) += 1e-3;
  EXPECT_TRUE(is_rotation(project_to_rotation(m)));
}

}  // namespace
}  // namespace geo4d
