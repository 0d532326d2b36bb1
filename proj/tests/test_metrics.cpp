#include <gtest/gtest.h>

#include <complex>
#include <random>

#include "geo4d/metrics.hpp"
#include "support.hpp"

namespace geo4d {
namespace {

using testing::random_rotation;
using testing::random_vector;

std::vector<DisparityMap> random_disparities(std::mt19937_64& rng, int frames) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<DisparityMap> out;
  for (int f = 0; f < frames; ++f) {
    DisparityMap d(4, 5);
    for (auto& x : d.values()) x = u(rng);
    out.push_back(d);
  }
  return out;
}

std::vector<Pose> random_trajectory(std::mt19937_64& rng, int n) {
  std::vector<Pose> out;
  for (int i = 0; i < n; ++i) out.push_back({random_rotation(rng), random_vector(rng, -5, 5)});
  return out;
}

TEST(AlignDepthGlobal, Identity) {
  std::mt19937_64 rng(1);
  const auto gt = random_disparities(rng, 3);
  const auto fit = align_depth_global(gt, gt);
  EXPECT_NEAR(fit.scale, 1.0, 1e-12);
  EXPECT_NEAR(fit.shift, 0.0, 1e-12);
}

TEST(AlignDepthGlobal, InvertsKnownAffine) {
  std::mt19937_64 rng(2);
  const auto gt = random_disparities(rng, 3);
  auto pred = gt;
  for (auto& m : pred) {
    for (auto& x : m.values()) x = (x - 0.3) / 2.0;
  }
  const auto fit = align_depth_global(pred, gt);
  EXPECT_NEAR(fit.scale, 2.0, 1e-10);
  EXPECT_NEAR(fit.shift, 0.3, 1e-10);
}

TEST(AlignDepthGlobal, JointFitDiffersFromPerFrameFits) {
  std::mt19937_64 rng(3);
  const auto gt = random_disparities(rng, 2);
  auto pred = gt;
  for (auto& x : pred[0].values()) x = 2.0 * x;
  for (auto& x : pred[1].values()) x = 0.5 * x + 0.1;
  const auto joint = align_depth_global(pred, gt);
  const auto a = align_depth_global(std::span(pred).subspan(0, 1), std::span(gt).subspan(0, 1));
  const auto b = align_depth_global(std::span(pred).subspan(1, 1), std::span(gt).subspan(1, 1));
  EXPECT_NEAR(a.scale, 0.5, 1e-12);
  EXPECT_NEAR(b.scale, 2.0, 1e-12);
  EXPECT_GT(std::abs(joint.scale - a.scale), 1e-3);
  EXPECT_GT(std::abs(joint.scale - b.scale), 1e-3);
}

TEST(AlignDepthGlobal, ConstantGroundTruthIsShiftOnly) {
  std::vector<DisparityMap> gt{DisparityMap(2, 2, 0.5)};
  std::vector<DisparityMap> pred{DisparityMap(2, 2, 0.2)};
  pred[0][1] = 0.3;
  const auto fit = align_depth_global(pred, gt);
  EXPECT_EQ(fit.scale, 1.0);
  EXPECT_NEAR(fit.shift, 0.5 - 0.225, 1e-15);
}

TEST(DepthMetrics, Perfect) {
  std::mt19937_64 rng(4);
  const auto gt = random_disparities(rng, 2);
  const auto r = depth_metrics(gt, gt);
  EXPECT_EQ(r.abs_rel, 0.0);
  EXPECT_EQ(r.delta_125, 100.0);
}

TEST(DepthMetrics, HandComputed) {
  DisparityMap gt(1, 3), pred(1, 3);
  const double depth[] = {1, 2, 4};
  for (int i = 0; i < 3; ++i) {
    gt[i] = 1.0 / depth[i];
    pred[i] = 1.0 / (1.1 * depth[i]);
  }
  auto r = depth_metrics(std::vector{pred}, std::vector{gt});
  EXPECT_NEAR(r.abs_rel, 0.1, 1e-12);
  EXPECT_EQ(r.delta_125, 100.0);

  for (int i = 0; i < 3; ++i) pred[i] = 1.0 / (1.3 * depth[i]);
  r = depth_metrics(std::vector{pred}, std::vector{gt});
  EXPECT_NEAR(r.abs_rel, 0.3, 1e-12);
  EXPECT_EQ(r.delta_125, 0.0);
}

TEST(DepthMetrics, MasksAndMissingGroundTruth) {
  DisparityMap gt(1, 3, 0.5), pred(1, 3, 0.5);
  gt[2] = 0.0;
  pred[2] = 10.0;
  Grid<uint8_t> mask(1, 3, 1);
  mask[1] = 0;
  pred[1] = 10.0;
  const auto r = depth_metrics(std::vector{pred}, std::vector{gt}, std::vector{mask});
  EXPECT_EQ(r.pixels, 1u);
  EXPECT_EQ(r.abs_rel, 0.0);
}

TEST(DepthMetrics, AffineInvariance) {
  std::mt19937_64 rng(5);
  const auto gt = random_disparities(rng, 3);
  std::normal_distribution<double> noise(0.0, 0.02);
  auto pred = gt;
  for (auto& m : pred) {
    for (auto& x : m.values()) x = std::max(0.01, x + noise(rng));
  }
  const auto base = evaluate_depth(pred, gt);
  for (const auto& [a, b] : {std::pair{2.0, 0.1}, std::pair{0.3, -0.001}, std::pair{7.0, 3.0}}) {
    auto moved = pred;
    for (auto& m : moved) {
      for (auto& x : m.values()) x = a * x + b;
    }
    const auto r = evaluate_depth(moved, gt);
    EXPECT_NEAR(r.abs_rel, base.abs_rel, 1e-9);
    EXPECT_NEAR(r.delta_125, base.delta_125, 1e-9);
  }
}

TEST(DepthMetrics, FrameCountMismatch) {
  std::mt19937_64 rng(6);
  const auto a = random_disparities(rng, 2);
  const auto b = random_disparities(rng, 3);
  EXPECT_THROW(evaluate_depth(a, b), Error);
}

TEST(TrajMetrics, PerfectAndSimilarityInvariant) {
  std::mt19937_64 rng(7);
  const auto gt = random_trajectory(rng, 12);
  auto r = traj_metrics(gt, gt);
  EXPECT_LT(r.ate, 1e-12);
  EXPECT_LT(r.rpe_t, 1e-12);
  EXPECT_LT(r.rpe_r, 1e-6);

  const Similarity s{3.0, random_rotation(rng), random_vector(rng, -2, 2)};
  std::vector<Pose> moved;
  for (const auto& p : gt) moved.push_back(s.transform(p));
  r = traj_metrics(moved, gt);
  EXPECT_LT(r.ate, 1e-9);
  EXPECT_LT(r.rpe_t, 1e-9);
  EXPECT_LT(r.rpe_r, 1e-6);
}

TEST(TrajMetrics, SimilarityInvarianceWithNoise) {
  std::mt19937_64 rng(8);
  const auto gt = random_trajectory(rng, 10);
  auto pred = gt;
  for (auto& p : pred) {
    p.center += random_vector(rng, -0.1, 0.1);
    p.rotation = rot_x(0.01) * p.rotation;
  }
  const auto base = traj_metrics(pred, gt);
  const Similarity s{0.4, random_rotation(rng), random_vector(rng, -2, 2)};
  std::vector<Pose> moved;
  for (const auto& p : pred) moved.push_back(s.transform(p));
  const auto r = traj_metrics(moved, gt);
  EXPECT_NEAR(r.ate, base.ate, 1e-9);
  EXPECT_NEAR(r.rpe_t, base.rpe_t, 1e-9);
  EXPECT_NEAR(r.rpe_r, base.rpe_r, 1e-9);
}

TEST(TrajMetrics, HandComputedAte) {
  // Planar centers: the best 2D similarity is complex least squares
  // g = a p + b, solved independently of the Umeyama code path.
  std::vector<Pose> gt, pred;
  std::vector<std::complex<double>> g, p;
  for (int i = 0; i < 5; ++i) {
    const Vector3d c(std::cos(0.4 * i), 0.5 * i, 0);
    gt.push_back({Matrix3d::Identity(), c});
    pred.push_back({Matrix3d::Identity(), c + Vector3d(i > 0 ? 0.1 : 0.0, 0, 0)});
    g.emplace_back(c.x(), c.y());
    p.emplace_back(pred.back().center.x(), c.y());
  }
  std::complex<double> mg = 0, mp = 0;
  for (int i = 0; i < 5; ++i) {
    mg += g[i] / 5.0;
    mp += p[i] / 5.0;
  }
  std::complex<double> num = 0;
  double den = 0;
  for (int i = 0; i < 5; ++i) {
    num += (g[i] - mg) * std::conj(p[i] - mp);
    den += std::norm(p[i] - mp);
  }
  const std::complex<double> a = num / den;
  double sq = 0;
  for (int i = 0; i < 5; ++i) sq += std::norm(g[i] - (a * (p[i] - mp) + mg));
  EXPECT_NEAR(traj_metrics(pred, gt).ate, std::sqrt(sq / 5), 1e-12);
  EXPECT_GT(traj_metrics(pred, gt).ate, 0.01);
}

TEST(TrajMetrics, StraightLineTrajectory) {
  std::mt19937_64 rng(10);
  std::vector<Pose> gt;
  for (int i = 0; i < 6; ++i) gt.push_back({random_rotation(rng), Vector3d(0, 0, 0.5 * i)});
  const Similarity s{2.0, random_rotation(rng), random_vector(rng, -1, 1)};
  std::vector<Pose> moved;
  for (const auto& p : gt) moved.push_back(s.transform(p));
  const auto r = traj_metrics(moved, gt);
  EXPECT_LT(r.ate, 1e-9);
  EXPECT_LT(r.rpe_t, 1e-9);
  EXPECT_LT(r.rpe_r, 1e-6);
  std::vector<Pose> still(3, Pose::identity());
  EXPECT_THROW(traj_metrics(still, still), Error);
}

TEST(TrajMetrics, Errors) {
  std::mt19937_64 rng(9);
  const auto a = random_trajectory(rng, 5);
  const auto b = random_trajectory(rng, 4);
  try {
    traj_metrics(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLengthMismatch);
  }
  EXPECT_THROW(traj_metrics(std::span(a).subspan(0, 2), std::span(a).subspan(0, 2)), Error);
}

}  // namespace
}  // namespace geo4d
