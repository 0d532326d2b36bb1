#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "geo4d/aligner.hpp"
#include "geo4d/metrics.hpp"
#include "geo4d/oracle.hpp"
#include "geo4d/pipeline.hpp"

namespace geo4d::testing {

inline Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

inline Vector3d random_vector(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Vector3d(u(rng), u(rng), u(rng));
}

// Random 2-group / 3-frame / 8x6 problem with every loss term active and
// residuals away from zero. Groups start at frames 0 and 1, two frames each.
struct GradientProblem {
  GlobalState state;
  std::vector<WindowGroup> groups;
  RaySolutions solutions;
};

inline GradientProblem random_gradient_problem(uint64_t seed) {
  constexpr int kH = 6, kW = 8;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GradientProblem pb;
  pb.state = GlobalState(3, 2, kH, kW);
  GlobalState& s = pb.state;
  for (int i = 0; i < 3; ++i) {
    for (Eigen::Index p = 0; p < s.pixels(); ++p) s.disparity(i)(p) = 0.1 + 0.4 * u(rng);
    s.set_focal(i, 6.0 + 4.0 * u(rng));
    Eigen::Vector4d q(u(rng) + 1.0, u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
    s.quat(i) = q * (0.8 + 0.4 * u(rng));  // deliberately not unit length
    s.center(i) = random_vector(rng, -1.0, 1.0);
  }
  s.mask[1](2, 3) = 0;
  for (int g = 0; g < 2; ++g) {
    s.set_point_alignment(g, {0.7 + 0.6 * u(rng), random_rotation(rng), random_vector(rng, -0.5, 0.5)});
    s.set_depth_alignment(g, 0.7 + 0.6 * u(rng), 0.1 * (u(rng) - 0.5));
    s.set_cam_alignment(g, {0.7 + 0.6 * u(rng), random_rotation(rng), random_vector(rng, -0.5, 0.5)});
  }
  for (int g = 0; g < 2; ++g) {
    WindowGroup group;
    group.start = g;
    for (int j = 0; j < 2; ++j) {
      PointMap pts(kH, kW);
      DisparityMap disp(kH, kW);
      UncertaintyMap sigma(kH, kW);
      for (size_t p = 0; p < pts.size(); ++p) {
        pts[p] = random_vector(rng, -3.0, 3.0);
        disp[p] = 0.1 + 0.4 * u(rng);
        sigma[p] = 0.5 + u(rng);
      }
      sigma[5] = std::numeric_limits<double>::infinity();
      group.points.push_back(pts);
      group.disparity.push_back(disp);
      group.uncertainty.push_back(sigma);
      const Intrinsics k = Intrinsics::centered(6.0 + 4.0 * u(rng), kW, kH);
      group.rays.push_back(raymap_from_camera(k, {random_rotation(rng), random_vector(rng, -2.0, 2.0)}, kH, kW));
    }
    pb.groups.push_back(group);
  }
  pb.solutions = solve_ray_cameras(pb.groups);
  return pb;
}

struct GradientCheck {
  double max_rel_error = 0.0;
  int worst_index = -1;
  int checked = 0;
};

// Central differences on every coordinate. Relative error uses a floor of
// 1e-3 times the largest gradient entry so exact zeros compare cleanly.
inline GradientCheck check_gradient(GlobalState state,
                                    const std::function<double(const GlobalState&, Eigen::VectorXd*)>& loss,
                                    double eps = 1e-5) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(state.params().size());
  loss(state, &grad);
  const double floor = 1e-3 * std::max(grad.cwiseAbs().maxCoeff(), 1e-12);
  GradientCheck out;
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    const double x0 = state.params()(k);
    state.params()(k) = x0 + eps;
    const double fp = loss(state, nullptr);
    state.params()(k) = x0 - eps;
    const double fm = loss(state, nullptr);
    state.params()(k) = x0;
    const double fd = (fp - fm) / (2.0 * eps);
    const double rel = std::abs(fd - grad(k)) / std::max({std::abs(fd), std::abs(grad(k)), floor});
    ++out.checked;
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_index = static_cast<int>(k);
    }
  }
  return out;
}

// Perturbation ranges of the oracle recovery runs.
inline PerturbSpec recovery_perturbation(uint64_t seed) {
  PerturbSpec p;
  p.max_rotation_deg = 30.0;
  p.scale_min = 0.5;
  p.scale_max = 2.0;
  p.max_translation = 1.0;
  p.disp_scale_min = 0.5;
  p.disp_scale_max = 2.0;
  p.disp_shift_max = 0.2;
  p.seed = seed;
  return p;
}

inline PerturbSpec noisy_perturbation(uint64_t seed, double noise = 0.01) {
  PerturbSpec p = recovery_perturbation(seed);
  p.with_noise(noise);
  return p;
}

struct RunMetrics {
  double ate = 0.0;
  double ate_rel = 0.0;  // ATE / scene diameter
  double rpe_r = 0.0;
  double abs_rel = 0.0;
  double seconds = 0.0;
};

inline RunMetrics evaluate_scene(const Scene& result, const Scene& gt) {
  RunMetrics m;
  const TrajEvalReport traj = traj_metrics(result.poses, gt.poses);
  m.ate = traj.ate;
  m.ate_rel = traj.ate / scene_diameter(gt);
  m.rpe_r = traj.rpe_r;
  m.abs_rel = evaluate_depth(result.disparity, gt.disparity).abs_rel;
  return m;
}

inline RunMetrics run_pipeline(const std::vector<WindowGroup>& groups, const Scene& gt,
                               const PipelineOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineResult r = run_alignment(groups, options);
  const auto t1 = std::chrono::steady_clock::now();
  RunMetrics m = evaluate_scene(result_scene(r.aligned.state), gt);
  m.seconds = std::chrono::duration<double>(t1 - t0).count();
  return m;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("geo4d_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace geo4d::testing
