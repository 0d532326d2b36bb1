#pragma once

#include <cmath>
#include <vector>

#include "geo4d/geometry.hpp"

namespace geo4d {

// Predictions for one V-frame clip starting at global frame `start`.
// Maps are indexed by local frame (global frame = start + local). Point maps
// are clip-relative. A pixel is invalid in this group when its uncertainty is
// not finite.
struct WindowGroup {
  int start = 0;
  std::vector<PointMap> points;
  std::vector<DisparityMap> disparity;
  std::vector<RayMap> rays;  // empty when the group carries no ray maps
  std::vector<UncertaintyMap> uncertainty;

  int length() const { return static_cast<int>(points.size()); }
  bool has_rays() const { return !rays.empty(); }
  bool contains(int frame) const { return frame >= start && frame < start + length(); }
  bool valid(int local, size_t pixel) const { return std::isfinite(uncertainty[local][pixel]); }
};

// Per-frame ground truth (or an aligned result). Invalid pixels carry zero
// disparity and a zero point.
struct Scene {
  int height = 0;
  int width = 0;
  std::vector<DisparityMap> disparity;
  std::vector<Intrinsics> intrinsics;
  std::vector<Pose> poses;
  std::vector<PointMap> points;  // world frame
  std::vector<RayMap> rays;      // world frame

  int num_frames() const { return static_cast<int>(poses.size()); }
};

}  // namespace geo4d
