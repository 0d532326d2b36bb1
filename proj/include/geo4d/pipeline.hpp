#pragma once

#include <algorithm>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "geo4d/aligner.hpp"
#include "geo4d/error.hpp"
#include "geo4d/initialization.hpp"
#include "geo4d/scene.hpp"
#include "geo4d/windowing.hpp"

namespace geo4d {

// Picks, for every window of `index`, the group starting at that frame.
inline std::vector<WindowGroup> select_groups(std::span<const WindowGroup> groups, const WindowIndex& index) {
  std::vector<WindowGroup> out;
  for (int start : index.starts) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const WindowGroup& g) {
      return g.start == start && g.length() >= index.window;
    });
    if (it == groups.end()) {
      throw Error(ErrorCode::kInvalidArgument, "no predicted group of length " + std::to_string(index.window) +
                                                   " starts at frame " + std::to_string(start));
    }
    WindowGroup g = *it;
    g.points.resize(index.window);
    g.disparity.resize(index.window);
    g.uncertainty.resize(index.window);
    if (g.has_rays()) g.rays.resize(index.window);
    out.push_back(std::move(g));
  }
  return out;
}

struct PipelineOptions {
  AlignConfig align;
  InitOptions init;
};

struct PipelineResult {
  InitState init;
  AlignResult aligned;
};

inline PipelineResult run_alignment(std::span<const WindowGroup> groups, const PipelineOptions& options,
                                    std::ostream* trace_log = nullptr) {
  options.align.validate();
  PipelineResult out;
  InitOptions init_options = options.init;
  init_options.d_min = options.align.d_min;
  out.init = initialize(groups, init_options);
  out.aligned = optimize(groups, options.align, out.init, trace_log);
  return out;
}

// Per-frame outputs of an aligned state. Masked pixels get zero disparity
// and a zero point.
inline Scene result_scene(const GlobalState& state) {
  Scene s;
  s.height = state.height();
  s.width = state.width();
  for (int i = 0; i < state.num_frames(); ++i) {
    s.disparity.push_back(state.disparity_map(i));
    s.intrinsics.push_back(state.intrinsics(i));
    s.poses.push_back(state.pose(i));
    s.points.push_back(state.point_map(i));
  }
  return s;
}

}  // namespace geo4d
