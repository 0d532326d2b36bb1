#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "geo4d/error.hpp"

namespace geo4d {

// Start frames of overlapping V-frame clips over an N-frame video:
// {0, s, 2s, ..., floor((N-V)/s) s} ∪ {N-V}.
struct WindowIndex {
  int num_frames = 0;
  int window = 0;
  int stride = 0;
  std::vector<int> starts;

  // Windows (by position in `starts`) containing `frame`.
  std::vector<int> windows_containing(int frame) const {
    std::vector<int> out;
    for (size_t k = 0; k < starts.size(); ++k) {
      if (frame >= starts[k] && frame < starts[k] + window) out.push_back(static_cast<int>(k));
    }
    return out;
  }
};

inline WindowIndex build_window_index(int num_frames, int window, int stride) {
  if (stride <= 0) {
    throw Error(ErrorCode::kInvalidStride, "stride must be positive, got " + std::to_string(stride));
  }
  if (window < 1) {
    throw Error(ErrorCode::kInvalidArgument, "window must be at least 1 frame");
  }
  if (window > num_frames) {
    throw Error(ErrorCode::kVideoTooShort, "window of " + std::to_string(window) +
                                               " frames exceeds video length " +
                                               std::to_string(num_frames));
  }
  WindowIndex index{num_frames, window, stride, {}};
  const int last = num_frames - window;
  for (int k = 0; k <= last / stride; ++k) index.starts.push_back(k * stride);
  if (index.starts.back() != last) index.starts.push_back(last);
  return index;
}

// Global frames shared by the clips starting at a and b.
inline std::vector<int> overlap(int a, int b, int window) {
  std::vector<int> out;
  for (int f = std::max(a, b); f < std::min(a, b) + window; ++f) out.push_back(f);
  return out;
}

}  // namespace geo4d
