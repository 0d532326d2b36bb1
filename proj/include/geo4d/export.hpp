#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "geo4d/error.hpp"
#include "geo4d/geometry.hpp"

namespace geo4d {

struct PlyVertex {
  float x = 0, y = 0, z = 0;
  uint8_t r = 0, g = 0, b = 0;

  bool operator==(const PlyVertex&) const = default;
};

// Blue -> green -> red ramp over the sequence.
inline std::array<uint8_t, 3> frame_color(int frame, int num_frames) {
  const double t = num_frames > 1 ? static_cast<double>(frame) / (num_frames - 1) : 0.0;
  auto to_byte = [](double x) { return static_cast<uint8_t>(std::lround(255.0 * std::clamp(x, 0.0, 1.0))); };
  return {to_byte(2.0 * t - 1.0), to_byte(1.0 - std::abs(2.0 * t - 1.0)), to_byte(1.0 - 2.0 * t)};
}

// Valid pixels on the (row % stride == 0, col % stride == 0) lattice.
inline std::vector<PlyVertex> ply_vertices(std::span<const PointMap> points, std::span<const Grid<uint8_t>> valid,
                                           int stride) {
  if (stride < 1) throw Error(ErrorCode::kInvalidArgument, "ply stride must be >= 1");
  if (valid.size() != points.size()) throw Error(ErrorCode::kLengthMismatch, "points and masks differ in count");
  std::vector<PlyVertex> out;
  const int n = static_cast<int>(points.size());
  for (int i = 0; i < n; ++i) {
    const auto color = frame_color(i, n);
    for (int v = 0; v < points[i].height(); v += stride) {
      for (int u = 0; u < points[i].width(); u += stride) {
        if (!valid[i](v, u)) continue;
        const Vector3d& x = points[i](v, u);
        out.push_back({static_cast<float>(x.x()), static_cast<float>(x.y()), static_cast<float>(x.z()), color[0],
                       color[1], color[2]});
      }
    }
  }
  return out;
}

inline void write_ply(const std::filesystem::path& path, std::span<const PlyVertex> vertices) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << vertices.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");
  for (const PlyVertex& v : vertices) {
    char rec[15];
    std::memcpy(rec, &v.x, 4);
    std::memcpy(rec + 4, &v.y, 4);
    std::memcpy(rec + 8, &v.z, 4);
    rec[12] = static_cast<char>(v.r);
    rec[13] = static_cast<char>(v.g);
    rec[14] = static_cast<char>(v.b);
    out.write(rec, sizeof rec);
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

inline void export_ply(const std::filesystem::path& path, std::span<const PointMap> points,
                       std::span<const Grid<uint8_t>> valid, int stride) {
  const auto vertices = ply_vertices(points, valid, stride);
  write_ply(path, vertices);
}

// Reads back the files written by write_ply.
inline std::vector<PlyVertex> read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  size_t count = 0;
  bool binary = false;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    if (line == "format binary_little_endian 1.0") binary = true;
    if (line.rfind("element vertex ", 0) == 0) count = std::stoull(line.substr(15));
  }
  if (!binary || line != "end_header") throw Error(ErrorCode::kIo, path.string() + ": not a binary PLY");
  std::vector<PlyVertex> out(count);
  for (PlyVertex& v : out) {
    char rec[15];
    if (!in.read(rec, sizeof rec)) throw Error(ErrorCode::kLengthMismatch, path.string() + ": truncated vertices");
    std::memcpy(&v.x, rec, 4);
    std::memcpy(&v.y, rec + 4, 4);
    std::memcpy(&v.z, rec + 8, 4);
    v.r = static_cast<uint8_t>(rec[12]);
    v.g = static_cast<uint8_t>(rec[13]);
    v.b = static_cast<uint8_t>(rec[14]);
  }
  return out;
}

// One TUM trajectory line: camera-to-world translation and rotation, quaternion (x, y, z, w).
struct TrajectoryEntry {
  double timestamp = 0.0;
  Vector3d translation = Vector3d::Zero();
  Eigen::Vector4d quat = Eigen::Vector4d(0, 0, 0, 1);

  Pose pose() const {
    const Eigen::Quaterniond q(quat(3), quat(0), quat(1), quat(2));
    return {q.normalized().toRotationMatrix().transpose(), translation};
  }
};

inline TrajectoryEntry trajectory_entry(double timestamp, const Pose& pose) {
  Eigen::Quaterniond q(Matrix3d(pose.rotation.transpose()));
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return {timestamp, pose.center, Eigen::Vector4d(q.x(), q.y(), q.z(), q.w())};
}

// Shortest round-trip decimal; negative zero prints as 0.
inline std::string format_number(double x) {
  if (x == 0.0) x = 0.0;
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string format_timestamp(double t) {
  std::string s = format_number(t);
  if (s.find_first_of(".eE") == std::string::npos && s.find("inf") == std::string::npos &&
      s.find("nan") == std::string::npos) {
    s += ".0";
  }
  return s;
}

inline std::string format_trajectory_line(const TrajectoryEntry& e) {
  std::string line = format_timestamp(e.timestamp);
  for (int k = 0; k < 3; ++k) line += " " + format_number(e.translation(k));
  for (int k = 0; k < 4; ++k) line += " " + format_number(e.quat(k));
  return line;
}

inline std::vector<TrajectoryEntry> trajectory_entries(std::span<const Pose> poses) {
  std::vector<TrajectoryEntry> out;
  for (size_t i = 0; i < poses.size(); ++i) out.push_back(trajectory_entry(static_cast<double>(i), poses[i]));
  return out;
}

inline std::string format_trajectory(std::span<const TrajectoryEntry> entries) {
  std::string out;
  for (const auto& e : entries) out += format_trajectory_line(e) + "\n";
  return out;
}

inline std::vector<TrajectoryEntry> parse_trajectory(const std::string& text) {
  std::vector<TrajectoryEntry> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::array<double, 8> v{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int k = 0; k < 8; ++k) {
      while (p < end && *p == ' ') ++p;
      const auto res = std::from_chars(p, end, v[k]);
      if (res.ec != std::errc()) {
        throw Error(ErrorCode::kIo, "trajectory line " + std::to_string(line_no) + ": expected 8 numbers");
      }
      p = res.ptr;
    }
    out.push_back({v[0], Vector3d(v[1], v[2], v[3]), Eigen::Vector4d(v[4], v[5], v[6], v[7])});
  }
  return out;
}

inline void export_trajectory(const std::filesystem::path& path, std::span<const Pose> poses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << format_trajectory(trajectory_entries(poses));
}

inline std::vector<TrajectoryEntry> read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_trajectory(buf.str());
}

}  // namespace geo4d
