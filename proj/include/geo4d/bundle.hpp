#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "geo4d/error.hpp"
#include "geo4d/geometry.hpp"
#include "geo4d/scene.hpp"

namespace geo4d {

inline constexpr int kBundleSchemaVersion = 1;

// On-disk scene or prediction set: manifest.json plus raw float32
// little-endian blobs laid out (row, column, channel). Per-frame maps and
// groups are optional; cameras live in the manifest at full precision.
struct Bundle {
  std::string kind = "scene";  // scene | predictions | result
  int num_frames = 0;
  int height = 0;
  int width = 0;
  int window = 0;
  int stride = 0;
  Scene scene;  // per-frame vectors are either empty or num_frames long
  std::vector<WindowGroup> groups;
  nlohmann::json provenance = nlohmann::json::object();
};

namespace detail {

inline uint32_t swap_bytes(uint32_t x) {
  return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
}

inline void write_floats(const std::filesystem::path& path, const std::vector<float>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
  } else {
    for (float f : data) {
      const uint32_t b = swap_bytes(std::bit_cast<uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&b), 4);
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

inline std::vector<float> read_floats(const std::filesystem::path& path, size_t count) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorCode::kIo, "missing blob " + path.string());
  }
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec || bytes != count * 4) {
    throw Error(ErrorCode::kLengthMismatch, path.string() + ": expected " + std::to_string(count * 4) +
                                                " bytes, found " + std::to_string(bytes));
  }
  std::vector<float> data(count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 4));
  if (!in) throw Error(ErrorCode::kIo, "failed reading " + path.string());
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : data) f = std::bit_cast<float>(swap_bytes(std::bit_cast<uint32_t>(f)));
  }
  return data;
}

inline std::vector<float> pack(const Grid<double>& g) {
  std::vector<float> out(g.size());
  for (size_t i = 0; i < g.size(); ++i) out[i] = static_cast<float>(g[i]);
  return out;
}

inline std::vector<float> pack(const PointMap& g) {
  std::vector<float> out(g.size() * 3);
  for (size_t i = 0; i < g.size(); ++i) {
    for (int c = 0; c < 3; ++c) out[3 * i + c] = static_cast<float>(g[i](c));
  }
  return out;
}

inline std::vector<float> pack(const RayMap& r) {
  std::vector<float> out(r.directions.size() * 6);
  for (size_t i = 0; i < r.directions.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      out[6 * i + c] = static_cast<float>(r.directions[i](c));
      out[6 * i + 3 + c] = static_cast<float>(r.moments[i](c));
    }
  }
  return out;
}

struct BlobWriter {
  std::filesystem::path dir;

  template <typename Map>
  std::string operator()(const std::string& name, const Map& map) const {
    write_floats(dir / name, pack(map));
    return name;
  }
};

struct BlobReader {
  std::filesystem::path dir;
  int height, width;

  std::vector<float> raw(const nlohmann::json& entry, int channels) const {
    if (!entry.is_string()) throw Error(ErrorCode::kIo, "manifest blob entry is not a path");
    return read_floats(dir / entry.get<std::string>(), static_cast<size_t>(height) * width * channels);
  }
  Grid<double> scalar(const nlohmann::json& entry) const {
    const auto data = raw(entry, 1);
    Grid<double> g(height, width, 0.0);
    for (size_t i = 0; i < g.size(); ++i) g[i] = data[i];
    return g;
  }
  PointMap points(const nlohmann::json& entry) const {
    const auto data = raw(entry, 3);
    PointMap g(height, width, Vector3d::Zero());
    for (size_t i = 0; i < g.size(); ++i) g[i] = Vector3d(data[3 * i], data[3 * i + 1], data[3 * i + 2]);
    return g;
  }
  RayMap rays(const nlohmann::json& entry) const {
    const auto data = raw(entry, 6);
    RayMap r{Grid<Vector3d>(height, width, Vector3d::Zero()), Grid<Vector3d>(height, width, Vector3d::Zero())};
    for (size_t i = 0; i < r.directions.size(); ++i) {
      r.directions[i] = Vector3d(data[6 * i], data[6 * i + 1], data[6 * i + 2]);
      r.moments[i] = Vector3d(data[6 * i + 3], data[6 * i + 4], data[6 * i + 5]);
    }
    return r;
  }
};

inline std::string frame_name(int frame, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%04d_%s.f32", frame, what);
  return buf;
}

inline std::string group_name(int start, int local, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "group_%04d_%02d_%s.f32", start, local, what);
  return buf;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::filesystem::path& manifest) {
  if (!j.contains(key)) throw Error(ErrorCode::kIo, manifest.string() + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, manifest.string() + ": bad field '" + key + "': " + e.what());
  }
}

}  // namespace detail

inline void write_bundle(const Bundle& b, const std::filesystem::path& dir) {
  using nlohmann::json;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  const detail::BlobWriter blob{dir};
  const Scene& s = b.scene;

  json frames = json::array();
  for (int i = 0; i < b.num_frames; ++i) {
    json f = json::object();
    if (!s.intrinsics.empty()) {
      const Intrinsics& k = s.intrinsics.at(i);
      f["intrinsics"] = {k.fx, k.fy, k.cx, k.cy};
    }
    if (!s.poses.empty()) {
      const Pose& p = s.poses.at(i);
      f["rotation"] = json::array();
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) f["rotation"].push_back(p.rotation(r, c));
      }
      f["center"] = {p.center(0), p.center(1), p.center(2)};
    }
    if (!s.disparity.empty()) f["disparity"] = blob(detail::frame_name(i, "disparity"), s.disparity.at(i));
    if (!s.points.empty()) f["points"] = blob(detail::frame_name(i, "points"), s.points.at(i));
    if (!s.rays.empty()) f["rays"] = blob(detail::frame_name(i, "rays"), s.rays.at(i));
    frames.push_back(std::move(f));
  }

  json groups = json::array();
  for (const WindowGroup& g : b.groups) {
    json entry{{"start", g.start}, {"frames", json::array()}};
    for (int j = 0; j < g.length(); ++j) {
      json f{{"points", blob(detail::group_name(g.start, j, "points"), g.points[j])},
             {"disparity", blob(detail::group_name(g.start, j, "disparity"), g.disparity[j])},
             {"uncertainty", blob(detail::group_name(g.start, j, "uncertainty"), g.uncertainty[j])}};
      if (g.has_rays()) f["rays"] = blob(detail::group_name(g.start, j, "rays"), g.rays[j]);
      entry["frames"].push_back(std::move(f));
    }
    groups.push_back(std::move(entry));
  }

  json manifest{{"schema_version", kBundleSchemaVersion},
                {"kind", b.kind},
                {"num_frames", b.num_frames},
                {"height", b.height},
                {"width", b.width},
                {"window", b.window},
                {"stride", b.stride},
                {"dtype", "float32"},
                {"endianness", "little"},
                {"layout", "row,column,channel"},
                {"channels", {{"disparity", 1}, {"uncertainty", 1}, {"points", 3}, {"rays", 6}}},
                {"provenance", b.provenance},
                {"frames", std::move(frames)},
                {"groups", std::move(groups)}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

inline Bundle read_bundle(const std::filesystem::path& dir) {
  using nlohmann::json;
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::kIo, "missing manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIo, manifest_path.string() + ": " + e.what());
  }
  const int version = detail::field<int>(m, "schema_version", manifest_path);
  if (version != kBundleSchemaVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, manifest_path.string() + ": unsupported schema version " +
                                                    std::to_string(version));
  }
  if (detail::field<std::string>(m, "dtype", manifest_path) != "float32" ||
      detail::field<std::string>(m, "endianness", manifest_path) != "little") {
    throw Error(ErrorCode::kIo, manifest_path.string() + ": only little-endian float32 blobs are supported");
  }

  Bundle b;
  b.kind = detail::field<std::string>(m, "kind", manifest_path);
  b.num_frames = detail::field<int>(m, "num_frames", manifest_path);
  b.height = detail::field<int>(m, "height", manifest_path);
  b.width = detail::field<int>(m, "width", manifest_path);
  b.window = detail::field<int>(m, "window", manifest_path);
  b.stride = detail::field<int>(m, "stride", manifest_path);
  b.provenance = m.value("provenance", json::object());
  b.scene.height = b.height;
  b.scene.width = b.width;
  const detail::BlobReader read{dir, b.height, b.width};

  const json frames = detail::field<json>(m, "frames", manifest_path);
  if (static_cast<int>(frames.size()) != b.num_frames) {
    throw Error(ErrorCode::kLengthMismatch, manifest_path.string() + ": frame list length differs from num_frames");
  }
  Scene& s = b.scene;
  for (const json& f : frames) {
    if (f.contains("intrinsics")) {
      const auto k = f["intrinsics"].get<std::vector<double>>();
      if (k.size() != 4) throw Error(ErrorCode::kIo, manifest_path.string() + ": intrinsics need 4 values");
      s.intrinsics.push_back({k[0], k[1], k[2], k[3]});
    }
    if (f.contains("rotation")) {
      const auto r = f["rotation"].get<std::vector<double>>();
      const auto c = f.at("center").get<std::vector<double>>();
      if (r.size() != 9 || c.size() != 3) {
        throw Error(ErrorCode::kIo, manifest_path.string() + ": pose needs 9 rotation and 3 center values");
      }
      Pose p;
      for (int i = 0; i < 9; ++i) p.rotation(i / 3, i % 3) = r[i];
      p.center = Vector3d(c[0], c[1], c[2]);
      s.poses.push_back(p);
    }
    if (f.contains("disparity")) s.disparity.push_back(read.scalar(f["disparity"]));
    if (f.contains("points")) s.points.push_back(read.points(f["points"]));
    if (f.contains("rays")) s.rays.push_back(read.rays(f["rays"]));
  }
  for (size_t n : {s.intrinsics.size(), s.poses.size(), s.disparity.size(), s.points.size(), s.rays.size()}) {
    if (n != 0 && static_cast<int>(n) != b.num_frames) {
      throw Error(ErrorCode::kLengthMismatch, manifest_path.string() + ": per-frame entries are incomplete");
    }
  }

  for (const json& entry : detail::field<json>(m, "groups", manifest_path)) {
    WindowGroup g;
    g.start = detail::field<int>(entry, "start", manifest_path);
    for (const json& f : detail::field<json>(entry, "frames", manifest_path)) {
      g.points.push_back(read.points(f.at("points")));
      g.disparity.push_back(read.scalar(f.at("disparity")));
      g.uncertainty.push_back(read.scalar(f.at("uncertainty")));
      if (f.contains("rays")) g.rays.push_back(read.rays(f["rays"]));
    }
    if (!g.rays.empty() && g.rays.size() != g.points.size()) {
      throw Error(ErrorCode::kLengthMismatch, manifest_path.string() + ": group " + std::to_string(g.start) +
                                                  " has ray maps for only some frames");
    }
    if (g.start < 0 || g.start + g.length() > b.num_frames) {
      throw Error(ErrorCode::kLengthMismatch, manifest_path.string() + ": group " + std::to_string(g.start) +
                                                  " extends past the last frame");
    }
    b.groups.push_back(std::move(g));
  }
  return b;
}

}  // namespace geo4d
