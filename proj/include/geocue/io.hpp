#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "geocue/common.hpp"
#include "geocue/point_cloud.hpp"

#include <json.hpp>

namespace geocue {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return buf;
}

/// Writes via a temp file and rename so readers never see partial output.
inline void atomic_write_file(const std::string& path,
                              const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("short write to: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

inline float read_f32_le(const unsigned char* p) {
  uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
               (static_cast<uint32_t>(p[2]) << 16) |
               (static_cast<uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

inline void append_f32_le(std::string& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_u32_le(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace detail

/// Reads consecutive little-endian (x, y, z, intensity) float records.
inline PointCloud read_scan_bin(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() % 16 != 0)
    throw DataError("scan file " + path + " size " +
                    std::to_string(buf.size()) +
                    " is not divisible by 16 (trailing partial record at byte " +
                    std::to_string(buf.size() - buf.size() % 16) + ")");
  PointCloud cloud;
  const size_t n = buf.size() / 16;
  cloud.points.resize(n);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  for (size_t i = 0; i < n; ++i) {
    const float x = detail::read_f32_le(p + 16 * i + 0);
    const float y = detail::read_f32_le(p + 16 * i + 4);
    const float z = detail::read_f32_le(p + 16 * i + 8);
    const float it = detail::read_f32_le(p + 16 * i + 12);
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) ||
        !std::isfinite(it))
      throw DataError("non-finite float in scan record " + std::to_string(i) +
                      " of " + path);
    cloud.points[i] = {static_cast<double>(x), static_cast<double>(y),
                       static_cast<double>(z),
                       std::clamp(static_cast<double>(it), 0.0, 1.0)};
  }
  cloud.frame_id = std::filesystem::path(path).stem().string();
  return cloud;
}

inline void write_scan_bin(const PointCloud& cloud, const std::string& path) {
  std::string out;
  out.reserve(cloud.size() * 16);
  for (const Point& p : cloud.points) {
    detail::append_f32_le(out, static_cast<float>(p.x));
    detail::append_f32_le(out, static_cast<float>(p.y));
    detail::append_f32_le(out, static_cast<float>(p.z));
    detail::append_f32_le(out, static_cast<float>(p.intensity));
  }
  atomic_write_file(path, out);
}

/// Companion label file: one u32 per point, semantic id in the low 16 bits
/// (the high 16 carry instance ids and are discarded).
inline std::vector<uint16_t> read_labels(const std::string& path,
                                         size_t n_points) {
  const std::string buf = read_file(path);
  if (buf.size() % 4 != 0 || buf.size() / 4 != n_points)
    throw DataError("label file " + path + " holds " +
                    std::to_string(buf.size() / 4) + " records, expected " +
                    std::to_string(n_points));
  std::vector<uint16_t> labels(n_points);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  for (size_t i = 0; i < n_points; ++i) {
    const uint32_t v = static_cast<uint32_t>(p[4 * i]) |
                       (static_cast<uint32_t>(p[4 * i + 1]) << 8) |
                       (static_cast<uint32_t>(p[4 * i + 2]) << 16) |
                       (static_cast<uint32_t>(p[4 * i + 3]) << 24);
    labels[i] = static_cast<uint16_t>(v & 0xffff);
  }
  return labels;
}

inline void write_labels(const std::vector<uint16_t>& labels,
                         const std::string& path) {
  std::string out;
  out.reserve(labels.size() * 4);
  for (uint16_t l : labels) detail::append_u32_le(out, l);
  atomic_write_file(path, out);
}

struct PlyColumn {
  std::string name;
  std::vector<double> values;
};

/// ASCII PLY with x, y, z plus named per-point scalar columns.
inline void write_ply(const PointCloud& cloud,
                      const std::vector<PlyColumn>& columns,
                      const std::string& path) {
  for (const PlyColumn& c : columns)
    if (c.values.size() != cloud.size())
      throw std::invalid_argument("ply column '" + c.name +
                                  "' length does not match point count");
  std::string out;
  out += "ply\nformat ascii 1.0\n";
  out += "element vertex " + std::to_string(cloud.size()) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  for (const PlyColumn& c : columns) out += "property float " + c.name + "\n";
  out += "end_header\n";
  char buf[64];
  auto put = [&](double v) {
    const int len = std::snprintf(buf, sizeof buf, "%.9g", v);
    out.append(buf, static_cast<size_t>(len));
  };
  for (size_t i = 0; i < cloud.size(); ++i) {
    put(cloud.points[i].x);
    out += ' ';
    put(cloud.points[i].y);
    out += ' ';
    put(cloud.points[i].z);
    for (const PlyColumn& c : columns) {
      out += ' ';
      put(c.values[i]);
    }
    out += '\n';
  }
  atomic_write_file(path, out);
}

// ---------------------------------------------------------------------------
// Dataset manifest: maps scene files to splits and records whether a scene
// has been weather-corrupted (training refuses corrupted inputs).
// ---------------------------------------------------------------------------

struct SceneEntry {
  std::string bin;
  std::string label;
  std::string split;  // "train" | "eval"
  bool corrupted = false;
  std::string weather;
  double severity = 0.0;
  uint64_t seed = 0;
};

struct DatasetManifest {
  std::string config_hash;
  std::vector<SceneEntry> scenes;
};

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["config_hash"] = m.config_hash;
  j["scenes"] = nlohmann::ordered_json::array();
  for (const SceneEntry& s : m.scenes) {
    nlohmann::ordered_json e;
    e["bin"] = s.bin;
    e["label"] = s.label;
    e["split"] = s.split;
    e["corrupted"] = s.corrupted;
    e["weather"] = s.weather;
    e["severity"] = s.severity;
    e["seed"] = s.seed;
    j["scenes"].push_back(e);
  }
  atomic_write_file(path, j.dump(2) + "\n");
}

inline DatasetManifest read_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.config_hash = j.value("config_hash", "");
    for (const auto& e : j.at("scenes")) {
      SceneEntry s;
      s.bin = e.at("bin").get<std::string>();
      s.label = e.at("label").get<std::string>();
      s.split = e.at("split").get<std::string>();
      s.corrupted = e.value("corrupted", false);
      s.weather = e.value("weather", "");
      s.severity = e.value("severity", 0.0);
      s.seed = e.value("seed", 0ull);
      m.scenes.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path + ": " + e.what());
  }
  return m;
}

}  // namespace geocue
