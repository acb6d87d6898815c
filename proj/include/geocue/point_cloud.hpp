#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "geocue/common.hpp"

namespace geocue {

/// Label id for points without a semantic class (weather scatter clutter);
/// excluded from losses and scoring.
inline constexpr uint16_t kIgnoreLabel = 0;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double squared_norm() const { return x * x + y * y + z * z; }
  double norm() const { return std::sqrt(squared_norm()); }
};

struct Point {
  double x = 0.0, y = 0.0, z = 0.0;
  double intensity = 0.0;

  Vec3 xyz() const { return {x, y, z}; }
};

inline double point_range(const Point& p) {
  return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
}

/// Azimuth of a point in [0, 2*pi).
inline double point_azimuth(const Point& p) {
  return wrap_angle(std::atan2(p.y, p.x));
}

/// Shared squared-distance kernel. Every K-NN path (windowed search, brute
/// force, test oracles) must call this so distance values are bit-identical
/// and comparable exactly.
inline double squared_dist(const Point& a, const Point& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

struct PointCloud {
  std::vector<Point> points;
  std::vector<uint16_t> labels;  // optional; one per point when present
  std::string frame_id;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_labels() const { return !labels.empty(); }

  void validate() const {
    if (has_labels() && labels.size() != points.size())
      throw std::invalid_argument("label count does not match point count");
    for (size_t i = 0; i < points.size(); ++i) {
      const Point& p = points[i];
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
          !std::isfinite(p.intensity))
        throw std::invalid_argument("non-finite coordinate at point " +
                                    std::to_string(i));
      if (p.intensity < 0.0 || p.intensity > 1.0)
        throw std::invalid_argument("intensity out of [0,1] at point " +
                                    std::to_string(i));
    }
  }
};

}  // namespace geocue
