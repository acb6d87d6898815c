#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "geocue/common.hpp"
#include "geocue/point_cloud.hpp"
#include "geocue/rng.hpp"

namespace geocue {

// Synthetic 6-class taxonomy (0 is the ignore class).
enum SceneClass : uint16_t {
  kClassGround = 1,
  kClassBuilding = 2,
  kClassFence = 3,
  kClassVehicle = 4,
  kClassPole = 5,
  kClassVegetation = 6,
};
inline constexpr int kNumClasses = 6;

inline const char* class_name(uint16_t c) {
  switch (c) {
    case kClassGround: return "ground";
    case kClassBuilding: return "building";
    case kClassFence: return "fence";
    case kClassVehicle: return "vehicle";
    case kClassPole: return "pole";
    case kClassVegetation: return "vegetation";
    default: return "ignore";
  }
}

struct SizeRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct SceneSpec {
  int n_points = 20000;  // beam budget; returns land slightly below it
  int buildings = 4;
  int vehicles = 5;
  int fences = 3;
  int poles = 6;
  int vegetation = 8;
  double sensor_height = 1.8;
  double field_radius = 45.0;
  SizeRange building_size{6.0, 14.0};
  SizeRange vehicle_size{1.6, 4.5};
  uint64_t seed = 1;

  void validate() const {
    if (n_points < 0) throw std::invalid_argument("negative point budget");
    if (buildings < 0 || vehicles < 0 || fences < 0 || poles < 0 ||
        vegetation < 0)
      throw std::invalid_argument("negative object count");
    if (sensor_height <= 0.0)
      throw std::invalid_argument("sensor height must be > 0");
    if (field_radius <= 5.0)
      throw std::invalid_argument("field radius too small");
  }
};

namespace detail {

struct Primitive {
  enum Kind { kBox, kCylinder, kBlob } kind = kBox;
  uint16_t label = 0;
  double cx = 0, cy = 0;       // footprint center
  double yaw = 0;              // box rotation about z
  double hx = 0, hy = 0;       // box half extents
  double z0 = 0, z1 = 0;       // vertical extent (box, cylinder)
  double radius = 0;           // cylinder / blob
  double bz = 0;               // blob center z
};

/// Nearest positive ray parameter for origin rays (o = 0), or +inf.
inline double ray_hit(const Primitive& pr, const Vec3& d) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (pr.kind) {
    case Primitive::kBox: {
      // Transform into the box frame (rotate by -yaw around its center).
      const double c = std::cos(-pr.yaw), s = std::sin(-pr.yaw);
      const double ox = c * -pr.cx - s * -pr.cy;  // R(-yaw) * (-center)
      const double oy = s * -pr.cx + c * -pr.cy;
      const double dx = c * d.x - s * d.y;
      const double dy = s * d.x + c * d.y;
      double t_lo = 0.0, t_hi = inf;
      const double o3[3] = {ox, oy, 0.0};
      const double d3[3] = {dx, dy, d.z};
      const double lo3[3] = {-pr.hx, -pr.hy, pr.z0};
      const double hi3[3] = {pr.hx, pr.hy, pr.z1};
      for (int a = 0; a < 3; ++a) {
        if (d3[a] == 0.0) {
          if (o3[a] < lo3[a] || o3[a] > hi3[a]) return inf;
          continue;
        }
        double t0 = (lo3[a] - o3[a]) / d3[a];
        double t1 = (hi3[a] - o3[a]) / d3[a];
        if (t0 > t1) std::swap(t0, t1);
        t_lo = std::max(t_lo, t0);
        t_hi = std::min(t_hi, t1);
        if (t_lo > t_hi) return inf;
      }
      return t_lo > 0.0 ? t_lo : inf;
    }
    case Primitive::kCylinder: {
      const double ox = -pr.cx, oy = -pr.cy;
      const double a = d.x * d.x + d.y * d.y;
      if (a == 0.0) return inf;
      const double b = 2.0 * (ox * d.x + oy * d.y);
      const double cc = ox * ox + oy * oy - pr.radius * pr.radius;
      const double disc = b * b - 4.0 * a * cc;
      if (disc < 0.0) return inf;
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t <= 0.0) continue;
        const double z = t * d.z;
        if (z >= pr.z0 && z <= pr.z1) return t;
      }
      return inf;
    }
    case Primitive::kBlob: {
      const double ox = -pr.cx, oy = -pr.cy, oz = -pr.bz;
      const double a = d.squared_norm();
      const double b = 2.0 * (ox * d.x + oy * d.y + oz * d.z);
      const double cc = ox * ox + oy * oy + oz * oz - pr.radius * pr.radius;
      const double disc = b * b - 4.0 * a * cc;
      if (disc < 0.0) return inf;
      const double sq = std::sqrt(disc);
      const double t = (-b - sq) / (2 * a);
      return t > 0.0 ? t : inf;
    }
  }
  return inf;
}

// Class reflectivities overlap on purpose (building/fence/vegetation
// cluster); distinguishing them needs local geometry, not intensity alone.
inline double class_intensity(uint16_t label) {
  switch (label) {
    case kClassGround: return 0.30;
    case kClassBuilding: return 0.45;
    case kClassFence: return 0.40;
    case kClassVehicle: return 0.75;
    case kClassPole: return 0.62;
    case kClassVegetation: return 0.38;
    default: return 0.15;
  }
}

}  // namespace detail

/// Simulated spinning scanner at the origin over a labeled analytic scene:
/// a ground disk, extruded boxes (buildings, vehicles), thin boxes (fences),
/// cylinders (poles), and fuzzy blobs (vegetation). The first object of the
/// first populated class straddles the 0/2*pi azimuth seam by construction.
/// Bit-identical output for a fixed spec.
inline PointCloud generate_scene(const SceneSpec& spec) {
  spec.validate();
  if (spec.n_points == 0) throw std::invalid_argument("zero point budget");

  Rng rng(spec.seed);
  const double h = spec.sensor_height;
  std::vector<detail::Primitive> prims;

  struct Slot {
    uint16_t label;
    int count;
  };
  const Slot slots[] = {{kClassBuilding, spec.buildings},
                        {kClassVehicle, spec.vehicles},
                        {kClassFence, spec.fences},
                        {kClassPole, spec.poles},
                        {kClassVegetation, spec.vegetation}};
  const int n_objects =
      spec.buildings + spec.vehicles + spec.fences + spec.poles +
      spec.vegetation;

  // Stratified azimuth slots keep objects from piling up behind each other;
  // slot 0 stays at azimuth 0 so the first object straddles the seam.
  std::vector<int> azimuth_slots(static_cast<size_t>(std::max(1, n_objects)));
  for (size_t i = 0; i < azimuth_slots.size(); ++i)
    azimuth_slots[i] = static_cast<int>(i);
  if (azimuth_slots.size() > 1) {
    std::vector<int> tail(azimuth_slots.begin() + 1, azimuth_slots.end());
    rng.shuffle(tail);
    std::copy(tail.begin(), tail.end(), azimuth_slots.begin() + 1);
  }

  // Range bands per class: small objects near the sensor, buildings behind.
  const double fr = spec.field_radius;
  int obj_idx = 0;
  bool straddler_pending = true;
  for (const Slot& slot : slots) {
    for (int i = 0; i < slot.count; ++i, ++obj_idx) {
      detail::Primitive pr;
      pr.label = slot.label;
      const bool straddle = straddler_pending;
      straddler_pending = false;
      const double slot_width = kTwoPi / static_cast<double>(n_objects);
      const double az =
          straddle ? 0.0
                   : wrap_angle(azimuth_slots[static_cast<size_t>(obj_idx)] *
                                    slot_width +
                                rng.uniform(0.1, 0.9) * slot_width);
      double range = 0.0;
      switch (slot.label) {
        case kClassBuilding:
          range = straddle ? rng.uniform(10.0, 0.45 * fr)
                           : rng.uniform(0.35 * fr, 0.85 * fr);
          break;
        case kClassVehicle:
          range = rng.uniform(7.0, 0.5 * fr);
          break;
        case kClassFence:
          range = rng.uniform(9.0, 0.6 * fr);
          break;
        case kClassPole:
          range = rng.uniform(6.0, 0.45 * fr);
          break;
        case kClassVegetation:
          range = rng.uniform(8.0, 0.8 * fr);
          break;
        default:
          break;
      }
      pr.cx = range * std::cos(az);
      pr.cy = range * std::sin(az);
      switch (slot.label) {
        case kClassBuilding: {
          pr.kind = detail::Primitive::kBox;
          pr.hx = 0.5 * rng.uniform(spec.building_size.lo, spec.building_size.hi);
          pr.hy = 0.5 * rng.uniform(spec.building_size.lo, spec.building_size.hi);
          pr.z0 = -h;
          pr.z1 = -h + rng.uniform(4.0, 10.0);
          pr.yaw = straddle ? 0.0 : rng.uniform(0.0, kTwoPi);
          break;
        }
        case kClassVehicle: {
          pr.kind = detail::Primitive::kBox;
          const double len = rng.uniform(spec.vehicle_size.lo, spec.vehicle_size.hi);
          pr.hx = 0.5 * len;
          pr.hy = 0.5 * 0.45 * len;
          pr.z0 = -h;
          pr.z1 = -h + rng.uniform(1.4, 2.0);
          pr.yaw = rng.uniform(0.0, kTwoPi);
          break;
        }
        case kClassFence: {
          pr.kind = detail::Primitive::kBox;
          pr.hx = 0.5 * rng.uniform(8.0, 20.0);
          pr.hy = 0.5 * 0.15;
          pr.z0 = -h;
          pr.z1 = -h + rng.uniform(1.2, 1.8);
          pr.yaw = rng.uniform(0.0, kTwoPi);
          break;
        }
        case kClassPole: {
          pr.kind = detail::Primitive::kCylinder;
          pr.radius = rng.uniform(0.12, 0.3);
          pr.z0 = -h;
          pr.z1 = -h + rng.uniform(3.0, 8.0);
          break;
        }
        case kClassVegetation: {
          pr.kind = detail::Primitive::kBlob;
          pr.radius = rng.uniform(0.8, 2.5);
          pr.bz = -h + 0.8 * pr.radius;
          break;
        }
        default: break;
      }
      prims.push_back(pr);
    }
  }

  // Scanner raster sized so the returned points land near the budget.
  // Roughly 95% of beams return: the ground disk catches everything below
  // the horizon, misses are upward rays past the objects.
  const int rows = 48;
  const int cols = std::max(
      16, static_cast<int>(std::llround(spec.n_points / (0.95 * rows))));
  const double elev_lo = deg_to_rad(-24.0);
  const double elev_hi = deg_to_rad(2.0);

  PointCloud cloud;
  cloud.frame_id = "scene-" + std::to_string(spec.seed);
  cloud.points.reserve(static_cast<size_t>(rows) * cols);
  cloud.labels.reserve(static_cast<size_t>(rows) * cols);

  for (int r = 0; r < rows; ++r) {
    const double elev_base =
        elev_lo + (elev_hi - elev_lo) * (r + 0.5) / rows;
    for (int c = 0; c < cols; ++c) {
      const double az =
          wrap_angle(kTwoPi * (c + 0.5) / cols + 0.002 * rng.gaussian());
      const double elev = elev_base + 0.001 * rng.gaussian();
      const Vec3 d{std::cos(elev) * std::cos(az),
                   std::cos(elev) * std::sin(az), std::sin(elev)};

      double best_t = std::numeric_limits<double>::infinity();
      uint16_t label = kIgnoreLabel;
      // Ground disk.
      if (d.z < 0.0) {
        const double t = -h / d.z;
        const double gx = t * d.x, gy = t * d.y;
        if (gx * gx + gy * gy <= spec.field_radius * spec.field_radius) {
          best_t = t;
          label = kClassGround;
        }
      }
      for (const detail::Primitive& pr : prims) {
        const double t = detail::ray_hit(pr, d);
        if (t >= 0.5 && t < best_t) {
          best_t = t;
          label = pr.label;
        }
      }
      if (!std::isfinite(best_t)) continue;

      double t = best_t + rng.gaussian(0.0, 0.015);
      if (label == kClassVegetation) t += rng.gaussian(0.0, 0.25);
      if (t < 0.5) t = 0.5;
      Point p;
      p.x = t * d.x;
      p.y = t * d.y;
      p.z = t * d.z;
      p.intensity = std::clamp(
          detail::class_intensity(label) + 0.12 * rng.gaussian(), 0.02, 1.0);
      cloud.points.push_back(p);
      cloud.labels.push_back(label);
    }
  }
  return cloud;
}

}  // namespace geocue
