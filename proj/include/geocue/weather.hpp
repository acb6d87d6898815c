#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "geocue/point_cloud.hpp"
#include "geocue/rng.hpp"

namespace geocue {

struct JitterConfig {
  double range_threshold = 15.0;     // eligible beyond this range
  bool bearing_enabled = false;
  double bearing_lo = 0.0;           // radians, [lo, hi) wrapping sector
  double bearing_hi = 0.0;
  double intensity_threshold = 0.2;  // eligible below this intensity
  double sigma = 0.05;               // isotropic offset stddev, meters
  double fraction = 0.5;             // share of eligible points perturbed
  uint64_t seed = 0;

  void validate() const {
    if (sigma < 0.0) throw std::invalid_argument("jitter sigma must be >= 0");
    if (fraction < 0.0 || fraction > 1.0)
      throw std::invalid_argument("jitter fraction must be in [0,1]");
  }
};

struct JitterResult {
  PointCloud cloud;
  std::vector<uint8_t> mask;  // true where the point was perturbed
};

inline bool in_bearing_sector(double az, double lo, double hi) {
  if (lo <= hi) return az >= lo && az < hi;
  return az >= lo || az < hi;  // sector wraps through 0
}

/// Frame-wise non-uniform perturbation: points eligible by range, bearing,
/// or intensity receive isotropic Gaussian offsets. Order, count, labels,
/// and intensities never change.
inline JitterResult selective_jitter(const PointCloud& cloud,
                                     const JitterConfig& cfg) {
  cfg.validate();
  JitterResult res;
  res.cloud = cloud;
  res.mask.assign(cloud.size(), 0);

  std::vector<int> eligible;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    const bool far = point_range(p) > cfg.range_threshold;
    const bool sector =
        cfg.bearing_enabled &&
        in_bearing_sector(point_azimuth(p), cfg.bearing_lo, cfg.bearing_hi);
    const bool dark = p.intensity < cfg.intensity_threshold;
    if (far || sector || dark) eligible.push_back(static_cast<int>(i));
  }

  Rng rng(cfg.seed);
  const int m = static_cast<int>(
      std::llround(cfg.fraction * static_cast<double>(eligible.size())));
  std::vector<int> chosen =
      rng.sample_without_replacement(static_cast<int>(eligible.size()), m);
  std::sort(chosen.begin(), chosen.end());
  for (int ci : chosen) {
    const int id = eligible[static_cast<size_t>(ci)];
    Point& p = res.cloud.points[static_cast<size_t>(id)];
    p.x += cfg.sigma * rng.gaussian();
    p.y += cfg.sigma * rng.gaussian();
    p.z += cfg.sigma * rng.gaussian();
    res.mask[static_cast<size_t>(id)] = 1;
  }
  return res;
}

enum class WeatherKind { kFogLight, kFogDense, kRain, kSnow };

inline const char* weather_name(WeatherKind k) {
  switch (k) {
    case WeatherKind::kFogLight: return "fog_light";
    case WeatherKind::kFogDense: return "fog_dense";
    case WeatherKind::kRain: return "rain";
    case WeatherKind::kSnow: return "snow";
  }
  return "?";
}

inline WeatherKind weather_from_name(const std::string& name) {
  if (name == "fog_light") return WeatherKind::kFogLight;
  if (name == "fog_dense") return WeatherKind::kFogDense;
  if (name == "rain") return WeatherKind::kRain;
  if (name == "snow") return WeatherKind::kSnow;
  throw std::invalid_argument("unknown weather kind: " + name);
}

struct WeatherModel {
  double r_max = 50.0;             // dropout saturates at this range
  double drop_factor = 1.0;        // scales severity in the dropout curve
  double noise_sigma = 0.015;      // relative range noise at severity 1
  double scatter_mean = 0.0;       // Poisson mean of clutter at severity 1
  double scatter_range_max = 8.0;  // clutter stays near the sensor
  double sector_rate = 0.0;        // Poisson mean of extinction sectors
  double sector_kill = 0.0;        // in-sector drop probability at severity 1
  double atten = 0.0;              // intensity attenuation at severity 1
};

// Dropout is dominated by directional extinction wedges rather than uniform
// far-range thinning: the structured holes are what break neighborhoods.
inline WeatherModel weather_model(WeatherKind kind) {
  WeatherModel m;
  switch (kind) {
    case WeatherKind::kFogLight:
      m.drop_factor = 0.20;
      m.noise_sigma = 0.010;
      m.scatter_mean = 800.0;
      m.sector_rate = 3.0;
      m.sector_kill = 0.85;
      m.atten = 0.30;
      break;
    case WeatherKind::kFogDense:
      m.drop_factor = 0.50;
      m.noise_sigma = 0.015;
      m.scatter_mean = 3000.0;
      m.sector_rate = 6.0;
      m.sector_kill = 0.95;
      m.atten = 0.55;
      break;
    case WeatherKind::kRain:
      m.drop_factor = 0.25;
      m.noise_sigma = 0.020;
      m.scatter_mean = 0.0;  // rain never inserts points
      m.sector_rate = 3.0;
      m.sector_kill = 0.8;
      m.atten = 0.35;
      break;
    case WeatherKind::kSnow:
      m.drop_factor = 0.30;
      m.noise_sigma = 0.025;
      m.scatter_mean = 1000.0;
      m.sector_rate = 4.0;
      m.sector_kill = 0.9;
      m.atten = 0.45;
      break;
  }
  return m;
}

/// One directional extinction wedge: beams inside it mostly vanish past the
/// near field.
struct WeatherSector {
  double az_lo = 0.0;   // [az_lo, az_lo + width), wrap-aware
  double width = 0.0;
  double kill_prob = 0.0;
};

/// Drawn corruption instance: the sector layout is part of the plan so
/// expected survival is a closed form over the points.
struct WeatherPlan {
  WeatherKind kind = WeatherKind::kFogLight;
  double severity = 0.0;
  WeatherModel model;
  std::vector<WeatherSector> sectors;
  uint64_t point_seed = 0;
};

inline WeatherPlan plan_weather(WeatherKind kind, double severity,
                                uint64_t seed) {
  if (severity < 0.0 || severity > 1.0)
    throw std::invalid_argument("severity must be in [0,1]");
  WeatherPlan plan;
  plan.kind = kind;
  plan.severity = severity;
  plan.model = weather_model(kind);
  Rng rng(mix64(seed ^ 0x5ec70f5ull));
  if (severity > 0.0) {
    const long long n_sectors = rng.poisson(plan.model.sector_rate * severity);
    for (long long i = 0; i < n_sectors; ++i) {
      WeatherSector s;
      s.az_lo = rng.uniform(0.0, kTwoPi);
      s.width = rng.uniform(deg_to_rad(4.0), deg_to_rad(20.0));
      s.kill_prob = plan.model.sector_kill * severity;
      plan.sectors.push_back(s);
    }
  }
  plan.point_seed = mix64(seed ^ 0x90127ull);
  return plan;
}

/// Total dropout probability of one point under a drawn plan: the
/// range-dependent base combined with any extinction sector covering its
/// bearing (beyond the 5 m near field).
inline double weather_drop_prob(double range, double azimuth,
                                const WeatherPlan& plan) {
  double keep = 1.0 - std::min(1.0, plan.model.drop_factor * plan.severity *
                                        std::min(1.0, range / plan.model.r_max));
  if (range > 5.0) {
    for (const WeatherSector& s : plan.sectors) {
      const double off = wrap_angle(azimuth - s.az_lo);
      if (off < s.width) keep *= 1.0 - s.kill_prob;
    }
  }
  return 1.0 - keep;
}

/// Applies a drawn plan: dropout, radial range noise and intensity
/// attenuation on the survivors, then near-sensor scatter labeled as the
/// ignore class (fog and snow only).
inline PointCloud apply_weather(const PointCloud& cloud,
                                const WeatherPlan& plan) {
  if (plan.severity == 0.0) return cloud;
  const WeatherModel& model = plan.model;
  const double severity = plan.severity;
  Rng rng(plan.point_seed);
  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.points.reserve(cloud.size());
  const bool labeled = cloud.has_labels();
  if (labeled) out.labels.reserve(cloud.size());

  for (size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    const double r = point_range(p);
    const double p_drop = weather_drop_prob(r, point_azimuth(p), plan);
    if (rng.u01() < p_drop) continue;
    Point q = p;
    const double scale = 1.0 + rng.gaussian(0.0, model.noise_sigma * severity);
    q.x *= scale;
    q.y *= scale;
    q.z *= scale;
    const double fade =
        1.0 - model.atten * severity * std::min(1.0, r / model.r_max);
    q.intensity = std::clamp(
        q.intensity * fade + 0.02 * severity * rng.gaussian(), 0.0, 1.0);
    out.points.push_back(q);
    if (labeled) out.labels.push_back(cloud.labels[i]);
  }

  const long long n_scatter = rng.poisson(model.scatter_mean * severity);
  for (long long j = 0; j < n_scatter; ++j) {
    const double az = rng.uniform(0.0, kTwoPi);
    const double elev = rng.uniform(deg_to_rad(-20.0), deg_to_rad(2.0));
    const double r = rng.uniform(0.5, model.scatter_range_max);
    Point q;
    q.x = r * std::cos(elev) * std::cos(az);
    q.y = r * std::cos(elev) * std::sin(az);
    q.z = r * std::sin(elev);
    q.intensity = 0.3 * rng.u01();
    out.points.push_back(q);
    if (labeled) out.labels.push_back(kIgnoreLabel);
  }
  return out;
}

/// Test-time corruption; severity 0 is the identity for every kind.
inline PointCloud corrupt_weather(const PointCloud& cloud, WeatherKind kind,
                                  double severity, uint64_t seed) {
  return apply_weather(cloud, plan_weather(kind, severity, seed));
}

}  // namespace geocue
