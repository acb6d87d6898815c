#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "geocue/adapter.hpp"
#include "geocue/common.hpp"
#include "geocue/range_image.hpp"
#include "geocue/scene.hpp"
#include "geocue/weather.hpp"

namespace geocue {

/// Experiment configuration; one INI section per pipeline stage. Every
/// field has a default, unknown keys are rejected by name, and
/// parse -> serialize -> parse is a fixed point.
struct Config {
  struct Grid {
    int width = 1024;
    int height = 64;
    double elev_min_deg = -25.0;
    double elev_max_deg = 3.0;
  } grid;

  struct Knn {
    int window = 256;  // W; column span of the search window (2*half_w+1)
    int k = 16;
    int half_h = 4;
    double voxel_size = 0.3;
  } knn;

  struct Adapter {
    int hidden = 32;
    int feature_dim = 32;
    int cue_hidden = 32;
    int cue_dim = 16;
  } adapter;

  struct Jitter {
    double range_threshold = 15.0;
    bool bearing_enabled = false;
    double bearing_lo_deg = 0.0;
    double bearing_hi_deg = 0.0;
    double intensity_threshold = 0.2;
    double sigma = 0.05;
    double fraction = 0.5;
  } jitter;

  struct Scene {
    int n_points = 20000;
    int buildings = 4;
    int vehicles = 5;
    int fences = 3;
    int poles = 6;
    int vegetation = 8;
    double sensor_height = 1.8;
    double field_radius = 45.0;
    double building_min = 6.0;
    double building_max = 14.0;
    double vehicle_min = 1.6;
    double vehicle_max = 4.5;
    int train_scenes = 20;
    int eval_scenes = 10;
  } scene;

  struct Policy {
    std::vector<double> ratios{0.1, 0.25, 0.5, 0.75};
    int regions_azimuth = 8;
    int regions_elevation = 2;
    int replay_capacity = 4096;
    int batch_size = 64;
    double gamma = 0.9;
    double eps_start = 1.0;
    double eps_end = 0.05;
    double eps_decay_frac = 0.6;  // fraction of total steps to reach eps_end
    int target_sync = 100;
    int q_hidden = 32;
    double q_lr = 0.001;
    int updates_per_frame = 1;
  } policy;

  struct Loss {
    double kappa = 1.0;
    double alpha = 1.0;
    double eta = 0.1;
    double lambda = 1.0;
  } loss;

  struct Train {
    int epochs = 30;
    double lr = 0.01;
    double momentum = 0.9;
    double grad_clip = 0.0;  // global gradient norm cap; 0 disables
    int backbone_hidden = 32;
    // full: cues + learned drop policy; random_policy: cues + uniform drop
    // choices; no_drop: jitter-only baseline without cues or drops.
    std::string mode = "full";
    int workers = 1;
  } train;

  /// The jitter-only baseline ablates the whole cue pathway.
  bool uses_cues() const { return train.mode != "no_drop"; }

  struct Eval {
    std::string weather = "mix";  // mix | fog_light | fog_dense | rain | snow
    double severity = 0.6;
  } eval;

  struct Seed {
    uint64_t master = 1;
  } seed;

  // -- derived views ---------------------------------------------------------
  GridSpec grid_spec(double azimuth_offset = 0.0) const {
    GridSpec s;
    s.width = grid.width;
    s.height = grid.height;
    s.elev_min = deg_to_rad(grid.elev_min_deg);
    s.elev_max = deg_to_rad(grid.elev_max_deg);
    s.azimuth_offset = azimuth_offset;
    return s;
  }

  int half_w() const { return knn.window / 2; }

  AdapterDims adapter_dims() const {
    return {adapter.hidden, adapter.feature_dim, adapter.cue_hidden,
            adapter.cue_dim};
  }

  AdapterOptions adapter_options() const {
    AdapterOptions o;
    o.k = knn.k;
    o.half_w = half_w();
    o.half_h = knn.half_h;
    o.voxel_size = knn.voxel_size;
    o.workers = train.workers;
    return o;
  }

  JitterConfig jitter_config(uint64_t stream_seed) const {
    JitterConfig j;
    j.range_threshold = jitter.range_threshold;
    j.bearing_enabled = jitter.bearing_enabled;
    j.bearing_lo = deg_to_rad(jitter.bearing_lo_deg);
    j.bearing_hi = deg_to_rad(jitter.bearing_hi_deg);
    j.intensity_threshold = jitter.intensity_threshold;
    j.sigma = jitter.sigma;
    j.fraction = jitter.fraction;
    j.seed = stream_seed;
    return j;
  }

  SceneSpec scene_spec(uint64_t scene_seed) const {
    SceneSpec s;
    s.n_points = scene.n_points;
    s.buildings = scene.buildings;
    s.vehicles = scene.vehicles;
    s.fences = scene.fences;
    s.poles = scene.poles;
    s.vegetation = scene.vegetation;
    s.sensor_height = scene.sensor_height;
    s.field_radius = scene.field_radius;
    s.building_size = {scene.building_min, scene.building_max};
    s.vehicle_size = {scene.vehicle_min, scene.vehicle_max};
    s.seed = scene_seed;
    return s;
  }

  void validate() const {
    grid_spec().validate();
    if (knn.window < 1) throw ConfigError("knn.window must be >= 1");
    if (knn.k < 1) throw ConfigError("knn.k must be >= 1");
    if (knn.half_h < 0) throw ConfigError("knn.half_h must be >= 0");
    if (knn.voxel_size <= 0) throw ConfigError("knn.voxel_size must be > 0");
    if (adapter.hidden < 1 || adapter.feature_dim < 1 ||
        adapter.cue_hidden < 1 || adapter.cue_dim < 1)
      throw ConfigError("adapter sizes must be >= 1");
    if (jitter.sigma < 0) throw ConfigError("jitter.sigma must be >= 0");
    if (jitter.fraction < 0 || jitter.fraction > 1)
      throw ConfigError("jitter.fraction must be in [0,1]");
    if (policy.ratios.empty()) throw ConfigError("policy.ratios is empty");
    for (double r : policy.ratios)
      if (r < 0 || r > 1) throw ConfigError("policy.ratios entries must be in [0,1]");
    if (policy.regions_azimuth < 1 || policy.regions_elevation < 1)
      throw ConfigError("policy region tiling must be >= 1");
    if (policy.replay_capacity < 1 || policy.batch_size < 1)
      throw ConfigError("policy replay settings must be >= 1");
    if (policy.gamma < 0 || policy.gamma >= 1)
      throw ConfigError("policy.gamma must be in [0,1)");
    if (policy.eps_start < 0 || policy.eps_start > 1 || policy.eps_end < 0 ||
        policy.eps_end > 1)
      throw ConfigError("policy epsilon must be in [0,1]");
    if (loss.alpha < 1) throw ConfigError("loss.alpha must be >= 1");
    if (loss.eta < 0) throw ConfigError("loss.eta must be >= 0");
    if (loss.kappa < 0) throw ConfigError("loss.kappa must be >= 0");
    if (loss.lambda < 0) throw ConfigError("loss.lambda must be >= 0");
    if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (train.grad_clip < 0) throw ConfigError("train.grad_clip must be >= 0");
    if (train.mode != "full" && train.mode != "random_policy" &&
        train.mode != "no_drop")
      throw ConfigError("train.mode must be full|random_policy|no_drop");
    if (train.workers < 1) throw ConfigError("train.workers must be >= 1");
    if (eval.weather != "mix") weather_from_name(eval.weather);
    if (eval.severity < 0 || eval.severity > 1)
      throw ConfigError("eval.severity must be in [0,1]");
    if (scene.n_points < 1) throw ConfigError("scene.n_points must be >= 1");
    if (scene.train_scenes < 0 || scene.eval_scenes < 0)
      throw ConfigError("scene counts must be >= 0");
  }
};

namespace detail {

struct FieldRef {
  enum Type { kInt, kDouble, kBool, kString, kU64, kDoubleList } type;
  void* ptr;
};

/// Single table of every (section, key) -> member; drives parse, serialize,
/// and unknown-key rejection.
inline void visit_config(
    Config& c,
    const std::function<void(const char*, const char*, FieldRef)>& f) {
  auto I = [](int& v) { return FieldRef{FieldRef::kInt, &v}; };
  auto D = [](double& v) { return FieldRef{FieldRef::kDouble, &v}; };
  auto B = [](bool& v) { return FieldRef{FieldRef::kBool, &v}; };
  auto S = [](std::string& v) { return FieldRef{FieldRef::kString, &v}; };
  auto U = [](uint64_t& v) { return FieldRef{FieldRef::kU64, &v}; };
  auto L = [](std::vector<double>& v) {
    return FieldRef{FieldRef::kDoubleList, &v};
  };

  f("grid", "width", I(c.grid.width));
  f("grid", "height", I(c.grid.height));
  f("grid", "elev_min_deg", D(c.grid.elev_min_deg));
  f("grid", "elev_max_deg", D(c.grid.elev_max_deg));

  f("knn", "window", I(c.knn.window));
  f("knn", "k", I(c.knn.k));
  f("knn", "half_h", I(c.knn.half_h));
  f("knn", "voxel_size", D(c.knn.voxel_size));

  f("adapter", "hidden", I(c.adapter.hidden));
  f("adapter", "feature_dim", I(c.adapter.feature_dim));
  f("adapter", "cue_hidden", I(c.adapter.cue_hidden));
  f("adapter", "cue_dim", I(c.adapter.cue_dim));

  f("jitter", "range_threshold", D(c.jitter.range_threshold));
  f("jitter", "bearing_enabled", B(c.jitter.bearing_enabled));
  f("jitter", "bearing_lo_deg", D(c.jitter.bearing_lo_deg));
  f("jitter", "bearing_hi_deg", D(c.jitter.bearing_hi_deg));
  f("jitter", "intensity_threshold", D(c.jitter.intensity_threshold));
  f("jitter", "sigma", D(c.jitter.sigma));
  f("jitter", "fraction", D(c.jitter.fraction));

  f("scene", "n_points", I(c.scene.n_points));
  f("scene", "buildings", I(c.scene.buildings));
  f("scene", "vehicles", I(c.scene.vehicles));
  f("scene", "fences", I(c.scene.fences));
  f("scene", "poles", I(c.scene.poles));
  f("scene", "vegetation", I(c.scene.vegetation));
  f("scene", "sensor_height", D(c.scene.sensor_height));
  f("scene", "field_radius", D(c.scene.field_radius));
  f("scene", "building_min", D(c.scene.building_min));
  f("scene", "building_max", D(c.scene.building_max));
  f("scene", "vehicle_min", D(c.scene.vehicle_min));
  f("scene", "vehicle_max", D(c.scene.vehicle_max));
  f("scene", "train_scenes", I(c.scene.train_scenes));
  f("scene", "eval_scenes", I(c.scene.eval_scenes));

  f("policy", "ratios", L(c.policy.ratios));
  f("policy", "regions_azimuth", I(c.policy.regions_azimuth));
  f("policy", "regions_elevation", I(c.policy.regions_elevation));
  f("policy", "replay_capacity", I(c.policy.replay_capacity));
  f("policy", "batch_size", I(c.policy.batch_size));
  f("policy", "gamma", D(c.policy.gamma));
  f("policy", "eps_start", D(c.policy.eps_start));
  f("policy", "eps_end", D(c.policy.eps_end));
  f("policy", "eps_decay_frac", D(c.policy.eps_decay_frac));
  f("policy", "target_sync", I(c.policy.target_sync));
  f("policy", "q_hidden", I(c.policy.q_hidden));
  f("policy", "q_lr", D(c.policy.q_lr));
  f("policy", "updates_per_frame", I(c.policy.updates_per_frame));

  f("loss", "kappa", D(c.loss.kappa));
  f("loss", "alpha", D(c.loss.alpha));
  f("loss", "eta", D(c.loss.eta));
  f("loss", "lambda", D(c.loss.lambda));

  f("train", "epochs", I(c.train.epochs));
  f("train", "lr", D(c.train.lr));
  f("train", "momentum", D(c.train.momentum));
  f("train", "grad_clip", D(c.train.grad_clip));
  f("train", "backbone_hidden", I(c.train.backbone_hidden));
  f("train", "mode", S(c.train.mode));
  f("train", "workers", I(c.train.workers));

  f("eval", "weather", S(c.eval.weather));
  f("eval", "severity", D(c.eval.severity));

  f("seed", "master", U(c.seed.master));
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_double_or_throw(const std::string& v,
                                    const std::string& where) {
  double d = 0.0;
  const char* begin = v.data();
  const char* end = v.data() + v.size();
  const auto res = std::from_chars(begin, end, d);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ConfigError("bad numeric value for " + where + ": '" + v + "'");
  return d;
}

inline void assign_field(FieldRef ref, const std::string& value,
                         const std::string& where) {
  switch (ref.type) {
    case FieldRef::kInt: {
      long long v = 0;
      const auto res =
          std::from_chars(value.data(), value.data() + value.size(), v);
      if (res.ec != std::errc{} || res.ptr != value.data() + value.size())
        throw ConfigError("bad integer value for " + where + ": '" + value + "'");
      *static_cast<int*>(ref.ptr) = static_cast<int>(v);
      break;
    }
    case FieldRef::kU64: {
      uint64_t v = 0;
      const auto res =
          std::from_chars(value.data(), value.data() + value.size(), v);
      if (res.ec != std::errc{} || res.ptr != value.data() + value.size())
        throw ConfigError("bad integer value for " + where + ": '" + value + "'");
      *static_cast<uint64_t*>(ref.ptr) = v;
      break;
    }
    case FieldRef::kDouble:
      *static_cast<double*>(ref.ptr) = parse_double_or_throw(value, where);
      break;
    case FieldRef::kBool: {
      if (value == "true" || value == "1")
        *static_cast<bool*>(ref.ptr) = true;
      else if (value == "false" || value == "0")
        *static_cast<bool*>(ref.ptr) = false;
      else
        throw ConfigError("bad boolean value for " + where + ": '" + value + "'");
      break;
    }
    case FieldRef::kString:
      *static_cast<std::string*>(ref.ptr) = value;
      break;
    case FieldRef::kDoubleList: {
      auto* out = static_cast<std::vector<double>*>(ref.ptr);
      out->clear();
      std::string item;
      std::istringstream ss(value);
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty())
          throw ConfigError("empty list entry for " + where);
        out->push_back(parse_double_or_throw(item, where));
      }
      if (out->empty()) throw ConfigError("empty list for " + where);
      break;
    }
  }
}

inline std::string field_to_string(FieldRef ref) {
  switch (ref.type) {
    case FieldRef::kInt:
      return std::to_string(*static_cast<int*>(ref.ptr));
    case FieldRef::kU64:
      return std::to_string(*static_cast<uint64_t*>(ref.ptr));
    case FieldRef::kDouble:
      return format_double(*static_cast<double*>(ref.ptr));
    case FieldRef::kBool:
      return *static_cast<bool*>(ref.ptr) ? "true" : "false";
    case FieldRef::kString:
      return *static_cast<std::string*>(ref.ptr);
    case FieldRef::kDoubleList: {
      const auto& v = *static_cast<std::vector<double>*>(ref.ptr);
      std::string s;
      for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += format_double(v[i]);
      }
      return s;
    }
  }
  return "";
}

}  // namespace detail

/// Parses INI text over the defaults. Unknown sections or keys are
/// rejected with the offending name.
inline Config parse_config(const std::string& text) {
  Config cfg;
  struct Entry {
    std::string section, key, value;
  };
  std::vector<Entry> entries;
  {
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = detail::trim(line);
      if (line.empty() || line[0] == '#' || line[0] == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("malformed section header at line " +
                            std::to_string(line_no));
        section = detail::trim(line.substr(1, line.size() - 2));
        continue;
      }
      const size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("expected key=value at line " +
                          std::to_string(line_no));
      Entry e;
      e.section = section;
      e.key = detail::trim(line.substr(0, eq));
      e.value = detail::trim(line.substr(eq + 1));
      if (e.section.empty())
        throw ConfigError("key '" + e.key + "' outside any section");
      entries.push_back(std::move(e));
    }
  }
  for (const Entry& e : entries) {
    bool matched = false;
    detail::visit_config(cfg, [&](const char* sec, const char* key,
                                  detail::FieldRef ref) {
      if (!matched && e.section == sec && e.key == key) {
        detail::assign_field(ref, e.value, e.section + "." + e.key);
        matched = true;
      }
    });
    if (!matched)
      throw ConfigError("unknown config key: " + e.section + "." + e.key);
  }
  return cfg;
}

/// Canonical INI rendering: fixed section and key order, shortest
/// round-trip numerals.
inline std::string serialize_config(const Config& cfg) {
  std::string out;
  std::string current;
  detail::visit_config(
      const_cast<Config&>(cfg),
      [&](const char* sec, const char* key, detail::FieldRef ref) {
        if (current != sec) {
          if (!out.empty()) out += "\n";
          out += "[" + std::string(sec) + "]\n";
          current = sec;
        }
        out += std::string(key) + " = " + detail::field_to_string(ref) + "\n";
      });
  return out;
}

/// FNV-1a 64 over the canonical rendering; stable across identical configs.
inline std::string config_hash(const Config& cfg) {
  const std::string s = serialize_config(cfg);
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int i = 0; i < 16; ++i)
    buf[i] = hex[(h >> (60 - 4 * i)) & 0xf];
  buf[16] = '\0';
  return std::string(buf);
}

}  // namespace geocue
