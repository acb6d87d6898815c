#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "geocue/point_cloud.hpp"
#include "geocue/range_image.hpp"

namespace geocue {

struct GridIndex {
  RangeImage image;
  const PointCloud* source = nullptr;
};

inline GridIndex build_grid_index(const PointCloud& cloud,
                                  const GridSpec& spec) {
  GridIndex index;
  index.image = spherical_project(cloud, spec);
  index.source = &cloud;
  return index;
}

struct NeighborSet {
  int query_id = -1;
  std::vector<int> ids;       // distinct, never contains query_id
  std::vector<double> dists;  // sorted non-decreasing
  long long eval_count = 0;   // candidate points examined
  bool degenerate = false;    // fewer candidates than requested
};

namespace detail {

/// Bounded worst-on-top heap over (squared distance, id); ties prefer the
/// lower id so results are deterministic across runs and platforms.
class KBest {
 public:
  explicit KBest(int k) : k_(static_cast<size_t>(k)) { heap_.reserve(k_); }

  void offer(double d2, int id) {
    if (heap_.size() < k_) {
      heap_.push_back({d2, id});
      std::push_heap(heap_.begin(), heap_.end(), worse);
    } else if (better(d2, id, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), worse);
      heap_.back() = {d2, id};
      std::push_heap(heap_.begin(), heap_.end(), worse);
    }
  }

  /// Drains into (ids, dists) sorted ascending by (d2, id).
  void finish(NeighborSet& out) {
    std::sort(heap_.begin(), heap_.end(), [](const Entry& a, const Entry& b) {
      return a.d2 < b.d2 || (a.d2 == b.d2 && a.id < b.id);
    });
    out.ids.resize(heap_.size());
    out.dists.resize(heap_.size());
    for (size_t i = 0; i < heap_.size(); ++i) {
      out.ids[i] = heap_[i].id;
      out.dists[i] = std::sqrt(heap_[i].d2);
    }
  }

 private:
  struct Entry {
    double d2;
    int id;
  };
  static bool better(double d2, int id, const Entry& e) {
    return d2 < e.d2 || (d2 == e.d2 && id < e.id);
  }
  static bool worse(const Entry& a, const Entry& b) {
    return a.d2 < b.d2 || (a.d2 == b.d2 && a.id < b.id);
  }
  size_t k_;
  std::vector<Entry> heap_;
};

}  // namespace detail

/// Exact K nearest neighbors (3D Euclidean) among the points inside the
/// window around the query's cell. Columns wrap across the azimuth seam
/// unless `wrap` is false (test hook). eval_count is the number of
/// candidates whose distance was computed.
inline NeighborSet local_window_knn(const GridIndex& index, int query_id,
                                    int k, int half_w, int half_h,
                                    bool wrap = true) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  const RangeImage& img = index.image;
  const PointCloud& cloud = *index.source;
  if (query_id < 0 || static_cast<size_t>(query_id) >= cloud.size() ||
      img.point_col[static_cast<size_t>(query_id)] < 0)
    throw std::invalid_argument("query point is not inside the grid");

  const GridSpec& spec = img.spec;
  const int qcol = img.point_col[static_cast<size_t>(query_id)];
  const int qrow = img.point_row[static_cast<size_t>(query_id)];
  const Point& q = cloud.points[static_cast<size_t>(query_id)];

  NeighborSet out;
  out.query_id = query_id;
  detail::KBest best(k);

  const int row_lo = std::max(0, qrow - half_h);
  const int row_hi = std::min(spec.height - 1, qrow + half_h);
  const long long span = 2LL * half_w + 1;

  // Per row: one or two contiguous column runs in the CSR layout.
  std::array<std::pair<int, int>, 2> runs;  // inclusive [lo, hi] columns
  int n_runs;
  if (span >= spec.width) {
    runs[0] = {0, spec.width - 1};
    n_runs = 1;
  } else if (!wrap) {
    runs[0] = {std::max(0, qcol - half_w), std::min(spec.width - 1, qcol + half_w)};
    n_runs = 1;
  } else {
    const int lo = qcol - half_w;
    const int hi = qcol + half_w;
    if (lo >= 0 && hi < spec.width) {
      runs[0] = {lo, hi};
      n_runs = 1;
    } else {
      runs[0] = {wrap_col(lo, spec.width), spec.width - 1};
      runs[1] = {0, wrap_col(hi, spec.width)};
      n_runs = 2;
    }
  }

  for (int row = row_lo; row <= row_hi; ++row) {
    for (int ri = 0; ri < n_runs; ++ri) {
      const int c0 = spec.cell_index(runs[static_cast<size_t>(ri)].first, row);
      const int c1 = spec.cell_index(runs[static_cast<size_t>(ri)].second, row);
      const int begin = img.cell_start[static_cast<size_t>(c0)];
      const int end = img.cell_start[static_cast<size_t>(c1) + 1];
      for (int it = begin; it < end; ++it) {
        const int id = img.cell_points[static_cast<size_t>(it)];
        if (id == query_id) continue;
        ++out.eval_count;
        best.offer(squared_dist(q, cloud.points[static_cast<size_t>(id)]), id);
      }
    }
  }
  best.finish(out);
  out.degenerate = static_cast<int>(out.ids.size()) < k;
  return out;
}

/// Exact K nearest over every other point of the cloud; eval_count = N-1.
inline NeighborSet global_knn_bruteforce(const PointCloud& cloud, int query_id,
                                         int k) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  if (query_id < 0 || static_cast<size_t>(query_id) >= cloud.size())
    throw std::invalid_argument("query id out of range");
  NeighborSet out;
  out.query_id = query_id;
  const Point& q = cloud.points[static_cast<size_t>(query_id)];
  detail::KBest best(k);
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (static_cast<int>(i) == query_id) continue;
    ++out.eval_count;
    best.offer(squared_dist(q, cloud.points[i]), static_cast<int>(i));
  }
  best.finish(out);
  out.degenerate = static_cast<int>(out.ids.size()) < k;
  return out;
}

struct VoxelFeature {
  std::vector<std::array<double, 4>> features;  // per point: pooled x,y,z,i
  double voxel_size = 0.0;
};

/// Per-point mean of (x, y, z, intensity) over the cubic voxel the point
/// falls in, keyed by floor(coord / voxel_size).
inline VoxelFeature voxel_mean_pool(const PointCloud& cloud,
                                    double voxel_size) {
  if (!(voxel_size > 0.0))
    throw std::invalid_argument("voxel_size must be > 0");
  struct Accum {
    double sum[4] = {0, 0, 0, 0};
    int count = 0;
  };
  using VoxelKey = std::array<int64_t, 3>;
  struct KeyHash {
    size_t operator()(const VoxelKey& k) const {
      uint64_t h = 1469598103934665603ull;
      for (int64_t v : k) {
        h ^= static_cast<uint64_t>(v);
        h *= 1099511628211ull;
      }
      return static_cast<size_t>(h);
    }
  };
  auto key_of = [voxel_size](const Point& p) {
    return VoxelKey{static_cast<int64_t>(std::floor(p.x / voxel_size)),
                    static_cast<int64_t>(std::floor(p.y / voxel_size)),
                    static_cast<int64_t>(std::floor(p.z / voxel_size))};
  };
  std::unordered_map<VoxelKey, Accum, KeyHash> groups;
  groups.reserve(cloud.size());
  for (const Point& p : cloud.points) {
    Accum& a = groups[key_of(p)];
    a.sum[0] += p.x;
    a.sum[1] += p.y;
    a.sum[2] += p.z;
    a.sum[3] += p.intensity;
    ++a.count;
  }
  VoxelFeature out;
  out.voxel_size = voxel_size;
  out.features.resize(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Accum& a = groups[key_of(cloud.points[i])];
    for (int j = 0; j < 4; ++j)
      out.features[i][static_cast<size_t>(j)] = a.sum[j] / a.count;
  }
  return out;
}

struct KnnBenchReport {
  long long total_evals_local = 0;
  long long total_evals_global = 0;
  double ratio = 0.0;
};

/// Sums distance evaluations over every gridded query for the windowed
/// search and for the global brute force (N-1 per query by definition).
inline KnnBenchReport bench_knn(const GridIndex& index, int k, int half_w,
                                int half_h) {
  const PointCloud& cloud = *index.source;
  if (cloud.empty()) throw std::invalid_argument("empty index");
  KnnBenchReport rep;
  const long long n = static_cast<long long>(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (index.image.point_col[i] < 0) continue;
    const NeighborSet ns =
        local_window_knn(index, static_cast<int>(i), k, half_w, half_h);
    rep.total_evals_local += ns.eval_count;
    rep.total_evals_global += n - 1;
  }
  rep.ratio = rep.total_evals_global > 0
                  ? static_cast<double>(rep.total_evals_local) /
                        static_cast<double>(rep.total_evals_global)
                  : 0.0;
  return rep;
}

inline std::string format_bench_report(const KnnBenchReport& rep) {
  std::string s;
  s += "knn-bench total_evals_local=" + std::to_string(rep.total_evals_local);
  s += " total_evals_global=" + std::to_string(rep.total_evals_global);
  s += " ratio=" + std::to_string(rep.ratio);
  return s;
}

}  // namespace geocue
