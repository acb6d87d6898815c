#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "geocue/adapter.hpp"
#include "geocue/nn.hpp"
#include "geocue/point_cloud.hpp"
#include "geocue/range_image.hpp"
#include "geocue/rng.hpp"

namespace geocue {

/// A contiguous tile of the range grid; the unit of drop decisions.
struct Region {
  int id = 0;
  int col_lo = 0, col_hi = 0;  // inclusive column block
  int row_lo = 0, row_hi = 0;  // inclusive row block
  std::vector<CellRef> cells;
  std::vector<int> point_ids;
  std::vector<double> feature;  // [mean g, mean s, mean d1, mean d2,
                                //  occupancy, mean range]
  bool empty_region = false;
};

inline int region_feature_dim(int cue_total) { return cue_total + 5; }

/// Tiles the grid into n_az x n_el contiguous blocks (azimuth blocks abut
/// circularly across the seam) and averages cue fields over the members.
/// Every gridded point lands in exactly one region; empty blocks are
/// emitted with zero features and flagged.
inline std::vector<Region> build_regions(const PointCloud& cloud,
                                         const GeometryCues& cues,
                                         const RangeImage& grid, int n_az,
                                         int n_el) {
  if (n_az < 1 || n_el < 1)
    throw std::invalid_argument("region tiling must be >= 1 per axis");
  if (n_az > grid.spec.width || n_el > grid.spec.height)
    throw std::invalid_argument("more region blocks than grid cells");
  if (static_cast<size_t>(cues.n) != cloud.size() ||
      grid.point_col.size() != cloud.size())
    throw std::invalid_argument("cues/grid do not match the cloud");

  const int width = grid.spec.width;
  const int height = grid.spec.height;
  auto block_of = [](int idx, int total, int blocks) {
    // Block boundaries of an even split with the remainder spread left.
    const long long b = (static_cast<long long>(idx) * blocks) / total;
    return static_cast<int>(b);
  };
  auto block_range = [](int b, int total, int blocks) {
    const int lo = static_cast<int>(
        (static_cast<long long>(b) * total + blocks - 1) / blocks);
    // First index of the next block minus one.
    const int next = static_cast<int>(
        (static_cast<long long>(b + 1) * total + blocks - 1) / blocks);
    return std::pair<int, int>(lo, next - 1);
  };

  const int fdim = region_feature_dim(cues.cue_total);
  std::vector<Region> regions(static_cast<size_t>(n_az) * n_el);
  for (int e = 0; e < n_el; ++e) {
    for (int a = 0; a < n_az; ++a) {
      Region& r = regions[static_cast<size_t>(e) * n_az + a];
      r.id = e * n_az + a;
      auto [clo, chi] = block_range(a, width, n_az);
      auto [rlo, rhi] = block_range(e, height, n_el);
      r.col_lo = clo;
      r.col_hi = chi;
      r.row_lo = rlo;
      r.row_hi = rhi;
      r.cells.reserve(static_cast<size_t>(chi - clo + 1) *
                      static_cast<size_t>(rhi - rlo + 1));
      for (int row = rlo; row <= rhi; ++row)
        for (int col = clo; col <= chi; ++col) r.cells.push_back({col, row});
      r.feature.assign(static_cast<size_t>(fdim), 0.0);
    }
  }

  size_t gridded = 0;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (grid.point_col[i] < 0) continue;
    ++gridded;
    const int a = block_of(grid.point_col[i], width, n_az);
    const int e = block_of(grid.point_row[i], height, n_el);
    regions[static_cast<size_t>(e) * n_az + a].point_ids.push_back(
        static_cast<int>(i));
  }

  for (Region& r : regions) {
    if (r.point_ids.empty()) {
      r.empty_region = true;
      continue;
    }
    const double inv = 1.0 / static_cast<double>(r.point_ids.size());
    for (int id : r.point_ids) {
      const double* g = cues.g_row(id);
      for (int j = 0; j < cues.cue_total; ++j)
        r.feature[static_cast<size_t>(j)] += g[j] * inv;
      r.feature[static_cast<size_t>(cues.cue_total) + 0] +=
          cues.s[static_cast<size_t>(id)] * inv;
      r.feature[static_cast<size_t>(cues.cue_total) + 1] +=
          cues.d1[static_cast<size_t>(id)] * inv;
      r.feature[static_cast<size_t>(cues.cue_total) + 2] +=
          cues.d2[static_cast<size_t>(id)] * inv;
      r.feature[static_cast<size_t>(cues.cue_total) + 4] +=
          grid.ranges[static_cast<size_t>(id)] * inv;
    }
    r.feature[static_cast<size_t>(cues.cue_total) + 3] =
        gridded > 0 ? static_cast<double>(r.point_ids.size()) /
                          static_cast<double>(gridded)
                    : 0.0;
  }
  return regions;
}

/// Frame-level uncertainty aggregates fed to the Q state.
struct USummary {
  double mean_entropy = 0.0;
  double max_entropy = 0.0;
  std::vector<double> region_mean;  // per region
};

inline USummary summarize_uncertainty(const std::vector<double>& entropy,
                                      const std::vector<Region>& regions) {
  USummary u;
  if (!entropy.empty()) {
    double acc = 0.0, mx = 0.0;
    for (double e : entropy) {
      acc += e;
      mx = std::max(mx, e);
    }
    u.mean_entropy = acc / static_cast<double>(entropy.size());
    u.max_entropy = mx;
  }
  u.region_mean.assign(regions.size(), 0.0);
  for (size_t r = 0; r < regions.size(); ++r) {
    const Region& reg = regions[r];
    if (reg.point_ids.empty()) continue;
    double acc = 0.0;
    for (int id : reg.point_ids) acc += entropy[static_cast<size_t>(id)];
    u.region_mean[r] = acc / static_cast<double>(reg.point_ids.size());
  }
  return u;
}

/// State vector for one region: [F_k, mean entropy, max entropy,
/// region mean entropy].
inline std::vector<double> q_state(const Region& region, const USummary& u) {
  std::vector<double> s = region.feature;
  s.push_back(u.mean_entropy);
  s.push_back(u.max_entropy);
  s.push_back(u.region_mean[static_cast<size_t>(region.id)]);
  return s;
}

struct Transition {
  std::vector<double> state;
  int ratio_idx = 0;
  double reward = 0.0;
  std::vector<double> next_state;
};

/// FIFO replay buffer with bounded capacity.
struct ReplayBuffer {
  size_t capacity = 4096;
  std::vector<Transition> items;
  size_t write_pos = 0;

  void push(Transition t) {
    if (items.size() < capacity) {
      items.push_back(std::move(t));
    } else {
      items[write_pos] = std::move(t);
      write_pos = (write_pos + 1) % capacity;
    }
  }
};

/// Small action-value network over (region state, drop ratio); outputs one
/// value per ratio in the menu.
struct QFunction {
  Mlp net;
  Mlp target;
  std::vector<double> ratios{0.1, 0.25, 0.5, 0.75};
  ReplayBuffer buffer;
  double gamma = 0.9;
  double lr = 1e-3;
  long long target_sync = 100;
  long long update_count = 0;

  static QFunction make(int state_dim, int hidden,
                        const std::vector<double>& ratios, uint64_t seed) {
    QFunction q;
    if (ratios.empty()) throw std::invalid_argument("empty ratio menu");
    q.ratios = ratios;
    Rng rng(seed);
    q.net = Mlp::make({state_dim, hidden, static_cast<int>(ratios.size())},
                      rng);
    q.target = q.net;
    return q;
  }

  int n_ratios() const { return static_cast<int>(ratios.size()); }

  std::vector<double> values(const std::vector<double>& state) const {
    std::vector<double> scratch(net.scratch_size());
    std::vector<double> out(static_cast<size_t>(net.out_dim()));
    net.forward(state.data(), scratch.data(), out.data());
    return out;
  }
};

inline constexpr const char* kQMagic = "LGQ1";

struct Action {
  int region_id = 0;
  int ratio_idx = 0;
};

/// Epsilon-greedy argmax over (non-empty region, ratio) pairs; greedy ties
/// break toward the lowest (region, ratio).
inline Action select_action(const QFunction& q,
                            const std::vector<Region>& regions,
                            const USummary& u, double epsilon, Rng& rng) {
  if (epsilon < 0.0 || epsilon > 1.0)
    throw std::invalid_argument("epsilon must be in [0,1]");
  std::vector<int> usable;
  for (const Region& r : regions)
    if (!r.point_ids.empty()) usable.push_back(r.id);
  if (usable.empty()) throw std::runtime_error("no droppable region");

  const int nb = q.n_ratios();
  if (rng.u01() < epsilon) {
    const uint64_t pick =
        rng.below(static_cast<uint64_t>(usable.size()) * nb);
    return {usable[static_cast<size_t>(pick / nb)],
            static_cast<int>(pick % nb)};
  }

  Action best;
  double best_value = -std::numeric_limits<double>::infinity();
  bool first = true;
  for (int rid : usable) {
    const std::vector<double> vals =
        q.values(q_state(regions[static_cast<size_t>(rid)], u));
    for (int b = 0; b < nb; ++b) {
      if (first || vals[static_cast<size_t>(b)] > best_value) {
        best_value = vals[static_cast<size_t>(b)];
        best = {rid, b};
        first = false;
      }
    }
  }
  return best;
}

struct DropResult {
  PointCloud cloud;              // survivors, original order preserved
  std::vector<int> dropped_ids;  // sorted original indices
  std::vector<int> kept_ids;     // original index of each surviving point
};

/// Removes floor(ratio * |region|) uniformly chosen points of the region;
/// everything else passes through untouched, labels follow their points.
inline DropResult region_drop(const PointCloud& cloud, const Region& region,
                              double ratio, Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0)
    throw std::invalid_argument("drop ratio must be in [0,1]");
  const int n_member = static_cast<int>(region.point_ids.size());
  const int m = static_cast<int>(std::floor(ratio * n_member));
  DropResult res;
  std::vector<int> picks = rng.sample_without_replacement(n_member, m);
  res.dropped_ids.reserve(static_cast<size_t>(m));
  for (int p : picks)
    res.dropped_ids.push_back(region.point_ids[static_cast<size_t>(p)]);
  std::sort(res.dropped_ids.begin(), res.dropped_ids.end());

  std::vector<uint8_t> drop_mask(cloud.size(), 0);
  for (int id : res.dropped_ids) drop_mask[static_cast<size_t>(id)] = 1;
  res.cloud.frame_id = cloud.frame_id;
  res.cloud.points.reserve(cloud.size() - static_cast<size_t>(m));
  const bool labeled = cloud.has_labels();
  if (labeled) res.cloud.labels.reserve(cloud.size() - static_cast<size_t>(m));
  res.kept_ids.reserve(cloud.size() - static_cast<size_t>(m));
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (drop_mask[i]) continue;
    res.cloud.points.push_back(cloud.points[i]);
    if (labeled) res.cloud.labels.push_back(cloud.labels[i]);
    res.kept_ids.push_back(static_cast<int>(i));
  }
  return res;
}

/// Literal drop reward: post-drop loss minus pre-drop loss minus the
/// foreground penalty.
inline double reward(double loss_after, double loss_before, double gt_ratio,
                     double lambda) {
  if (!std::isfinite(loss_after) || !std::isfinite(loss_before))
    throw std::invalid_argument("losses must be finite");
  return loss_after - loss_before - lambda * gt_ratio;
}

/// Fraction of dropped points whose label is a foreground class; 0 when
/// nothing was dropped.
inline double gt_ratio(const std::vector<int>& dropped_ids,
                       const std::vector<uint16_t>& labels,
                       const std::vector<uint16_t>& foreground_classes) {
  if (dropped_ids.empty()) return 0.0;
  long long fg = 0;
  for (int id : dropped_ids) {
    const uint16_t lab = labels[static_cast<size_t>(id)];
    for (uint16_t f : foreground_classes)
      if (lab == f) {
        ++fg;
        break;
      }
  }
  return static_cast<double>(fg) / static_cast<double>(dropped_ids.size());
}

/// One SGD step on the mean squared TD error of a batch; syncs the target
/// network every `target_sync` updates. Returns the pre-step TD loss.
inline double q_update(QFunction& q, std::span<const Transition> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  MlpGrads grads = MlpGrads::zeros_like(q.net);
  std::vector<double> scratch(q.net.scratch_size());
  std::vector<double> vals(static_cast<size_t>(q.net.out_dim()));
  std::vector<double> tvals(static_cast<size_t>(q.net.out_dim()));
  std::vector<double> dvals(static_cast<size_t>(q.net.out_dim()));
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const Transition& t : batch) {
    q.net.forward(t.state.data(), scratch.data(), vals.data());
    {
      std::vector<double> tscratch(q.target.scratch_size());
      q.target.forward(t.next_state.data(), tscratch.data(), tvals.data());
    }
    const double target_value =
        t.reward + q.gamma * *std::max_element(tvals.begin(), tvals.end());
    const double delta = vals[static_cast<size_t>(t.ratio_idx)] - target_value;
    loss += delta * delta * inv_n;
    std::fill(dvals.begin(), dvals.end(), 0.0);
    dvals[static_cast<size_t>(t.ratio_idx)] = 2.0 * delta * inv_n;
    mlp_backward(q.net, t.state.data(), scratch.data(), dvals.data(), grads,
                 nullptr);
  }
  for (size_t l = 0; l < q.net.layers.size(); ++l) {
    for (size_t i = 0; i < q.net.layers[l].w.size(); ++i)
      q.net.layers[l].w[i] -= q.lr * grads.dw[l][i];
    for (size_t i = 0; i < q.net.layers[l].b.size(); ++i)
      q.net.layers[l].b[i] -= q.lr * grads.db[l][i];
  }
  ++q.update_count;
  if (q.update_count % q.target_sync == 0) q.target = q.net;
  return loss;
}

}  // namespace geocue
