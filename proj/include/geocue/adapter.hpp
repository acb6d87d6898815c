#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "geocue/knn.hpp"
#include "geocue/nn.hpp"
#include "geocue/parallel.hpp"
#include "geocue/point_cloud.hpp"

namespace geocue {

/// Point-mixing input: [p_i, p_k, p_i - p_k, mu, d1, d2].
inline constexpr int kMixInputDim = 14;
/// Voxel-pooled feature: mean (x, y, z, intensity).
inline constexpr int kVoxelFeatureDim = 4;

struct AdapterDims {
  int hidden = 32;      // phi_p hidden width
  int feature_dim = 32; // F, mixed-feature width
  int cue_hidden = 32;  // output MLP hidden width
  int cue_dim = 16;     // F_g, learned part of the cue

  int cue_total() const { return cue_dim + 3; }  // learned part + raw p_i
};

struct AdapterParams {
  AdapterDims dims;
  Mlp phi_p;      // kMixInputDim -> hidden -> feature_dim
  Dense fc_att;   // feature_dim -> 1
  Mlp mlp_out;    // kVoxelFeatureDim + feature_dim -> cue_hidden -> cue_dim

  static AdapterParams make(const AdapterDims& dims, uint64_t seed) {
    AdapterParams p;
    p.dims = dims;
    Rng rng(seed);
    p.phi_p = Mlp::make({kMixInputDim, dims.hidden, dims.feature_dim}, rng);
    p.fc_att.resize(1, dims.feature_dim);
    p.fc_att.init(rng);
    p.mlp_out = Mlp::make(
        {kVoxelFeatureDim + dims.feature_dim, dims.cue_hidden, dims.cue_dim},
        rng);
    // Metric-scale conditioning: the mixing inputs carry raw coordinates in
    // meters (tens at scene scale). Shrinking their input-layer columns
    // keeps the first activations O(1); otherwise the attention softmax
    // starts saturated and the cue head output swamps the backbone.
    scale_columns(p.phi_p.layers[0], 0, 12, kCoordColumnScale);
    scale_columns(p.mlp_out.layers[0], 0, 3, kCoordColumnScale);
    return p;
  }

  static constexpr double kCoordColumnScale = 0.02;

  static void scale_columns(Dense& d, int col_lo, int col_hi, double s) {
    for (int o = 0; o < d.rows; ++o)
      for (int i = col_lo; i < col_hi; ++i)
        d.w[static_cast<size_t>(o) * d.cols + static_cast<size_t>(i)] *= s;
  }

  std::vector<const Dense*> layers() const {
    return {&phi_p.layers[0], &phi_p.layers[1], &fc_att, &mlp_out.layers[0],
            &mlp_out.layers[1]};
  }
  std::vector<Dense*> layers() {
    return {&phi_p.layers[0], &phi_p.layers[1], &fc_att, &mlp_out.layers[0],
            &mlp_out.layers[1]};
  }

  /// Restores dims from freshly loaded layer shapes.
  void sync_dims() {
    dims.hidden = phi_p.layers[0].rows;
    dims.feature_dim = phi_p.layers[1].rows;
    dims.cue_hidden = mlp_out.layers[0].rows;
    dims.cue_dim = mlp_out.layers[1].rows;
  }
};

inline constexpr const char* kAdapterMagic = "LGA1";

struct DispersionCues {
  Vec3 mu;          // windowed local mean of neighbor coordinates
  double d1 = 0.0;  // ||p_i - mu||
  double d2 = 0.0;  // mean_k ||p_k - mu||
};

inline DispersionCues dispersion(const Vec3& query,
                                 std::span<const Vec3> neighbors) {
  if (neighbors.empty())
    throw std::invalid_argument("degenerate neighborhood");
  DispersionCues out;
  for (const Vec3& n : neighbors) out.mu += n;
  out.mu = out.mu * (1.0 / static_cast<double>(neighbors.size()));
  out.d1 = (query - out.mu).norm();
  double acc = 0.0;
  for (const Vec3& n : neighbors) acc += (n - out.mu).norm();
  out.d2 = acc / static_cast<double>(neighbors.size());
  return out;
}

inline std::array<double, kMixInputDim> mix_input(const Vec3& p_i,
                                                  const Vec3& p_k,
                                                  const DispersionCues& c) {
  return {p_i.x, p_i.y,           p_i.z,           p_k.x,  p_k.y,
          p_k.z, p_i.x - p_k.x,   p_i.y - p_k.y,   p_i.z - p_k.z,
          c.mu.x, c.mu.y,         c.mu.z,          c.d1,   c.d2};
}

/// Eq.-style point mixing: concatenated geometry through phi_p.
inline std::vector<double> mix_point(const Vec3& p_i, const Vec3& p_k,
                                     const DispersionCues& cues,
                                     const AdapterParams& params) {
  const auto x = mix_input(p_i, p_k, cues);
  for (double v : x)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature");
  std::vector<double> scratch(params.phi_p.scratch_size());
  std::vector<double> out(static_cast<size_t>(params.dims.feature_dim));
  params.phi_p.forward(x.data(), scratch.data(), out.data());
  return out;
}

struct AttentionResult {
  std::vector<double> att;   // K weights, non-negative, sum 1
  std::vector<double> f_pt;  // pooled feature, length F
};

/// Softmax attention over the K mixed rows; `ell` is K x F row-major.
inline AttentionResult attention_pool(const std::vector<double>& ell, int k,
                                      const AdapterParams& params) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  const int f = params.dims.feature_dim;
  if (ell.size() != static_cast<size_t>(k) * static_cast<size_t>(f))
    throw std::invalid_argument("ell shape mismatch");
  AttentionResult res;
  res.att.resize(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    double a = params.fc_att.b[0];
    const double* row = ell.data() + static_cast<size_t>(j) * f;
    for (int i = 0; i < f; ++i) a += params.fc_att.w[static_cast<size_t>(i)] * row[i];
    res.att[static_cast<size_t>(j)] = a;
  }
  softmax_inplace(res.att.data(), k);
  res.f_pt.assign(static_cast<size_t>(f), 0.0);
  for (int j = 0; j < k; ++j) {
    const double c = res.att[static_cast<size_t>(j)];
    const double* row = ell.data() + static_cast<size_t>(j) * f;
    for (int i = 0; i < f; ++i) res.f_pt[static_cast<size_t>(i)] += c * row[i];
  }
  return res;
}

/// Cue head: MLP(v ++ f_pt) with the raw coordinates appended.
inline std::vector<double> cue(const std::array<double, kVoxelFeatureDim>& v,
                               const std::vector<double>& f_pt,
                               const Vec3& p_i, const AdapterParams& params) {
  if (f_pt.size() != static_cast<size_t>(params.dims.feature_dim))
    throw std::invalid_argument("f_pt shape mismatch");
  std::vector<double> u;
  u.reserve(static_cast<size_t>(kVoxelFeatureDim + params.dims.feature_dim));
  u.insert(u.end(), v.begin(), v.end());
  u.insert(u.end(), f_pt.begin(), f_pt.end());
  for (double x : u)
    if (!std::isfinite(x)) throw std::invalid_argument("non-finite feature");
  std::vector<double> scratch(params.mlp_out.scratch_size());
  std::vector<double> g(static_cast<size_t>(params.dims.cue_total()));
  params.mlp_out.forward(u.data(), scratch.data(), g.data());
  g[static_cast<size_t>(params.dims.cue_dim) + 0] = p_i.x;
  g[static_cast<size_t>(params.dims.cue_dim) + 1] = p_i.y;
  g[static_cast<size_t>(params.dims.cue_dim) + 2] = p_i.z;
  return g;
}

struct FrameStats {
  double d1_median = 0.0;
  double d2_median = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo =
        *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
    m = 0.5 * (lo + m);
  }
  return m;
}

/// Median-normalized mean of the two dispersion indicators, clamped to
/// [0,1]; 0 for a perfectly regular neighborhood, 0.5 at the frame medians.
inline double vulnerability_score(double d1, double d2,
                                  const FrameStats& stats) {
  constexpr double eps = 1e-6;
  const double a = d1 / (stats.d1_median + eps);
  const double b = d2 / (stats.d2_median + eps);
  return std::clamp((a + b) / 4.0, 0.0, 1.0);
}

/// Per-point outputs of a full adapter pass (structure-of-arrays).
struct GeometryCues {
  int n = 0;
  int k = 0;
  int feature_dim = 0;
  int cue_total = 0;
  std::vector<int> neighbor_ids;    // n*k, repeat-padded
  std::vector<double> mu;           // n*3
  std::vector<double> d1, d2, s;    // n
  std::vector<double> ell;          // n*k*feature_dim when kept, else empty
  std::vector<double> att;          // n*k
  std::vector<double> f_pt;         // n*feature_dim
  std::vector<double> g;            // n*cue_total
  std::vector<uint8_t> degenerate;  // n
  FrameStats stats;

  const double* g_row(int i) const {
    return g.data() + static_cast<size_t>(i) * static_cast<size_t>(cue_total);
  }
};

struct AdapterOptions {
  int k = 16;
  int half_w = 128;
  int half_h = 4;
  double voxel_size = 0.3;
  bool wrap = true;
  bool keep_ell = false;
  int workers = 1;
  int blocks = 64;  // fixed partition; results do not depend on workers
};

/// Forward cache for adapter_backward.
struct AdapterCache {
  VoxelFeature voxels;
  bool built = false;
};

namespace detail {

/// Neighbor ids for one query, repeat-padded to K. A point with no window
/// candidates (or outside the grid) falls back to itself as sole neighbor,
/// which collapses the neighborhood to mu = p, d1 = d2 = 0.
inline void padded_neighbors(const GridIndex& index, int i, int k, int half_w,
                             int half_h, bool wrap, int* ids_out,
                             bool& degenerate) {
  const bool in_grid = index.image.point_col[static_cast<size_t>(i)] >= 0;
  NeighborSet ns;
  if (in_grid) ns = local_window_knn(index, i, k, half_w, half_h, wrap);
  degenerate = !in_grid || ns.degenerate;
  if (ns.ids.empty()) {
    for (int j = 0; j < k; ++j) ids_out[j] = i;
    return;
  }
  for (int j = 0; j < k; ++j)
    ids_out[j] = j < static_cast<int>(ns.ids.size()) ? ns.ids[static_cast<size_t>(j)]
                                                     : ns.ids[0];
}

}  // namespace detail

/// Full per-point pass: voxel pooling, windowed KNN, dispersion cues,
/// point mixing, attention pooling, cue head, vulnerability score.
/// Deterministic given inputs; safe to run with any worker count.
inline GeometryCues adapter_forward(const PointCloud& cloud,
                                    const GridIndex& index,
                                    const AdapterParams& params,
                                    const AdapterOptions& opts,
                                    AdapterCache* cache = nullptr) {
  if (index.source != &cloud ||
      index.image.point_col.size() != cloud.size())
    throw std::invalid_argument("index was not built from this cloud");
  if (opts.k < 1) throw std::invalid_argument("K must be >= 1");

  const int n = static_cast<int>(cloud.size());
  const int k = opts.k;
  const int f = params.dims.feature_dim;
  GeometryCues cues;
  cues.n = n;
  cues.k = k;
  cues.feature_dim = f;
  cues.cue_total = params.dims.cue_total();
  cues.neighbor_ids.assign(static_cast<size_t>(n) * k, 0);
  cues.mu.assign(static_cast<size_t>(n) * 3, 0.0);
  cues.d1.assign(static_cast<size_t>(n), 0.0);
  cues.d2.assign(static_cast<size_t>(n), 0.0);
  cues.s.assign(static_cast<size_t>(n), 0.0);
  cues.att.assign(static_cast<size_t>(n) * k, 0.0);
  cues.f_pt.assign(static_cast<size_t>(n) * f, 0.0);
  cues.g.assign(static_cast<size_t>(n) * cues.cue_total, 0.0);
  cues.degenerate.assign(static_cast<size_t>(n), 0);
  if (opts.keep_ell)
    cues.ell.assign(static_cast<size_t>(n) * k * f, 0.0);

  const VoxelFeature voxels = voxel_mean_pool(cloud, opts.voxel_size);

  // Phase A: neighborhoods and dispersion.
  parallel_for_blocks(
      static_cast<size_t>(n), opts.blocks, opts.workers,
      [&](int, size_t lo, size_t hi) {
        std::vector<Vec3> nb(static_cast<size_t>(k));
        for (size_t i = lo; i < hi; ++i) {
          int* ids = cues.neighbor_ids.data() + i * static_cast<size_t>(k);
          bool deg = false;
          detail::padded_neighbors(index, static_cast<int>(i), k, opts.half_w,
                                   opts.half_h, opts.wrap, ids, deg);
          cues.degenerate[i] = deg ? 1 : 0;
          for (int j = 0; j < k; ++j)
            nb[static_cast<size_t>(j)] =
                cloud.points[static_cast<size_t>(ids[j])].xyz();
          const DispersionCues d =
              dispersion(cloud.points[i].xyz(), std::span<const Vec3>(nb));
          cues.mu[i * 3 + 0] = d.mu.x;
          cues.mu[i * 3 + 1] = d.mu.y;
          cues.mu[i * 3 + 2] = d.mu.z;
          cues.d1[i] = d.d1;
          cues.d2[i] = d.d2;
        }
      });

  cues.stats.d1_median = median_of(cues.d1);
  cues.stats.d2_median = median_of(cues.d2);
  for (int i = 0; i < n; ++i)
    cues.s[static_cast<size_t>(i)] = vulnerability_score(
        cues.d1[static_cast<size_t>(i)], cues.d2[static_cast<size_t>(i)],
        cues.stats);

  // Phase B: mixing, attention, cue head.
  parallel_for_blocks(
      static_cast<size_t>(n), opts.blocks, opts.workers,
      [&](int, size_t lo, size_t hi) {
        std::vector<double> ell(static_cast<size_t>(k) * f);
        std::vector<double> scratch(
            std::max(params.phi_p.scratch_size(),
                     params.mlp_out.scratch_size()));
        std::vector<double> u(static_cast<size_t>(kVoxelFeatureDim + f));
        for (size_t i = lo; i < hi; ++i) {
          const Vec3 p = cloud.points[i].xyz();
          DispersionCues dc;
          dc.mu = {cues.mu[i * 3 + 0], cues.mu[i * 3 + 1], cues.mu[i * 3 + 2]};
          dc.d1 = cues.d1[i];
          dc.d2 = cues.d2[i];
          const int* ids = cues.neighbor_ids.data() + i * static_cast<size_t>(k);
          for (int j = 0; j < k; ++j) {
            const auto x = mix_input(
                p, cloud.points[static_cast<size_t>(ids[j])].xyz(), dc);
            params.phi_p.forward(x.data(), scratch.data(),
                                 ell.data() + static_cast<size_t>(j) * f);
          }
          if (opts.keep_ell)
            std::copy(ell.begin(), ell.end(),
                      cues.ell.begin() +
                          i * static_cast<size_t>(k) * static_cast<size_t>(f));
          // Attention over the K rows.
          double* att = cues.att.data() + i * static_cast<size_t>(k);
          for (int j = 0; j < k; ++j) {
            double a = params.fc_att.b[0];
            const double* row = ell.data() + static_cast<size_t>(j) * f;
            for (int c2 = 0; c2 < f; ++c2)
              a += params.fc_att.w[static_cast<size_t>(c2)] * row[c2];
            att[j] = a;
          }
          softmax_inplace(att, k);
          double* fp = cues.f_pt.data() + i * static_cast<size_t>(f);
          std::fill(fp, fp + f, 0.0);
          for (int j = 0; j < k; ++j) {
            const double c2 = att[j];
            const double* row = ell.data() + static_cast<size_t>(j) * f;
            for (int q = 0; q < f; ++q) fp[q] += c2 * row[q];
          }
          // Cue head.
          const auto& v = voxels.features[i];
          std::copy(v.begin(), v.end(), u.begin());
          std::copy(fp, fp + f, u.begin() + kVoxelFeatureDim);
          double* g = cues.g.data() + i * static_cast<size_t>(cues.cue_total);
          params.mlp_out.forward(u.data(), scratch.data(), g);
          g[params.dims.cue_dim + 0] = p.x;
          g[params.dims.cue_dim + 1] = p.y;
          g[params.dims.cue_dim + 2] = p.z;
        }
      });

  if (cache) {
    cache->voxels = voxels;
    cache->built = true;
  }
  return cues;
}

struct AdapterGrads {
  MlpGrads phi_p;
  std::vector<double> fc_att_w;
  double fc_att_b = 0.0;
  MlpGrads mlp_out;

  static AdapterGrads zeros_like(const AdapterParams& p) {
    AdapterGrads g;
    g.phi_p = MlpGrads::zeros_like(p.phi_p);
    g.fc_att_w.assign(p.fc_att.w.size(), 0.0);
    g.mlp_out = MlpGrads::zeros_like(p.mlp_out);
    return g;
  }

  void add(const AdapterGrads& o) {
    phi_p.add(o.phi_p);
    for (size_t i = 0; i < fc_att_w.size(); ++i) fc_att_w[i] += o.fc_att_w[i];
    fc_att_b += o.fc_att_b;
    mlp_out.add(o.mlp_out);
  }

  void scale(double sc) {
    phi_p.scale(sc);
    for (double& v : fc_att_w) v *= sc;
    fc_att_b *= sc;
    mlp_out.scale(sc);
  }

  double squared_norm() const {
    double acc = phi_p.squared_norm() + mlp_out.squared_norm();
    for (double v : fc_att_w) acc += v * v;
    acc += fc_att_b * fc_att_b;
    return acc;
  }
};

/// Reverse-mode gradients of a scalar loss with respect to the adapter
/// parameters, given dL/dg for every point. Neighbor selection and the
/// dispersion statistics are treated as constants. Intermediate activations
/// are recomputed from the cached forward outputs rather than stored.
inline AdapterGrads adapter_backward(const PointCloud& cloud,
                                     const GeometryCues& cues,
                                     const AdapterCache& cache,
                                     const AdapterParams& params,
                                     const std::vector<double>& dLdg,
                                     int workers = 1, int blocks = 64) {
  if (!cache.built) throw std::logic_error("missing forward cache");
  const int n = cues.n;
  const int k = cues.k;
  const int f = cues.feature_dim;
  if (dLdg.size() != static_cast<size_t>(n) * cues.cue_total)
    throw std::invalid_argument("upstream gradient shape mismatch");
  if (cache.voxels.features.size() != cloud.size())
    throw std::logic_error("cache does not match cloud");

  std::vector<AdapterGrads> partial(
      static_cast<size_t>(std::max(1, blocks)),
      AdapterGrads::zeros_like(params));

  parallel_for_blocks(
      static_cast<size_t>(n), blocks, workers,
      [&](int block, size_t lo, size_t hi) {
        AdapterGrads& acc = partial[static_cast<size_t>(block)];
        const size_t phi_scratch = params.phi_p.scratch_size();
        std::vector<double> ell(static_cast<size_t>(k) * f);
        std::vector<double> scratch_all(static_cast<size_t>(k) * phi_scratch);
        std::vector<double> scratch_out(params.mlp_out.scratch_size());
        std::vector<double> u(static_cast<size_t>(kVoxelFeatureDim + f));
        std::vector<double> mlp_head_out(static_cast<size_t>(params.dims.cue_dim));
        std::vector<double> du(u.size());
        std::vector<double> dell(static_cast<size_t>(f));
        std::vector<std::array<double, kMixInputDim>> xrows(
            static_cast<size_t>(k));
        for (size_t i = lo; i < hi; ++i) {
          const Vec3 p = cloud.points[i].xyz();
          DispersionCues dc;
          dc.mu = {cues.mu[i * 3 + 0], cues.mu[i * 3 + 1], cues.mu[i * 3 + 2]};
          dc.d1 = cues.d1[i];
          dc.d2 = cues.d2[i];
          const int* ids = cues.neighbor_ids.data() + i * static_cast<size_t>(k);
          for (int j = 0; j < k; ++j)
            xrows[static_cast<size_t>(j)] = mix_input(
                p, cloud.points[static_cast<size_t>(ids[j])].xyz(), dc);

          // Head backward: u = [v, f_pt] -> mlp_out -> g[0..cue_dim).
          const auto& v = cache.voxels.features[i];
          std::copy(v.begin(), v.end(), u.begin());
          const double* fp = cues.f_pt.data() + i * static_cast<size_t>(f);
          std::copy(fp, fp + f, u.begin() + kVoxelFeatureDim);
          params.mlp_out.forward(u.data(), scratch_out.data(),
                                 mlp_head_out.data());
          const double* dg =
              dLdg.data() + i * static_cast<size_t>(cues.cue_total);
          mlp_backward(params.mlp_out, u.data(), scratch_out.data(), dg,
                       acc.mlp_out, du.data());
          // df_pt is the tail of du; the voxel part has no parameters.
          const double* dfp = du.data() + kVoxelFeatureDim;

          // Recompute mixed rows, keeping each row's pre-activations.
          const double* att = cues.att.data() + i * static_cast<size_t>(k);
          for (int j = 0; j < k; ++j)
            params.phi_p.forward(xrows[static_cast<size_t>(j)].data(),
                                 scratch_all.data() +
                                     static_cast<size_t>(j) * phi_scratch,
                                 ell.data() + static_cast<size_t>(j) * f);

          // Attention backward.
          double sum_cdc = 0.0;
          static thread_local std::vector<double> dcvec;
          dcvec.assign(static_cast<size_t>(k), 0.0);
          for (int j = 0; j < k; ++j) {
            const double* row = ell.data() + static_cast<size_t>(j) * f;
            double dcj = 0.0;
            for (int q = 0; q < f; ++q) dcj += row[q] * dfp[q];
            dcvec[static_cast<size_t>(j)] = dcj;
            sum_cdc += att[j] * dcj;
          }
          for (int j = 0; j < k; ++j) {
            const double* row = ell.data() + static_cast<size_t>(j) * f;
            const double dalpha =
                att[j] * (dcvec[static_cast<size_t>(j)] - sum_cdc);
            // fc_att gradients.
            for (int q = 0; q < f; ++q)
              acc.fc_att_w[static_cast<size_t>(q)] += dalpha * row[q];
            acc.fc_att_b += dalpha;
            // d ell_j = c_j * df_pt + dalpha * w_att.
            for (int q = 0; q < f; ++q)
              dell[static_cast<size_t>(q)] =
                  att[j] * dfp[q] +
                  dalpha * params.fc_att.w[static_cast<size_t>(q)];
            mlp_backward(params.phi_p, xrows[static_cast<size_t>(j)].data(),
                         scratch_all.data() + static_cast<size_t>(j) * phi_scratch,
                         dell.data(), acc.phi_p, nullptr);
          }
        }
      });

  AdapterGrads total = AdapterGrads::zeros_like(params);
  for (const AdapterGrads& g : partial) total.add(g);
  return total;
}

}  // namespace geocue
