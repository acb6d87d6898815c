#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "geocue/common.hpp"
#include "geocue/point_cloud.hpp"

namespace geocue {

struct GridSpec {
  int width = 1024;   // azimuth bins
  int height = 64;    // elevation bins
  double elev_min = deg_to_rad(-25.0);
  double elev_max = deg_to_rad(3.0);
  double azimuth_offset = 0.0;  // radians, [0, 2*pi)

  void validate() const {
    if (width < 2) throw std::invalid_argument("grid width must be >= 2");
    if (height < 1) throw std::invalid_argument("grid height must be >= 1");
    if (!(elev_min < elev_max))
      throw std::invalid_argument("elev_min must be < elev_max");
    if (azimuth_offset < 0.0 || azimuth_offset >= kTwoPi)
      throw std::invalid_argument("azimuth_offset must be in [0, 2*pi)");
  }

  int cell_index(int col, int row) const { return row * width + col; }
};

/// col mod width mapped into [0, width); correct for negative inputs.
inline int wrap_col(long long col, int width) {
  long long m = col % width;
  if (m < 0) m += width;
  return static_cast<int>(m);
}

struct CellRef {
  int col = 0;
  int row = 0;
  bool operator==(const CellRef&) const = default;
};

/// Cells of the window centered at `center`: columns wrap circularly, rows
/// clamp to the grid. No duplicates even when the column span saturates.
inline std::vector<CellRef> window_cells(CellRef center, int half_w,
                                         int half_h, const GridSpec& spec) {
  if (half_w < 0 || half_h < 0)
    throw std::invalid_argument("window half sizes must be >= 0");
  if (center.col < 0 || center.col >= spec.width || center.row < 0 ||
      center.row >= spec.height)
    throw std::invalid_argument("window center outside grid");
  const int row_lo = std::max(0, center.row - half_h);
  const int row_hi = std::min(spec.height - 1, center.row + half_h);
  const long long span = 2LL * half_w + 1;
  std::vector<CellRef> out;
  out.reserve(static_cast<size_t>(std::min<long long>(span, spec.width)) *
              static_cast<size_t>(row_hi - row_lo + 1));
  for (int row = row_lo; row <= row_hi; ++row) {
    if (span >= spec.width) {
      for (int col = 0; col < spec.width; ++col) out.push_back({col, row});
    } else {
      for (int d = -half_w; d <= half_w; ++d)
        out.push_back({wrap_col(center.col + d, spec.width), row});
    }
  }
  return out;
}

/// Azimuth/elevation grid over a point cloud. Cells are stored CSR-style in
/// row-major order so a window row is one or two contiguous id runs.
struct RangeImage {
  GridSpec spec;
  std::vector<int> cell_start;   // size width*height + 1
  std::vector<int> cell_points;  // point ids grouped per cell
  std::vector<int> point_col;    // -1 if out of bounds
  std::vector<int> point_row;
  std::vector<double> ranges;        // per input point
  std::vector<int> out_of_bounds;    // ids excluded from the grid

  int cell_count(int col, int row) const {
    const int c = spec.cell_index(col, row);
    return cell_start[static_cast<size_t>(c) + 1] -
           cell_start[static_cast<size_t>(c)];
  }

  std::pair<const int*, const int*> cell(int col, int row) const {
    const int c = spec.cell_index(col, row);
    return {cell_points.data() + cell_start[static_cast<size_t>(c)],
            cell_points.data() + cell_start[static_cast<size_t>(c) + 1]};
  }

  size_t gridded_count() const { return cell_points.size(); }
};

/// Azimuth of a point after the grid's seam shift, in [0, 2*pi).
inline double shifted_azimuth(const Point& p, const GridSpec& spec) {
  return wrap_angle(point_azimuth(p) - spec.azimuth_offset);
}

/// Bins every point into the grid. Azimuth bins are half-open [lo, hi);
/// the top elevation edge closes the last row so elev_max stays in-grid.
/// Points outside the elevation range, or at the exact origin, go to the
/// out-of-bounds list.
inline RangeImage spherical_project(const PointCloud& cloud,
                                    const GridSpec& spec) {
  spec.validate();
  RangeImage img;
  img.spec = spec;
  const size_t n = cloud.size();
  img.point_col.assign(n, -1);
  img.point_row.assign(n, -1);
  img.ranges.assign(n, 0.0);
  const int n_cells = spec.width * spec.height;
  std::vector<int> counts(static_cast<size_t>(n_cells), 0);

  const double elev_span = spec.elev_max - spec.elev_min;
  for (size_t i = 0; i < n; ++i) {
    const Point& p = cloud.points[i];
    const double r = point_range(p);
    img.ranges[i] = r;
    if (r == 0.0) {
      img.out_of_bounds.push_back(static_cast<int>(i));
      continue;
    }
    const double elev = std::asin(std::clamp(p.z / r, -1.0, 1.0));
    if (elev < spec.elev_min || elev > spec.elev_max) {
      img.out_of_bounds.push_back(static_cast<int>(i));
      continue;
    }
    const double az = shifted_azimuth(p, spec);
    int col = static_cast<int>(std::floor(spec.width * az / kTwoPi));
    col = std::min(col, spec.width - 1);
    int row = static_cast<int>(std::floor(spec.height * (elev - spec.elev_min) /
                                          elev_span));
    row = std::min(row, spec.height - 1);
    img.point_col[i] = col;
    img.point_row[i] = row;
    ++counts[static_cast<size_t>(spec.cell_index(col, row))];
  }

  img.cell_start.assign(static_cast<size_t>(n_cells) + 1, 0);
  for (int c = 0; c < n_cells; ++c)
    img.cell_start[static_cast<size_t>(c) + 1] =
        img.cell_start[static_cast<size_t>(c)] + counts[static_cast<size_t>(c)];
  img.cell_points.assign(static_cast<size_t>(img.cell_start.back()), 0);
  std::vector<int> cursor(img.cell_start.begin(), img.cell_start.end() - 1);
  for (size_t i = 0; i < n; ++i) {
    if (img.point_col[i] < 0) continue;
    const int c = spec.cell_index(img.point_col[i], img.point_row[i]);
    img.cell_points[static_cast<size_t>(cursor[static_cast<size_t>(c)]++)] =
        static_cast<int>(i);
  }
  return img;
}

/// Offset placing the column-0 seam in the middle of the widest empty
/// azimuth gap; among equally wide gaps the smallest offset wins.
inline double find_seam_offset(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("empty input");
  std::vector<double> az(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i)
    az[i] = point_azimuth(cloud.points[i]);
  std::sort(az.begin(), az.end());

  double best_gap = -1.0;
  double best_offset = 0.0;
  const size_t n = az.size();
  for (size_t i = 0; i < n; ++i) {
    const double cur = az[i];
    const double next = (i + 1 < n) ? az[i + 1] : az[0] + kTwoPi;
    const double gap = next - cur;
    const double mid = wrap_angle(cur + gap * 0.5);
    if (gap > best_gap || (gap == best_gap && mid < best_offset)) {
      best_gap = gap;
      best_offset = mid;
    }
  }
  return best_offset;
}

struct AlignResult {
  PointCloud cloud;  // geometry unchanged, order unchanged
  double offset = 0.0;
};

/// Chooses the seam offset for a cloud. Geometry passes through untouched;
/// the recorded offset makes the transform invertible
/// (raw azimuth = wrap(shifted + offset)).
inline AlignResult align_azimuth(const PointCloud& cloud) {
  AlignResult res;
  res.offset = find_seam_offset(cloud);
  res.cloud = cloud;
  return res;
}

}  // namespace geocue
