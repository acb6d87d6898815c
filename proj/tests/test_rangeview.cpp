#include <catch2/catch_amalgamated.hpp>

#include "geocue/range_image.hpp"
#include "oracles.hpp"

using namespace geocue;
using Catch::Approx;

TEST_CASE("wrap_col maps into [0,width) for negative inputs", "[rangeview]") {
  CHECK(wrap_col(-1, 512) == 511);
  CHECK(wrap_col(512, 512) == 0);
  CHECK(wrap_col(-1025, 512) == 511);
  CHECK(wrap_col(0, 1) == 0);
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const int w = 1 + static_cast<int>(rng.below(100));
    const long long c =
        static_cast<long long>(rng.below(10000)) - 5000;
    const int expect = static_cast<int>(((c % w) + w) % w);
    CHECK(wrap_col(c, w) == expect);
    CHECK(wrap_col(c + 3LL * w, w) == expect);
  }
}

TEST_CASE("window_cells wraps columns and clamps rows", "[rangeview]") {
  GridSpec spec;
  spec.width = 8;
  spec.height = 4;

  SECTION("seam crossing") {
    const auto cells = window_cells({0, 2}, 1, 0, spec);
    REQUIRE(cells.size() == 3);
    std::vector<int> cols;
    for (const CellRef& c : cells) {
      CHECK(c.row == 2);
      cols.push_back(c.col);
    }
    std::sort(cols.begin(), cols.end());
    CHECK(cols == std::vector<int>{0, 1, 7});
  }

  SECTION("saturated span returns every column exactly once") {
    const auto cells = window_cells({3, 1}, 5, 0, spec);
    REQUIRE(cells.size() == 8);
    std::vector<int> cols;
    for (const CellRef& c : cells) cols.push_back(c.col);
    std::sort(cols.begin(), cols.end());
    for (int i = 0; i < 8; ++i) CHECK(cols[static_cast<size_t>(i)] == i);
  }

  SECTION("rows clamp instead of wrapping") {
    const auto cells = window_cells({4, 0}, 0, 2, spec);
    std::vector<int> rows;
    for (const CellRef& c : cells) rows.push_back(c.row);
    std::sort(rows.begin(), rows.end());
    CHECK(rows == std::vector<int>{0, 1, 2});
  }

  SECTION("count invariant") {
    Rng rng(11);
    for (int t = 0; t < 100; ++t) {
      GridSpec s;
      s.width = 2 + static_cast<int>(rng.below(30));
      s.height = 1 + static_cast<int>(rng.below(10));
      const CellRef center{static_cast<int>(rng.below(static_cast<uint64_t>(s.width))),
                           static_cast<int>(rng.below(static_cast<uint64_t>(s.height)))};
      const int hw = static_cast<int>(rng.below(40));
      const int hh = static_cast<int>(rng.below(6));
      const auto cells = window_cells(center, hw, hh, s);
      const int row_lo = std::max(0, center.row - hh);
      const int row_hi = std::min(s.height - 1, center.row + hh);
      const size_t expect =
          static_cast<size_t>(std::min<long long>(2LL * hw + 1, s.width)) *
          static_cast<size_t>(row_hi - row_lo + 1);
      CHECK(cells.size() == expect);
      // No duplicates.
      auto key = [&](const CellRef& c) { return c.row * s.width + c.col; };
      std::vector<int> keys;
      for (const CellRef& c : cells) keys.push_back(key(c));
      std::sort(keys.begin(), keys.end());
      CHECK(std::adjacent_find(keys.begin(), keys.end()) == keys.end());
    }
  }
}

TEST_CASE("spherical_project axis cases", "[rangeview]") {
  GridSpec spec;
  spec.width = 4;
  spec.height = 1;
  spec.elev_min = -0.5;
  spec.elev_max = 0.5;
  PointCloud cloud;
  cloud.points = {{1, 0, 0, 0.5}, {0, 1, 0, 0.5}};
  const RangeImage img = spherical_project(cloud, spec);
  CHECK(img.point_col[0] == 0);
  CHECK(img.point_col[1] == 1);
  CHECK(img.ranges[0] == Approx(1.0));
}

TEST_CASE("spherical_project bins recompute inside their bounds",
          "[rangeview]") {
  GridSpec spec;
  const PointCloud cloud = oracle::random_cloud(1000, 42, spec);
  const RangeImage img = spherical_project(cloud, spec);

  size_t gridded = 0;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (img.point_col[i] < 0) continue;
    ++gridded;
    const Point& p = cloud.points[i];
    const double az = shifted_azimuth(p, spec);
    const double elev = std::asin(p.z / point_range(p));
    const double col_lo = img.point_col[i] * kTwoPi / spec.width;
    const double col_hi = (img.point_col[i] + 1) * kTwoPi / spec.width;
    CHECK(az >= col_lo - 1e-12);
    CHECK(az < col_hi + 1e-12);
    const double row_span = (spec.elev_max - spec.elev_min) / spec.height;
    const double row_lo = spec.elev_min + img.point_row[i] * row_span;
    CHECK(elev >= row_lo - 1e-12);
    CHECK(elev <= row_lo + row_span + 1e-12);
  }
  CHECK(gridded + img.out_of_bounds.size() == cloud.size());
  CHECK(img.gridded_count() == gridded);
}

TEST_CASE("origin points are excluded and reported", "[rangeview]") {
  GridSpec spec;
  PointCloud cloud;
  cloud.points = {{0, 0, 0, 0.0}, {5, 0, -1, 0.3}};
  const RangeImage img = spherical_project(cloud, spec);
  REQUIRE(img.out_of_bounds.size() == 1);
  CHECK(img.out_of_bounds[0] == 0);
  CHECK(img.point_col[0] == -1);
  CHECK(img.point_col[1] >= 0);
}

TEST_CASE("seam equivariance under whole-bin rotation", "[rangeview]") {
  GridSpec spec;
  spec.width = 64;
  spec.height = 8;
  const PointCloud cloud = oracle::random_cloud(600, 9, spec);
  const RangeImage base = spherical_project(cloud, spec);

  const int shift_bins = 17;
  const double delta = shift_bins * kTwoPi / spec.width;
  PointCloud rotated = cloud;
  for (Point& p : rotated.points) {
    const double x = p.x * std::cos(delta) - p.y * std::sin(delta);
    const double y = p.x * std::sin(delta) + p.y * std::cos(delta);
    p.x = x;
    p.y = y;
  }
  const RangeImage rot = spherical_project(rotated, spec);
  for (size_t i = 0; i < cloud.size(); ++i) {
    REQUIRE(base.point_col[i] >= 0);
    CHECK(rot.point_row[i] == base.point_row[i]);
    CHECK(rot.point_col[i] ==
          wrap_col(base.point_col[i] + shift_bins, spec.width));
  }
}

TEST_CASE("align_azimuth identity and invertibility", "[rangeview]") {
  SECTION("gap already centered at zero gives offset zero") {
    PointCloud cloud;
    // Azimuths from 0.25 to 2*pi - 0.25; widest gap straddles 0.
    for (int i = 0; i < 100; ++i) {
      const double az = 0.25 + (kTwoPi - 0.5) * i / 99.0;
      cloud.points.push_back({std::cos(az), std::sin(az), 0.0, 0.5});
    }
    const AlignResult res = align_azimuth(cloud);
    CHECK(res.offset == Approx(0.0).margin(1e-9));
    REQUIRE(res.cloud.size() == cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i)
      CHECK(res.cloud.points[i].x == cloud.points[i].x);
  }

  SECTION("single point: seam lands opposite, transform inverts") {
    PointCloud cloud;
    cloud.points = {{std::cos(kPi), std::sin(kPi), 0.0, 0.1}};
    const AlignResult res = align_azimuth(cloud);
    CHECK(res.offset == Approx(0.0).margin(1e-9));
    const double raw = point_azimuth(cloud.points[0]);
    const double shifted = wrap_angle(raw - res.offset);
    CHECK(wrap_angle(shifted + res.offset) == Approx(raw).margin(1e-9));
  }

  SECTION("empty cloud") {
    PointCloud cloud;
    CHECK_THROWS_WITH(align_azimuth(cloud), "empty input");
  }
}

TEST_CASE("align_azimuth places the seam in the widest gap", "[rangeview]") {
  // 360 nearly uniform azimuths with one 10-degree hole.
  PointCloud cloud;
  const double gap_lo = deg_to_rad(140.0);
  const double gap_hi = deg_to_rad(150.0);
  Rng rng(5);
  int added = 0;
  while (added < 360) {
    const double az = rng.uniform(0.0, kTwoPi);
    if (az >= gap_lo && az < gap_hi) continue;
    cloud.points.push_back({10 * std::cos(az), 10 * std::sin(az), 0.0, 0.4});
    ++added;
  }
  const AlignResult res = align_azimuth(cloud);

  // Brute-force oracle: scan candidate offsets, maximize the circular
  // distance from the seam to the closest point azimuth.
  auto seam_clearance = [&](double offset) {
    double best = kTwoPi;
    for (const Point& p : cloud.points) {
      double d = std::abs(wrap_angle(point_azimuth(p) - offset));
      d = std::min(d, kTwoPi - d);
      best = std::min(best, d);
    }
    return best;
  };
  double best_clearance = 0.0;
  for (int i = 0; i < 200000; ++i) {
    const double cand = kTwoPi * i / 200000.0;
    best_clearance = std::max(best_clearance, seam_clearance(cand));
  }
  CHECK(seam_clearance(res.offset) >= best_clearance - 1e-4);
  CHECK(res.offset > gap_lo);
  CHECK(res.offset < gap_hi);
}

TEST_CASE("grid spec validation", "[rangeview]") {
  GridSpec bad;
  bad.width = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  GridSpec bad2;
  bad2.elev_min = 0.5;
  bad2.elev_max = -0.5;
  CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
  GridSpec ok;
  CHECK_NOTHROW(ok.validate());
}
