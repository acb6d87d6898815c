#include <catch2/catch_amalgamated.hpp>

#include "geocue/knn.hpp"
#include "oracles.hpp"

using namespace geocue;
using Catch::Approx;

namespace {

GridSpec small_spec(int width = 64, int height = 8) {
  GridSpec spec;
  spec.width = width;
  spec.height = height;
  return spec;
}

void check_equal(const NeighborSet& a, const NeighborSet& b) {
  REQUIRE(a.ids.size() == b.ids.size());
  for (size_t i = 0; i < a.ids.size(); ++i) {
    CHECK(a.ids[i] == b.ids[i]);
    CHECK(a.dists[i] == b.dists[i]);  // same kernel, bit-exact
  }
}

}  // namespace

TEST_CASE("global brute force basics", "[knn]") {
  SECTION("two points are each other's 1-NN") {
    PointCloud cloud;
    cloud.points = {{0, 0, 0, 0}, {1, 0, 0, 0}};
    const NeighborSet a = global_knn_bruteforce(cloud, 0, 1);
    const NeighborSet b = global_knn_bruteforce(cloud, 1, 1);
    REQUIRE(a.ids == std::vector<int>{1});
    REQUIRE(b.ids == std::vector<int>{0});
    CHECK(a.dists[0] == Approx(1.0));
    CHECK(a.eval_count == 1);
  }

  SECTION("K >= N-1 returns all others sorted") {
    const GridSpec spec = small_spec();
    const PointCloud cloud = oracle::random_cloud(12, 3, spec);
    const NeighborSet ns = global_knn_bruteforce(cloud, 4, 50);
    REQUIRE(ns.ids.size() == 11);
    CHECK(ns.degenerate);
    CHECK(std::is_sorted(ns.dists.begin(), ns.dists.end()));
    for (int id : ns.ids) CHECK(id != 4);
  }

  SECTION("single-point cloud gives an empty set") {
    PointCloud cloud;
    cloud.points = {{1, 2, 3, 0}};
    const NeighborSet ns = global_knn_bruteforce(cloud, 0, 3);
    CHECK(ns.ids.empty());
    CHECK(ns.degenerate);
    CHECK(ns.eval_count == 0);
  }

  SECTION("matches the sort-all-distances oracle") {
    const GridSpec spec = small_spec();
    const PointCloud cloud = oracle::random_cloud(200, 17, spec);
    for (int q = 0; q < 200; q += 7) {
      const NeighborSet ns = global_knn_bruteforce(cloud, q, 5);
      const auto [ids, dists] =
          oracle::knn_sorted(cloud, q, 5, oracle::all_ids(cloud.size()));
      REQUIRE(ns.ids == ids);
      for (size_t i = 0; i < dists.size(); ++i)
        CHECK(ns.dists[i] == dists[i]);
      CHECK(ns.eval_count == static_cast<long long>(cloud.size()) - 1);
    }
  }
}

TEST_CASE("local window equals global when the window saturates", "[knn]") {
  const GridSpec spec = small_spec();
  const PointCloud cloud = oracle::random_cloud(300, 23, spec);
  const GridIndex index = build_grid_index(cloud, spec);
  for (int q = 0; q < 300; q += 11) {
    const NeighborSet local =
        local_window_knn(index, q, 8, spec.width, spec.height);
    const NeighborSet global = global_knn_bruteforce(cloud, q, 8);
    check_equal(local, global);
    CHECK(local.eval_count == global.eval_count);
  }
}

TEST_CASE("seam-crossing neighbors are found through the wrap", "[knn]") {
  const GridSpec spec = small_spec(64, 4);
  PointCloud cloud;
  // Query just left of the seam, true nearest just right of it, decoy far
  // away on the same side as the query.
  const double eps = 0.01;
  cloud.points = {{10 * std::cos(eps), 10 * std::sin(eps), 0, 0},
                  {10 * std::cos(-eps), 10 * std::sin(-eps), 0, 0},
                  {10 * std::cos(0.8), 10 * std::sin(0.8), 0, 0}};
  const GridIndex index = build_grid_index(cloud, spec);
  REQUIRE(index.image.point_col[0] == 0);
  REQUIRE(index.image.point_col[1] == spec.width - 1);

  const NeighborSet with_wrap = local_window_knn(index, 0, 1, 10, 2, true);
  REQUIRE(with_wrap.ids == std::vector<int>{1});

  const NeighborSet no_wrap = local_window_knn(index, 0, 1, 10, 2, false);
  REQUIRE_FALSE(no_wrap.ids.empty());
  CHECK(no_wrap.ids[0] == 2);
  CHECK(no_wrap.dists[0] > with_wrap.dists[0]);
}

TEST_CASE("restricted window equals brute force on the same candidates",
          "[knn]") {
  const GridSpec spec = small_spec(64, 8);
  const PointCloud cloud = oracle::random_cloud(500, 29, spec);
  const GridIndex index = build_grid_index(cloud, spec);
  const int k = 8, half_w = 8, half_h = 2;
  for (int q = 0; q < 500; ++q) {
    const NeighborSet ns = local_window_knn(index, q, k, half_w, half_h);
    const CellRef center{index.image.point_col[static_cast<size_t>(q)],
                         index.image.point_row[static_cast<size_t>(q)]};
    const std::vector<int> cand =
        oracle::window_candidates(index.image, center, half_w, half_h);
    const auto [ids, dists] = oracle::knn_sorted(cloud, q, k, cand);
    REQUIRE(ns.ids == ids);
    for (size_t i = 0; i < dists.size(); ++i) CHECK(ns.dists[i] == dists[i]);
    CHECK(ns.eval_count == static_cast<long long>(cand.size()) - 1);
  }
}

TEST_CASE("window growth never increases any returned distance", "[knn]") {
  const GridSpec spec = small_spec(64, 8);
  const PointCloud cloud = oracle::random_cloud(400, 31, spec);
  const GridIndex index = build_grid_index(cloud, spec);
  for (int q = 0; q < 400; q += 13) {
    NeighborSet prev = local_window_knn(index, q, 6, 1, 0);
    for (int grow = 1; grow <= 4; ++grow) {
      const NeighborSet cur =
          local_window_knn(index, q, 6, 1 + grow * 6, grow);
      for (size_t i = 0; i < prev.ids.size() && i < cur.ids.size(); ++i)
        CHECK(cur.dists[i] <= prev.dists[i] + 1e-15);
      CHECK(cur.ids.size() >= prev.ids.size());
      CHECK(cur.eval_count >= prev.eval_count);
      prev = cur;
    }
    const NeighborSet global = global_knn_bruteforce(cloud, q, 6);
    CHECK(prev.eval_count <= global.eval_count);
  }
}

TEST_CASE("whole-bin rotation leaves neighbor sets unchanged", "[knn]") {
  const GridSpec spec = small_spec(64, 8);
  const PointCloud cloud = oracle::random_cloud(300, 37, spec);
  const GridIndex index = build_grid_index(cloud, spec);

  const int shift = 9;
  const double delta = shift * kTwoPi / spec.width;
  PointCloud rotated = cloud;
  for (Point& p : rotated.points) {
    const double x = p.x * std::cos(delta) - p.y * std::sin(delta);
    const double y = p.x * std::sin(delta) + p.y * std::cos(delta);
    p.x = x;
    p.y = y;
  }
  const GridIndex rindex = build_grid_index(rotated, spec);
  for (int q = 0; q < 300; q += 17) {
    const NeighborSet a = local_window_knn(index, q, 5, 6, 2);
    const NeighborSet b = local_window_knn(rindex, q, 5, 6, 2);
    REQUIRE(a.ids == b.ids);
    for (size_t i = 0; i < a.dists.size(); ++i)
      CHECK(b.dists[i] == Approx(a.dists[i]).margin(1e-9));
  }
}

TEST_CASE("degenerate windows are flagged", "[knn]") {
  const GridSpec spec = small_spec(64, 4);
  PointCloud cloud;
  cloud.points = {{5, 0, 0, 0}};
  const GridIndex index = build_grid_index(cloud, spec);
  const NeighborSet ns = local_window_knn(index, 0, 4, 2, 1);
  CHECK(ns.ids.empty());
  CHECK(ns.degenerate);
  CHECK(ns.eval_count == 0);
}

TEST_CASE("knn preconditions", "[knn]") {
  const GridSpec spec = small_spec();
  const PointCloud cloud = oracle::random_cloud(10, 1, spec);
  const GridIndex index = build_grid_index(cloud, spec);
  CHECK_THROWS_AS(local_window_knn(index, 0, 0, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(local_window_knn(index, 99, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(global_knn_bruteforce(cloud, 0, 0), std::invalid_argument);
}

TEST_CASE("voxel mean pooling", "[knn]") {
  SECTION("single voxel: every feature equals the global mean") {
    PointCloud cloud;
    cloud.points = {{0.01, 0.02, 0.03, 0.2},
                    {0.04, 0.05, 0.06, 0.4},
                    {0.07, 0.08, 0.09, 0.9}};
    const VoxelFeature vf = voxel_mean_pool(cloud, 1.0);
    const double mx = (0.01 + 0.04 + 0.07) / 3;
    for (const auto& f : vf.features) {
      CHECK(f[0] == Approx(mx));
      CHECK(f[3] == Approx((0.2 + 0.4 + 0.9) / 3));
    }
  }

  SECTION("one point per voxel: identity") {
    PointCloud cloud;
    cloud.points = {{0.5, 0.5, 0.5, 0.1}, {5.5, 0.5, 0.5, 0.9}};
    const VoxelFeature vf = voxel_mean_pool(cloud, 1.0);
    CHECK(vf.features[0][0] == Approx(0.5));
    CHECK(vf.features[0][3] == Approx(0.1));
    CHECK(vf.features[1][0] == Approx(5.5));
    CHECK(vf.features[1][3] == Approx(0.9));
  }

  SECTION("mixed occupancy matches the group-by oracle") {
    const GridSpec spec = small_spec();
    const PointCloud cloud = oracle::random_cloud(500, 41, spec);
    const VoxelFeature vf = voxel_mean_pool(cloud, 0.7);
    const auto expect = oracle::voxel_mean_oracle(cloud, 0.7);
    for (size_t i = 0; i < cloud.size(); ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(vf.features[i][static_cast<size_t>(j)] ==
              Approx(expect[i][static_cast<size_t>(j)]).margin(1e-12));
  }

  SECTION("voxel size must be positive") {
    PointCloud cloud;
    cloud.points = {{0, 0, 1, 0}};
    CHECK_THROWS_AS(voxel_mean_pool(cloud, 0.0), std::invalid_argument);
  }
}

TEST_CASE("bench_knn reports", "[knn]") {
  SECTION("saturated window gives ratio exactly 1") {
    const GridSpec spec = small_spec(32, 4);
    const PointCloud cloud = oracle::random_cloud(200, 43, spec);
    const GridIndex index = build_grid_index(cloud, spec);
    const KnnBenchReport rep = bench_knn(index, 4, spec.width, spec.height);
    CHECK(rep.total_evals_local == rep.total_evals_global);
    CHECK(rep.ratio == 1.0);
  }

  SECTION("uniform occupancy, 1/16 window, ratio within 20%") {
    GridSpec spec;
    spec.width = 48;
    spec.height = 8;
    spec.elev_min = -0.4;
    spec.elev_max = 0.4;
    PointCloud cloud;
    // Exactly one point per cell, at the cell center.
    for (int row = 0; row < spec.height; ++row) {
      const double elev =
          spec.elev_min + (row + 0.5) * (spec.elev_max - spec.elev_min) / spec.height;
      for (int col = 0; col < spec.width; ++col) {
        const double az = (col + 0.5) * kTwoPi / spec.width;
        const double r = 10.0;
        cloud.points.push_back({r * std::cos(elev) * std::cos(az),
                                r * std::cos(elev) * std::sin(az),
                                r * std::sin(elev), 0.5});
      }
    }
    const GridIndex index = build_grid_index(cloud, spec);
    REQUIRE(index.image.out_of_bounds.empty());
    // Window = 3 of 48 columns, all rows: 1/16 of the cells.
    const KnnBenchReport rep = bench_knn(index, 2, 1, spec.height);
    CHECK(rep.ratio == Approx(1.0 / 16.0).epsilon(0.2));
    CHECK(rep.total_evals_local >= 0);
    CHECK(rep.total_evals_global >= 0);
  }
}
