#include "elastica/binding.hpp"

#include "support.hpp"

#include <doctest.h>

#include <set>

using namespace elastica;
using elastica::testing::random_cloud;

TEST_CASE("object_seed is FNV-1a 64") {
  CHECK_THROWS_AS(object_seed(""), DataError);
  CHECK(object_seed("a") == 0xaf63dc4c8601ec8cull);
  // Reference values from an independent FNV-1a implementation.
  CHECK(object_seed("obj-0001") == 0x1e29f394fc9d1112ull);
  CHECK(object_seed("teddy") == object_seed("teddy"));
  CHECK(object_seed("teddy") != object_seed("teddy2"));
}

TEST_CASE("sample_anchors") {
  SUBCASE("cube corners stay inside the dilated occupancy") {
    Points corners(3, 8);
    for (int i = 0; i < 8; ++i) corners.col(i) = Vec3(i & 1, (i >> 1) & 1, (i >> 2) & 1);
    const Points anchors = sample_anchors(corners, 8, 42);
    const OccupancyGrid grid(corners, 32);
    REQUIRE(anchors.cols() == 8);
    for (Eigen::Index a = 0; a < anchors.cols(); ++a) CHECK(grid.contains(anchors.col(a)));
    const Points again = sample_anchors(corners, 8, 42);
    CHECK((anchors.array() == again.array()).all());
  }

  SUBCASE("solid sphere gets interior anchors") {
    Rng rng(9);
    const Vec3 center(0, 1, 0);
    const Points cloud = random_cloud(rng, 4000, center, 0.5);
    const Points anchors = sample_anchors(cloud, 128, object_seed("sphere"));
    const OccupancyGrid grid(cloud, 32);
    const double surface_radius = (cloud.colwise() - center).colwise().norm().maxCoeff();
    int interior = 0;
    for (Eigen::Index a = 0; a < anchors.cols(); ++a)
      if (surface_radius - (anchors.col(a) - center).norm() > grid.voxel_size()) ++interior;
    MESSAGE("interior anchors: " << interior << " / 128");
    CHECK(interior >= static_cast<int>(0.2 * 128));
  }

  SUBCASE("seed changes the sample") {
    Rng rng(2);
    const Points cloud = random_cloud(rng, 500, Vec3::Zero(), 1.0);
    const Points a = sample_anchors(cloud, 32, 1, 16);
    const Points b = sample_anchors(cloud, 32, 2, 16);
    CHECK_FALSE((a.array() == b.array()).all());
  }

  SUBCASE("capacity error") {
    Rng rng(1);
    const Points cloud = random_cloud(rng, 10, Vec3::Zero(), 1.0);
    CHECK_THROWS_WITH_AS(sample_anchors(cloud, 5000, 1, 4), doctest::Contains("coarser"), DataError);
  }

  SUBCASE("cavities are filled") {
    // Hollow shell: interior voxels count as occupied.
    Rng rng(4);
    Points shell(3, 3000);
    for (int i = 0; i < 3000; ++i) shell.col(i) = random_cloud(rng, 1, Vec3::Zero(), 1.0).col(0).normalized();
    const OccupancyGrid grid(shell, 16);
    CHECK(grid.contains(Vec3::Zero()));
  }
}

TEST_CASE("build_topology") {
  SUBCASE("collinear K=1") {
    Points x(3, 3);
    x << 0, 1, 2, 0, 0, 0, 0, 0, 0;
    const auto t = build_topology(x, 1);
    REQUIRE(t.edges.size() == 2);
    CHECK(t.edges[0] == Edge{0, 1});
    CHECK(t.edges[1] == Edge{1, 2});
    CHECK(t.rest_lengths[0] == 1.0);
    CHECK(t.rest_lengths[1] == 1.0);
  }
  SUBCASE("K = N_A - 1 gives the complete graph") {
    Rng rng(8);
    const Points x = random_cloud(rng, 9, Vec3::Zero(), 1.0);
    CHECK(build_topology(x, 8).edges.size() == 36u);
  }
  SUBCASE("asymmetric neighbourhoods are symmetrised once") {
    // 2's nearest is 1, but 1's nearest is 0: edge (1,2) still appears once.
    Points x(3, 3);
    x << 0, 1, 3, 0, 0, 0, 0, 0, 0;
    const auto t = build_topology(x, 1);
    CHECK(std::count(t.edges.begin(), t.edges.end(), Edge{1, 2}) == 1);
    CHECK(std::count(t.edges.begin(), t.edges.end(), Edge{0, 1}) == 1);
  }
  SUBCASE("edges are unique, ordered, and in range") {
    Rng rng(12);
    const Points x = random_cloud(rng, 64, Vec3::Zero(), 1.0);
    const auto t = build_topology(x, 8);
    std::set<std::pair<int, int>> seen;
    for (const Edge& e : t.edges) {
      CHECK(e.i < e.j);
      CHECK(e.j < 64);
      CHECK(seen.insert({e.i, e.j}).second);
    }
    CHECK(t.edges.size() >= 64u * 8u / 2u);
  }
  SUBCASE("duplicate anchors are rejected") {
    Points x(3, 3);
    x << 0, 0, 1, 0, 0, 0, 0, 0, 0;
    CHECK_THROWS_WITH_AS(build_topology(x, 1), doctest::Contains("(0,1)"), DataError);
  }
  SUBCASE("K out of range") {
    Points x = Points::Random(3, 4);
    CHECK_THROWS_AS(build_topology(x, 4), DataError);
  }
}

TEST_CASE("build_binding") {
  Points anchors(3, 3);
  anchors << 0, 2, 5, 0, 0, 0, 0, 0, 0;
  SUBCASE("coincident Gaussian binds first with r = 0") {
    const auto b = build_binding(Points(Vec3(2, 0, 0)), anchors, 2);
    CHECK(b.indices(0, 0) == 1);
    CHECK(b.rest_distances(0, 0) == 0.0);
  }
  SUBCASE("n_b = 1 binds to the nearest anchor") {
    Points g(3, 2);
    g << 0.4, 4.1, 0, 0, 0, 0;
    const auto b = build_binding(g, anchors, 1);
    CHECK(b.indices(0, 0) == 0);
    CHECK(b.indices(0, 1) == 2);
  }
  SUBCASE("midpoint has equal distances") {
    const auto b = build_binding(Points(Vec3(1, 0, 0)), anchors, 2);
    CHECK(b.rest_distances(0, 0) == b.rest_distances(1, 0));
  }
}

TEST_CASE("interpolate_centers") {
  SUBCASE("IDW hand value in absolute mode") {
    BindingTable b;
    b.n_b = 2;
    b.p_b = 2;
    b.mode = BindingMode::Absolute;
    b.indices.resize(2, 1);
    b.indices << 0, 1;
    b.rest_distances.resize(2, 1);
    b.rest_distances << 1, 2;
    b.rest_anchors = Points::Zero(3, 2);
    b.rest_centers = Points::Zero(3, 1);
    Points x(3, 2);
    x << 0, 3, 0, 0, 0, 0;
    CHECK(interpolate_centers(b, x)(0, 0) == doctest::Approx(0.6).epsilon(1e-14));
  }

  Rng rng(21);
  const Points anchors = random_cloud(rng, 40, Vec3(0, 1, 0), 0.5);
  const Points centers = random_cloud(rng, 200, Vec3(0, 1, 0), 0.5);
  auto table = build_binding(centers, anchors, 4);

  SUBCASE("weights are a partition of unity") {
    const Eigen::MatrixXd w = binding_weights(table);
    for (Eigen::Index g = 0; g < w.cols(); ++g) CHECK(std::abs(w.col(g).sum() - 1.0) < 1e-12);
  }
  SUBCASE("translation moves every center by the same offset") {
    const Vec3 delta(0.3, -1.2, 0.7);
    for (auto mode : {BindingMode::Displacement, BindingMode::Absolute}) {
      table.mode = mode;
      const Points before = interpolate_centers(table, anchors);
      const Points after = interpolate_centers(table, anchors.colwise() + delta);
      CHECK(((after - before).colwise() - delta).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("displacement mode reproduces the rest pose exactly") {
    table.mode = BindingMode::Displacement;
    CHECK((interpolate_centers(table, anchors).array() == centers.array()).all());
  }
  SUBCASE("symmetric pair keeps the midpoint") {
    Points a(3, 2);
    a << 0, 2, 0, 0, 0, 0;
    auto b = build_binding(Points(Vec3(1, 0, 0)), a, 2);
    Points moved = a;
    moved(1, 0) = 1;
    moved(1, 1) = -1;
    for (auto mode : {BindingMode::Displacement, BindingMode::Absolute}) {
      b.mode = mode;
      CHECK(std::abs(interpolate_centers(b, moved)(1, 0)) < 1e-15);
    }
  }
  SUBCASE("coincident anchor is followed rigidly") {
    Points a(3, 2);
    a << 0, 2, 0, 0, 0, 0;
    auto b = build_binding(Points(Vec3(0, 0, 0)), a, 2);
    Points moved = a;
    moved.col(0) = Vec3(0.5, 0.25, 0);
    moved.col(1) = Vec3(9, 9, 9);
    for (auto mode : {BindingMode::Displacement, BindingMode::Absolute}) {
      b.mode = mode;
      CHECK(interpolate_centers(b, moved).col(0).isApprox(Vec3(0.5, 0.25, 0)));
    }
  }
  SUBCASE("adjoint is the transpose of the linear map") {
    table.mode = BindingMode::Absolute;
    const Points dx = random_cloud(rng, 40, Vec3::Zero(), 1.0);
    const Points dmu = random_cloud(rng, 200, Vec3::Zero(), 1.0);
    const double lhs = (interpolate_centers(table, dx).cwiseProduct(dmu)).sum();
    const double rhs = (interpolate_centers_adjoint(table, dmu, 40).cwiseProduct(dx)).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}
