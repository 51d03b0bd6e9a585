#include <doctest.h>

#include <cmath>
#include <random>

#include "vmap/map_model.hpp"

using namespace vmap;

TEST_SUITE_BEGIN("map_model");

TEST_CASE("normalize maps range corners and interior points affinely") {
  PerceptionRange r;  // [-30, 30]^2
  Polyline out = normalize_points({{-30, -30}, {0, 0}, {15, -15}, {30, 30}}, r);
  CHECK(out[0].x == doctest::Approx(0.0));
  CHECK(out[0].y == doctest::Approx(0.0));
  CHECK(out[1].x == doctest::Approx(0.5));
  CHECK(out[1].y == doctest::Approx(0.5));
  CHECK(out[2].x == doctest::Approx(0.75));
  CHECK(out[2].y == doctest::Approx(0.25));
  CHECK(out[3].x == doctest::Approx(1.0));
  CHECK(out[3].y == doctest::Approx(1.0));
}

TEST_CASE("normalize rejects points outside the range") {
  PerceptionRange r;
  CHECK_THROWS_AS(normalize_points({{31, 0}}, r), std::out_of_range);
  CHECK_THROWS_AS(normalize_points({{0, -30.1}}, r), std::out_of_range);
}

TEST_CASE("denormalize inverts normalize to 1e-9 m on random points") {
  PerceptionRange r{-12.5, 40.0, -30.0, 7.25};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(r.x_min, r.x_max), uy(r.y_min, r.y_max);
  Polyline pts;
  for (int i = 0; i < 10000; ++i) pts.push_back({ux(rng), uy(rng)});
  Polyline back = denormalize_points(normalize_points(pts, r), r);
  double worst = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    worst = std::max(worst, std::abs(back[i].x - pts[i].x));
    worst = std::max(worst, std::abs(back[i].y - pts[i].y));
  }
  CHECK(worst < 1e-9);
  CHECK(denormalize_points({{1, 1}}, PerceptionRange{})[0].x == doctest::Approx(30.0));
  CHECK_THROWS_AS(denormalize_points({{1.01, 0.5}}, r), std::domain_error);
}

TEST_CASE("permutation group: open is identity + reversal") {
  PermutationGroup g = permutation_group(3, false);
  REQUIRE(g.size() == 2);
  CHECK(g.permutations[0] == std::vector<int>{0, 1, 2});
  CHECK(g.permutations[1] == std::vector<int>{2, 1, 0});
  PermutationGroup g2 = permutation_group(2, false);
  REQUIRE(g2.size() == 2);
  CHECK(g2.permutations[0] == std::vector<int>{0, 1});
  CHECK(g2.permutations[1] == std::vector<int>{1, 0});
}

TEST_CASE("permutation group: closed has 2n members, all valid bijections") {
  for (int n = 2; n <= 32; ++n) {
    PermutationGroup open_g = permutation_group(n, false);
    PermutationGroup closed_g = permutation_group(n, true);
    CHECK(open_g.size() == 2);
    CHECK(closed_g.size() == 2 * n);
    CHECK(closed_g.permutations[0] == open_g.permutations[0]);  // identity first
    for (const auto& p : closed_g.permutations) {
      std::vector<int> seen(n, 0);
      for (int idx : p) seen.at(idx)++;
      for (int c : seen) CHECK(c == 1);
    }
  }
  CHECK_THROWS_AS(permutation_group(1, false), std::invalid_argument);
}

TEST_CASE("permutation group closed under composition with reversal") {
  int n = 6;
  PermutationGroup g = permutation_group(n, true);
  auto member = [&](const std::vector<int>& p) {
    for (const auto& q : g.permutations)
      if (q == p) return true;
    return false;
  };
  std::vector<int> rev(n);
  for (int i = 0; i < n; ++i) rev[i] = n - 1 - i;
  for (const auto& p : g.permutations) {
    std::vector<int> comp(n);
    for (int i = 0; i < n; ++i) comp[i] = p[rev[i]];
    CHECK(member(comp));
  }
}

TEST_CASE("resample: uniform subdivision of a segment") {
  Polyline out = resample_polyline({{0, 0}, {10, 0}}, 5, false);
  REQUIRE(out.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(out[i].x == doctest::Approx(2.5 * i));
    CHECK(out[i].y == doctest::Approx(0.0));
  }
}

TEST_CASE("resample: arclength midpoint lands on the corner") {
  // total length 8, open spacing 4 -> nodes at arclength 0, 4, 8
  Polyline out = resample_polyline({{0, 0}, {4, 0}, {4, 4}}, 3, false);
  REQUIRE(out.size() == 3);
  CHECK(out[0].x == doctest::Approx(0.0));
  CHECK(out[1].x == doctest::Approx(4.0));
  CHECK(out[1].y == doctest::Approx(0.0));
  CHECK(out[2].x == doctest::Approx(4.0));
  CHECK(out[2].y == doctest::Approx(4.0));
}

TEST_CASE("resample: closed square at n=4 keeps the corners in order") {
  Polyline out = resample_polyline({{0, 0}, {1, 0}, {1, 1}, {0, 1}}, 4, true);
  REQUIRE(out.size() == 4);
  CHECK(out[0].x == doctest::Approx(0.0));
  CHECK(out[1].x == doctest::Approx(1.0));
  CHECK(out[1].y == doctest::Approx(0.0));
  CHECK(out[2].x == doctest::Approx(1.0));
  CHECK(out[2].y == doctest::Approx(1.0));
  CHECK(out[3].y == doctest::Approx(1.0));
}

TEST_CASE("resample is idempotent on already-uniform input") {
  // equal-length segments in varying directions: arclength nodes land exactly
  // on the existing vertices
  Polyline uniform = {{0, 0}};
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 2.0 * 3.14159265358979);
  for (int i = 0; i < 11; ++i) {
    double a = u(rng);
    uniform.push_back({uniform.back().x + std::cos(a), uniform.back().y + std::sin(a)});
  }
  Polyline again = resample_polyline(uniform, 12, false);
  for (size_t i = 0; i < uniform.size(); ++i) {
    CHECK(std::abs(again[i].x - uniform[i].x) < 1e-9);
    CHECK(std::abs(again[i].y - uniform[i].y) < 1e-9);
  }
}

TEST_CASE("resample rejects degenerate input") {
  CHECK_THROWS_AS(resample_polyline({{1, 1}, {1, 1}}, 4, false), std::invalid_argument);
  CHECK_THROWS_AS(resample_polyline({{1, 1}}, 4, false), std::invalid_argument);
}

TEST_CASE("clip: element inside the range is only resampled") {
  MapElement el{ElementClass::divider, {{-10, 0}, {10, 0}}, false};
  auto pieces = clip_element(el, PerceptionRange{}, 20);
  REQUIRE(pieces.size() == 1);
  CHECK(pieces[0].points.size() == 20);
  CHECK(pieces[0].cls == ElementClass::divider);
}

TEST_CASE("clip: polyline leaving and re-entering splits into two pieces") {
  MapElement el{ElementClass::boundary, {{0, 0}, {40, 0}, {40, 10}, {0, 10}}, false};
  PerceptionRange r;
  auto pieces = clip_element(el, r, 10);
  REQUIRE(pieces.size() == 2);
  for (const auto& p : pieces) {
    CHECK(p.points.size() == 10);
    for (const Vec2& q : p.points) CHECK(r.contains(q, 1e-6));
  }
}

TEST_CASE("clip: short remnants are dropped; polygons clip as polygons") {
  MapElement tiny{ElementClass::divider, {{29.8, 0}, {31, 0}}, false};
  CHECK(clip_element(tiny, PerceptionRange{}, 10).empty());  // 0.2 m retained < 1 m

  MapElement poly{ElementClass::ped_crossing, {{25, -5}, {35, -5}, {35, 5}, {25, 5}}, true};
  auto pieces = clip_element(poly, PerceptionRange{}, 16);
  REQUIRE(pieces.size() == 1);
  CHECK(pieces[0].is_closed);
  for (const Vec2& q : pieces[0].points) {
    CHECK(q.x <= 30.0 + 1e-6);
    CHECK(q.x >= 25.0 - 1e-6);
  }
}

TEST_CASE("map document round trip") {
  VectorizedMap m;
  m.scene_id = "scene_x";
  m.range = PerceptionRange{-30, 30, -30, 30};
  m.elements.push_back({ElementClass::ped_crossing, {{1.25, -3}, {4, -3}, {4, 2}}, true});
  m.elements.push_back({ElementClass::boundary, {{-20, 0.125}, {20, 17}}, false});
  VectorizedMap back = map_from_json(map_to_json(m));
  CHECK(back.scene_id == m.scene_id);
  REQUIRE(back.elements.size() == 2);
  CHECK(back.elements[0].cls == ElementClass::ped_crossing);
  CHECK(back.elements[0].is_closed);
  CHECK(back.elements[1].points[0].x == doctest::Approx(-20.0).epsilon(1e-9));
  CHECK(back.elements[0].points[0].y == doctest::Approx(-3.0).epsilon(1e-9));
  CHECK_THROWS(map_from_json("{not json"));
}

TEST_SUITE_END();
