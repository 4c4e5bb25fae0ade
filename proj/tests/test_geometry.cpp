#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gbrep/geometry.hpp"
#include "gbrep/rng.hpp"

using namespace gbrep;

namespace {

ParamSurface unit_plane() {
  ParamSurface s;
  s.kind = SurfKind::kPlane;
  return s;  // origin 0, ax=x, ay=y, u,v in [0,1]
}

TensorD random_grid(Rng& rng, int m = 8, int n = 8, double spread = 2.0) {
  TensorD g({m, n, 3});
  for (auto& v : g.data) v = rng.uniform(-spread, spread);
  return g;
}

}  // namespace

TEST_CASE("surface sampling: unit plane hits the uniform grid") {
  UVGrid g = sample_surface_uv(unit_plane(), 32, 32);
  CHECK(g.pts.at(0, 0, 0) == 0.0);
  CHECK(g.pts.at(0, 0, 1) == 0.0);
  CHECK(g.pts.at(0, 0, 2) == 0.0);
  CHECK(g.pts.at(31, 31, 0) == 1.0);
  CHECK(g.pts.at(31, 31, 1) == 1.0);
  CHECK(g.pts.at(31, 31, 2) == 0.0);
  // step size 1/31 along both directions
  CHECK(g.pts.at(1, 0, 0) == doctest::Approx(1.0 / 31).epsilon(1e-12));
  CHECK(g.pts.at(0, 1, 1) == doctest::Approx(1.0 / 31).epsilon(1e-12));
}

TEST_CASE("surface sampling: 2x2 grid is exactly the corners") {
  UVGrid g = sample_surface_uv(unit_plane(), 2, 2);
  CHECK(g.pts.at(0, 0, 0) == 0.0);
  CHECK(g.pts.at(1, 0, 0) == 1.0);
  CHECK(g.pts.at(1, 0, 1) == 0.0);
  CHECK(g.pts.at(0, 1, 1) == 1.0);
  CHECK(g.pts.at(1, 1, 0) == 1.0);
  CHECK(g.pts.at(1, 1, 1) == 1.0);
}

TEST_CASE("surface sampling: half cylinder matches direct trig evaluation") {
  ParamSurface s;
  s.kind = SurfKind::kCylinder;
  s.radius = 1.0;
  s.u0 = 0.0;
  s.u1 = 3.14159265358979323846;
  s.v0 = 0.0;
  s.v1 = 1.0;
  UVGrid g = sample_surface_uv(s, 32, 32);
  Rng rng(101);
  for (int c = 0; c < 5; ++c) {
    const int i = rng.uniform_int(0, 31), j = rng.uniform_int(0, 31);
    const double u = i * 3.14159265358979323846 / 31.0;
    CHECK(g.pts.at(i, j, 0) == doctest::Approx(std::cos(u)).epsilon(1e-9));
    CHECK(g.pts.at(i, j, 1) == doctest::Approx(std::sin(u)).epsilon(1e-9));
    CHECK(g.pts.at(i, j, 2) == doctest::Approx(j / 31.0).epsilon(1e-9));
  }
}

TEST_CASE("edge sampling: straight line at uniform steps") {
  ParamCurve c;
  c.kind = CurveKind::kLine;
  c.a = {0, 0, 0};
  c.b = {1, 0, 0};
  EdgePolyline e = sample_edge_uv(c, 32);
  for (int k = 0; k < 32; ++k) {
    CHECK(e.pts.at(k, 0) == doctest::Approx(k / 31.0).epsilon(1e-12));
    CHECK(e.pts.at(k, 1) == 0.0);
    CHECK(e.pts.at(k, 2) == 0.0);
  }
}

TEST_CASE("edge sampling: R=2 gives exactly the endpoints") {
  ParamCurve c;
  c.kind = CurveKind::kLine;
  c.a = {0.25, -1, 2};
  c.b = {0.5, 3, -4};
  EdgePolyline e = sample_edge_uv(c, 2);
  CHECK(e.pts.at(0, 0) == 0.25);
  CHECK(e.pts.at(0, 1) == -1.0);
  CHECK(e.pts.at(1, 1) == 3.0);
  CHECK(e.pts.at(1, 2) == -4.0);
}

TEST_CASE("edge sampling: quarter arc matches trig oracle") {
  ParamCurve c;
  c.kind = CurveKind::kArc;
  c.radius = 1.0;
  c.u0 = 0.0;
  c.u1 = 3.14159265358979323846 / 2.0;
  EdgePolyline e = sample_edge_uv(c, 32);
  for (int k = 0; k < 32; ++k) {
    const double th = k * 3.14159265358979323846 / 62.0;
    CHECK(e.pts.at(k, 0) == doctest::Approx(std::cos(th)).epsilon(1e-9));
    CHECK(e.pts.at(k, 1) == doctest::Approx(std::sin(th)).epsilon(1e-9));
    CHECK(e.pts.at(k, 2) == 0.0);
  }
}

TEST_CASE("grid spacing is uniform along ruled directions") {
  ParamSurface s;
  s.kind = SurfKind::kBilinear;
  s.ctrl = {{0, 0, 0}, {0, 2, 1}, {3, 0, 0}, {3, 2, 2}};
  UVGrid g = sample_surface_uv(s, 16, 16);
  for (int j = 0; j < 16; ++j) {
    double step0 = -1;
    for (int i = 0; i + 1 < 16; ++i) {
      const double dx = g.pts.at(i + 1, j, 0) - g.pts.at(i, j, 0);
      const double dy = g.pts.at(i + 1, j, 1) - g.pts.at(i, j, 1);
      const double dz = g.pts.at(i + 1, j, 2) - g.pts.at(i, j, 2);
      const double step = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (step0 < 0)
        step0 = step;
      else
        CHECK(step == doctest::Approx(step0).epsilon(1e-6));
    }
  }
}

TEST_CASE("bspline patch: planar control grid stays planar, corners clamp") {
  ParamSurface s;
  s.kind = SurfKind::kBspline;
  s.ctrl_nu = 4;
  s.ctrl_nv = 5;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) s.ctrl.push_back({static_cast<double>(i), static_cast<double>(j), 0.7});
  UVGrid g = sample_surface_uv(s, 9, 9);
  for (std::int64_t i = 0; i < 81; ++i) CHECK(g.pts[i * 3 + 2] == doctest::Approx(0.7).epsilon(1e-12));
  // clamped knots interpolate the corner control points
  CHECK(g.pts.at(0, 0, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(g.pts.at(0, 0, 1) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(g.pts.at(8, 8, 0) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(g.pts.at(8, 8, 1) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("normalize: already-normalized points give the identity transform") {
  ParamSurface s = unit_plane();
  s.origin = {-1, -1, 0};
  s.ax = {2, 0, 0};
  s.ay = {0, 2, 0};  // spans [-1,1]^2 in xy
  std::vector<UVGrid> grids;
  grids.push_back(sample_surface_uv(s, 8, 8));
  // add z extent so the longest axis is unambiguous
  ParamSurface s2 = s;
  s2.origin = {-1, -1, -1};
  ParamSurface s3 = s;
  s3.origin = {-1, -1, 1};
  grids.push_back(sample_surface_uv(s2, 8, 8));
  grids.push_back(sample_surface_uv(s3, 8, 8));
  std::vector<EdgePolyline> edges;
  SolidTransform t = normalize_solid(grids, edges);
  CHECK(t.scale == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t.translation.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(t.translation.y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(t.translation.z == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("normalize: unit cube maps to centered double scale") {
  // two opposite faces of the unit cube are enough to span [0,1]^3
  ParamSurface bottom = unit_plane();
  ParamSurface top = unit_plane();
  top.origin = {0, 0, 1};
  std::vector<UVGrid> grids = {sample_surface_uv(bottom, 4, 4), sample_surface_uv(top, 4, 4)};
  std::vector<EdgePolyline> edges;
  ParamCurve c;
  c.a = {0, 0, 0};
  c.b = {1, 1, 1};
  edges.push_back(sample_edge_uv(c, 8));
  SolidTransform t = normalize_solid(grids, edges);
  CHECK(t.scale == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(t.translation.x == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(t.translation.y == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(t.translation.z == doctest::Approx(-0.5).epsilon(1e-12));
  // edges got the same map: the diagonal now runs corner to corner
  CHECK(edges[0].pts.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(edges[0].pts.at(7, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("normalize: random solid ends with max coordinate exactly 1") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<UVGrid> grids;
    for (int s = 0; s < 3; ++s) {
      UVGrid g;
      g.pts = random_grid(rng, 6, 6, rng.uniform(0.5, 20.0));
      grids.push_back(g);
    }
    std::vector<EdgePolyline> edges;
    normalize_solid(grids, edges);
    double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
    for (const auto& g : grids)
      for (std::int64_t i = 0; i < g.pts.numel() / 3; ++i)
        for (int k = 0; k < 3; ++k) {
          lo[k] = std::min(lo[k], g.pts[i * 3 + k]);
          hi[k] = std::max(hi[k], g.pts[i * 3 + k]);
        }
    double worst = 0;
    for (int k = 0; k < 3; ++k) {
      worst = std::max(worst, hi[k]);
      worst = std::max(worst, -lo[k]);
      // every axis is centered
      CHECK(hi[k] + lo[k] == doctest::Approx(0.0).epsilon(1e-12));
    }
    CHECK(worst == 1.0);  // exact on the longest axis
  }
}

TEST_CASE("normalize: zero-extent solid is an error") {
  std::vector<UVGrid> grids(1);
  grids[0].pts = TensorD::full({3, 3, 3}, 0.25);
  std::vector<EdgePolyline> edges;
  CHECK_THROWS_AS(normalize_solid(grids, edges), std::runtime_error);
}

TEST_CASE("decompose: full-box grid returns itself") {
  TensorD g({2, 4, 3});
  Rng rng(8);
  for (auto& v : g.data) v = rng.uniform(-1.0, 1.0);
  // force the box to be exactly [-1,1]^3
  for (int k = 0; k < 3; ++k) {
    g[0 * 3 + k] = -1.0;
    g[1 * 3 + k] = 1.0;
  }
  Decomposed d = decompose_bbox(g);
  CHECK(d.bbox.lo.x == -1.0);
  CHECK(d.bbox.hi.z == 1.0);
  for (std::int64_t i = 0; i < g.numel(); ++i)
    CHECK(d.normed[i] == doctest::Approx(g[i]).epsilon(1e-12));
}

TEST_CASE("decompose: flat plane has degenerate z mapped to zero") {
  ParamSurface s = unit_plane();
  s.origin = {0, 0, 0.3};
  UVGrid g = sample_surface_uv(s, 8, 8);
  Decomposed d = decompose_bbox(g.pts);
  CHECK(d.bbox.lo.z == 0.3);
  CHECK(d.bbox.hi.z == 0.3);
  for (std::int64_t i = 0; i < d.normed.numel() / 3; ++i) CHECK(d.normed[i * 3 + 2] == 0.0);
}

TEST_CASE("decompose/recompose round trip within 1e-6") {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    TensorD g = random_grid(rng, 5, 7, rng.uniform(0.01, 50.0));
    Decomposed d = decompose_bbox(g);
    TensorD back = recompose_bbox(d.bbox, d.normed);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      CHECK(back[i] == doctest::Approx(g[i]).epsilon(1e-6));
    // opposite direction: decompose of recomposed normed reproduces normed
    Decomposed d2 = decompose_bbox(back);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      CHECK(d2.normed[i] == doctest::Approx(d.normed[i]).epsilon(1e-6));
  }
}

TEST_CASE("bbox helpers: 6-vector layout and corner canonicalization") {
  BBox b{{-1, 2, -3}, {4, 5, 6}};
  double v[6];
  bbox_to6(b, v);
  CHECK(v[0] == -1.0);
  CHECK(v[4] == 5.0);
  BBox r = bbox_from6(v);
  CHECK(r.lo.y == 2.0);
  CHECK(r.hi.z == 6.0);
  BBox swapped{{4, 2, 6}, {-1, 5, -3}};
  BBox fixed = canonicalize_bbox(swapped);
  CHECK(fixed.lo.x == -1.0);
  CHECK(fixed.hi.x == 4.0);
  CHECK(fixed.lo.z == -3.0);
  CHECK(fixed.hi.z == 6.0);
}

TEST_CASE("polyline and bspline curves stay on their defining geometry") {
  ParamCurve pl;
  pl.kind = CurveKind::kPolyline;
  pl.pts = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}};
  EdgePolyline e = sample_edge_uv(pl, 5);
  CHECK(e.pts.at(0, 0) == 0.0);
  CHECK(e.pts.at(2, 0) == doctest::Approx(1.0));  // mid-parameter hits the knee
  CHECK(e.pts.at(4, 0) == 1.0);
  CHECK(e.pts.at(4, 1) == 1.0);

  ParamCurve bs;
  bs.kind = CurveKind::kBspline;
  bs.pts = {{0, 0, 1}, {1, 0, 1}, {2, 0, 1}, {3, 0, 1}, {4, 0, 1}};
  EdgePolyline eb = sample_edge_uv(bs, 9);
  for (int k = 0; k < 9; ++k) {
    CHECK(eb.pts.at(k, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(eb.pts.at(k, 2) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(eb.pts.at(0, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(eb.pts.at(8, 0) == doctest::Approx(4.0).epsilon(1e-9));
}
