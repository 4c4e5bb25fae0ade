#include "gbrep/geometry.hpp"

#include <algorithm>
#include <limits>

namespace gbrep {

namespace {

// Clamped-uniform cubic B-spline basis via de Boor on a knot vector with
// 4-fold end knots and equally spaced interior knots. n = #control points.
double bspline_knot(int i, int n) {
  const int degree = 3;
  const int m = n + degree + 1;  // knot count
  if (i <= degree) return 0.0;
  if (i >= m - degree - 1) return 1.0;
  return static_cast<double>(i - degree) / (n - degree);
}

// Evaluate the 4 nonzero cubic basis functions at t; returns first index.
int bspline_basis(double t, int n, double w[4]) {
  const int degree = 3;
  t = std::clamp(t, 0.0, 1.0);
  // find span k with knot[k] <= t < knot[k+1]
  int k = degree;
  const int last = n - 1;  // last valid span start
  while (k < last && t >= bspline_knot(k + 1, n)) ++k;
  double left[4], right[4];
  w[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = t - bspline_knot(k + 1 - j, n);
    right[j] = bspline_knot(k + j, n) - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double tmp = denom != 0.0 ? w[r] / denom : 0.0;
      w[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    w[j] = saved;
  }
  return k - degree;
}

Vec3 eval_polyline(const std::vector<Vec3>& pts, double t) {
  const int m = static_cast<int>(pts.size());
  if (m == 1) return pts[0];
  t = std::clamp(t, 0.0, 1.0);
  const double s = t * (m - 1);
  int seg = static_cast<int>(s);
  if (seg >= m - 1) seg = m - 2;
  const double f = s - seg;
  return pts[static_cast<std::size_t>(seg)] * (1.0 - f) +
         pts[static_cast<std::size_t>(seg) + 1] * f;
}

}  // namespace

Vec3 ParamSurface::eval(double u, double v) const {
  switch (kind) {
    case SurfKind::kPlane:
      return origin + ax * u + ay * v;
    case SurfKind::kCylinder:
      return origin + (ax * std::cos(u) + ay * std::sin(u)) * radius + az * v;
    case SurfKind::kSphere:
      return origin + (ax * (std::cos(v) * std::cos(u)) + ay * (std::cos(v) * std::sin(u)) +
                       az * std::sin(v)) *
                          radius;
    case SurfKind::kBilinear: {
      if (ctrl.size() != 4) throw std::logic_error("bilinear patch needs 4 control points");
      const double s = (u - u0) / (u1 - u0), t = (v - v0) / (v1 - v0);
      return ctrl[0] * ((1 - s) * (1 - t)) + ctrl[1] * ((1 - s) * t) + ctrl[2] * (s * (1 - t)) +
             ctrl[3] * (s * t);
    }
    case SurfKind::kBspline: {
      if (ctrl_nu < 4 || ctrl_nv < 4 || static_cast<int>(ctrl.size()) != ctrl_nu * ctrl_nv)
        throw std::logic_error("bspline patch needs an nu x nv grid with nu,nv >= 4");
      const double s = (u - u0) / (u1 - u0), t = (v - v0) / (v1 - v0);
      double wu[4], wv[4];
      const int iu = bspline_basis(s, ctrl_nu, wu);
      const int iv = bspline_basis(t, ctrl_nv, wv);
      Vec3 p;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          p = p + ctrl[static_cast<std::size_t>((iu + i) * ctrl_nv + (iv + j))] * (wu[i] * wv[j]);
      return p;
    }
  }
  throw std::logic_error("unknown surface kind");
}

Vec3 ParamCurve::eval(double u) const {
  switch (kind) {
    case CurveKind::kLine:
      return a + (b - a) * u;
    case CurveKind::kArc:
      return center + (cx * std::cos(u) + cy * std::sin(u)) * radius;
    case CurveKind::kPolyline:
      if (pts.empty()) throw std::logic_error("polyline needs vertices");
      return eval_polyline(pts, (u - u0) / (u1 - u0));
    case CurveKind::kBspline: {
      const int n = static_cast<int>(pts.size());
      if (n < 4) throw std::logic_error("bspline curve needs >= 4 control points");
      double w[4];
      const int i0 = bspline_basis((u - u0) / (u1 - u0), n, w);
      Vec3 p;
      for (int i = 0; i < 4; ++i) p = p + pts[static_cast<std::size_t>(i0 + i)] * w[i];
      return p;
    }
  }
  throw std::logic_error("unknown curve kind");
}

UVGrid sample_surface_uv(const ParamSurface& s, int M, int N) {
  if (M < 2 || N < 2) throw std::logic_error("sample_surface_uv: M,N >= 2");
  if (!(s.u1 > s.u0) || !(s.v1 > s.v0))
    throw std::logic_error("sample_surface_uv: invalid parameter ranges");
  const double du = (s.u1 - s.u0) / (M - 1);
  const double dv = (s.v1 - s.v0) / (N - 1);
  TensorD pts({M, N, 3});
  for (int i = 0; i < M; ++i) {
    // hit the rectangle corners exactly
    const double u = (i == M - 1) ? s.u1 : s.u0 + i * du;
    for (int j = 0; j < N; ++j) {
      const double v = (j == N - 1) ? s.v1 : s.v0 + j * dv;
      const Vec3 p = s.eval(u, v);
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
        throw std::runtime_error("sample_surface_uv: non-finite surface point");
      pts.at(i, j, 0) = p.x;
      pts.at(i, j, 1) = p.y;
      pts.at(i, j, 2) = p.z;
    }
  }
  return UVGrid(std::move(pts));
}

EdgePolyline sample_edge_uv(const ParamCurve& c, int R) {
  if (R < 2) throw std::logic_error("sample_edge_uv: R >= 2");
  if (!(c.u1 > c.u0)) throw std::logic_error("sample_edge_uv: invalid parameter range");
  const double du = (c.u1 - c.u0) / (R - 1);
  TensorD pts({R, 3});
  for (int k = 0; k < R; ++k) {
    const double u = (k == R - 1) ? c.u1 : c.u0 + k * du;
    const Vec3 p = c.eval(u);
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw std::runtime_error("sample_edge_uv: non-finite curve point");
    pts.at(k, 0) = p.x;
    pts.at(k, 1) = p.y;
    pts.at(k, 2) = p.z;
  }
  return EdgePolyline(std::move(pts));
}

SolidTransform normalize_solid(std::vector<UVGrid>& grids, std::vector<EdgePolyline>& edges) {
  if (grids.empty()) throw std::runtime_error("normalize_solid: no surfaces");
  double lo[3], hi[3];
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::numeric_limits<double>::infinity();
    hi[k] = -std::numeric_limits<double>::infinity();
  }
  for (const UVGrid& g : grids) {
    const std::int64_t n = g.pts.numel() / 3;
    for (std::int64_t i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) {
        const double v = g.pts[i * 3 + k];
        lo[k] = std::min(lo[k], v);
        hi[k] = std::max(hi[k], v);
      }
  }
  double emax = 0.0;
  for (int k = 0; k < 3; ++k) emax = std::max(emax, hi[k] - lo[k]);
  if (emax == 0.0) throw std::runtime_error("normalize_solid: zero-extent solid");

  // span[k]: extent of axis k after scaling; computing the mapped point as
  // 2(p-lo)/emax - span keeps the longest axis endpoints at exactly +-1
  // (x/x == 1 in IEEE) while centering every axis.
  double span[3];
  for (int k = 0; k < 3; ++k) span[k] = (hi[k] - lo[k]) / emax;
  auto apply = [&](TensorD& pts) {
    const std::int64_t n = pts.numel() / 3;
    for (std::int64_t i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k)
        pts[i * 3 + k] = 2.0 * (pts[i * 3 + k] - lo[k]) / emax - span[k];
  };
  for (UVGrid& g : grids) apply(g.pts);
  for (EdgePolyline& e : edges) apply(e.pts);

  SolidTransform t;
  t.scale = 2.0 / emax;
  t.translation = {-(lo[0] + span[0] * emax / 2.0), -(lo[1] + span[1] * emax / 2.0),
                   -(lo[2] + span[2] * emax / 2.0)};
  return t;
}

Decomposed decompose_bbox(const TensorD& points) {
  if (points.shape.back() != 3) throw std::logic_error("decompose_bbox: last dim must be 3");
  const std::int64_t n = points.numel() / 3;
  double lo[3], hi[3];
  for (int k = 0; k < 3; ++k) {
    lo[k] = points[k];
    hi[k] = points[k];
  }
  for (std::int64_t i = 1; i < n; ++i)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], points[i * 3 + k]);
      hi[k] = std::max(hi[k], points[i * 3 + k]);
    }
  Decomposed d;
  d.bbox = {{lo[0], lo[1], lo[2]}, {hi[0], hi[1], hi[2]}};
  d.normed = TensorD(points.shape);
  for (int k = 0; k < 3; ++k) {
    const double e = hi[k] - lo[k];
    for (std::int64_t i = 0; i < n; ++i)
      d.normed[i * 3 + k] = e == 0.0 ? 0.0 : 2.0 * (points[i * 3 + k] - lo[k]) / e - 1.0;
  }
  return d;
}

TensorD recompose_bbox(const BBox& b, const TensorD& normed) {
  if (normed.shape.back() != 3) throw std::logic_error("recompose_bbox: last dim must be 3");
  const double lo[3] = {b.lo.x, b.lo.y, b.lo.z};
  const double hi[3] = {b.hi.x, b.hi.y, b.hi.z};
  TensorD out(normed.shape);
  const std::int64_t n = normed.numel() / 3;
  for (int k = 0; k < 3; ++k) {
    const double e = hi[k] - lo[k];
    for (std::int64_t i = 0; i < n; ++i)
      out[i * 3 + k] = lo[k] + (normed[i * 3 + k] + 1.0) * 0.5 * e;
  }
  return out;
}

}  // namespace gbrep
