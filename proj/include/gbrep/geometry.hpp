#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gbrep/tensor.hpp"

namespace gbrep {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
};

enum class SurfKind { kPlane, kCylinder, kSphere, kBilinear, kBspline };

// Analytic surface patch evaluated over a closed UV rectangle.
//   plane:    origin + u*ax + v*ay
//   cylinder: origin + r(cos u * ax + sin u * ay) + v*az   (u = angle)
//   sphere:   origin + r(cos v cos u * ax + cos v sin u * ay + sin v * az)
//   bilinear: 4 corner control points, u/v ranges map to [0,1]
//   bspline:  clamped-uniform cubic patch over an nu x nv control grid
struct ParamSurface {
  SurfKind kind = SurfKind::kPlane;
  Vec3 origin;
  Vec3 ax{1, 0, 0}, ay{0, 1, 0}, az{0, 0, 1};
  double radius = 1.0;
  std::vector<Vec3> ctrl;  // row-major [nu][nv]
  int ctrl_nu = 0, ctrl_nv = 0;
  double u0 = 0, u1 = 1, v0 = 0, v1 = 1;

  Vec3 eval(double u, double v) const;
};

enum class CurveKind { kLine, kArc, kPolyline, kBspline };

// Analytic curve over a closed parameter interval.
//   line:     a + u*(b-a), u-range conventionally [0,1]
//   arc:      center + r(cos u * cx + sin u * cy), u = angle
//   polyline: vertices traversed at uniform parameter per segment, u in [0,1]
//   bspline:  clamped-uniform cubic over control points, u in [0,1]
struct ParamCurve {
  CurveKind kind = CurveKind::kLine;
  Vec3 a, b;
  Vec3 center, cx{1, 0, 0}, cy{0, 1, 0};
  double radius = 1.0;
  std::vector<Vec3> pts;
  double u0 = 0, u1 = 1;

  Vec3 eval(double u) const;
};

struct UVGrid {
  TensorD pts;  // [M,N,3]
  UVGrid() : pts({1, 1, 3}) {}
  explicit UVGrid(TensorD p) : pts(std::move(p)) {}
};

struct EdgePolyline {
  TensorD pts;  // [R,3]
  EdgePolyline() : pts({2, 3}) {}
  explicit EdgePolyline(TensorD p) : pts(std::move(p)) {}
};

struct BBox {
  Vec3 lo, hi;
};

struct SolidTransform {
  Vec3 translation;  // applied before scaling: p' = (p + translation) * scale
  double scale = 1.0;
};

UVGrid sample_surface_uv(const ParamSurface& s, int M = 32, int N = 32);
EdgePolyline sample_edge_uv(const ParamCurve& c, int R = 32);

// Translate/scale all points of one solid so the union bounding box is
// centered at the origin and the longest axis spans exactly [-1,1]
// (isotropic scale). Edits in place; returns the applied transform.
SolidTransform normalize_solid(std::vector<UVGrid>& grids, std::vector<EdgePolyline>& edges);

// Componentwise min/max box plus points remapped so the box spans [-1,1]
// per axis; zero-extent axes map to 0.
struct Decomposed {
  BBox bbox;
  TensorD normed;  // same shape as input
};
Decomposed decompose_bbox(const TensorD& points);
TensorD recompose_bbox(const BBox& b, const TensorD& normed);

// Flat 6-vector layout used by the diffusion stages: lo.xyz then hi.xyz.
inline void bbox_to6(const BBox& b, double* out) {
  out[0] = b.lo.x; out[1] = b.lo.y; out[2] = b.lo.z;
  out[3] = b.hi.x; out[4] = b.hi.y; out[5] = b.hi.z;
}
inline BBox bbox_from6(const double* v) {
  return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
}
// Sampled boxes may come out with swapped corners; restore lo <= hi per axis.
inline BBox canonicalize_bbox(const BBox& b) {
  BBox r = b;
  if (r.lo.x > r.hi.x) std::swap(r.lo.x, r.hi.x);
  if (r.lo.y > r.hi.y) std::swap(r.lo.y, r.hi.y);
  if (r.lo.z > r.hi.z) std::swap(r.lo.z, r.hi.z);
  return r;
}

}  // namespace gbrep
