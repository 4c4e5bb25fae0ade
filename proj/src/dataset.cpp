#include "gbrep/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace gbrep {

namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

struct Builder {
  std::vector<ParamSurface> faces;
  struct Edge {
    ParamCurve curve;
    int i, j;
  };
  std::vector<Edge> edges;

  void add_edge(ParamCurve c, int a, int b) {
    if (a > b) std::swap(a, b);
    edges.push_back({std::move(c), a, b});
  }
};

// Straight prism over a CCW polygon in the xy plane, extruded along +z.
// Faces: sides 0..n-1, then bottom cap (index n), top cap (n+1). Caps are
// plane patches covering the polygon's bounding rectangle (trimmed faces are
// out of scope; adjacency and edges carry the true topology).
Builder make_prism(const std::vector<Vec3>& poly, double h) {
  const int n = static_cast<int>(poly.size());
  Builder b;
  for (int i = 0; i < n; ++i) {
    const Vec3& p = poly[static_cast<std::size_t>(i)];
    const Vec3& q = poly[static_cast<std::size_t>((i + 1) % n)];
    ParamSurface side;
    side.kind = SurfKind::kPlane;
    side.origin = p;
    side.ax = q - p;
    side.ay = {0, 0, h};
    b.faces.push_back(side);
  }
  double x0 = poly[0].x, x1 = poly[0].x, y0 = poly[0].y, y1 = poly[0].y;
  for (const Vec3& p : poly) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  for (int cap = 0; cap < 2; ++cap) {
    ParamSurface c;
    c.kind = SurfKind::kPlane;
    c.origin = {x0, y0, cap == 0 ? 0.0 : h};
    c.ax = {x1 - x0, 0, 0};
    c.ay = {0, y1 - y0, 0};
    b.faces.push_back(c);
  }
  const int bottom = n, top = n + 1;
  for (int i = 0; i < n; ++i) {
    const Vec3 p = poly[static_cast<std::size_t>(i)];
    const Vec3 q = poly[static_cast<std::size_t>((i + 1) % n)];
    ParamCurve lo;
    lo.a = p;
    lo.b = q;
    b.add_edge(lo, i, bottom);
    ParamCurve hi;
    hi.a = {p.x, p.y, h};
    hi.b = {q.x, q.y, h};
    b.add_edge(hi, i, top);
    ParamCurve vert;
    vert.a = p;
    vert.b = {p.x, p.y, h};
    b.add_edge(vert, (i + n - 1) % n, i);
  }
  return b;
}

// Cylinder split along its seams into two half-shells, with square plane
// caps over the circle's bounding box. Exercises e_max = 2: the shells share
// both seam lines.
Builder make_split_cylinder(double r, double h) {
  Builder b;
  for (int half = 0; half < 2; ++half) {
    ParamSurface s;
    s.kind = SurfKind::kCylinder;
    s.radius = r;
    s.u0 = half == 0 ? 0.0 : kPi;
    s.u1 = half == 0 ? kPi : 2.0 * kPi;
    s.v0 = 0.0;
    s.v1 = h;
    b.faces.push_back(s);
  }
  for (int cap = 0; cap < 2; ++cap) {
    ParamSurface c;
    c.kind = SurfKind::kPlane;
    c.origin = {-r, -r, cap == 0 ? 0.0 : h};
    c.ax = {2 * r, 0, 0};
    c.ay = {0, 2 * r, 0};
    b.faces.push_back(c);
  }
  const int shell0 = 0, shell1 = 1, bottom = 2, top = 3;
  for (int seam = 0; seam < 2; ++seam) {
    const double x = seam == 0 ? r : -r;
    ParamCurve line;
    line.a = {x, 0, 0};
    line.b = {x, 0, h};
    b.add_edge(line, shell0, shell1);
  }
  for (int half = 0; half < 2; ++half)
    for (int cap = 0; cap < 2; ++cap) {
      ParamCurve arc;
      arc.kind = CurveKind::kArc;
      arc.radius = r;
      arc.center = {0, 0, cap == 0 ? 0.0 : h};
      arc.u0 = half == 0 ? 0.0 : kPi;
      arc.u1 = half == 0 ? kPi : 2.0 * kPi;
      b.add_edge(arc, half == 0 ? shell0 : shell1, cap == 0 ? bottom : top);
    }
  return b;
}

Builder make_family(int family, Rng& rng) {
  switch (family) {
    case kCuboid: {
      const double a = rng.uniform(0.5, 2.0), b = rng.uniform(0.5, 2.0),
                   c = rng.uniform(0.5, 2.0);
      return make_prism({{0, 0, 0}, {a, 0, 0}, {a, b, 0}, {0, b, 0}}, c);
    }
    case kPrism: {
      const int n = rng.uniform_int(3, 8);
      const double r = rng.uniform(0.5, 1.5), h = rng.uniform(0.5, 2.0);
      std::vector<Vec3> poly;
      for (int i = 0; i < n; ++i) {
        const double th = 2.0 * kPi * i / n;
        poly.push_back({r * std::cos(th), r * std::sin(th), 0});
      }
      return make_prism(poly, h);
    }
    case kSplitCylinder:
      return make_split_cylinder(rng.uniform(0.4, 1.2), rng.uniform(0.5, 2.0));
    case kLBlock: {
      const double w = rng.uniform(1.0, 2.0), d = rng.uniform(1.0, 2.0);
      const double t1 = d * rng.uniform(0.3, 0.7), t2 = w * rng.uniform(0.3, 0.7);
      return make_prism(
          {{0, 0, 0}, {w, 0, 0}, {w, t1, 0}, {t2, t1, 0}, {t2, d, 0}, {0, d, 0}},
          rng.uniform(0.5, 2.0));
    }
    case kWedge: {
      const double a = rng.uniform(0.8, 2.0), bl = rng.uniform(0.8, 2.0);
      return make_prism({{0, 0, 0}, {a, 0, 0}, {0, bl, 0}}, rng.uniform(0.5, 2.0));
    }
    default:
      throw std::logic_error("unknown family id " + std::to_string(family));
  }
}

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv1a(const unsigned char* data, std::size_t n,
                    std::uint64_t h = kFnvOffset) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= kFnvPrime;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << h;
  return ss.str();
}

}  // namespace

const char* family_name(int id) {
  switch (id) {
    case kCuboid: return "cuboid";
    case kPrism: return "prism";
    case kSplitCylinder: return "split-cylinder";
    case kLBlock: return "l-block";
    case kWedge: return "wedge";
  }
  return "unknown";
}

BRepGraph gen_one(int family, Rng& rng, int e_max) {
  Builder b = make_family(family, rng);

  // random pose: per-axis scale in canonical frame, then rotation about z
  const double sx = rng.uniform(0.6, 1.4), sy = rng.uniform(0.6, 1.4),
               sz = rng.uniform(0.6, 1.4);
  const double th = rng.uniform(0.0, 2.0 * kPi);
  const double ct = std::cos(th), st = std::sin(th);
  auto transform = [&](TensorD& pts) {
    const std::int64_t n = pts.numel() / 3;
    for (std::int64_t k = 0; k < n; ++k) {
      const double x = pts[k * 3 + 0] * sx, y = pts[k * 3 + 1] * sy, z = pts[k * 3 + 2] * sz;
      pts[k * 3 + 0] = ct * x - st * y;
      pts[k * 3 + 1] = st * x + ct * y;
      pts[k * 3 + 2] = z;
    }
  };

  std::vector<UVGrid> grids;
  for (const ParamSurface& f : b.faces) {
    UVGrid g = sample_surface_uv(f, 32, 32);
    transform(g.pts);
    grids.push_back(std::move(g));
  }
  std::vector<EdgePolyline> polys;
  for (const Builder::Edge& e : b.edges) {
    EdgePolyline p = sample_edge_uv(e.curve, 32);
    transform(p.pts);
    polys.push_back(std::move(p));
  }
  normalize_solid(grids, polys);

  BRepGraph g;
  g.label = family;
  g.adjacency = AdjacencyMatrix(static_cast<int>(b.faces.size()), e_max);
  for (const UVGrid& grid : grids) {
    SurfaceRecord s;
    s.bbox = decompose_bbox(grid.pts).bbox;
    s.grid = grid.pts;
    g.surfaces.push_back(std::move(s));
  }
  for (std::size_t k = 0; k < b.edges.size(); ++k) {
    EdgeRecord e;
    e.i = b.edges[k].i;
    e.j = b.edges[k].j;
    e.bbox = decompose_bbox(polys[k].pts).bbox;
    e.points = polys[k].pts;
    g.edges.push_back(std::move(e));
    g.adjacency.at(e.i, e.j) += 1;
    g.adjacency.at(e.j, e.i) += 1;
  }
  return g;
}

std::vector<BRepGraph> gen_procedural(const DatasetManifest& m) {
  if (m.mix.size() != kNumFamilies) throw std::logic_error("manifest mix needs 5 entries");
  double total = 0;
  for (double p : m.mix) total += p;
  if (std::abs(total - 1.0) > 1e-9) throw std::logic_error("manifest mix must sum to 1");
  std::vector<BRepGraph> out;
  out.reserve(static_cast<std::size_t>(m.count));
  for (int k = 0; k < m.count; ++k) {
    Rng rng(m.seed, static_cast<std::uint64_t>(k));
    const double u = rng.uniform();
    int family = 0;
    double acc = 0;
    for (int f = 0; f < kNumFamilies; ++f) {
      acc += m.mix[static_cast<std::size_t>(f)];
      if (u < acc) {
        family = f;
        break;
      }
      family = f;  // accumulate rounding: last family soaks the remainder
    }
    BRepGraph g = gen_one(family, rng, m.limits.e_max);
    if (!m.labeled) g.label = -1;
    out.push_back(std::move(g));
  }
  return out;
}

int quantize6(double v) {
  const int q = static_cast<int>(std::floor((v + 1.0) / 2.0 * 63.0));
  return std::clamp(q, 0, 63);
}

ModelHash model_hash(const BRepGraph& g) {
  ModelHash h;
  for (const SurfaceRecord& s : g.surfaces) {
    if (!s.grid) throw std::runtime_error("model_hash: surface grid missing");
    std::vector<unsigned char> bytes;
    bytes.reserve(static_cast<std::size_t>(s.grid->numel()));
    for (std::int64_t i = 0; i < s.grid->numel(); ++i)
      bytes.push_back(static_cast<unsigned char>(quantize6((*s.grid)[i])));
    h.per_surface.push_back(fnv1a(bytes.data(), bytes.size()));
  }
  std::vector<std::uint64_t> sorted = h.per_surface;
  std::sort(sorted.begin(), sorted.end());
  std::uint64_t acc = kFnvOffset;
  for (std::uint64_t v : sorted) {
    unsigned char le[8];
    for (int b = 0; b < 8; ++b) le[b] = static_cast<unsigned char>((v >> (8 * b)) & 0xff);
    acc = fnv1a(le, 8, acc);
  }
  h.value = acc;
  return h;
}

FilterReport filter_dataset(const std::vector<BRepGraph>& graphs, const DatasetLimits& limits) {
  FilterReport rep;
  std::vector<std::uint64_t> seen;
  for (int idx = 0; idx < static_cast<int>(graphs.size()); ++idx) {
    const BRepGraph& g = graphs[static_cast<std::size_t>(idx)];
    const int n = static_cast<int>(g.surfaces.size());
    if (n > limits.max_faces) {
      rep.rejected.emplace_back(idx, "max_faces");
      continue;
    }
    bool bad_face = false;
    for (int i = 0; i < g.adjacency.n && !bad_face; ++i) {
      int deg = 0;
      for (int j = 0; j < g.adjacency.n; ++j) deg += g.adjacency.at(i, j);
      bad_face = deg > limits.max_edges_per_face;
    }
    if (bad_face) {
      rep.rejected.emplace_back(idx, "max_edges_per_face");
      continue;
    }
    if (static_cast<int>(g.edges.size()) > limits.max_total_edges) {
      rep.rejected.emplace_back(idx, "max_total_edges");
      continue;
    }
    const std::uint64_t h = model_hash(g).value;
    if (std::find(seen.begin(), seen.end(), h) != seen.end()) {
      rep.rejected.emplace_back(idx, "duplicate");
      continue;
    }
    seen.push_back(h);
    rep.kept.push_back(idx);
  }
  return rep;
}

SplitIndices split_dataset(int n, double train_ratio, double val_ratio, double test_ratio,
                           std::uint64_t seed) {
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw std::logic_error("split ratios must sum to 1");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed, 0x5917);
  for (int i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  const int n_val = static_cast<int>(n * val_ratio);
  const int n_test = static_cast<int>(n * test_ratio);
  const int n_train = n - n_val - n_test;
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

void write_dataset_dir(const std::string& dir, const DatasetManifest& m,
                       const std::vector<BRepGraph>& graphs) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json jm;
  jm["mix"] = m.mix;
  jm["count"] = m.count;
  jm["seed"] = m.seed;
  jm["limits"] = {{"max_faces", m.limits.max_faces},
                  {"max_edges_per_face", m.limits.max_edges_per_face},
                  {"max_total_edges", m.limits.max_total_edges},
                  {"e_max", m.limits.e_max}};
  jm["ratios"] = {m.train_ratio, m.val_ratio, m.test_ratio};
  jm["labeled"] = m.labeled;
  std::ofstream(dir + "/manifest.json") << jm.dump(2) << "\n";

  std::ofstream files(dir + "/files.txt");
  std::ofstream hashes(dir + "/hashes.txt");
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    std::ostringstream name;
    name.width(5);
    name.fill('0');
    name << k;
    const std::string fname = name.str() + ".bgraph";
    std::ofstream(dir + "/" + fname) << serialize(graphs[k]);
    files << fname << "\n";
    hashes << hash_hex(model_hash(graphs[k]).value) << "\n";
  }

  SplitIndices s = split_dataset(static_cast<int>(graphs.size()), m.train_ratio, m.val_ratio,
                                 m.test_ratio, m.seed);
  json js;
  js["train"] = s.train;
  js["val"] = s.val;
  js["test"] = s.test;
  std::ofstream(dir + "/splits.json") << js.dump() << "\n";
}

LoadedDataset load_dataset_dir(const std::string& dir) {
  LoadedDataset out;
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("dataset dir missing manifest.json: " + dir);
  json jm = json::parse(mf);
  out.manifest.mix = jm.at("mix").get<std::vector<double>>();
  out.manifest.count = jm.at("count").get<int>();
  out.manifest.seed = jm.at("seed").get<std::uint64_t>();
  out.manifest.limits.max_faces = jm.at("limits").at("max_faces").get<int>();
  out.manifest.limits.max_edges_per_face = jm.at("limits").at("max_edges_per_face").get<int>();
  out.manifest.limits.max_total_edges = jm.at("limits").at("max_total_edges").get<int>();
  out.manifest.limits.e_max = jm.at("limits").at("e_max").get<int>();
  out.manifest.train_ratio = jm.at("ratios").at(0).get<double>();
  out.manifest.val_ratio = jm.at("ratios").at(1).get<double>();
  out.manifest.test_ratio = jm.at("ratios").at(2).get<double>();
  out.manifest.labeled = jm.at("labeled").get<bool>();

  std::ifstream files(dir + "/files.txt");
  if (!files) throw std::runtime_error("dataset dir missing files.txt: " + dir);
  std::string fname;
  while (std::getline(files, fname)) {
    if (fname.empty()) continue;
    std::ifstream f(dir + "/" + fname);
    if (!f) throw std::runtime_error("dataset file missing: " + fname);
    std::stringstream ss;
    ss << f.rdbuf();
    out.graphs.push_back(deserialize(ss.str()));
  }

  std::ifstream hf(dir + "/hashes.txt");
  std::string line;
  while (hf && std::getline(hf, line))
    if (!line.empty()) out.hashes.push_back(std::stoull(line, nullptr, 16));

  std::ifstream sf(dir + "/splits.json");
  if (sf) {
    json js = json::parse(sf);
    out.splits.train = js.at("train").get<std::vector<int>>();
    out.splits.val = js.at("val").get<std::vector<int>>();
    out.splits.test = js.at("test").get<std::vector<int>>();
  }
  return out;
}

}  // namespace gbrep
