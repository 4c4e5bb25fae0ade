#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gbrep/dataset.hpp"
#include "gbrep/metrics.hpp"

using namespace gbrep;

namespace {

// one rectangular face at height z covering [-sx,sx] x [-sy,sy]
SurfaceRecord plane_face(double z, double sx = 1.0, double sy = 1.0) {
  SurfaceRecord s;
  TensorD grid({32, 32, 3});
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) {
      grid.at(i, j, 0) = -sx + 2.0 * sx * i / 31.0;
      grid.at(i, j, 1) = -sy + 2.0 * sy * j / 31.0;
      grid.at(i, j, 2) = z;
    }
  s.bbox = decompose_bbox(grid).bbox;
  s.grid = std::move(grid);
  return s;
}

BRepGraph plane_graph(const std::vector<double>& zs) {
  BRepGraph g;
  for (double z : zs) g.surfaces.push_back(plane_face(z));
  g.adjacency = AdjacencyMatrix(int(zs.size()), 2);
  return g;
}

PointCloud cloud_at(const Vec3& p, int n) { return PointCloud(size_t(n), p); }

}  // namespace

TEST_CASE("sample_points: planar face stays on its plane") {
  const BRepGraph g = plane_graph({0.25});
  const PointCloud pts = sample_points(g, 500, 3);
  REQUIRE(pts.size() == 500);
  for (const Vec3& p : pts) {
    CHECK(std::abs(p.z - 0.25) < 1e-6);
    CHECK(std::abs(p.x) <= 1.0);
    CHECK(std::abs(p.y) <= 1.0);
  }
}

TEST_CASE("sample_points: deterministic per seed") {
  Rng rng(4);
  const BRepGraph g = gen_one(kCuboid, rng, 2);
  const PointCloud a = sample_points(g, 200, 9);
  const PointCloud b = sample_points(g, 200, 9);
  const PointCloud c = sample_points(g, 200, 10);
  REQUIRE(a.size() == b.size());
  bool same = true, diff = false;
  for (size_t i = 0; i < a.size(); ++i) {
    same = same && a[i].x == b[i].x && a[i].y == b[i].y && a[i].z == b[i].z;
    diff = diff || a[i].x != c[i].x;
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("sample_points: equal-area faces split the budget evenly") {
  const BRepGraph g = plane_graph({0.0, 0.5});
  const PointCloud pts = sample_points(g, 2000, 7);
  int low = 0;
  for (const Vec3& p : pts)
    if (p.z < 0.25) ++low;
  // 3-sigma binomial band around 1000
  CHECK(low > 940);
  CHECK(low < 1060);
}

TEST_CASE("sample_points: face choice follows area") {
  BRepGraph g;
  g.surfaces.push_back(plane_face(0.0, 1.0, 1.0));  // area 4
  g.surfaces.push_back(plane_face(0.5, 0.5, 0.5));  // area 1
  g.adjacency = AdjacencyMatrix(2, 2);
  const PointCloud pts = sample_points(g, 2000, 5);
  int big = 0;
  for (const Vec3& p : pts)
    if (p.z < 0.25) ++big;
  CHECK(big > 1520);  // expect ~1600
  CHECK(big < 1680);
}

TEST_CASE("sample_points: rejects bad requests") {
  const BRepGraph g = plane_graph({0.0});
  CHECK_THROWS_WITH_AS(sample_points(g, 0, 1), "sample_points: need at least one point",
                       std::invalid_argument);
  BRepGraph empty;
  CHECK_THROWS_WITH_AS(sample_points(empty, 10, 1), "sample_points: graph has no surfaces",
                       std::invalid_argument);
}

TEST_CASE("chamfer: identical clouds sit at zero") {
  Rng rng(11);
  PointCloud p;
  for (int i = 0; i < 40; ++i) p.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  CHECK(chamfer(p, p) == 0.0);
}

TEST_CASE("chamfer: single point pair sums both squared directions") {
  const PointCloud p{{0, 0, 0}};
  const PointCloud q{{1, 0, 0}};
  CHECK(chamfer(p, q) == 2.0);
}

TEST_CASE("chamfer: symmetric and nonnegative") {
  Rng rng(12);
  PointCloud p, q;
  for (int i = 0; i < 25; ++i) {
    p.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    q.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  }
  const double d = chamfer(p, q);
  CHECK(d > 0.0);
  CHECK(chamfer(q, p) == d);
  CHECK_THROWS_WITH_AS(chamfer(PointCloud{}, q), "chamfer: empty cloud", std::invalid_argument);
}

TEST_CASE("cov_mmd: a set against itself covers everything at distance zero") {
  Rng rng(13);
  std::vector<PointCloud> set;
  for (int k = 0; k < 3; ++k) {
    PointCloud c;
    for (int i = 0; i < 10; ++i)
      c.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    set.push_back(std::move(c));
  }
  const CovMmd r = cov_mmd(set, set);
  CHECK(r.cov == 100.0);
  CHECK(r.mmd == 0.0);
}

TEST_CASE("cov_mmd: one generation covers exactly one reference") {
  Rng rng(14);
  std::vector<PointCloud> ref;
  for (int k = 0; k < 5; ++k) {
    PointCloud c;
    for (int i = 0; i < 8; ++i)
      c.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    ref.push_back(std::move(c));
  }
  const std::vector<PointCloud> gen{ref[2]};
  const CovMmd r = cov_mmd(gen, ref);
  CHECK(r.cov == 100.0 / 5.0);
}

TEST_CASE("cov_mmd: ties go to the lowest reference index") {
  const PointCloud a = cloud_at({0.1, 0.2, 0.3}, 4);
  const std::vector<PointCloud> ref{a, a};  // identical twins
  const std::vector<PointCloud> gen{cloud_at({0.1, 0.2, 0.35}, 4)};
  const CovMmd r = cov_mmd(gen, ref);
  CHECK(r.cov == 50.0);  // only ref[0] counts as covered
}

TEST_CASE("cov_mmd: matches the exhaustive double loop") {
  Rng rng(15);
  std::vector<PointCloud> gen, ref;
  for (int k = 0; k < 4; ++k) {
    PointCloud c;
    for (int i = 0; i < 10; ++i)
      c.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    gen.push_back(std::move(c));
  }
  for (int k = 0; k < 5; ++k) {
    PointCloud c;
    for (int i = 0; i < 9; ++i)
      c.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    ref.push_back(std::move(c));
  }

  std::vector<char> covered(ref.size(), 0);
  for (const PointCloud& g : gen) {
    size_t arg = 0;
    double best = chamfer(g, ref[0]);
    for (size_t r = 1; r < ref.size(); ++r) {
      const double d = chamfer(g, ref[r]);
      if (d < best) {
        best = d;
        arg = r;
      }
    }
    covered[arg] = 1;
  }
  int hits = 0;
  for (char c : covered) hits += c;
  double mmd = 0;
  for (const PointCloud& r : ref) {
    double best = chamfer(gen[0], r);
    for (size_t g = 1; g < gen.size(); ++g) best = std::min(best, chamfer(gen[g], r));
    mmd += best;
  }
  mmd /= double(ref.size());

  const CovMmd got = cov_mmd(gen, ref);
  CHECK(got.cov == 100.0 * hits / double(ref.size()));
  CHECK(got.mmd == mmd);
}

TEST_CASE("voxel histogram: normalized, out-of-range points clamp to the boundary") {
  const std::vector<PointCloud> set{{{1.5, 0.0, 0.0}, {-2.0, 0.0, 0.0}}};
  const VoxelHistogram h = voxel_histogram(set);
  REQUIRE(int(h.size()) == kVoxelGrid * kVoxelGrid * kVoxelGrid);
  double sum = 0;
  for (double v : h) sum += v;
  CHECK(std::abs(sum - 1.0) < 1e-9);
  const int mid = kVoxelGrid / 2;
  CHECK(h[size_t(((kVoxelGrid - 1) * kVoxelGrid + mid) * kVoxelGrid + mid)] == 0.5);
  CHECK(h[size_t((0 * kVoxelGrid + mid) * kVoxelGrid + mid)] == 0.5);
}

TEST_CASE("jsd: identical sets at zero, disjoint supports at one") {
  const std::vector<PointCloud> a{cloud_at({-0.9, -0.9, -0.9}, 20)};
  const std::vector<PointCloud> b{cloud_at({0.9, 0.9, 0.9}, 30)};
  CHECK(jsd(a, a) == 0.0);
  CHECK(jsd(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(jsd(a, b) == jsd(b, a));
}

TEST_CASE("jsd: two-bin histograms match the closed form") {
  const VoxelHistogram p{0.5, 0.5};
  const VoxelHistogram q{1.0, 0.0};
  CHECK(jsd_histograms(p, q) == doctest::Approx(0.311278).epsilon(1e-4));
  CHECK_THROWS_WITH_AS(jsd_histograms(p, VoxelHistogram{1.0}), "jsd_histograms: size mismatch",
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(jsd_histograms(VoxelHistogram{0.4, 0.4}, q),
                       "jsd_histograms: histograms must sum to 1", std::invalid_argument);
}

TEST_CASE("novelty and uniqueness: clean, degenerate, and mixed batches") {
  const std::vector<uint64_t> train{100, 200, 300};

  const NoveltyUniqueness clean = novelty_uniqueness({7, 8, 9}, train);
  CHECK(clean.novel == 100.0);
  CHECK(clean.unique == 100.0);

  const NoveltyUniqueness copies = novelty_uniqueness({100, 100}, train);
  CHECK(copies.novel == 0.0);
  CHECK(copies.unique == 0.0);

  // one training copy plus two identical novel models
  const NoveltyUniqueness mixed = novelty_uniqueness({100, 55, 55}, train);
  CHECK(mixed.novel == doctest::Approx(66.6667).epsilon(1e-4));
  CHECK(mixed.unique == doctest::Approx(33.3333).epsilon(1e-4));
}

TEST_CASE("compute_metrics: a set reported against itself is perfect") {
  std::vector<BRepGraph> set;
  for (int k = 0; k < 3; ++k) {
    Rng rng(uint64_t(20 + k));
    set.push_back(gen_one(k % 2 ? kPrism : kCuboid, rng, 2));
  }
  const MetricReport r = compute_metrics(set, set, {}, 300, 17);
  CHECK(r.cov == 100.0);
  CHECK(r.mmd_x100 == 0.0);
  CHECK(r.jsd_x100 == 0.0);
  CHECK(r.novel == 100.0);  // empty training set: everything is new
  CHECK(r.valid == 100.0);  // exact procedural solids pass the lite check
  CHECK(r.n_gen == 3);
  CHECK(r.n_ref == 3);
}

TEST_CASE("metric_report: writes a deterministic JSON file") {
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "gbrep_metrics_test";
  fs::remove_all(base);
  fs::create_directories(base);

  DatasetManifest m;
  m.count = 4;
  m.seed = 31;
  std::vector<BRepGraph> graphs = gen_procedural(m);
  write_dataset_dir((base / "gen").string(), m, graphs);
  m.seed = 32;
  std::vector<BRepGraph> ref = gen_procedural(m);
  write_dataset_dir((base / "ref").string(), m, ref);

  const std::string out1 = (base / "report1.json").string();
  const std::string out2 = (base / "report2.json").string();
  const MetricReport r1 =
      metric_report((base / "gen").string(), (base / "ref").string(), {42}, out1, 200, 5);
  const MetricReport r2 =
      metric_report((base / "gen").string(), (base / "ref").string(), {42}, out2, 200, 5);
  CHECK(r1.cov == r2.cov);
  CHECK(r1.mmd_x100 == r2.mmd_x100);

  std::ifstream f1(out1), f2(out2);
  REQUIRE(f1.good());
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  for (const char* key : {"\"cov\"", "\"mmd_x100\"", "\"jsd_x100\"", "\"novel\"", "\"unique\"",
                          "\"valid\"", "\"n_gen\"", "\"n_ref\"", "\"seed\""})
    CHECK(s1.str().find(key) != std::string::npos);

  fs::remove_all(base);
}
