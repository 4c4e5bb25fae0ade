#include "gbrep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "gbrep/dataset.hpp"
#include "gbrep/pipeline.hpp"
#include "json.hpp"

namespace gbrep {

namespace {

Vec3 grid_at(const TensorD& g, int i, int j) {
  return {g.at(i, j, 0), g.at(i, j, 1), g.at(i, j, 2)};
}

// quad split into two triangles; degenerate cells contribute zero
double quad_area(const Vec3& p00, const Vec3& p10, const Vec3& p01, const Vec3& p11) {
  const double a = 0.5 * (p10 - p00).cross(p11 - p00).norm();
  const double b = 0.5 * (p11 - p00).cross(p01 - p00).norm();
  return a + b;
}

double dist2(const Vec3& a, const Vec3& b) {
  const Vec3 d = a - b;
  return d.dot(d);
}

}  // namespace

PointCloud sample_points(const BRepGraph& g, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_points: need at least one point");
  const int nf = static_cast<int>(g.surfaces.size());
  if (nf == 0) throw std::invalid_argument("sample_points: graph has no surfaces");

  std::vector<double> cum(static_cast<std::size_t>(nf), 0.0);
  double total = 0;
  for (int s = 0; s < nf; ++s) {
    const SurfaceRecord& rec = g.surfaces[static_cast<std::size_t>(s)];
    if (!rec.grid)
      throw std::runtime_error("sample_points: surface " + std::to_string(s) + " has no grid");
    const TensorD& grid = *rec.grid;
    if (grid.rank() != 3 || grid.dim(2) != 3 || grid.dim(0) < 2 || grid.dim(1) < 2)
      throw std::runtime_error("sample_points: surface " + std::to_string(s) +
                               " grid has unexpected shape");
    double area = 0;
    for (int i = 0; i + 1 < grid.dim(0); ++i)
      for (int j = 0; j + 1 < grid.dim(1); ++j)
        area += quad_area(grid_at(grid, i, j), grid_at(grid, i + 1, j), grid_at(grid, i, j + 1),
                          grid_at(grid, i + 1, j + 1));
    total += area;
    cum[static_cast<std::size_t>(s)] = total;
  }
  if (!(total > 0)) throw std::runtime_error("sample_points: zero total surface area");

  Rng rng(seed, 0x9013);
  PointCloud out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double r = rng.uniform() * total;
    const int s = static_cast<int>(
        std::lower_bound(cum.begin(), cum.end(), r) - cum.begin());
    const TensorD& grid = *g.surfaces[static_cast<std::size_t>(std::min(s, nf - 1))].grid;
    const double u = rng.uniform() * (grid.dim(0) - 1);
    const double v = rng.uniform() * (grid.dim(1) - 1);
    const int i = std::min(static_cast<int>(u), grid.dim(0) - 2);
    const int j = std::min(static_cast<int>(v), grid.dim(1) - 2);
    const double fu = u - i, fv = v - j;
    const Vec3 p = grid_at(grid, i, j) * ((1 - fu) * (1 - fv)) +
                   grid_at(grid, i + 1, j) * (fu * (1 - fv)) +
                   grid_at(grid, i, j + 1) * ((1 - fu) * fv) +
                   grid_at(grid, i + 1, j + 1) * (fu * fv);
    out.push_back(p);
  }
  return out;
}

double chamfer(const PointCloud& p, const PointCloud& q) {
  if (p.empty() || q.empty()) throw std::invalid_argument("chamfer: empty cloud");
  double sp = 0;
  for (const Vec3& a : p) {
    double best = dist2(a, q[0]);
    for (std::size_t i = 1; i < q.size(); ++i) best = std::min(best, dist2(a, q[i]));
    sp += best;
  }
  double sq = 0;
  for (const Vec3& b : q) {
    double best = dist2(b, p[0]);
    for (std::size_t i = 1; i < p.size(); ++i) best = std::min(best, dist2(b, p[i]));
    sq += best;
  }
  return sp / static_cast<double>(p.size()) + sq / static_cast<double>(q.size());
}

CovMmd cov_mmd(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref) {
  if (gen.empty() || ref.empty()) throw std::invalid_argument("cov_mmd: empty set");
  std::vector<char> covered(ref.size(), 0);
  std::vector<double> ref_best(ref.size(), 0.0);
  std::vector<char> ref_seen(ref.size(), 0);
  for (const PointCloud& gcloud : gen) {
    int arg = 0;
    double best = 0;
    for (std::size_t r = 0; r < ref.size(); ++r) {
      const double d = chamfer(gcloud, ref[r]);
      if (r == 0 || d < best) {  // ties keep the lowest index
        best = d;
        arg = static_cast<int>(r);
      }
      if (!ref_seen[r] || d < ref_best[r]) {
        ref_seen[r] = 1;
        ref_best[r] = d;
      }
    }
    covered[static_cast<std::size_t>(arg)] = 1;
  }
  CovMmd out;
  int hits = 0;
  for (char c : covered) hits += c;
  out.cov = 100.0 * hits / static_cast<double>(ref.size());
  double s = 0;
  for (double d : ref_best) s += d;
  out.mmd = s / static_cast<double>(ref.size());
  return out;
}

VoxelHistogram voxel_histogram(const std::vector<PointCloud>& clouds) {
  const int n3 = kVoxelGrid * kVoxelGrid * kVoxelGrid;
  VoxelHistogram h(static_cast<std::size_t>(n3), 0.0);
  std::int64_t total = 0;
  auto bin = [](double v) {
    const int b = static_cast<int>((v + 1.0) / 2.0 * kVoxelGrid);
    return std::clamp(b, 0, kVoxelGrid - 1);
  };
  for (const PointCloud& c : clouds)
    for (const Vec3& p : c) {
      const int idx = (bin(p.x) * kVoxelGrid + bin(p.y)) * kVoxelGrid + bin(p.z);
      h[static_cast<std::size_t>(idx)] += 1.0;
      ++total;
    }
  if (total == 0) throw std::invalid_argument("voxel_histogram: no points");
  for (double& v : h) v /= static_cast<double>(total);
  return h;
}

double jsd_histograms(const VoxelHistogram& p, const VoxelHistogram& q) {
  if (p.size() != q.size() || p.empty())
    throw std::invalid_argument("jsd_histograms: size mismatch");
  double sp = 0, sq = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0 || q[i] < 0) throw std::invalid_argument("jsd_histograms: negative mass");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
    throw std::invalid_argument("jsd_histograms: histograms must sum to 1");
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) d += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0) d += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return d;
}

double jsd(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref) {
  return jsd_histograms(voxel_histogram(gen), voxel_histogram(ref));
}

NoveltyUniqueness novelty_uniqueness(const std::vector<std::uint64_t>& gen_hashes,
                                     const std::vector<std::uint64_t>& train_hashes) {
  if (gen_hashes.empty()) throw std::invalid_argument("novelty_uniqueness: no generated hashes");
  const std::unordered_set<std::uint64_t> train(train_hashes.begin(), train_hashes.end());
  std::unordered_map<std::uint64_t, int> count;
  for (std::uint64_t h : gen_hashes) ++count[h];
  int novel = 0, unique = 0;
  for (std::uint64_t h : gen_hashes) {
    if (!train.count(h)) ++novel;
    if (count[h] == 1) ++unique;
  }
  NoveltyUniqueness out;
  out.novel = 100.0 * novel / static_cast<double>(gen_hashes.size());
  out.unique = 100.0 * unique / static_cast<double>(gen_hashes.size());
  return out;
}

MetricReport compute_metrics(const std::vector<BRepGraph>& gen,
                             const std::vector<BRepGraph>& ref,
                             const std::vector<std::uint64_t>& train_hashes,
                             int points_per_cloud, std::uint64_t seed) {
  if (gen.empty() || ref.empty()) throw std::invalid_argument("compute_metrics: empty set");
  std::vector<PointCloud> gc, rc;
  gc.reserve(gen.size());
  rc.reserve(ref.size());
  // same per-index stream for both sets: evaluating a set against itself
  // then yields exactly (COV 100, MMD 0, JSD 0)
  for (std::size_t i = 0; i < gen.size(); ++i)
    gc.push_back(sample_points(gen[i], points_per_cloud, seed + i));
  for (std::size_t i = 0; i < ref.size(); ++i)
    rc.push_back(sample_points(ref[i], points_per_cloud, seed + i));

  MetricReport r;
  r.n_gen = static_cast<int>(gen.size());
  r.n_ref = static_cast<int>(ref.size());
  r.seed = seed;
  const CovMmd cm = cov_mmd(gc, rc);
  r.cov = cm.cov;
  r.mmd_x100 = 100.0 * cm.mmd;
  r.jsd_x100 = 100.0 * jsd(gc, rc);

  std::vector<std::uint64_t> gh;
  gh.reserve(gen.size());
  int valid = 0;
  for (const BRepGraph& g : gen) {
    gh.push_back(model_hash(g).value);
    if (validity_lite(g).valid) ++valid;
  }
  const NoveltyUniqueness nu = novelty_uniqueness(gh, train_hashes);
  r.novel = nu.novel;
  r.unique = nu.unique;
  r.valid = 100.0 * valid / static_cast<double>(gen.size());
  return r;
}

std::string metrics_json(const MetricReport& r) {
  nlohmann::json j;
  j["cov"] = r.cov;
  j["mmd_x100"] = r.mmd_x100;
  j["jsd_x100"] = r.jsd_x100;
  j["novel"] = r.novel;
  j["unique"] = r.unique;
  j["valid"] = r.valid;
  j["n_gen"] = r.n_gen;
  j["n_ref"] = r.n_ref;
  j["seed"] = r.seed;
  return j.dump(2);
}

MetricReport metric_report(const std::string& gen_dir, const std::string& ref_dir,
                           const std::vector<std::uint64_t>& train_hashes,
                           const std::string& out_path, int points_per_cloud,
                           std::uint64_t seed) {
  const LoadedDataset gen = load_dataset_dir(gen_dir);
  const LoadedDataset ref = load_dataset_dir(ref_dir);
  const MetricReport r =
      compute_metrics(gen.graphs, ref.graphs, train_hashes, points_per_cloud, seed);
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot write metric report: " + out_path);
  f << metrics_json(r) << "\n";
  return r;
}

}  // namespace gbrep
