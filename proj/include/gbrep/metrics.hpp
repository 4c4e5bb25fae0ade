#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gbrep/brepgraph.hpp"
#include "gbrep/geometry.hpp"
#include "gbrep/rng.hpp"

namespace gbrep {

using PointCloud = std::vector<Vec3>;

// Points sampled on the model's face grids: a face is chosen proportionally
// to its summed grid-quad area, then a uniform random UV is interpolated
// bilinearly inside its patch.
PointCloud sample_points(const BRepGraph& g, int n = 2000, std::uint64_t seed = 0);

// Squared bidirectional Chamfer distance:
// mean_p min_q |p-q|^2 + mean_q min_p |q-p|^2.
double chamfer(const PointCloud& p, const PointCloud& q);

struct CovMmd {
  double cov = 0;  // percent of reference models that are some generation's
                   // nearest reference (argmin ties -> lowest index)
  double mmd = 0;  // mean over references of the closest generation's distance
};
CovMmd cov_mmd(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref);

inline constexpr int kVoxelGrid = 28;

// All clouds of a set pooled into one normalized occupancy histogram over
// [-1,1]^3; out-of-range points land in the boundary bins.
using VoxelHistogram = std::vector<double>;
VoxelHistogram voxel_histogram(const std::vector<PointCloud>& clouds);

// Jensen-Shannon divergence, base-2 logs, so the range is [0,1].
double jsd_histograms(const VoxelHistogram& p, const VoxelHistogram& q);
double jsd(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref);

struct NoveltyUniqueness {
  double novel = 0;   // percent of generations whose hash is not in training
  double unique = 0;  // percent of generations whose hash occurs once in the batch
};
NoveltyUniqueness novelty_uniqueness(const std::vector<std::uint64_t>& gen_hashes,
                                     const std::vector<std::uint64_t>& train_hashes);

struct MetricReport {
  double cov = 0;
  double mmd_x100 = 0;  // scaled by 10^2, like jsd_x100
  double jsd_x100 = 0;
  double novel = 0;
  double unique = 0;
  double valid = 0;  // percent passing validity_lite
  int n_gen = 0;
  int n_ref = 0;
  std::uint64_t seed = 0;
};

MetricReport compute_metrics(const std::vector<BRepGraph>& gen,
                             const std::vector<BRepGraph>& ref,
                             const std::vector<std::uint64_t>& train_hashes,
                             int points_per_cloud = 2000, std::uint64_t seed = 0);

std::string metrics_json(const MetricReport& r);

// Loads two dataset directories, evaluates gen against ref, writes the JSON
// report to out_path.
MetricReport metric_report(const std::string& gen_dir, const std::string& ref_dir,
                           const std::vector<std::uint64_t>& train_hashes,
                           const std::string& out_path, int points_per_cloud = 2000,
                           std::uint64_t seed = 0);

}  // namespace gbrep
