#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gbrep/brepgraph.hpp"
#include "gbrep/rng.hpp"

namespace gbrep {

enum Family : int {
  kCuboid = 0,
  kPrism = 1,
  kSplitCylinder = 2,
  kLBlock = 3,
  kWedge = 4,
};
inline constexpr int kNumFamilies = 5;
const char* family_name(int id);

struct DatasetLimits {
  int max_faces = 30;
  int max_edges_per_face = 20;
  int max_total_edges = 120;
  int e_max = 2;
};

struct DatasetManifest {
  std::vector<double> mix = {0.2, 0.2, 0.2, 0.2, 0.2};  // per family, sums to 1
  int count = 100;
  std::uint64_t seed = 0;
  DatasetLimits limits;
  double train_ratio = 0.90, val_ratio = 0.05, test_ratio = 0.05;
  bool labeled = true;
};

// One solid of the given family with randomized proportions, a random
// z-rotation and per-axis scale, normalized into [-1,1]^3, with exact
// adjacency, face grids, and edge polylines.
BRepGraph gen_one(int family, Rng& rng, int e_max);

// count solids drawn from the family mix; sample k is seeded by (seed, k).
std::vector<BRepGraph> gen_procedural(const DatasetManifest& m);

struct ModelHash {
  std::uint64_t value = 0;
  std::vector<std::uint64_t> per_surface;
};

// 6-bit quantizer over [-1,1]; -1 -> 0, +1 -> 63.
int quantize6(double v);

// Order-invariant content hash: per-surface FNV-1a over the quantized grid,
// hashes sorted ascending, then hashed again.
ModelHash model_hash(const BRepGraph& g);

struct FilterReport {
  std::vector<int> kept;                              // indices into the input
  std::vector<std::pair<int, std::string>> rejected;  // (index, reason)
};

// Drops graphs over any limit, then hash-duplicates (first occurrence kept).
FilterReport filter_dataset(const std::vector<BRepGraph>& graphs, const DatasetLimits& limits);

// Deterministic shuffle then split; val/test sizes round down, remainder
// goes to train. Returns index lists into the input.
struct SplitIndices {
  std::vector<int> train, val, test;
};
SplitIndices split_dataset(int n, double train_ratio, double val_ratio, double test_ratio,
                           std::uint64_t seed);

// Writes manifest.json, one zero-padded NNNNN.bgraph per model, files.txt
// (one filename per line), hashes.txt (aligned hex hashes), splits.json.
void write_dataset_dir(const std::string& dir, const DatasetManifest& m,
                       const std::vector<BRepGraph>& graphs);
struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<BRepGraph> graphs;
  SplitIndices splits;
  std::vector<std::uint64_t> hashes;
};
LoadedDataset load_dataset_dir(const std::string& dir);

}  // namespace gbrep
