#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gbrep/geometry.hpp"
#include "gbrep/tensor.hpp"

namespace gbrep {

struct SurfaceRecord {
  BBox bbox;
  std::optional<TensorD> grid;    // [32,32,3] normalized points
  std::optional<TensorD> latent;  // [4,4,3]
};

struct EdgeRecord {
  BBox bbox;
  std::optional<TensorD> points;  // [32,3] normalized points
  std::optional<TensorD> latent;  // [4,3]
  int i = 0, j = 0;               // incident surfaces, i < j
};

// Symmetric edge-count matrix between surfaces; diagonal is zero, padded
// surfaces have all-zero rows/columns.
struct AdjacencyMatrix {
  int n = 0;
  int e_max = 2;
  std::vector<int> counts;  // n*n row-major
  std::vector<bool> mask;   // n entries, true = real surface

  AdjacencyMatrix() = default;
  AdjacencyMatrix(int n_surf, int emax)
      : n(n_surf), e_max(emax), counts(static_cast<std::size_t>(n_surf) * n_surf, 0),
        mask(static_cast<std::size_t>(n_surf), true) {}

  int& at(int i, int j) { return counts[static_cast<std::size_t>(i) * n + j]; }
  int at(int i, int j) const { return counts[static_cast<std::size_t>(i) * n + j]; }
  void set_pair(int i, int j, int c) {
    at(i, j) = c;
    at(j, i) = c;
  }
};

struct BRepGraph {
  std::vector<SurfaceRecord> surfaces;
  std::vector<EdgeRecord> edges;
  AdjacencyMatrix adjacency;
  int label = -1;  // -1 = unlabeled
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Checks every structural invariant: symmetry, zero diagonal, count bounds,
// masked rows/cols zero, edge endpoints valid and matching the counts.
ValidationReport validate_graph(const BRepGraph& g);

// Upper-triangle (i,j) pairs in lexicographic order, each repeated
// counts[i][j] times. max_edges < 0 means unlimited.
std::vector<std::pair<int, int>> to_edge_slots(const AdjacencyMatrix& a, int max_edges = -1);

// One endpoint occurrence: (edge index, endpoint 0 = first point, 1 = last).
struct VertexTopology {
  std::vector<std::vector<std::pair<int, int>>> clusters;
  std::vector<std::string> defects;  // open-loop endpoints, one message each
};

// Merge nearest edge endpoints per surface within tol_v; shared edges carry
// cluster identity across surfaces. Needs all edge polylines present.
VertexTopology recover_vertex_topology(const BRepGraph& g, double tol_v = 0.04);

// `.bgraph` JSON text. Round trips exactly for integers and stored floats.
std::string serialize(const BRepGraph& g);
BRepGraph deserialize(const std::string& text);

}  // namespace gbrep
