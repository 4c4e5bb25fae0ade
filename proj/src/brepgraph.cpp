#include "gbrep/brepgraph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace gbrep {

namespace {

using nlohmann::json;

std::string pair_key(int i, int j) {
  std::ostringstream ss;
  ss << "(" << i << "," << j << ")";
  return ss.str();
}

// Disjoint-set over endpoint occurrence ids.
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
};

json bbox_json(const BBox& b) {
  return json::array(
      {json::array({b.lo.x, b.lo.y, b.lo.z}), json::array({b.hi.x, b.hi.y, b.hi.z})});
}

BBox bbox_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2 || j[0].size() != 3 || j[1].size() != 3)
    throw std::runtime_error("malformed .bgraph: bbox");
  return {{j[0][0].get<double>(), j[0][1].get<double>(), j[0][2].get<double>()},
          {j[1][0].get<double>(), j[1][1].get<double>(), j[1][2].get<double>()}};
}

// points tensors serialize as nested arrays mirroring their shape
json tensor_json(const TensorD& t) {
  if (t.rank() == 2) {
    json rows = json::array();
    for (int i = 0; i < t.dim(0); ++i) {
      json row = json::array();
      for (int j = 0; j < t.dim(1); ++j) row.push_back(t.at(i, j));
      rows.push_back(std::move(row));
    }
    return rows;
  }
  if (t.rank() == 3) {
    json cube = json::array();
    for (int i = 0; i < t.dim(0); ++i) {
      json rows = json::array();
      for (int j = 0; j < t.dim(1); ++j) {
        json row = json::array();
        for (int k = 0; k < t.dim(2); ++k) row.push_back(t.at(i, j, k));
        rows.push_back(std::move(row));
      }
      cube.push_back(std::move(rows));
    }
    return cube;
  }
  throw std::logic_error("tensor_json: unsupported rank");
}

TensorD tensor_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw std::runtime_error("malformed .bgraph: tensor");
  if (j[0].is_array() && !j[0].empty() && j[0][0].is_array()) {
    const int a = static_cast<int>(j.size());
    const int b = static_cast<int>(j[0].size());
    const int c = static_cast<int>(j[0][0].size());
    TensorD t({a, b, c});
    for (int i = 0; i < a; ++i)
      for (int k = 0; k < b; ++k)
        for (int l = 0; l < c; ++l) t.at(i, k, l) = j[i][k][l].get<double>();
    return t;
  }
  if (j[0].is_array()) {
    const int a = static_cast<int>(j.size());
    const int b = static_cast<int>(j[0].size());
    TensorD t({a, b});
    for (int i = 0; i < a; ++i)
      for (int k = 0; k < b; ++k) t.at(i, k) = j[i][k].get<double>();
    return t;
  }
  throw std::runtime_error("malformed .bgraph: tensor nesting");
}

}  // namespace

ValidationReport validate_graph(const BRepGraph& g) {
  ValidationReport rep;
  const AdjacencyMatrix& a = g.adjacency;
  const int n = a.n;
  if (static_cast<int>(g.surfaces.size()) > n)
    rep.violations.push_back("more surfaces than adjacency rows");
  if (static_cast<std::size_t>(n) * n != a.counts.size() ||
      static_cast<std::size_t>(n) != a.mask.size()) {
    rep.violations.push_back("adjacency storage sizes inconsistent");
    return rep;
  }
  for (int i = 0; i < n; ++i) {
    if (a.at(i, i) != 0) rep.violations.push_back("self-loop at surface " + std::to_string(i));
    for (int j = 0; j < n; ++j) {
      if (a.at(i, j) != a.at(j, i))
        rep.violations.push_back("asymmetric counts at " + pair_key(i, j));
      if (a.at(i, j) < 0 || a.at(i, j) > a.e_max)
        rep.violations.push_back("count out of [0,e_max] at " + pair_key(i, j));
      if ((!a.mask[static_cast<std::size_t>(i)] || !a.mask[static_cast<std::size_t>(j)]) &&
          a.at(i, j) != 0)
        rep.violations.push_back("padded surface has nonzero count at " + pair_key(i, j));
    }
  }
  // per-pair edge record multiplicity must equal the matrix entry
  std::vector<int> found(static_cast<std::size_t>(n) * n, 0);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const EdgeRecord& r = g.edges[e];
    if (r.i >= r.j)
      rep.violations.push_back("edge " + std::to_string(e) + " endpoints not ordered i<j");
    if (r.i < 0 || r.j < 0 || r.i >= static_cast<int>(g.surfaces.size()) ||
        r.j >= static_cast<int>(g.surfaces.size())) {
      rep.violations.push_back("edge " + std::to_string(e) + " endpoint out of range");
      continue;
    }
    if (r.i < n && r.j < n) ++found[static_cast<std::size_t>(r.i) * n + r.j];
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (found[static_cast<std::size_t>(i) * n + j] != a.at(i, j))
        rep.violations.push_back("edge-count mismatch at " + pair_key(i, j) + ": matrix " +
                                 std::to_string(a.at(i, j)) + ", records " +
                                 std::to_string(found[static_cast<std::size_t>(i) * n + j]));
  return rep;
}

std::vector<std::pair<int, int>> to_edge_slots(const AdjacencyMatrix& a, int max_edges) {
  std::vector<std::pair<int, int>> slots;
  for (int i = 0; i < a.n; ++i)
    for (int j = i + 1; j < a.n; ++j)
      for (int c = 0; c < a.at(i, j); ++c) slots.emplace_back(i, j);
  if (max_edges >= 0 && static_cast<int>(slots.size()) > max_edges)
    throw std::runtime_error("to_edge_slots: " + std::to_string(slots.size()) +
                             " edges exceed the configured maximum " + std::to_string(max_edges));
  return slots;
}

VertexTopology recover_vertex_topology(const BRepGraph& g, double tol_v) {
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (!g.edges[e].points)
      throw std::runtime_error("recover_vertex_topology: edge " + std::to_string(e) +
                               " has no polyline");
  const int n_e = static_cast<int>(g.edges.size());
  auto endpoint = [&](int e, int end) -> Vec3 {
    const TensorD& p = *g.edges[static_cast<std::size_t>(e)].points;
    const int row = end == 0 ? 0 : p.dim(0) - 1;
    return {p.at(row, 0), p.at(row, 1), p.at(row, 2)};
  };

  UnionFind uf(2 * n_e);
  VertexTopology out;

  // occurrences per surface: every incident edge contributes both endpoints
  for (int s = 0; s < static_cast<int>(g.surfaces.size()); ++s) {
    std::vector<std::pair<int, int>> occ;
    for (int e = 0; e < n_e; ++e)
      if (g.edges[static_cast<std::size_t>(e)].i == s ||
          g.edges[static_cast<std::size_t>(e)].j == s) {
        occ.emplace_back(e, 0);
        occ.emplace_back(e, 1);
      }
    for (std::size_t a = 0; a < occ.size(); ++a) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_b = a;
      const Vec3 pa = endpoint(occ[a].first, occ[a].second);
      for (std::size_t b = 0; b < occ.size(); ++b) {
        if (b == a) continue;
        const double d = (pa - endpoint(occ[b].first, occ[b].second)).norm();
        if (d < best) {
          best = d;
          best_b = b;
        }
      }
      if (best_b != a && best <= tol_v) {
        uf.unite(occ[a].first * 2 + occ[a].second, occ[best_b].first * 2 + occ[best_b].second);
      } else {
        out.defects.push_back("open loop: surface " + std::to_string(s) + ", edge " +
                              std::to_string(occ[a].first) + " end " +
                              std::to_string(occ[a].second) + " has no partner within tol");
      }
    }
  }

  std::vector<int> root_to_cluster(static_cast<std::size_t>(2 * n_e), -1);
  for (int id = 0; id < 2 * n_e; ++id) {
    const int r = uf.find(id);
    if (root_to_cluster[static_cast<std::size_t>(r)] < 0) {
      root_to_cluster[static_cast<std::size_t>(r)] = static_cast<int>(out.clusters.size());
      out.clusters.emplace_back();
    }
    out.clusters[static_cast<std::size_t>(root_to_cluster[static_cast<std::size_t>(r)])]
        .emplace_back(id / 2, id % 2);
  }
  return out;
}

std::string serialize(const BRepGraph& g) {
  json root;
  root["version"] = 1;
  if (g.label >= 0)
    root["label"] = g.label;
  else
    root["label"] = nullptr;
  root["e_max"] = g.adjacency.e_max;
  json surfs = json::array();
  for (const SurfaceRecord& s : g.surfaces) {
    json js;
    js["bbox"] = bbox_json(s.bbox);
    js["grid"] = s.grid ? tensor_json(*s.grid) : json(nullptr);
    js["latent"] = s.latent ? tensor_json(*s.latent) : json(nullptr);
    surfs.push_back(std::move(js));
  }
  root["surfaces"] = std::move(surfs);
  json edges = json::array();
  for (const EdgeRecord& e : g.edges) {
    json je;
    je["i"] = e.i;
    je["j"] = e.j;
    je["bbox"] = bbox_json(e.bbox);
    je["points"] = e.points ? tensor_json(*e.points) : json(nullptr);
    je["latent"] = e.latent ? tensor_json(*e.latent) : json(nullptr);
    edges.push_back(std::move(je));
  }
  root["edges"] = std::move(edges);
  json adj = json::array();
  for (int i = 0; i < g.adjacency.n; ++i)
    for (int j = i + 1; j < g.adjacency.n; ++j)
      if (g.adjacency.at(i, j) > 0) adj.push_back(json::array({i, j, g.adjacency.at(i, j)}));
  root["adjacency"] = std::move(adj);
  return root.dump();
}

BRepGraph deserialize(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& ex) {
    throw std::runtime_error(std::string("malformed .bgraph: ") + ex.what());
  }
  if (!root.is_object() || !root.contains("version"))
    throw std::runtime_error("malformed .bgraph: missing version");
  if (root["version"].get<int>() != 1)
    throw std::runtime_error("version mismatch: .bgraph version " +
                             root["version"].dump() + " unsupported");
  if (!root.contains("surfaces") || !root.contains("edges") || !root.contains("adjacency") ||
      !root.contains("e_max"))
    throw std::runtime_error("malformed .bgraph: missing required keys");
  BRepGraph g;
  try {
    g.label = root["label"].is_null() ? -1 : root["label"].get<int>();
    const int n = static_cast<int>(root["surfaces"].size());
    g.adjacency = AdjacencyMatrix(n, root["e_max"].get<int>());
    for (const json& js : root["surfaces"]) {
      SurfaceRecord s;
      s.bbox = bbox_from_json(js.at("bbox"));
      if (!js.at("grid").is_null()) s.grid = tensor_from_json(js["grid"]);
      if (!js.at("latent").is_null()) s.latent = tensor_from_json(js["latent"]);
      g.surfaces.push_back(std::move(s));
    }
    for (const json& je : root["edges"]) {
      EdgeRecord e;
      e.i = je.at("i").get<int>();
      e.j = je.at("j").get<int>();
      e.bbox = bbox_from_json(je.at("bbox"));
      if (!je.at("points").is_null()) e.points = tensor_from_json(je["points"]);
      if (!je.at("latent").is_null()) e.latent = tensor_from_json(je["latent"]);
      g.edges.push_back(std::move(e));
    }
    for (const json& ja : root["adjacency"]) {
      const int i = ja.at(0).get<int>(), j = ja.at(1).get<int>(), c = ja.at(2).get<int>();
      if (i < 0 || j < 0 || i >= n || j >= n)
        throw std::runtime_error("malformed .bgraph: adjacency index out of range");
      g.adjacency.set_pair(i, j, c);
    }
  } catch (const json::exception& ex) {
    throw std::runtime_error(std::string("malformed .bgraph: ") + ex.what());
  }
  return g;
}

}  // namespace gbrep
