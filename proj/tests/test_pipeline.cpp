#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gbrep/dataset.hpp"
#include "gbrep/pipeline.hpp"

using namespace gbrep;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

BBox shifted_box(double s) {
  double v[6] = {-0.5 + s, -0.4 + s, -0.3 + s, 0.5 + s, 0.4 + s, 0.3 + s};
  return bbox_from6(v);
}

// tiny untrained model set over short production-law schedules
ModelSet tiny_models(int num_labels = 0) {
  NodeDenoiserConfig nc{1, 2, 16, 5, num_labels};
  EdgeDenoiserConfig ec{1, 2, 16, 30, num_labels};
  GraphDenoiserConfig gc{1, 2, 16, 4, 8, 5};
  return ModelSet{SurfVae({4, 8, 8, 8}, 1),
                  EdgeVae({4, 8, 8}, 2),
                  NodeBboxDenoiser<float>(nc, 3),
                  NodeLatentDenoiser<float>(nc, 4),
                  AdjacencyDenoiser<float>(gc, 5),
                  EdgeBboxDenoiser<float>(ec, 6),
                  EdgeLatentDenoiser<float>(ec, 7),
                  make_schedule(8),
                  make_schedule(6)};
}

SampleRunConfig tiny_sample_config() {
  SampleRunConfig cfg;
  cfg.n_samples = 3;
  cfg.max_faces = 5;
  cfg.max_edges = 30;
  cfg.bbox_pndm_steps = 4;
  cfg.bbox_ddpm_from = 4;
  cfg.latent_pndm_steps = 4;
  cfg.adj_pndm_steps = 4;
  cfg.edge_bbox_pndm_steps = 4;
  cfg.edge_latent_pndm_steps = 4;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint: bit-exact round trip restores an identical model") {
  TempDir dir("gbrep_ckpt_roundtrip");
  NodeDenoiserConfig nc{1, 2, 16, 5, 0};
  NodeBboxDenoiser<float> model(nc, 77);
  const Checkpoint before = make_checkpoint(model, 77, 9);
  const std::string path = (dir.path / "surf-bbox.ckpt").string();
  save_checkpoint(path, before);

  const Checkpoint after = load_checkpoint(path);
  CHECK(after.stage == "surf-bbox");
  CHECK(after.seed == 77);
  CHECK(after.schedule_T == 9);
  REQUIRE(after.tensors.size() == before.tensors.size());
  for (size_t i = 0; i < before.tensors.size(); ++i) {
    CHECK(after.tensors[i].name == before.tensors[i].name);
    CHECK(after.tensors[i].shape == before.tensors[i].shape);
    REQUIRE(after.tensors[i].data.size() == before.tensors[i].data.size());
    bool same = true;
    for (size_t k = 0; k < before.tensors[i].data.size(); ++k)
      same = same && after.tensors[i].data[k] == before.tensors[i].data[k];
    CHECK(same);
  }

  // the restored model computes the same function bit for bit
  NodeBboxDenoiser<float> restored = surf_bbox_from(after);
  TensorT<float> x({3, 6});
  Rng rng(5);
  for (auto& v : x.data) v = float(rng.normal());
  const TensorT<float> a = model.eval(x, 4);
  const TensorT<float> b = restored.eval(x, 4);
  REQUIRE(a.shape == b.shape);
  bool same = true;
  for (size_t i = 0; i < a.data.size(); ++i) same = same && a.data[i] == b.data[i];
  CHECK(same);
}

TEST_CASE("checkpoint: save is deterministic byte for byte") {
  TempDir dir("gbrep_ckpt_bytes");
  EdgeVae vae({4, 8, 8}, 3);
  const Checkpoint c = make_checkpoint(vae, 3);
  const std::string p1 = (dir.path / "a.ckpt").string();
  const std::string p2 = (dir.path / "b.ckpt").string();
  save_checkpoint(p1, c);
  save_checkpoint(p2, c);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str().size() > 0);
  CHECK(s1.str() == s2.str());
}

TEST_CASE("checkpoint: corrupted and truncated files are rejected") {
  TempDir dir("gbrep_ckpt_corrupt");
  GraphDenoiserConfig gc{1, 2, 16, 4, 8, 5};
  AdjacencyDenoiser<float> model(gc, 1);
  const std::string path = (dir.path / "adj.ckpt").string();
  save_checkpoint(path, make_checkpoint(model, 1, 6));

  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string blob = ss.str();
  in.close();

  const std::string bad = (dir.path / "bad.ckpt").string();
  {
    std::string b = blob;
    b[0] = 'X';
    std::ofstream f(bad, std::ios::binary);
    f << b;
  }
  const std::string magic_msg = "checkpoint magic mismatch: " + bad;
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), magic_msg.c_str(), std::runtime_error);

  {
    std::ofstream f(bad, std::ios::binary);
    f << blob.substr(0, blob.size() - 8);
  }
  CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);

  {
    std::ofstream f(bad, std::ios::binary);
    f << blob << "junk";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), "checkpoint has trailing bytes after tensor data",
                       std::runtime_error);

  const std::string missing_msg =
      "cannot read checkpoint: " + (dir.path / "nope.ckpt").string();
  CHECK_THROWS_WITH_AS(load_checkpoint((dir.path / "nope.ckpt").string()), missing_msg.c_str(),
                       std::runtime_error);
}

TEST_CASE("checkpoint: stage tag is enforced on restore") {
  TempDir dir("gbrep_ckpt_stage");
  NodeDenoiserConfig nc{1, 2, 16, 5, 0};
  NodeBboxDenoiser<float> model(nc, 2);
  const std::string path = (dir.path / "x.ckpt").string();
  save_checkpoint(path, make_checkpoint(model, 2, 9));
  const Checkpoint c = load_checkpoint(path);
  CHECK_THROWS_WITH_AS(surf_latent_from(c),
                       "checkpoint stage mismatch: have \"surf-bbox\", expected \"surf-latent\"",
                       std::runtime_error);
}

TEST_CASE("load_model_set: seven stages reload and schedule metadata must agree") {
  TempDir dir("gbrep_model_set");
  NodeDenoiserConfig nc{1, 2, 16, 5, 0};
  EdgeDenoiserConfig ec{1, 2, 16, 30, 0};
  GraphDenoiserConfig gc{1, 2, 16, 4, 8, 5};

  save_checkpoint((dir.path / "surf-vae.ckpt").string(),
                  make_checkpoint(SurfVae({4, 8, 8, 8}, 1), 1));
  save_checkpoint((dir.path / "edge-vae.ckpt").string(), make_checkpoint(EdgeVae({4, 8, 8}, 2), 2));
  save_checkpoint((dir.path / "surf-bbox.ckpt").string(),
                  make_checkpoint(NodeBboxDenoiser<float>(nc, 3), 3, 8));
  save_checkpoint((dir.path / "surf-latent.ckpt").string(),
                  make_checkpoint(NodeLatentDenoiser<float>(nc, 4), 4, 8));
  save_checkpoint((dir.path / "adj.ckpt").string(),
                  make_checkpoint(AdjacencyDenoiser<float>(gc, 5), 5, 6));
  save_checkpoint((dir.path / "edge-bbox.ckpt").string(),
                  make_checkpoint(EdgeBboxDenoiser<float>(ec, 6), 6, 8));
  save_checkpoint((dir.path / "edge-latent.ckpt").string(),
                  make_checkpoint(EdgeLatentDenoiser<float>(ec, 7), 7, 8));

  const ModelSet ms = load_model_set(dir.str());
  CHECK(ms.node_sched.T == 8);
  CHECK(ms.adj_sched.T == 6);
  CHECK(ms.surf_bbox.config().max_surfaces == 5);
  CHECK(ms.edge_bbox.config().max_edges == 30);

  // disagreeing node-stage schedules are caught at load time
  save_checkpoint((dir.path / "surf-latent.ckpt").string(),
                  make_checkpoint(NodeLatentDenoiser<float>(nc, 4), 4, 12));
  CHECK_THROWS_WITH_AS(
      load_model_set(dir.str()),
      "checkpoint schedule mismatch: surf-latent trained at T=12, surf-bbox at T=8",
      std::runtime_error);
}

// ---------------------------------------------------------------------------
// dataset bridge
// ---------------------------------------------------------------------------

TEST_CASE("graph_tensors_from: shapes, slot order, and box consistency") {
  Rng rng(3);
  const BRepGraph g = gen_one(kCuboid, rng, 2);
  const SurfVae sv({4, 8, 8, 8}, 1);
  const EdgeVae ev({4, 8, 8}, 2);
  const GraphTensors<float> t = graph_tensors_from(g, sv, ev);

  REQUIRE(t.bs.shape == std::vector<int>{6, 6});
  REQUIRE(t.zs.shape == std::vector<int>{6, 48});
  REQUIRE(t.adj.shape == std::vector<int>{6, 6});
  REQUIRE(t.be.shape == std::vector<int>{12, 6});
  REQUIRE(t.ze.shape == std::vector<int>{12, 12});
  REQUIRE(t.slots.size() == 12);
  CHECK(t.label == g.label);

  // slots are the lexicographic expansion of the counts
  CHECK(t.slots == to_edge_slots(g.adjacency, -1));

  // stage-one tokens are the stored face boxes
  for (int i = 0; i < 6; ++i) {
    double b6[6];
    bbox_to6(g.surfaces[size_t(i)].bbox, b6);
    for (int c = 0; c < 6; ++c) CHECK(std::abs(t.bs.at(i, c) - b6[c]) < 1e-6);
  }
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) CHECK(t.adj.at(i, j) == float(g.adjacency.at(i, j)));

  BRepGraph broken = g;
  broken.surfaces[2].grid.reset();
  CHECK_THROWS_WITH_AS(graph_tensors_from(broken, sv, ev),
                       "graph_tensors_from: surface 2 has no grid", std::runtime_error);

  BRepGraph fewer = g;
  fewer.edges.pop_back();
  CHECK_THROWS_WITH_AS(graph_tensors_from(fewer, sv, ev),
                       "graph_tensors_from: edge records disagree with adjacency counts",
                       std::runtime_error);
}

// ---------------------------------------------------------------------------
// dedup
// ---------------------------------------------------------------------------

TEST_CASE("dedup_bboxes: identical twins collapse to the first") {
  const std::vector<BBox> boxes{shifted_box(0.0), shifted_box(0.0)};
  CHECK(dedup_bboxes(boxes, 0.08) == std::vector<int>{0});
}

TEST_CASE("dedup_bboxes: strictly-greater difference survives") {
  const std::vector<BBox> boxes{shifted_box(0.0), shifted_box(0.081)};
  CHECK(dedup_bboxes(boxes, 0.08) == std::vector<int>{0, 1});
  // zero-based coordinates keep the 0.08 offset bit-exact, so the distance
  // equals the threshold and the pair merges
  double a6[6] = {0, 0, 0, 0, 0, 0};
  double b6[6] = {0.08, 0.08, 0.08, 0.08, 0.08, 0.08};
  const std::vector<BBox> at_threshold{bbox_from6(a6), bbox_from6(b6)};
  CHECK(dedup_bboxes(at_threshold, 0.08) == std::vector<int>{0});
}

TEST_CASE("dedup_bboxes: greedy chain keeps the endpoints") {
  // d(a,b) = d(b,c) = 0.05, d(a,c) = 0.10: b merges into a, c survives
  const std::vector<BBox> boxes{shifted_box(0.0), shifted_box(0.05), shifted_box(0.10)};
  CHECK(dedup_bboxes(boxes, 0.08) == std::vector<int>{0, 2});
}

TEST_CASE("dedup_bboxes: rejects empty input and bad thresholds") {
  CHECK_THROWS_WITH_AS(dedup_bboxes({}, 0.08), "dedup_bboxes: empty input",
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(dedup_bboxes({shifted_box(0.0)}, 0.0),
                       "dedup_bboxes: threshold must be positive", std::invalid_argument);
}

// ---------------------------------------------------------------------------
// stitch
// ---------------------------------------------------------------------------

TEST_CASE("stitch: exact cuboid snaps onto its eight corners with no defects") {
  Rng rng(6);
  const BRepGraph g = gen_one(kCuboid, rng, 2);
  const StitchResult st = stitch(g, 0.04);
  CHECK(st.defects.empty());
  CHECK(st.clusters_snapped == 8);

  // all 24 endpoint occurrences land on exactly 8 distinct corner points
  std::vector<Vec3> corners;
  for (const EdgeRecord& e : st.graph.edges)
    for (int end : {0, 1}) {
      const int row = end == 0 ? 0 : e.points->dim(0) - 1;
      const Vec3 p{e.points->at(row, 0), e.points->at(row, 1), e.points->at(row, 2)};
      bool found = false;
      for (const Vec3& c : corners)
        if ((p - c).norm() < 1e-12) found = true;
      if (!found) corners.push_back(p);
    }
  CHECK(corners.size() == 8);

  // face grids are untouched by stitching
  bool grids_same = true;
  for (size_t s = 0; s < g.surfaces.size(); ++s)
    for (int64_t q = 0; q < g.surfaces[s].grid->numel(); ++q)
      grids_same =
          grids_same && (*st.graph.surfaces[s].grid)[q] == (*g.surfaces[s].grid)[q];
  CHECK(grids_same);
}

TEST_CASE("stitch: a half-tolerance nudge is pulled back, triple-tolerance is a defect") {
  Rng rng(6);
  BRepGraph g = gen_one(kCuboid, rng, 2);
  const double orig = g.edges[0].points->at(0, 0);

  g.edges[0].points->at(0, 0) = orig + 0.02;  // tol_v / 2
  const StitchResult near = stitch(g, 0.04);
  CHECK(near.defects.empty());
  CHECK(near.clusters_snapped == 8);
  // snapped back within the tolerance of the unperturbed corner
  CHECK(std::abs(near.graph.edges[0].points->at(0, 0) - orig) < 0.04);

  g.edges[0].points->at(0, 0) = orig + 0.12;  // 3 * tol_v
  const StitchResult far = stitch(g, 0.04);
  CHECK(far.defects.size() > 0);
}

// ---------------------------------------------------------------------------
// validity_lite
// ---------------------------------------------------------------------------

TEST_CASE("validity_lite: exact procedural solids pass") {
  for (int fam : {kCuboid, kPrism, kWedge}) {
    Rng rng(uint64_t(30 + fam));
    const BRepGraph g = gen_one(fam, rng, 2);
    const ValidityReportLite v = validity_lite(g);
    INFO("family ", fam, " first reason: ", v.reasons.empty() ? "-" : v.reasons.front());
    CHECK(v.valid);
  }
}

TEST_CASE("validity_lite: removing a face's edges opens its loop") {
  Rng rng(8);
  BRepGraph g = gen_one(kCuboid, rng, 2);
  // drop the shared edge between faces 0 and 1 from both the counts and the
  // records
  REQUIRE(g.adjacency.at(0, 1) == 1);
  g.adjacency.set_pair(0, 1, 0);
  for (auto it = g.edges.begin(); it != g.edges.end(); ++it)
    if (it->i == 0 && it->j == 1) {
      g.edges.erase(it);
      break;
    }
  REQUIRE(validate_graph(g).ok());  // still structurally sound

  const ValidityReportLite v = validity_lite(g);
  CHECK(!v.valid);
  CHECK(v.reasons.size() > 0);
}

TEST_CASE("validity_lite: two disjoint solids in one graph are disconnected") {
  Rng rng(9);
  const BRepGraph a = gen_one(kCuboid, rng, 2);
  BRepGraph both = a;
  both.adjacency = AdjacencyMatrix(12, 2);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      both.adjacency.at(i, j) = a.adjacency.at(i, j);
      both.adjacency.at(i + 6, j + 6) = a.adjacency.at(i, j);
    }
  for (const SurfaceRecord& s : a.surfaces) both.surfaces.push_back(s);
  for (const EdgeRecord& e : a.edges) {
    EdgeRecord shifted = e;
    shifted.i += 6;
    shifted.j += 6;
    both.edges.push_back(shifted);
  }
  REQUIRE(validate_graph(both).ok());

  const ValidityReportLite v = validity_lite(both);
  CHECK(!v.valid);
  bool disconnected = false;
  for (const std::string& r : v.reasons)
    if (r.find("disconnected") != std::string::npos) disconnected = true;
  CHECK(disconnected);
}

TEST_CASE("validity_lite: structural violations and runaway geometry are reported") {
  Rng rng(10);
  BRepGraph g = gen_one(kCuboid, rng, 2);
  g.edges.pop_back();  // counts now promise an edge the records lack
  const ValidityReportLite v = validity_lite(g);
  CHECK(!v.valid);
  bool structural = false;
  for (const std::string& r : v.reasons)
    if (r.rfind("structure: ", 0) == 0) structural = true;
  CHECK(structural);

  BRepGraph far = gen_one(kCuboid, rng, 2);
  for (int64_t q = 0; q < far.surfaces[0].grid->numel(); ++q)
    (*far.surfaces[0].grid)[q] += 2.0;
  const ValidityReportLite w = validity_lite(far);
  bool oob = false;
  for (const std::string& r : w.reasons)
    if (r == "geometry outside the normalized box") oob = true;
  CHECK(oob);
}

// ---------------------------------------------------------------------------
// complexity report
// ---------------------------------------------------------------------------

TEST_CASE("complexity: per-face token counts dwarf the shared-edge counts") {
  const std::vector<ComplexityRow> rows = complexity_report({deepcad_profile(), abc_profile()});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].per_face_train == 600);
  CHECK(rows[0].per_face_infer == 900);
  CHECK(rows[0].total_train == 120);
  CHECK(rows[0].total_infer == 150);
  CHECK(rows[0].cost_ratio_train == doctest::Approx(25.0));
  CHECK(rows[1].per_face_train == 1500);
  CHECK(rows[1].per_face_infer == 3200);
  CHECK(rows[1].cost_ratio_infer == doctest::Approx(256.0));

  const std::string text = render_complexity(rows);
  CHECK(text.find("deepcad") != std::string::npos);
  CHECK(text.find("600/900") != std::string::npos);
  CHECK(text.find("120/150") != std::string::npos);
}

TEST_CASE("complexity: equal caps give a cost ratio of one") {
  const ComplexityProfile flat{"flat", 10, 2, 10, 2, 20, 20};
  const std::vector<ComplexityRow> rows = complexity_report({flat});
  CHECK(rows[0].cost_ratio_train == 1.0);
  CHECK(rows[0].cost_ratio_infer == 1.0);
}

// ---------------------------------------------------------------------------
// sampling contracts (untrained nets: structure only, no geometry quality)
// ---------------------------------------------------------------------------

TEST_CASE("sample_brep: every emitted graph honors the decode contract") {
  const ModelSet ms = tiny_models();
  const SampleRunConfig cfg = tiny_sample_config();
  const SampleRun run = sample_brep(ms, cfg);
  REQUIRE(run.outcomes.size() == 3);
  for (const SampleOutcome& o : run.outcomes) {
    REQUIRE(o.emitted);
    CHECK(validate_graph(o.graph).ok());
    const AdjacencyMatrix& a = o.graph.adjacency;
    int total = 0;
    for (int i = 0; i < a.n; ++i) {
      CHECK(a.at(i, i) == 0);
      for (int j = 0; j < a.n; ++j) {
        CHECK(a.at(i, j) == a.at(j, i));
        CHECK(a.at(i, j) >= 0);
        CHECK(a.at(i, j) <= a.e_max);
        if (i < j) total += a.at(i, j);
      }
    }
    CHECK(int(o.graph.edges.size()) == total);
    CHECK(o.zero_edges == o.graph.edges.empty());
    // decoded geometry is attached everywhere
    for (const SurfaceRecord& s : o.graph.surfaces) {
      CHECK(s.grid.has_value());
      CHECK(s.latent.has_value());
    }
    for (const EdgeRecord& e : o.graph.edges) {
      CHECK(e.points.has_value());
      CHECK(e.latent.has_value());
    }
  }
}

TEST_CASE("sample_brep: fixed seed reproduces byte-identical graphs") {
  const ModelSet ms = tiny_models();
  SampleRunConfig cfg = tiny_sample_config();
  cfg.n_samples = 2;
  const SampleRun a = sample_brep(ms, cfg);
  const SampleRun b = sample_brep(ms, cfg);
  for (size_t k = 0; k < a.outcomes.size(); ++k)
    CHECK(serialize(a.outcomes[k].graph) == serialize(b.outcomes[k].graph));

  cfg.seed += 1;
  const SampleRun c = sample_brep(ms, cfg);
  CHECK(serialize(a.outcomes[0].graph) != serialize(c.outcomes[0].graph));
}

TEST_CASE("sample_brep: config validation catches bad step counts and labels") {
  const ModelSet ms = tiny_models();
  SampleRunConfig cfg = tiny_sample_config();

  cfg.bbox_ddpm_from = 8;  // == node T
  CHECK_THROWS_WITH_AS(sample_brep(ms, cfg),
                       "sample_brep: the DDPM switch point must lie inside the node schedule",
                       std::invalid_argument);

  cfg = tiny_sample_config();
  cfg.adj_pndm_steps = 7;  // > adjacency T of 6
  CHECK_THROWS_WITH_AS(sample_brep(ms, cfg), "sample_brep: adjacency step count outside [1, T]",
                       std::invalid_argument);

  cfg = tiny_sample_config();
  cfg.dedup_threshold = 0.0;
  CHECK_THROWS_WITH_AS(sample_brep(ms, cfg), "sample_brep: dedup threshold must be positive",
                       std::invalid_argument);

  cfg = tiny_sample_config();
  cfg.label = 1;  // models are unconditional
  CHECK_THROWS_WITH_AS(sample_brep(ms, cfg),
                       "sample_brep: label 1 outside the conditional range of stage surf-bbox",
                       std::invalid_argument);
}

TEST_CASE("sample_brep: guided sampling runs when the stages are conditional") {
  const ModelSet ms = tiny_models(3);
  SampleRunConfig cfg = tiny_sample_config();
  cfg.n_samples = 1;
  cfg.label = 1;
  cfg.guidance = 1.5;
  const SampleRun run = sample_brep(ms, cfg);
  REQUIRE(run.outcomes.size() == 1);
  CHECK(run.outcomes[0].emitted);
  CHECK(run.outcomes[0].graph.label == 1);
  CHECK(validate_graph(run.outcomes[0].graph).ok());
}
