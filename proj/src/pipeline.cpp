#include "gbrep/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace gbrep {

namespace {

using nlohmann::json;

static_assert(NodeLatentDenoiser<float>::kLatentDim ==
                  SurfVae::kLatSide * SurfVae::kLatSide * SurfVae::kLatC,
              "surface latent stage and surface autoencoder disagree on the latent size");
static_assert(EdgeLatentDenoiser<float>::kLatentDim == EdgeVae::kLatLen * EdgeVae::kLatC,
              "edge latent stage and edge autoencoder disagree on the latent size");

// ---- little-endian scalar packing (byte-explicit, not reinterpret casts) ----

void put_u32(std::string& s, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_u64(std::string& s, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + b])) << (8 * b);
  return v;
}

std::uint64_t get_u64(const std::string& s, std::size_t pos) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + b])) << (8 * b);
  return v;
}

void put_f32(std::string& s, float f) {
  std::uint32_t u = 0;
  std::memcpy(&u, &f, 4);
  put_u32(s, u);
}

float get_f32(const std::string& s, std::size_t pos) {
  const std::uint32_t u = get_u32(s, pos);
  float f = 0;
  std::memcpy(&f, &u, 4);
  return f;
}

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::runtime_error("checkpoint tensor shape has a negative dimension");
    n *= d;
  }
  return n;
}

// ---- config snapshots ----

json node_config_json(const NodeDenoiserConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"embed_dim", c.embed_dim},
          {"max_surfaces", c.max_surfaces},
          {"num_labels", c.num_labels}};
}

NodeDenoiserConfig node_config_from(const json& j) {
  NodeDenoiserConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.max_surfaces = j.at("max_surfaces").get<int>();
  c.num_labels = j.at("num_labels").get<int>();
  return c;
}

json edge_config_json(const EdgeDenoiserConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"embed_dim", c.embed_dim},
          {"max_edges", c.max_edges},
          {"num_labels", c.num_labels}};
}

EdgeDenoiserConfig edge_config_from(const json& j) {
  EdgeDenoiserConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.max_edges = j.at("max_edges").get<int>();
  c.num_labels = j.at("num_labels").get<int>();
  return c;
}

json graph_config_json(const GraphDenoiserConfig& c) {
  return {{"layers", c.layers},       {"heads", c.heads},
          {"node_dim", c.node_dim},   {"edge_dim", c.edge_dim},
          {"time_dim", c.time_dim},   {"max_surfaces", c.max_surfaces}};
}

GraphDenoiserConfig graph_config_from(const json& j) {
  GraphDenoiserConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.node_dim = j.at("node_dim").get<int>();
  c.edge_dim = j.at("edge_dim").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.max_surfaces = j.at("max_surfaces").get<int>();
  return c;
}

std::vector<NamedTensor> snapshot_params(const ParamStore<float>& ps) {
  std::vector<NamedTensor> out;
  out.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i)
    out.push_back({ps.name_at(i), ps.at(i).shape, ps.at(i).data});
  return out;
}

void restore_params(const Checkpoint& c, ParamStore<float>& ps) {
  if (c.tensors.size() != ps.size())
    throw std::runtime_error("checkpoint layout mismatch: " + std::to_string(c.tensors.size()) +
                             " stored tensors for " + std::to_string(ps.size()) + " parameters");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const NamedTensor& t = c.tensors[i];
    TensorT<float>& p = ps.at(i);
    if (t.name != ps.name_at(i) || t.shape != p.shape)
      throw std::runtime_error("checkpoint layout mismatch at " + ps.name_at(i));
    p.data = t.data;
  }
}

void check_stage(const Checkpoint& c, const char* want) {
  if (c.stage != want)
    throw std::runtime_error("checkpoint stage mismatch: have \"" + c.stage + "\", expected \"" +
                             want + "\"");
}

json parse_config(const Checkpoint& c) {
  try {
    return json::parse(c.config_json.empty() ? "{}" : c.config_json);
  } catch (const json::exception& ex) {
    throw std::runtime_error(std::string("checkpoint config corrupt: ") + ex.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  json header;
  header["meta"] = {{"stage", c.stage},
                    {"config", json::parse(c.config_json.empty() ? "{}" : c.config_json)},
                    {"seed", c.seed},
                    {"schedule_T", c.schedule_T}};
  json tens = json::array();
  for (const NamedTensor& t : c.tensors) {
    if (shape_numel(t.shape) != static_cast<std::int64_t>(t.data.size()))
      throw std::logic_error("checkpoint tensor " + t.name + ": data does not match shape");
    tens.push_back({{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}});
  }
  header["tensors"] = std::move(tens);
  const std::string hs = header.dump();

  std::string blob;
  blob += "BGCK";
  put_u32(blob, 1);
  put_u64(blob, hs.size());
  blob += hs;
  for (const NamedTensor& t : c.tensors)
    for (float v : t.data) put_f32(blob, v);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw std::runtime_error("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string blob = ss.str();

  if (blob.size() < 16 || blob.compare(0, 4, "BGCK") != 0)
    throw std::runtime_error("checkpoint magic mismatch: " + path);
  const std::uint32_t version = get_u32(blob, 4);
  if (version != 1)
    throw std::runtime_error("checkpoint version " + std::to_string(version) + " unsupported: " +
                             path);
  const std::uint64_t hlen = get_u64(blob, 8);
  if (16 + hlen > blob.size())
    throw std::runtime_error("checkpoint header truncated: " + path);

  json header;
  try {
    header = json::parse(blob.substr(16, hlen));
  } catch (const json::exception& ex) {
    throw std::runtime_error("checkpoint header corrupt: " + std::string(ex.what()));
  }

  Checkpoint c;
  try {
    const json& meta = header.at("meta");
    c.stage = meta.at("stage").get<std::string>();
    c.config_json = meta.at("config").dump();
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.schedule_T = meta.at("schedule_T").get<int>();
    std::size_t pos = 16 + hlen;
    for (const json& jt : header.at("tensors")) {
      NamedTensor t;
      t.name = jt.at("name").get<std::string>();
      if (jt.at("dtype").get<std::string>() != "f32")
        throw std::runtime_error("checkpoint dtype " + jt.at("dtype").get<std::string>() +
                                 " unsupported");
      t.shape = jt.at("shape").get<std::vector<int>>();
      const std::int64_t n = shape_numel(t.shape);
      if (pos + static_cast<std::size_t>(n) * 4 > blob.size())
        throw std::runtime_error("checkpoint data truncated at tensor " + t.name);
      t.data.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i)
        t.data[static_cast<std::size_t>(i)] = get_f32(blob, pos + static_cast<std::size_t>(i) * 4);
      pos += static_cast<std::size_t>(n) * 4;
      c.tensors.push_back(std::move(t));
    }
    if (pos != blob.size())
      throw std::runtime_error("checkpoint has trailing bytes after tensor data");
  } catch (const json::exception& ex) {
    throw std::runtime_error("checkpoint header corrupt: " + std::string(ex.what()));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Snapshots and restores
// ---------------------------------------------------------------------------

Checkpoint make_checkpoint(const SurfVae& m, std::uint64_t seed) {
  return {"surf-vae", json{{"widths", m.widths()}}.dump(), seed, 0, snapshot_params(m.params())};
}

Checkpoint make_checkpoint(const EdgeVae& m, std::uint64_t seed) {
  return {"edge-vae", json{{"widths", m.widths()}}.dump(), seed, 0, snapshot_params(m.params())};
}

Checkpoint make_checkpoint(const NodeBboxDenoiser<float>& m, std::uint64_t seed, int schedule_T) {
  return {"surf-bbox", node_config_json(m.config()).dump(), seed, schedule_T,
          snapshot_params(m.params())};
}

Checkpoint make_checkpoint(const NodeLatentDenoiser<float>& m, std::uint64_t seed,
                           int schedule_T) {
  return {"surf-latent", node_config_json(m.config()).dump(), seed, schedule_T,
          snapshot_params(m.params())};
}

Checkpoint make_checkpoint(const AdjacencyDenoiser<float>& m, std::uint64_t seed,
                           int schedule_T) {
  return {"adj", graph_config_json(m.config()).dump(), seed, schedule_T,
          snapshot_params(m.params())};
}

Checkpoint make_checkpoint(const EdgeBboxDenoiser<float>& m, std::uint64_t seed, int schedule_T) {
  return {"edge-bbox", edge_config_json(m.config()).dump(), seed, schedule_T,
          snapshot_params(m.params())};
}

Checkpoint make_checkpoint(const EdgeLatentDenoiser<float>& m, std::uint64_t seed,
                           int schedule_T) {
  return {"edge-latent", edge_config_json(m.config()).dump(), seed, schedule_T,
          snapshot_params(m.params())};
}

SurfVae surf_vae_from(const Checkpoint& c) {
  check_stage(c, "surf-vae");
  SurfVae m(parse_config(c).at("widths").get<std::vector<int>>(), c.seed);
  restore_params(c, m.params());
  return m;
}

EdgeVae edge_vae_from(const Checkpoint& c) {
  check_stage(c, "edge-vae");
  EdgeVae m(parse_config(c).at("widths").get<std::vector<int>>(), c.seed);
  restore_params(c, m.params());
  return m;
}

NodeBboxDenoiser<float> surf_bbox_from(const Checkpoint& c) {
  check_stage(c, "surf-bbox");
  NodeBboxDenoiser<float> m(node_config_from(parse_config(c)), c.seed);
  restore_params(c, m.params());
  return m;
}

NodeLatentDenoiser<float> surf_latent_from(const Checkpoint& c) {
  check_stage(c, "surf-latent");
  NodeLatentDenoiser<float> m(node_config_from(parse_config(c)), c.seed);
  restore_params(c, m.params());
  return m;
}

AdjacencyDenoiser<float> adjacency_from(const Checkpoint& c) {
  check_stage(c, "adj");
  AdjacencyDenoiser<float> m(graph_config_from(parse_config(c)), c.seed);
  restore_params(c, m.params());
  return m;
}

EdgeBboxDenoiser<float> edge_bbox_from(const Checkpoint& c) {
  check_stage(c, "edge-bbox");
  EdgeBboxDenoiser<float> m(edge_config_from(parse_config(c)), c.seed);
  restore_params(c, m.params());
  return m;
}

EdgeLatentDenoiser<float> edge_latent_from(const Checkpoint& c) {
  check_stage(c, "edge-latent");
  EdgeLatentDenoiser<float> m(edge_config_from(parse_config(c)), c.seed);
  restore_params(c, m.params());
  return m;
}

ModelSet load_model_set(const std::string& dir) {
  auto path = [&](const char* stage) { return dir + "/" + stage + ".ckpt"; };
  const Checkpoint c_sv = load_checkpoint(path("surf-vae"));
  const Checkpoint c_ev = load_checkpoint(path("edge-vae"));
  const Checkpoint c_sb = load_checkpoint(path("surf-bbox"));
  const Checkpoint c_sl = load_checkpoint(path("surf-latent"));
  const Checkpoint c_adj = load_checkpoint(path("adj"));
  const Checkpoint c_eb = load_checkpoint(path("edge-bbox"));
  const Checkpoint c_el = load_checkpoint(path("edge-latent"));

  const int node_T = c_sb.schedule_T;
  for (const Checkpoint* c : {&c_sl, &c_eb, &c_el})
    if (c->schedule_T != node_T)
      throw std::runtime_error("checkpoint schedule mismatch: " + c->stage + " trained at T=" +
                               std::to_string(c->schedule_T) + ", surf-bbox at T=" +
                               std::to_string(node_T));
  if (node_T < 2 || c_adj.schedule_T < 2)
    throw std::runtime_error("checkpoint schedule length out of range");

  return ModelSet{surf_vae_from(c_sv),    edge_vae_from(c_ev),  surf_bbox_from(c_sb),
                  surf_latent_from(c_sl), adjacency_from(c_adj), edge_bbox_from(c_eb),
                  edge_latent_from(c_el), make_schedule(node_T),
                  make_schedule(c_adj.schedule_T)};
}

// ---------------------------------------------------------------------------
// Dataset bridge
// ---------------------------------------------------------------------------

GraphTensors<float> graph_tensors_from(const BRepGraph& g, const SurfVae& sv,
                                       const EdgeVae& ev) {
  const int n = static_cast<int>(g.surfaces.size());
  if (n == 0) throw std::invalid_argument("graph_tensors_from: graph has no surfaces");
  if (g.adjacency.n != n)
    throw std::invalid_argument("graph_tensors_from: adjacency size " +
                                std::to_string(g.adjacency.n) +
                                " does not match surface count " + std::to_string(n));

  GraphTensors<float> out;
  out.label = g.label;
  out.bs = TensorT<float>({n, 6});
  TensorT<float> grids({n, SurfVae::kGrid, SurfVae::kGrid, 3});
  const std::int64_t grid_numel = static_cast<std::int64_t>(SurfVae::kGrid) * SurfVae::kGrid * 3;
  for (int i = 0; i < n; ++i) {
    const SurfaceRecord& s = g.surfaces[static_cast<std::size_t>(i)];
    if (!s.grid)
      throw std::runtime_error("graph_tensors_from: surface " + std::to_string(i) +
                               " has no grid");
    if (s.grid->shape != std::vector<int>{SurfVae::kGrid, SurfVae::kGrid, 3})
      throw std::runtime_error("graph_tensors_from: surface " + std::to_string(i) +
                               " grid has unexpected shape");
    // each surface is encoded in its own box frame; the box itself becomes
    // the stage-one token
    const Decomposed d = decompose_bbox(*s.grid);
    double b6[6];
    bbox_to6(d.bbox, b6);
    for (int c = 0; c < 6; ++c) out.bs.at(i, c) = static_cast<float>(b6[c]);
    for (std::int64_t q = 0; q < grid_numel; ++q)
      grids.data[static_cast<std::size_t>(i * grid_numel + q)] = static_cast<float>(d.normed[q]);
  }
  const auto surf_post = sv.encode_eval(grids);  // posterior mean is the latent
  out.zs = TensorT<float>({n, NodeLatentDenoiser<float>::kLatentDim}, surf_post.first.data);

  out.adj = TensorT<float>({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.adj.at(i, j) = static_cast<float>(g.adjacency.at(i, j));

  out.slots = to_edge_slots(g.adjacency, -1);
  const int m = static_cast<int>(out.slots.size());
  if (static_cast<int>(g.edges.size()) != m)
    throw std::runtime_error("graph_tensors_from: edge records disagree with adjacency counts");

  std::vector<int> order(g.edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const EdgeRecord& ea = g.edges[static_cast<std::size_t>(a)];
    const EdgeRecord& eb = g.edges[static_cast<std::size_t>(b)];
    return std::pair(ea.i, ea.j) < std::pair(eb.i, eb.j);
  });

  out.be = TensorT<float>({m, 6});
  out.ze = TensorT<float>({m, EdgeLatentDenoiser<float>::kLatentDim});
  if (m > 0) {
    TensorT<float> polys({m, EdgeVae::kPoints, 3});
    const std::int64_t poly_numel = static_cast<std::int64_t>(EdgeVae::kPoints) * 3;
    for (int k = 0; k < m; ++k) {
      const EdgeRecord& e = g.edges[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
      if (std::pair(e.i, e.j) != out.slots[static_cast<std::size_t>(k)])
        throw std::runtime_error("graph_tensors_from: edge records disagree with adjacency counts");
      if (!e.points)
        throw std::runtime_error("graph_tensors_from: edge " + std::to_string(order[
                                     static_cast<std::size_t>(k)]) + " has no polyline");
      if (e.points->shape != std::vector<int>{EdgeVae::kPoints, 3})
        throw std::runtime_error("graph_tensors_from: edge " + std::to_string(order[
                                     static_cast<std::size_t>(k)]) +
                                 " polyline has unexpected shape");
      const Decomposed d = decompose_bbox(*e.points);
      double b6[6];
      bbox_to6(d.bbox, b6);
      for (int c = 0; c < 6; ++c) out.be.at(k, c) = static_cast<float>(b6[c]);
      for (std::int64_t q = 0; q < poly_numel; ++q)
        polys.data[static_cast<std::size_t>(k * poly_numel + q)] = static_cast<float>(d.normed[q]);
    }
    const auto edge_post = ev.encode_eval(polys);
    out.ze = TensorT<float>({m, EdgeLatentDenoiser<float>::kLatentDim}, edge_post.first.data);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::vector<int> dedup_bboxes(const std::vector<BBox>& boxes, double threshold) {
  if (boxes.empty()) throw std::invalid_argument("dedup_bboxes: empty input");
  if (threshold <= 0) throw std::invalid_argument("dedup_bboxes: threshold must be positive");
  std::vector<int> kept;
  for (int i = 0; i < static_cast<int>(boxes.size()); ++i) {
    double a[6];
    bbox_to6(boxes[static_cast<std::size_t>(i)], a);
    bool duplicate = false;
    for (int k : kept) {
      double b[6];
      bbox_to6(boxes[static_cast<std::size_t>(k)], b);
      double d = 0;
      for (int c = 0; c < 6; ++c) d = std::max(d, std::abs(a[c] - b[c]));
      if (d <= threshold) {  // strictly-greater differences survive
        duplicate = true;
        break;
      }
    }
    if (!duplicate) kept.push_back(i);
  }
  return kept;
}

namespace {

void check_sample_config(const ModelSet& ms, const SampleRunConfig& cfg) {
  if (cfg.n_samples < 0) throw std::invalid_argument("sample_brep: n_samples must be >= 0");
  if (cfg.max_faces < 1) throw std::invalid_argument("sample_brep: max_faces must be positive");
  if (cfg.max_edges < 0) throw std::invalid_argument("sample_brep: max_edges must be >= 0");
  if (cfg.e_max < 0) throw std::invalid_argument("sample_brep: e_max must be >= 0");
  if (cfg.dedup_threshold <= 0)
    throw std::invalid_argument("sample_brep: dedup threshold must be positive");
  if (cfg.bbox_ddpm_from < 1 || cfg.bbox_ddpm_from >= ms.node_sched.T)
    throw std::invalid_argument("sample_brep: the DDPM switch point must lie inside the node"
                                " schedule");
  auto check_steps = [](int steps, int T, const char* who) {
    if (steps < 1 || steps > T)
      throw std::invalid_argument(std::string("sample_brep: ") + who +
                                  " step count outside [1, T]");
  };
  check_steps(cfg.bbox_pndm_steps, ms.node_sched.T, "box");
  check_steps(cfg.latent_pndm_steps, ms.node_sched.T, "latent");
  check_steps(cfg.adj_pndm_steps, ms.adj_sched.T, "adjacency");
  check_steps(cfg.edge_bbox_pndm_steps, ms.node_sched.T, "edge box");
  check_steps(cfg.edge_latent_pndm_steps, ms.node_sched.T, "edge latent");
  if (cfg.label >= 0) {
    auto check_labels = [&](int num_labels, const char* stage) {
      if (cfg.label >= num_labels)
        throw std::invalid_argument("sample_brep: label " + std::to_string(cfg.label) +
                                    " outside the conditional range of stage " + stage);
    };
    check_labels(ms.surf_bbox.config().num_labels, "surf-bbox");
    check_labels(ms.surf_latent.config().num_labels, "surf-latent");
    check_labels(ms.edge_bbox.config().num_labels, "edge-bbox");
    check_labels(ms.edge_latent.config().num_labels, "edge-latent");
  }
}

TensorD randn_tensor(std::vector<int> shape, Rng& rng) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

SampleRun sample_brep(const ModelSet& ms, const SampleRunConfig& cfg) {
  check_sample_config(ms, cfg);
  const bool guided = cfg.label >= 0;

  SampleRun run;
  run.outcomes.reserve(static_cast<std::size_t>(cfg.n_samples));
  for (int k = 0; k < cfg.n_samples; ++k) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(k));
    SampleOutcome out;

    // 1. surface boxes: strided PNDM into ancestral DDPM
    const DenoiseFn f_box = [&](const TensorD& x, int t) {
      const TensorT<float> xf = x.cast<float>();
      TensorT<float> e = ms.surf_bbox.eval(xf, t, -1);
      if (guided) e = cfg_epsilon(ms.surf_bbox.eval(xf, t, cfg.label), e, cfg.guidance);
      return e.cast<double>();
    };
    const TensorD box_rows =
        hybrid_sample(f_box, randn_tensor({cfg.max_faces, 6}, rng), ms.node_sched, rng,
                      cfg.bbox_pndm_steps, cfg.bbox_ddpm_from);

    // sampled corners may come out swapped; later stages trained on ordered ones
    std::vector<BBox> boxes(static_cast<std::size_t>(cfg.max_faces));
    for (int i = 0; i < cfg.max_faces; ++i)
      boxes[static_cast<std::size_t>(i)] =
          canonicalize_bbox(bbox_from6(&box_rows.data[static_cast<std::size_t>(i) * 6]));

    // 2. duplicate removal
    const std::vector<int> kept = dedup_bboxes(boxes, cfg.dedup_threshold);
    const int n = static_cast<int>(kept.size());
    if (n == 0) {
      out.note = "skipped: no surfaces survived dedup";
      run.outcomes.push_back(std::move(out));
      continue;
    }
    TensorT<float> bsf({n, 6});
    for (int i = 0; i < n; ++i) {
      double b6[6];
      bbox_to6(boxes[static_cast<std::size_t>(kept[static_cast<std::size_t>(i)])], b6);
      for (int c = 0; c < 6; ++c) bsf.at(i, c) = static_cast<float>(b6[c]);
    }

    // 3. surface latents conditioned on the kept boxes
    const DenoiseFn f_lat = [&](const TensorD& z, int t) {
      const TensorT<float> zf = z.cast<float>();
      TensorT<float> e = ms.surf_latent.eval(zf, t, bsf, -1);
      if (guided) e = cfg_epsilon(ms.surf_latent.eval(zf, t, bsf, cfg.label), e, cfg.guidance);
      return e.cast<double>();
    };
    const TensorD zs =
        pndm_sample(f_lat, randn_tensor({n, NodeLatentDenoiser<float>::kLatentDim}, rng),
                    cfg.latent_pndm_steps, ms.node_sched);
    const TensorT<float> zsf = zs.cast<float>();

    // 4. adjacency: PNDM over symmetric states, then clip and round
    const DenoiseFn f_adj = [&](const TensorD& a, int t) {
      TensorD s = a;  // re-impose exact symmetry and the empty diagonal before
                      // the net sees the state; bitwise no-op on the clean path
      for (int i = 0; i < n; ++i) {
        s.at(i, i) = 0.0;
        for (int j = i + 1; j < n; ++j) {
          const double mid = 0.5 * (s.at(i, j) + s.at(j, i));
          s.at(i, j) = mid;
          s.at(j, i) = mid;
        }
      }
      return ms.adjacency.eval(s.cast<float>(), t, zsf, bsf).cast<double>();
    };
    const TensorD araw =
        pndm_sample(f_adj, symmetric_noise(n, rng), cfg.adj_pndm_steps, ms.adj_sched);

    AdjacencyMatrix adj(n, cfg.e_max);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double v = std::clamp(0.5 * (araw.at(i, j) + araw.at(j, i)),
                                    0.0, static_cast<double>(cfg.e_max));
        adj.set_pair(i, j, static_cast<int>(std::llround(v)));
      }

    // 5. expand counts into edge slots
    EdgeSlots slots;
    try {
      slots = to_edge_slots(adj, cfg.max_edges);
    } catch (const std::runtime_error& ex) {
      out.note = std::string("skipped: ") + ex.what();
      run.outcomes.push_back(std::move(out));
      continue;
    }
    const int m = static_cast<int>(slots.size());

    BRepGraph g;
    g.label = cfg.label;
    g.adjacency = adj;

    // decode surfaces back into their box frames
    const TensorT<float> surf_lat(
        {n, SurfVae::kLatSide, SurfVae::kLatSide, SurfVae::kLatC}, zsf.data);
    const TensorT<float> grids = ms.surf_vae.decode_eval(surf_lat);
    const std::int64_t grid_numel =
        static_cast<std::int64_t>(SurfVae::kGrid) * SurfVae::kGrid * 3;
    for (int i = 0; i < n; ++i) {
      SurfaceRecord s;
      s.bbox = boxes[static_cast<std::size_t>(kept[static_cast<std::size_t>(i)])];
      TensorD normed({SurfVae::kGrid, SurfVae::kGrid, 3});
      for (std::int64_t q = 0; q < grid_numel; ++q)
        normed[q] = static_cast<double>(grids.data[static_cast<std::size_t>(i * grid_numel + q)]);
      s.grid = recompose_bbox(s.bbox, normed);
      TensorD lat({SurfVae::kLatSide, SurfVae::kLatSide, SurfVae::kLatC});
      for (std::int64_t q = 0; q < lat.numel(); ++q)
        lat[q] = zs.data[static_cast<std::size_t>(i * lat.numel() + q)];
      s.latent = std::move(lat);
      g.surfaces.push_back(std::move(s));
    }

    if (m == 0) {
      out.zero_edges = true;
      out.note = "zero edges decoded";
    } else {
      // 6. edge boxes on the sampled surface pairs
      const DenoiseFn f_ebox = [&](const TensorD& x, int t) {
        const TensorT<float> xf = x.cast<float>();
        TensorT<float> e = ms.edge_bbox.eval(xf, t, slots, zsf, bsf, -1);
        if (guided)
          e = cfg_epsilon(ms.edge_bbox.eval(xf, t, slots, zsf, bsf, cfg.label), e, cfg.guidance);
        return e.cast<double>();
      };
      const TensorD ebox_rows = pndm_sample(f_ebox, randn_tensor({m, 6}, rng),
                                            cfg.edge_bbox_pndm_steps, ms.node_sched);
      std::vector<BBox> eboxes(static_cast<std::size_t>(m));
      TensorT<float> bef({m, 6});
      for (int q = 0; q < m; ++q) {
        eboxes[static_cast<std::size_t>(q)] =
            canonicalize_bbox(bbox_from6(&ebox_rows.data[static_cast<std::size_t>(q) * 6]));
        double b6[6];
        bbox_to6(eboxes[static_cast<std::size_t>(q)], b6);
        for (int c = 0; c < 6; ++c) bef.at(q, c) = static_cast<float>(b6[c]);
      }

      // 7. edge latents conditioned on the fresh boxes, then decode
      const DenoiseFn f_elat = [&](const TensorD& z, int t) {
        const TensorT<float> zf = z.cast<float>();
        TensorT<float> e = ms.edge_latent.eval(zf, t, bef, slots, zsf, bsf, -1);
        if (guided)
          e = cfg_epsilon(ms.edge_latent.eval(zf, t, bef, slots, zsf, bsf, cfg.label), e,
                          cfg.guidance);
        return e.cast<double>();
      };
      const TensorD ze =
          pndm_sample(f_elat, randn_tensor({m, EdgeLatentDenoiser<float>::kLatentDim}, rng),
                      cfg.edge_latent_pndm_steps, ms.node_sched);

      const TensorT<float> edge_lat({m, EdgeVae::kLatLen, EdgeVae::kLatC}, ze.cast<float>().data);
      const TensorT<float> pts = ms.edge_vae.decode_eval(edge_lat);
      const std::int64_t poly_numel = static_cast<std::int64_t>(EdgeVae::kPoints) * 3;
      for (int q = 0; q < m; ++q) {
        EdgeRecord e;
        e.i = slots[static_cast<std::size_t>(q)].first;
        e.j = slots[static_cast<std::size_t>(q)].second;
        e.bbox = eboxes[static_cast<std::size_t>(q)];
        TensorD normed({EdgeVae::kPoints, 3});
        for (std::int64_t v = 0; v < poly_numel; ++v)
          normed[v] = static_cast<double>(pts.data[static_cast<std::size_t>(q * poly_numel + v)]);
        e.points = recompose_bbox(e.bbox, normed);
        TensorD lat({EdgeVae::kLatLen, EdgeVae::kLatC});
        for (std::int64_t v = 0; v < lat.numel(); ++v)
          lat[v] = ze.data[static_cast<std::size_t>(q * lat.numel() + v)];
        e.latent = std::move(lat);
        g.edges.push_back(std::move(e));
      }
    }

    // decode contract: structural invariants must hold on every sample
    {
      const ValidationReport rep = validate_graph(g);
      if (!rep.ok())
        throw std::logic_error("sample_brep: decoded graph violates invariants: " +
                               rep.violations.front());
    }

    // 8. stitch endpoints
    StitchResult st = stitch(g, 0.04);
    if (!st.defects.empty()) {
      if (!out.note.empty()) out.note += "; ";
      out.note += std::to_string(st.defects.size()) + " open endpoints after stitching";
    }
    out.graph = std::move(st.graph);
    out.emitted = true;
    run.outcomes.push_back(std::move(out));
  }
  return run;
}

// ---------------------------------------------------------------------------
// Post-processing and checks
// ---------------------------------------------------------------------------

StitchResult stitch(const BRepGraph& g, double tol_v) {
  StitchResult out;
  out.graph = g;
  const VertexTopology topo = recover_vertex_topology(out.graph, tol_v);
  out.defects = topo.defects;
  for (const auto& cluster : topo.clusters) {
    if (cluster.size() < 2) continue;
    Vec3 c;
    for (const auto& [e, end] : cluster) {
      const TensorD& p = *out.graph.edges[static_cast<std::size_t>(e)].points;
      const int row = end == 0 ? 0 : p.dim(0) - 1;
      c = c + Vec3{p.at(row, 0), p.at(row, 1), p.at(row, 2)};
    }
    c = c * (1.0 / static_cast<double>(cluster.size()));
    for (const auto& [e, end] : cluster) {
      TensorD& p = *out.graph.edges[static_cast<std::size_t>(e)].points;
      const int row = end == 0 ? 0 : p.dim(0) - 1;
      p.at(row, 0) = c.x;
      p.at(row, 1) = c.y;
      p.at(row, 2) = c.z;
    }
    ++out.clusters_snapped;
  }
  return out;
}

ValidityReportLite validity_lite(const BRepGraph& g, double tol_v) {
  ValidityReportLite out;

  const ValidationReport rep = validate_graph(g);
  for (const std::string& v : rep.violations) out.reasons.push_back("structure: " + v);

  const int n = static_cast<int>(g.surfaces.size());
  if (n == 0) out.reasons.push_back("no surfaces");

  // connectivity over the surface-adjacency graph
  if (n > 0 && g.adjacency.n >= n) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int reached = 1;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (int j = 0; j < n; ++j)
        if (!seen[static_cast<std::size_t>(j)] && g.adjacency.at(i, j) > 0) {
          seen[static_cast<std::size_t>(j)] = 1;
          ++reached;
          stack.push_back(j);
        }
    }
    if (reached < n)
      out.reasons.push_back("surface graph disconnected: reached " + std::to_string(reached) +
                            " of " + std::to_string(n) + " faces");
  }

  // boundary loops: each face's incident edges must close up
  bool polylines_ok = true;
  for (const EdgeRecord& e : g.edges)
    if (!e.points) polylines_ok = false;
  if (!polylines_ok) {
    out.reasons.push_back("edge polylines missing, loop check impossible");
  } else if (n > 0) {
    const VertexTopology topo = recover_vertex_topology(g, tol_v);
    for (const std::string& d : topo.defects) out.reasons.push_back(d);
    for (int s = 0; s < n; ++s) {
      int incident = 0;
      for (const EdgeRecord& e : g.edges)
        if (e.i == s || e.j == s) ++incident;
      if (incident == 0) {
        out.reasons.push_back("face " + std::to_string(s) + " has no boundary edges");
        continue;
      }
      for (const auto& cluster : topo.clusters) {
        int degree = 0;
        for (const auto& [e, end] : cluster) {
          const EdgeRecord& r = g.edges[static_cast<std::size_t>(e)];
          if (r.i == s || r.j == s) ++degree;
        }
        if (degree != 0 && degree != 2)
          out.reasons.push_back("face " + std::to_string(s) + " corner with degree " +
                                std::to_string(degree));
      }
    }
  }

  // every stored coordinate stays inside the (slightly padded) normalized box
  constexpr double kBound = 1.05;
  auto in_bounds = [&](const TensorD& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i)
      if (!(std::abs(t[i]) <= kBound)) return false;
    return true;
  };
  auto box_in_bounds = [&](const BBox& b) {
    double v[6];
    bbox_to6(b, v);
    for (double c : v)
      if (!(std::abs(c) <= kBound)) return false;
    return true;
  };
  bool oob = false;
  for (const SurfaceRecord& s : g.surfaces)
    if (!box_in_bounds(s.bbox) || (s.grid && !in_bounds(*s.grid))) oob = true;
  for (const EdgeRecord& e : g.edges)
    if (!box_in_bounds(e.bbox) || (e.points && !in_bounds(*e.points))) oob = true;
  if (oob) out.reasons.push_back("geometry outside the normalized box");

  out.valid = out.reasons.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Sequence-length comparison
// ---------------------------------------------------------------------------

ComplexityProfile deepcad_profile() { return {"deepcad", 30, 20, 30, 30, 120, 150}; }
ComplexityProfile abc_profile() { return {"abc", 50, 30, 80, 40, 150, 200}; }

std::vector<ComplexityRow> complexity_report(const std::vector<ComplexityProfile>& profiles) {
  std::vector<ComplexityRow> rows;
  rows.reserve(profiles.size());
  for (const ComplexityProfile& p : profiles) {
    if (p.total_train < 1 || p.total_infer < 1)
      throw std::invalid_argument("complexity_report: profile " + p.name +
                                  " needs positive edge caps");
    ComplexityRow r;
    r.name = p.name;
    r.per_face_train = p.faces_train * p.epf_train;
    r.per_face_infer = p.faces_infer * p.epf_infer;
    r.total_train = p.total_train;
    r.total_infer = p.total_infer;
    const double qt = static_cast<double>(r.per_face_train) / r.total_train;
    const double qi = static_cast<double>(r.per_face_infer) / r.total_infer;
    r.cost_ratio_train = qt * qt;
    r.cost_ratio_infer = qi * qi;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_complexity(const std::vector<ComplexityRow>& rows) {
  std::ostringstream ss;
  ss << "edge-token sequence lengths (train/infer) and quadratic attention-cost ratio\n";
  ss << "profile      per-face     total        cost ratio\n";
  for (const ComplexityRow& r : rows) {
    ss << r.name;
    for (std::size_t p = r.name.size(); p < 13; ++p) ss << ' ';
    std::ostringstream a, b, c;
    a << r.per_face_train << "/" << r.per_face_infer;
    b << r.total_train << "/" << r.total_infer;
    c.setf(std::ios::fixed);
    c.precision(1);
    c << r.cost_ratio_train << "x/" << r.cost_ratio_infer << "x";
    ss << a.str();
    for (std::size_t p = a.str().size(); p < 13; ++p) ss << ' ';
    ss << b.str();
    for (std::size_t p = b.str().size(); p < 13; ++p) ss << ' ';
    ss << c.str() << "\n";
  }
  return ss.str();
}

}  // namespace gbrep
