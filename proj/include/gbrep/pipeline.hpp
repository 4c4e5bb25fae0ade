#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gbrep/brepgraph.hpp"
#include "gbrep/denoisers.hpp"
#include "gbrep/diffusion.hpp"
#include "gbrep/vae.hpp"

namespace gbrep {

// ---------------------------------------------------------------------------
// Checkpoints: one file per trained model. Binary layout is magic "BGCK",
// u32 version = 1, u64 header length, a UTF-8 JSON header carrying the stage
// id / config snapshot / seed / schedule T plus one {name, dtype, shape}
// descriptor per tensor, then the raw little-endian f32 data concatenated in
// descriptor order.
// ---------------------------------------------------------------------------

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string stage;        // "surf-vae", "edge-vae", "surf-bbox", "surf-latent",
                            // "adj", "edge-bbox", "edge-latent"
  std::string config_json;  // stage-specific config snapshot
  std::uint64_t seed = 0;
  int schedule_T = 0;  // 0 for the VAEs
  std::vector<NamedTensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot builders; the denoiser overloads record the schedule length the
// model was trained against.
Checkpoint make_checkpoint(const SurfVae& m, std::uint64_t seed);
Checkpoint make_checkpoint(const EdgeVae& m, std::uint64_t seed);
Checkpoint make_checkpoint(const NodeBboxDenoiser<float>& m, std::uint64_t seed, int schedule_T);
Checkpoint make_checkpoint(const NodeLatentDenoiser<float>& m, std::uint64_t seed, int schedule_T);
Checkpoint make_checkpoint(const AdjacencyDenoiser<float>& m, std::uint64_t seed, int schedule_T);
Checkpoint make_checkpoint(const EdgeBboxDenoiser<float>& m, std::uint64_t seed, int schedule_T);
Checkpoint make_checkpoint(const EdgeLatentDenoiser<float>& m, std::uint64_t seed, int schedule_T);

// Rebuild a model from its snapshot; the stage id must match.
SurfVae surf_vae_from(const Checkpoint& c);
EdgeVae edge_vae_from(const Checkpoint& c);
NodeBboxDenoiser<float> surf_bbox_from(const Checkpoint& c);
NodeLatentDenoiser<float> surf_latent_from(const Checkpoint& c);
AdjacencyDenoiser<float> adjacency_from(const Checkpoint& c);
EdgeBboxDenoiser<float> edge_bbox_from(const Checkpoint& c);
EdgeLatentDenoiser<float> edge_latent_from(const Checkpoint& c);

// All seven models plus the two schedules they were trained on.
struct ModelSet {
  SurfVae surf_vae;
  EdgeVae edge_vae;
  NodeBboxDenoiser<float> surf_bbox;
  NodeLatentDenoiser<float> surf_latent;
  AdjacencyDenoiser<float> adjacency;
  EdgeBboxDenoiser<float> edge_bbox;
  EdgeLatentDenoiser<float> edge_latent;
  DiffusionSchedule node_sched;  // surface and edge stages
  DiffusionSchedule adj_sched;   // adjacency stage
};

// Reads {stage}.ckpt for all seven stages from dir and cross-checks that the
// four node/edge denoisers agree on one schedule length.
ModelSet load_model_set(const std::string& dir);

// ---------------------------------------------------------------------------
// Dataset bridge: a stored graph becomes the per-stage training tensors by
// encoding each surface grid and edge polyline in its own box frame.
// ---------------------------------------------------------------------------
GraphTensors<float> graph_tensors_from(const BRepGraph& g, const SurfVae& sv, const EdgeVae& ev);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

// Greedy keep-first duplicate removal: box i is dropped when its Chebyshev
// distance over all six stored coordinates to any already-kept box is at most
// threshold. Returns the kept indices in input order.
std::vector<int> dedup_bboxes(const std::vector<BBox>& boxes, double threshold = 0.08);

struct SampleRunConfig {
  int n_samples = 1;
  int max_faces = 30;   // box tokens drawn before dedup
  int max_edges = 120;  // slot cap after adjacency decode
  int e_max = 2;
  double dedup_threshold = 0.08;
  int bbox_pndm_steps = 200;  // boxes: strided PNDM down to the switch point,
  int bbox_ddpm_from = 250;   // then ancestral DDPM the rest of the way
  int latent_pndm_steps = 200;
  int adj_pndm_steps = 250;
  int edge_bbox_pndm_steps = 250;
  int edge_latent_pndm_steps = 200;
  double guidance = 1.5;  // used only when label >= 0
  int label = -1;         // -1 = unconditional
  std::uint64_t seed = 0;
};

struct SampleOutcome {
  BRepGraph graph;
  bool emitted = false;     // false: skipped, see note
  bool zero_edges = false;  // decoded adjacency had no edges
  std::string note;
};

struct SampleRun {
  std::vector<SampleOutcome> outcomes;
};

// Full generation: sample boxes (hybrid), dedup, sample latents and the
// adjacency matrix (PNDM, symmetrized, clipped to [0,e_max], rounded), expand
// slots, sample edge boxes and latents, decode both VAEs back into box
// frames, stitch. Deterministic in (models, config, seed); sample k draws
// from stream (seed, k).
SampleRun sample_brep(const ModelSet& ms, const SampleRunConfig& cfg);

// ---------------------------------------------------------------------------
// Post-processing and checks
// ---------------------------------------------------------------------------

struct StitchResult {
  BRepGraph graph;
  std::vector<std::string> defects;  // endpoints with no partner within tol
  int clusters_snapped = 0;
};

// Snaps every cluster of coincident edge endpoints (within tol_v) to its
// centroid; polylines are edited, boxes and grids stay as sampled.
StitchResult stitch(const BRepGraph& g, double tol_v = 0.04);

struct ValidityReportLite {
  bool valid = false;
  std::vector<std::string> reasons;
};

// Structural invariants hold, the surface graph is connected, every face's
// incident edges close into loops (each endpoint cluster meets a face's edges
// exactly twice), and all geometry stays inside [-1.05, 1.05]^3.
ValidityReportLite validity_lite(const BRepGraph& g, double tol_v = 0.04);

// ---------------------------------------------------------------------------
// Edge-token sequence-length comparison: faces x per-face cap versus a flat
// total-edge cap, with the quadratic attention-cost ratio.
// ---------------------------------------------------------------------------

struct ComplexityProfile {
  std::string name;
  int faces_train = 0, epf_train = 0;  // per-face convention caps
  int faces_infer = 0, epf_infer = 0;
  int total_train = 0, total_infer = 0;  // flat total-edge caps
};

struct ComplexityRow {
  std::string name;
  int per_face_train = 0, per_face_infer = 0;
  int total_train = 0, total_infer = 0;
  double cost_ratio_train = 0;  // (per_face / total)^2
  double cost_ratio_infer = 0;
};

ComplexityProfile deepcad_profile();
ComplexityProfile abc_profile();
std::vector<ComplexityRow> complexity_report(const std::vector<ComplexityProfile>& profiles);
std::string render_complexity(const std::vector<ComplexityRow>& rows);

}  // namespace gbrep
