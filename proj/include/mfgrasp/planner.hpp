#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <json.hpp>

#include "mfgrasp/antipodal.hpp"
#include "mfgrasp/collision.hpp"
#include "mfgrasp/decision_net.hpp"
#include "mfgrasp/hand.hpp"
#include "mfgrasp/scene.hpp"

namespace mfgrasp {

struct PlannerConfig {
  int num_grasp_points = 512;
  int top_k = 500;
  double confidence_gate = 0.9;
  int augmentations = 10;
  double aug_translation = 0.02;  // m, maximum magnitude
  double aug_yaw_deg = 15.0;      // maximum |yaw| about the vertical
  std::uint64_t seed = 0;
  double clearance = 0.01;
  bool all_cells = false;  // every valid cell instead of each frame's best cell
  int threads = 1;
  RepConfig rep;
  CollisionConfig collision;

  void validate() const;
};

nlohmann::json to_json(const PlannerConfig& c);
/// Overlays keys from `j` onto `base`; unknown keys are rejected.
PlannerConfig planner_config_from_json(const nlohmann::json& j, PlannerConfig base = {});

struct FrameSample {
  std::vector<GraspFrame> frames;
  std::vector<int> object_ids;  // object each frame was sampled on
  bool too_few_points = false;
};

/// Farthest-point sampling over reliable object points (support-plane points
/// are skipped). The first point is drawn from the seed.
FrameSample sample_grasp_points(const PointCloud& cloud, int count, std::uint64_t seed);

struct Candidate {
  MultiFingerGrasp grasp;
  double quality = 0.0;
  int source = 0;  // index into CandidateSet::reps / frames
};

struct CandidateSet {
  std::vector<Candidate> items;  // descending quality, stable
  std::vector<GraspFrame> frames;
  std::vector<RepGrid> reps;
  std::vector<int> object_ids;

  void sort_and_truncate(int top_k);
};

/// Representations for each frame (frames too far from a surface yield an
/// empty grid), in frame order.
std::vector<RepGrid> compute_representations(const SceneIndex& scene, const std::vector<GraspFrame>& frames,
                                             const RepConfig& config, int threads = 1);

struct PlannerContext {
  const NetworkParams* params = nullptr;
  const std::vector<GraspType>* taxonomy = nullptr;
  const HandModel* hand = nullptr;
};

struct PhaseTimes {
  double rep_seconds = 0.0;
  double decision_seconds = 0.0;
  double collision_seconds = 0.0;
};

CandidateSet generate_candidates(const SceneIndex& scene, const FrameSample& frames, const PlannerContext& ctx,
                                 const PlannerConfig& config, PhaseTimes* times = nullptr);

/// Pools candidates from the original cloud and `count` randomly perturbed
/// copies, each mapped back through the inverse perturbation.
CandidateSet augment_and_pool(const Scene& scene, const PointCloud& cloud, const PlannerContext& ctx,
                              const PlannerConfig& config, int count, PhaseTimes* times = nullptr);

struct Selection {
  Candidate candidate;
  bool below_gate = false;
  int checked = 0;  // candidates collision-checked before the survivor
};

/// Highest-quality collision-free candidate. Throws Error(NoFeasibleGrasp)
/// when every candidate collides.
Selection select_best(const CandidateSet& candidates, const std::vector<Vec3>& cloud, const PlannerContext& ctx,
                      const PlannerConfig& config);

struct PlanResult {
  CandidateSet candidates;
  Selection selection;
  PhaseTimes times;
};

/// Full pipeline: sample, represent, score, augment, filter, select.
PlanResult plan_grasp(const Scene& scene, const PointCloud& cloud, const PlannerContext& ctx,
                      const PlannerConfig& config);

std::vector<Vec3> positions(const PointCloud& cloud);
nlohmann::json plan_to_json(const Selection& selection, const GraspType& type);

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace mfgrasp
