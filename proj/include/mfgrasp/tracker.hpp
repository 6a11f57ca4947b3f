#pragma once

#include <optional>
#include <utility>
#include <string>
#include <vector>

#include "mfgrasp/planner.hpp"

namespace mfgrasp {

struct TrackConfig {
  double alpha = 0.6;          // smoothing factor in (0, 1]
  double gate = 0.08;          // m, candidate distance from the predicted grasp centre
  int candidates = 48;         // cloud points nearest the prediction
  int max_lost = 3;
  double tie_tolerance = 1e-9;
  double patch_radius = 0.1;   // m, object neighbourhood registered between frames

  void validate() const;
};

nlohmann::json to_json(const TrackConfig& c);
TrackConfig track_config_from_json(const nlohmann::json& j, TrackConfig base = {});

/// One observation: exact geometry for the representation engine plus the
/// camera cloud.
struct TrackFrame {
  Scene scene;
  PointCloud cloud;
};

struct TrackState {
  RepGrid anchor;
  Cell cell;          // anchor cell of the tracked grasp
  bool flipped = false;  // hand turned half a revolution about the approach relative to the cell
  GraspFrame frame;   // where the anchor was computed
  int object = -1;    // cloud label under the anchor point
  MultiFingerGrasp grasp;      // smoothed target
  Vec3 measured = Vec3::Zero();  // last unsmoothed grasp centre
  RigidTransform motion;       // last per-frame rigid motion estimate
  double alpha = 0.6;
  double last_similarity = 1.0;
  int frame_index = 0;
  int lost = 0;
  int shift = 0;  // angle bins of the last match
  bool lost_this_frame = false;
  bool terminated = false;
};

/// Full planner pass on the first frame. Throws Error(NoFeasibleGrasp).
TrackState init_track(const TrackFrame& frame, const PlannerContext& ctx, const PlannerConfig& planner,
                      const TrackConfig& config = {});

struct ShiftedGrasp {
  MultiFingerGrasp grasp;
  Cell cell;
  bool flipped = false;
};

struct TrackCandidate {
  RepGrid rep;
  GraspFrame frame;
  /// Anchor cell moved by `shift` bins with the anchor's type; empty when that
  /// cell is invalid in `rep`.
  std::optional<ShiftedGrasp> grasp;
  int object = -1;
  int shift = 0;
};

/// Best cyclic shift k of `anchor` against `rep` and its similarity. Ties
/// within `tolerance` keep the smallest |k| (positive first).
std::pair<int, double> best_shift(const RepGrid& anchor, const RepGrid& rep, double max_width, double tolerance = 1e-9);

struct Association {
  int index = -1;                  // -1 when everything was gated out
  std::vector<double> similarity;  // per candidate; -1 when gated out
  std::vector<int> shifts;
};

/// Similarity row of `anchor` against every candidate, gated by the distance
/// of the candidate grasp to `predicted`. Argmax wins; ties go to the
/// candidate nearest the prediction. Throws Error(Precondition) for an empty
/// candidate list.
Association associate(const RepGrid& anchor, const std::vector<TrackCandidate>& candidates, const Vec3& predicted,
                      double max_width, const TrackConfig& config);

/// Candidates on the cloud points nearest the predicted grasp point. Each
/// frame's zero axis is the predicted one projected into its tangent plane.
std::vector<TrackCandidate> track_candidates(const TrackState& state, const GraspFrame& predicted, const TrackFrame& frame,
                                             const PlannerContext& ctx, const PlannerConfig& planner,
                                             const TrackConfig& config);

/// Grasp for anchor cell `cell` moved by `shift` bins in `rep` at `frame`.
/// Rows that wrap an odd number of half-turns flip the hand about the
/// approach axis so the thumb stays on the same side. Empty when the cell is
/// invalid or too wide for the hand.
std::optional<ShiftedGrasp> shifted_grasp(const GraspFrame& frame, const RepGrid& rep, Cell cell, bool flipped,
                                          int shift, const GraspType& type, double clearance, const RepConfig& rc,
                                          const HandModel& hand);

/// Rigid motion of the points of `object` near `center` in `from` onto
/// `to`, by point-to-point ICP started at `guess`. Returns `guess` when
/// either side has too few points.
RigidTransform register_patch(const PointCloud& from, const PointCloud& to, const Vec3& center, int object,
                              double radius, const RigidTransform& guess);

/// Needs the previous frame's cloud for motion prediction. Sets
/// `terminated` after `max_lost` consecutive lost frames; stepping a
/// terminated track throws Error(LostTrack).
TrackState step_track(const TrackState& state, const PointCloud& previous, const TrackFrame& frame,
                      const PlannerContext& ctx, const PlannerConfig& planner, const TrackConfig& config);

/// Cloud labels from the nearest object surface within `tolerance` (-1 otherwise).
void label_cloud(const SceneIndex& index, PointCloud& cloud, double tolerance = 0.001);

std::string track_log_header();
std::string track_log_row(const TrackState& s);

}  // namespace mfgrasp
